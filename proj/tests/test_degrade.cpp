#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "helpers.hpp"
#include "sfkit/degrade.hpp"
#include "sfkit/subprocess.hpp"

using namespace sfkit;
namespace fs = std::filesystem;

namespace {

// Fine texture only: checker + ramp + mild noise. Keeps the sigma=3 band
// energy where the band-split property is measurable.
Image fine_textured(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float checker = ((x / 2 + y / 2) % 2) ? 0.18f : -0.18f;
      for (int c = 0; c < 3; ++c) {
        float v = 0.5f + checker + 0.15f * (static_cast<float>(x) / w - 0.5f) +
                  0.1f * static_cast<float>(rng.next_normal());
        img.at(x, y, c) = std::clamp(v, 0.02f, 0.98f);
      }
    }
  return img;
}

double band_rms(const Image& a, const Image& b) {
  return testutil::rms_diff(gaussian_blur(a, 3.0), gaussian_blur(b, 3.0));
}

}  // namespace

TEST_SUITE("degrade") {

TEST_CASE("builtin degrader basics") {
  SUBCASE("strength zero is the identity") {
    const Image img = testutil::textured_image(48, 48, 61);
    CHECK(degrade_builtin(img, 0.0, 99).pixels == img.pixels);
  }
  SUBCASE("constant images are unchanged at any strength") {
    const Image img = testutil::constant_image(32, 32, 3, 0.42f);
    for (double s : {0.2, 0.5, 1.0})
      CHECK(testutil::max_abs_diff(degrade_builtin(img, s, 7), img) < 1e-6);
  }
  SUBCASE("two seeds differ but share the low band") {
    const Image img = fine_textured(96, 96, 62);
    const Image d1 = degrade_builtin(img, 0.5, 100);
    const Image d2 = degrade_builtin(img, 0.5, 101);
    CHECK(testutil::max_abs_diff(d1, d2) > 0.0);
    CHECK(band_rms(d1, d2) < 1.0 / 255.0);
  }
  SUBCASE("low band is preserved at every strength") {
    const Image img = fine_textured(96, 96, 63);
    for (double s : {0.1, 0.25, 0.5, 0.75, 1.0}) {
      const Image d = degrade_builtin(img, s, 44);
      CHECK(band_rms(d, img) < 1.5 / 255.0);
    }
  }
  SUBCASE("strength bounds are enforced") {
    CHECK_THROWS(degrade_builtin(testutil::constant_image(8, 8, 1, 0.0f), 1.5, 0));
  }
}

TEST_CASE("level round-trip composition") {
  const Image img = testutil::textured_image(64, 64, 64);
  CHECK(level_roundtrip(img, 1.0).pixels == img.pixels);
  const Image r = level_roundtrip(img, 0.25);
  CHECK(r.width == 64);
  CHECK(r.height == 64);
  const Image expect = resize(resize(img, 16, 16), 64, 64);
  CHECK(r.pixels == expect.pixels);
  CHECK_THROWS(level_roundtrip(img, 0.3));
}

TEST_CASE("external degrader contract") {
  const fs::path dir = fs::temp_directory_path() / "sfkit-test-degrade";
  fs::create_directories(dir);
  const Image img = testutil::textured_image(64, 64, 65);

  SUBCASE("copy utility returns the level round-trip") {
    const Image out = degrade_external(img, "cp {in} {out}", 0.25, 1);
    const Image expect = level_roundtrip(img, 0.25);
    CHECK(testutil::max_abs_diff(out, expect) <= 1.0 / 255.0);  // one quantization
  }
  SUBCASE("failing command surfaces stderr") {
    try {
      degrade_external(img, "echo boom >&2; : {in} {out}; false", 1.0, 1);
      FAIL("expected SubprocessError");
    } catch (const SubprocessError& e) {
      CHECK(std::string(e.what()).find("boom") != std::string::npos);
    }
  }
  SUBCASE("missing placeholders are rejected") {
    CHECK_THROWS(degrade_external(img, "true", 1.0, 1));
  }
  SUBCASE("wrong output dimensions are rejected") {
    const fs::path small = dir / "small.png";
    save_image(testutil::constant_image(8, 8, 3, 0.5f), small.string());
    CHECK_THROWS(degrade_external(img, "cp " + small.string() + " {out}; test -n '{in}'",
                                  1.0, 1));
  }
}

TEST_CASE("reference augmentation") {
  const Image img = testutil::textured_image(96, 96, 66);
  SUBCASE("identity ranges leave the image untouched") {
    AugmentSpec spec = AugmentSpec::identity();
    spec.seed = 5;
    const auto [out, applied] = augment_reference(img, spec);
    CHECK(out.pixels == img.pixels);
    CHECK(applied.rotation_deg == 0.0);
    CHECK(applied.crop_w == 96);
  }
  SUBCASE("same seed reproduces the same output") {
    AugmentSpec spec;
    spec.seed = 17;
    const auto [o1, a1] = augment_reference(img, spec);
    const auto [o2, a2] = augment_reference(img, spec);
    CHECK(o1.pixels == o2.pixels);
    CHECK(a1.rotation_deg == a2.rotation_deg);
    CHECK(a1.crop_x0 == a2.crop_x0);
  }
  SUBCASE("opposite rotations nearly cancel in the interior") {
    // Band-limited fixture: resampling loss, not aliasing, is what's measured.
    const Image smooth = gaussian_blur(img, 1.0);
    AugmentSpec plus = AugmentSpec::identity();
    plus.rotation_min_deg = plus.rotation_max_deg = 10.0;
    AugmentSpec minus = AugmentSpec::identity();
    minus.rotation_min_deg = minus.rotation_max_deg = -10.0;
    const auto [rot, applied_a] = augment_reference(smooth, plus);
    const auto [back, applied_b] = augment_reference(rot, minus);
    double acc = 0.0;
    int n = 0;
    for (int y = 24; y < 72; ++y)
      for (int x = 24; x < 72; ++x)
        for (int c = 0; c < 3; ++c) {
          const double d = back.at(x, y, c) - smooth.at(x, y, c);
          acc += d * d;
          ++n;
        }
    CHECK(std::sqrt(acc / n) < 3.0 / 255.0);
  }
}

TEST_CASE("pseudo pair synthesis") {
  const Image clean = testutil::textured_image(64, 64, 67);
  SUBCASE("identity specs reproduce the clean image") {
    DegradeSpec d;
    d.level = 1.0;
    d.strength = 0.0;
    const PseudoPair pair = make_pseudo_pair(clean, d, AugmentSpec::identity(), false);
    CHECK(pair.degraded.pixels == clean.pixels);
    CHECK(pair.reference.pixels == clean.pixels);
    CHECK(pair.record.chosen_level == 1.0);
  }
  SUBCASE("fixed seeds give byte-identical pairs") {
    DegradeSpec d;
    d.strength = 0.6;
    d.seed = 31;
    AugmentSpec a;
    a.seed = 32;
    const PseudoPair p1 = make_pseudo_pair(clean, d, a, false);
    const PseudoPair p2 = make_pseudo_pair(clean, d, a, false);
    CHECK(p1.degraded.pixels == p2.degraded.pixels);
    CHECK(p1.reference.pixels == p2.reference.pixels);
    CHECK(p1.record.chosen_level == p2.record.chosen_level);
  }
  SUBCASE("swap exchanges the roles") {
    DegradeSpec d;
    d.level = 1.0;
    d.strength = 0.0;
    AugmentSpec a = AugmentSpec::identity();
    a.rotation_min_deg = a.rotation_max_deg = 5.0;
    const PseudoPair swapped = make_pseudo_pair(clean, d, a, true);
    CHECK(swapped.reference.pixels == clean.pixels);
    CHECK(swapped.degraded.pixels != clean.pixels);
    CHECK(swapped.record.role_swapped);
  }
  SUBCASE("unset level draws all three levels") {
    const Image tiny = testutil::textured_image(16, 16, 68);
    std::map<double, int> counts;
    for (int i = 0; i < 300; ++i) {
      DegradeSpec d;
      d.strength = 0.1;
      d.seed = mix_seed(777, i);
      counts[make_pseudo_pair(tiny, d, AugmentSpec::identity(), false)
                 .record.chosen_level]++;
    }
    REQUIRE(counts.size() == 3);
    for (const auto& [level, n] : counts) {
      CHECK(n > 60);
      CHECK(n < 140);
    }
  }
}

TEST_CASE("pair record JSONL round-trip") {
  PairRecord rec;
  rec.clean_path = "a.png";
  rec.degraded_path = "b.png";
  rec.reference_path = "c.png";
  rec.chosen_level = 0.5;
  rec.degrade_spec.level = 0.5;
  rec.degrade_spec.strength = 0.7;
  rec.degrade_spec.seed = 99;
  rec.augment.crop_x0 = 3;
  rec.augment.crop_w = 60;
  rec.augment.rotation_deg = -4.25;
  rec.role_swapped = true;
  const std::string line = pair_record_to_json(rec);
  CHECK(line.find('\n') == std::string::npos);
  const PairRecord back = pair_record_from_json(line);
  CHECK(back.clean_path == rec.clean_path);
  CHECK(back.chosen_level == rec.chosen_level);
  CHECK(back.degrade_spec.seed == 99);
  CHECK(back.augment.rotation_deg == rec.augment.rotation_deg);
  CHECK(back.role_swapped);
}

TEST_CASE("variance map") {
  SUBCASE("identical variants give zeros") {
    const Image img = testutil::textured_image(32, 32, 69);
    const FloatMap m = variance_map(std::vector<Image>(10, img));
    for (float v : m.values) CHECK(v == 0.0f);
  }
  SUBCASE("two-point variance at a single pixel") {
    Image a = testutil::constant_image(8, 8, 1, 0.25f);
    Image b = a;
    b.at(3, 4) += 0.2f;
    const FloatMap m = variance_map({a, b});
    CHECK(m.at(3, 4) == doctest::Approx(0.2 * 0.2 / 4.0).epsilon(1e-4));
    CHECK(m.at(0, 0) == 0.0f);
  }
  SUBCASE("permutation invariance") {
    std::vector<Image> variants;
    for (int i = 0; i < 5; ++i)
      variants.push_back(degrade_builtin(fine_textured(24, 24, 70), 0.8, 200 + i));
    const FloatMap m1 = variance_map(variants);
    std::swap(variants[0], variants[3]);
    std::swap(variants[1], variants[4]);
    const FloatMap m2 = variance_map(variants);
    CHECK(m1.values == m2.values);
  }
  SUBCASE("fewer than two variants is an error") {
    CHECK_THROWS(variance_map({testutil::constant_image(4, 4, 1, 0.0f)}));
  }
  SUBCASE("variance concentrates where gradients are strong") {
    const Image clean = testutil::textured_image(128, 128, 71);
    std::vector<Image> variants;
    for (int i = 0; i < 10; ++i) variants.push_back(degrade_builtin(clean, 0.5, 300 + i));
    const FloatMap var = variance_map(variants);
    const FloatMap grad = gradient_magnitude(to_grayscale(clean));
    std::size_t peak = 0;
    for (std::size_t i = 1; i < var.values.size(); ++i)
      if (var.values[i] > var.values[peak]) peak = i;
    std::vector<float> sorted(grad.values);
    std::sort(sorted.begin(), sorted.end());
    const float q90 = sorted[static_cast<std::size_t>(0.9 * (sorted.size() - 1))];
    CHECK(grad.values[peak] >= q90);
  }
}

TEST_CASE("degradation validation") {
  const Image clean = testutil::textured_image(128, 128, 72);
  SUBCASE("identical variants are degenerate") {
    const ValidationReport rep = validate_degradation(clean, {clean, clean, clean});
    CHECK(rep.degenerate);
  }
  SUBCASE("builtin degrader concentrates distortion in high-frequency regions") {
    std::vector<Image> variants;
    for (int i = 0; i < 10; ++i) variants.push_back(degrade_builtin(clean, 0.5, 400 + i));
    const ValidationReport rep = validate_degradation(clean, variants);
    CHECK(!rep.degenerate);
    CHECK(rep.pearson_r >= 0.3);
    CHECK(rep.hi_lo_ratio >= 5.0);
  }
  SUBCASE("uniform noise control is flat") {
    std::vector<Image> variants;
    for (int i = 0; i < 10; ++i) {
      Image v = clean;
      Rng rng(500 + i);
      for (auto& p : v.pixels)
        p = std::clamp(p + 0.02f * static_cast<float>(rng.next_normal()), 0.0f, 1.0f);
      variants.push_back(std::move(v));
    }
    const ValidationReport rep = validate_degradation(clean, variants);
    CHECK(rep.hi_lo_ratio >= 0.8);
    CHECK(rep.hi_lo_ratio <= 1.25);
  }
  SUBCASE("builtin beats the uniform-noise control on every fixture") {
    for (std::uint64_t seed : {81, 82, 83}) {
      const Image fix = testutil::textured_image(96, 96, seed);
      std::vector<Image> builtin_variants, control;
      for (int i = 0; i < 8; ++i) {
        builtin_variants.push_back(degrade_builtin(fix, 0.5, 600 + i));
        Image v = fix;
        Rng rng(700 + i);
        for (auto& p : v.pixels)
          p = std::clamp(p + 0.02f * static_cast<float>(rng.next_normal()), 0.0f, 1.0f);
        control.push_back(std::move(v));
      }
      CHECK(validate_degradation(fix, builtin_variants).hi_lo_ratio >
            validate_degradation(fix, control).hi_lo_ratio);
    }
  }
}

}  // TEST_SUITE
