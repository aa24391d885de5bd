#include "sfkit/degrade.hpp"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sfkit/kernels.hpp"
#include "sfkit/rng.hpp"
#include "sfkit/subprocess.hpp"

namespace sfkit {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

AugmentSpec AugmentSpec::identity() {
  AugmentSpec s;
  s.crop_fraction_min = s.crop_fraction_max = 1.0;
  s.rotation_min_deg = s.rotation_max_deg = 0.0;
  s.gain_min = s.gain_max = 1.0;
  s.offset_min = s.offset_max = 0.0;
  return s;
}

// ---------------------------------------------------------------------------
// Degraders
// ---------------------------------------------------------------------------

Image degrade_builtin(const Image& img, double strength, std::uint64_t seed) {
  if (strength < 0.0 || strength > 1.0)
    throw std::invalid_argument("degrade_builtin: strength must be in [0,1]");
  if (strength == 0.0) return img;

  const Image low = gaussian_blur(img, 3.0);

  // Normalized gradient magnitude of the luma steers where noise lands.
  const FloatMap grad = gradient_magnitude(to_grayscale(img));
  float gmax = 0.0f;
  for (float g : grad.values) gmax = std::max(gmax, g);

  Image out(img.width, img.height, img.channels);
  Rng rng(seed);
  const double noise_unit = 1.0 / 255.0;  // unit variance in 8-bit steps
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const float a = gmax > 0.0f ? grad.at(x, y) / gmax : 0.0f;
      const double eta = rng.next_normal();  // one draw per pixel, all channels
      for (int c = 0; c < img.channels; ++c) {
        const double l = low.at(x, y, c);
        const double hi = img.at(x, y, c) - l;
        const double v = l + (1.0 - strength) * hi + strength * eta * noise_unit * a;
        out.at(x, y, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

Image level_roundtrip(const Image& img, double level) {
  if (level != 1.0 && level != 0.5 && level != 0.25)
    throw std::invalid_argument("level must be 1.0, 0.5 or 0.25");
  if (level == 1.0) return img;
  const int dw = std::max(1, static_cast<int>(std::lround(img.width * level)));
  const int dh = std::max(1, static_cast<int>(std::lround(img.height * level)));
  return resize(resize(img, dw, dh), img.width, img.height);
}

Image degrade_external(const Image& img, const std::string& cmd_template,
                       double level, std::uint64_t seed, double timeout_sec) {
  if (cmd_template.find("{in}") == std::string::npos ||
      cmd_template.find("{out}") == std::string::npos)
    throw std::invalid_argument("degrade_external: template needs {in} and {out}");

  const Image staged = level_roundtrip(img, level);

  const fs::path dir = fs::temp_directory_path() /
                       ("sfkit-degrade-" + std::to_string(::getpid()) + "-" +
                        std::to_string(seed));
  fs::create_directories(dir);
  const std::string in_path = (dir / "in.png").string();
  const std::string out_path = (dir / "out.png").string();
  save_image(staged, in_path);

  std::string cmd = cmd_template;
  substitute_placeholder(cmd, "{in}", in_path);
  substitute_placeholder(cmd, "{out}", out_path);
  substitute_placeholder(cmd, "{seed}", std::to_string(seed));
  substitute_placeholder(cmd, "{level}", std::to_string(level));

  const CommandResult res = run_command(cmd, timeout_sec);
  if (res.timed_out) {
    fs::remove_all(dir);
    throw SubprocessError("degrader timed out: " + cmd);
  }
  if (res.exit_code != 0) {
    fs::remove_all(dir);
    throw SubprocessError("degrader failed (exit " + std::to_string(res.exit_code) +
                          "): " + res.stderr_tail);
  }
  Image out;
  try {
    out = load_image(out_path);
  } catch (const ImageIoError& e) {
    fs::remove_all(dir);
    throw SubprocessError(std::string("degrader produced no usable output: ") + e.what());
  }
  fs::remove_all(dir);
  if (out.width != img.width || out.height != img.height)
    throw SubprocessError("degrader output dimensions do not match input");
  return out;
}

// ---------------------------------------------------------------------------
// Reference augmentation
// ---------------------------------------------------------------------------

namespace {

Image rotate_bilinear(const Image& img, double angle_deg) {
  if (angle_deg == 0.0) return img;
  const double a = angle_deg * 3.14159265358979323846 / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  const double cx = (img.width - 1) / 2.0, cy = (img.height - 1) / 2.0;
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      // Inverse map, clamp-to-edge sampling.
      const double dx = x - cx, dy = y - cy;
      const double sx = std::clamp(ca * dx + sa * dy + cx, 0.0, img.width - 1.0);
      const double sy = std::clamp(-sa * dx + ca * dy + cy, 0.0, img.height - 1.0);
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
      const double tx = sx - x0, ty = sy - y0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(x0, y0, c) * (1 - tx) + img.at(x1, y0, c) * tx;
        const double bot = img.at(x0, y1, c) * (1 - tx) + img.at(x1, y1, c) * tx;
        out.at(x, y, c) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
  return out;
}

}  // namespace

std::pair<Image, AppliedAugment> augment_reference(const Image& img,
                                                   const AugmentSpec& spec) {
  Rng rng(spec.seed);
  AppliedAugment ap;

  // Crop window.
  const double frac = rng.next_range(spec.crop_fraction_min, spec.crop_fraction_max);
  ap.crop_w = std::max(1, static_cast<int>(std::lround(img.width * frac)));
  ap.crop_h = std::max(1, static_cast<int>(std::lround(img.height * frac)));
  ap.crop_x0 = static_cast<int>(rng.next_below(img.width - ap.crop_w + 1));
  ap.crop_y0 = static_cast<int>(rng.next_below(img.height - ap.crop_h + 1));

  ap.rotation_deg = rng.next_range(spec.rotation_min_deg, spec.rotation_max_deg);
  for (int c = 0; c < 3; ++c) {
    ap.gains[c] = rng.next_range(spec.gain_min, spec.gain_max);
    ap.offsets[c] = rng.next_range(spec.offset_min, spec.offset_max);
  }

  Image out = img;
  if (ap.crop_w != img.width || ap.crop_h != img.height) {
    Image cropped(ap.crop_w, ap.crop_h, img.channels);
    for (int y = 0; y < ap.crop_h; ++y)
      for (int x = 0; x < ap.crop_w; ++x)
        for (int c = 0; c < img.channels; ++c)
          cropped.at(x, y, c) = img.at(ap.crop_x0 + x, ap.crop_y0 + y, c);
    out = std::move(cropped);
  }
  out = rotate_bilinear(out, ap.rotation_deg);

  bool color_identity = true;
  for (int c = 0; c < 3; ++c)
    if (ap.gains[c] != 1.0 || ap.offsets[c] != 0.0) color_identity = false;
  if (!color_identity) {
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        for (int c = 0; c < out.channels; ++c) {
          const int cc = out.channels == 3 ? c : 0;
          out.at(x, y, c) = static_cast<float>(
              std::clamp(ap.gains[cc] * out.at(x, y, c) + ap.offsets[cc], 0.0, 1.0));
        }
  }
  return {std::move(out), ap};
}

// ---------------------------------------------------------------------------
// Pair synthesis
// ---------------------------------------------------------------------------

PseudoPair make_pseudo_pair(const Image& clean, const DegradeSpec& dspec,
                            const AugmentSpec& aspec, bool swap) {
  double level;
  if (dspec.level) {
    level = *dspec.level;
    if (level != 1.0 && level != 0.5 && level != 0.25)
      throw std::invalid_argument("make_pseudo_pair: level must be 1.0, 0.5 or 0.25");
  } else {
    // Uniform draw over the three levels, keyed off the pair seed.
    static const double kLevels[3] = {1.0, 0.5, 0.25};
    Rng rng(mix_seed(dspec.seed, 0x1e7e15ULL));
    level = kLevels[rng.next_below(3)];
  }

  auto degrade_one = [&](const Image& src) {
    if (dspec.method == DegradeMethod::kExternal)
      return degrade_external(src, dspec.external_cmd, level, dspec.seed,
                              dspec.timeout_sec);
    return degrade_builtin(level_roundtrip(src, level), dspec.strength, dspec.seed);
  };

  PseudoPair pair;
  auto [augmented, applied] = augment_reference(clean, aspec);
  if (!swap) {
    pair.degraded = degrade_one(clean);
    pair.reference = std::move(augmented);
  } else {
    // Roles exchanged: the augmented view is degraded, the clean image is the
    // reference.
    pair.degraded = degrade_one(augmented);
    pair.reference = clean;
  }
  pair.record.degrade_spec = dspec;
  pair.record.degrade_spec.level = level;
  pair.record.chosen_level = level;
  pair.record.augment = applied;
  pair.record.role_swapped = swap;
  return pair;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

FloatMap variance_map(const std::vector<Image>& variants) {
  if (variants.size() < 2)
    throw std::invalid_argument("variance_map: need at least 2 variants");
  const int w = variants[0].width, h = variants[0].height;
  std::vector<Image> grays;
  grays.reserve(variants.size());
  for (const auto& v : variants) {
    if (v.width != w || v.height != h)
      throw std::invalid_argument("variance_map: variant dimensions differ");
    grays.push_back(to_grayscale(v));
  }
  std::vector<const float*> ptrs;
  for (const auto& g : grays) ptrs.push_back(g.pixels.data());
  FloatMap out(w, h);
  kernels::variance_across(ptrs.data(), static_cast<int>(ptrs.size()),
                           static_cast<std::size_t>(w) * h, out.values.data());
  return out;
}

ValidationReport validate_degradation(const Image& clean,
                                      const std::vector<Image>& variants) {
  const FloatMap var = variance_map(variants);
  const FloatMap grad = gradient_magnitude(to_grayscale(clean));
  if (var.width != grad.width || var.height != grad.height)
    throw std::invalid_argument("validate_degradation: dimensions differ from clean");

  ValidationReport rep;
  rep.n_variants = static_cast<int>(variants.size());

  double total = 0.0;
  for (float v : var.values) total += v;
  if (total < 1e-8) {
    rep.degenerate = true;
    return rep;
  }

  // Pearson correlation between the variance map and the gradient magnitude.
  const std::size_t n = var.values.size();
  double mv = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mv += var.values[i];
    mg += grad.values[i];
  }
  mv /= n;
  mg /= n;
  double cov = 0.0, vv = 0.0, gg = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dv = var.values[i] - mv, dg = grad.values[i] - mg;
    cov += dv * dg;
    vv += dv * dv;
    gg += dg * dg;
  }
  if (vv <= 0.0 || gg <= 0.0) {
    rep.degenerate = true;
    return rep;
  }
  rep.pearson_r = cov / std::sqrt(vv * gg);

  // Decile split on gradient values.
  std::vector<float> sorted(grad.values);
  std::sort(sorted.begin(), sorted.end());
  const float q10 = sorted[static_cast<std::size_t>(0.1 * (n - 1))];
  const float q90 = sorted[static_cast<std::size_t>(0.9 * (n - 1))];
  double hi_sum = 0.0, lo_sum = 0.0;
  std::size_t hi_n = 0, lo_n = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (grad.values[i] >= q90) {
      hi_sum += var.values[i];
      ++hi_n;
    }
    if (grad.values[i] <= q10) {
      lo_sum += var.values[i];
      ++lo_n;
    }
  }
  const double hi = hi_n ? hi_sum / hi_n : 0.0;
  const double lo = lo_n ? lo_sum / lo_n : 0.0;
  rep.hi_lo_ratio = hi / std::max(lo, 1e-30);
  return rep;
}

// ---------------------------------------------------------------------------
// Record serialization (JSONL)
// ---------------------------------------------------------------------------

std::string pair_record_to_json(const PairRecord& rec) {
  json j;
  j["clean_path"] = rec.clean_path;
  j["degraded_path"] = rec.degraded_path;
  j["reference_path"] = rec.reference_path;
  json d;
  d["level"] = rec.chosen_level;
  d["method"] = rec.degrade_spec.method == DegradeMethod::kBuiltin ? "builtin" : "external";
  d["strength"] = rec.degrade_spec.strength;
  d["seed"] = rec.degrade_spec.seed;
  if (!rec.degrade_spec.external_cmd.empty())
    d["external_cmd"] = rec.degrade_spec.external_cmd;
  j["degrade"] = std::move(d);
  json a;
  a["crop"] = {{"x0", rec.augment.crop_x0},
               {"y0", rec.augment.crop_y0},
               {"w", rec.augment.crop_w},
               {"h", rec.augment.crop_h}};
  a["rotation_deg"] = rec.augment.rotation_deg;
  a["gains"] = {rec.augment.gains[0], rec.augment.gains[1], rec.augment.gains[2]};
  a["offsets"] = {rec.augment.offsets[0], rec.augment.offsets[1], rec.augment.offsets[2]};
  j["augment"] = std::move(a);
  j["role_swapped"] = rec.role_swapped;
  return j.dump();
}

PairRecord pair_record_from_json(const std::string& line) {
  const json j = json::parse(line);
  PairRecord rec;
  rec.clean_path = j.at("clean_path").get<std::string>();
  rec.degraded_path = j.at("degraded_path").get<std::string>();
  rec.reference_path = j.at("reference_path").get<std::string>();
  const auto& d = j.at("degrade");
  rec.chosen_level = d.at("level").get<double>();
  rec.degrade_spec.level = rec.chosen_level;
  rec.degrade_spec.method = d.at("method").get<std::string>() == "external"
                                ? DegradeMethod::kExternal
                                : DegradeMethod::kBuiltin;
  rec.degrade_spec.strength = d.at("strength").get<double>();
  rec.degrade_spec.seed = d.at("seed").get<std::uint64_t>();
  if (d.contains("external_cmd"))
    rec.degrade_spec.external_cmd = d["external_cmd"].get<std::string>();
  const auto& a = j.at("augment");
  rec.augment.crop_x0 = a.at("crop").at("x0").get<int>();
  rec.augment.crop_y0 = a.at("crop").at("y0").get<int>();
  rec.augment.crop_w = a.at("crop").at("w").get<int>();
  rec.augment.crop_h = a.at("crop").at("h").get<int>();
  rec.augment.rotation_deg = a.at("rotation_deg").get<double>();
  for (int c = 0; c < 3; ++c) {
    rec.augment.gains[c] = a.at("gains")[c].get<double>();
    rec.augment.offsets[c] = a.at("offsets")[c].get<double>();
  }
  rec.role_swapped = j.at("role_swapped").get<bool>();
  return rec;
}

}  // namespace sfkit
