#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "sfkit/matching.hpp"

using namespace sfkit;
namespace fs = std::filesystem;

namespace {

KeypointSet random_descriptor_set(std::size_t n, std::uint64_t seed, int dims = 512) {
  Rng rng(seed);
  KeypointSet set;
  set.width = dims;
  set.height = dims;
  for (std::size_t i = 0; i < n; ++i) {
    Keypoint kp;
    kp.x = static_cast<float>(rng.next_range(0, dims - 1));
    kp.y = static_cast<float>(rng.next_range(0, dims - 1));
    set.keypoints.push_back(kp);
    Descriptor d;
    for (auto& w : d.bits) w = rng.next_u64();
    set.descriptors.push_back(d);
  }
  return set;
}

std::vector<PointPair> planted_affine_pairs(const GeomModel& model, int n_inliers,
                                            int n_outliers, double noise,
                                            std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PointPair> pairs;
  for (int i = 0; i < n_inliers; ++i) {
    const double x = rng.next_range(0, 400), y = rng.next_range(0, 400);
    auto [X, Y] = model.apply(x, y);
    pairs.push_back({x, y, X + noise * rng.next_normal(), Y + noise * rng.next_normal()});
  }
  for (int i = 0; i < n_outliers; ++i)
    pairs.push_back({rng.next_range(0, 400), rng.next_range(0, 400),
                     rng.next_range(0, 400), rng.next_range(0, 400)});
  return pairs;
}

}  // namespace

TEST_SUITE("matching") {

TEST_CASE("self-match yields identity pairs at distance zero") {
  const KeypointSet set = random_descriptor_set(60, 11);
  const auto matches = match_descriptors(set, set, 0.8f);
  REQUIRE(matches.size() == 60);
  for (const auto& m : matches) {
    CHECK(m.idx_a == m.idx_b);
    CHECK(m.distance == 0);
  }
}

TEST_CASE("duplicate candidates fail the strict ratio test") {
  KeypointSet a = random_descriptor_set(1, 12);
  KeypointSet b = random_descriptor_set(2, 13);
  b.descriptors[0] = a.descriptors[0];
  b.descriptors[1] = a.descriptors[0];  // two identical best candidates
  const auto matches = match_descriptors(a, b, 1.0f);
  CHECK(matches.empty());
}

TEST_CASE("empty side gives an empty result") {
  const KeypointSet a = random_descriptor_set(10, 14);
  const KeypointSet empty;
  CHECK(match_descriptors(a, empty, 0.8f).empty());
  CHECK(match_descriptors(empty, a, 0.8f).empty());
}

TEST_CASE("disjoint random sets produce almost no matches") {
  const KeypointSet a = random_descriptor_set(100, 15);
  const KeypointSet b = random_descriptor_set(100, 16);
  const auto matches = match_descriptors(a, b, 0.8f);
  CHECK(matches.size() <= 5);  // measured on this seeded fixture: 0
}

TEST_CASE("candidate matching is symmetric under side swap") {
  const KeypointSet a = random_descriptor_set(80, 17);
  KeypointSet b = random_descriptor_set(80, 18);
  // Mix in genuine correspondences.
  for (int i = 0; i < 40; ++i) b.descriptors[i] = a.descriptors[i];
  const auto ab = match_descriptors(a, b, 0.8f);
  const auto ba = match_descriptors(b, a, 0.8f);
  REQUIRE(ab.size() == ba.size());
  for (std::size_t i = 0; i < ab.size(); ++i) {
    CHECK(ab[i].idx_a == ba[i].idx_b);
    CHECK(ab[i].idx_b == ba[i].idx_a);
  }
}

TEST_CASE("exact affine recovery") {
  const GeomModel planted = testutil::affine_model(1.2, -0.3, 40.0, 0.25, 0.9, -12.0);
  const auto pairs = planted_affine_pairs(planted, 20, 0, 0.0, 19);
  const GeomModel est = estimate_model(pairs, ModelKind::kAffine);
  for (int i = 0; i < 6; ++i) CHECK(est.h[i] == doctest::Approx(planted.h[i]).epsilon(1e-9));
}

TEST_CASE("identity homography from the unit square") {
  const std::vector<PointPair> corners = {
      {0, 0, 0, 0}, {1, 0, 1, 0}, {1, 1, 1, 1}, {0, 1, 0, 1}};
  const GeomModel h = estimate_model(corners, ModelKind::kHomography);
  const double expect[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i) CHECK(h.h[i] == doctest::Approx(expect[i]).epsilon(1e-9));
}

TEST_CASE("noisy homography fit keeps reprojection under a pixel") {
  GeomModel planted;
  planted.h = {0.95, 0.12, 20.0, -0.08, 1.05, -7.0, 1e-4, -5e-5, 1.0};
  Rng rng(20);
  std::vector<PointPair> pairs;
  for (int i = 0; i < 50; ++i) {
    const double x = rng.next_range(0, 300), y = rng.next_range(0, 300);
    auto [X, Y] = planted.apply(x, y);
    pairs.push_back({x, y, X + 0.5 * rng.next_normal(), Y + 0.5 * rng.next_normal()});
  }
  const GeomModel est = estimate_model(pairs, ModelKind::kHomography);
  double rms = 0.0;
  for (const auto& p : pairs) {
    auto [X, Y] = est.apply(p.xa, p.ya);
    auto [Xt, Yt] = planted.apply(p.xa, p.ya);
    rms += (X - Xt) * (X - Xt) + (Y - Yt) * (Y - Yt);
  }
  rms = std::sqrt(rms / pairs.size());
  CHECK(rms < 1.0);
}

TEST_CASE("degenerate and insufficient inputs are estimation errors") {
  std::vector<PointPair> collinear = {{0, 0, 0, 0}, {1, 1, 1, 1}, {2, 2, 2, 2}};
  CHECK_THROWS_AS(estimate_model(collinear, ModelKind::kAffine), EstimationError);
  std::vector<PointPair> two = {{0, 0, 0, 0}, {1, 1, 1, 1}};
  CHECK_THROWS_AS(estimate_model(two, ModelKind::kAffine), EstimationError);
}

TEST_CASE("ransac recovers a planted affine among outliers") {
  const GeomModel planted = testutil::affine_model(1.05, 0.1, 25.0, -0.1, 0.95, 13.0);
  const auto pairs = planted_affine_pairs(planted, 100, 30, 0.3, 21);
  std::vector<Match> matches(pairs.size());
  KeypointSet a, b;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    a.keypoints.push_back({static_cast<float>(pairs[i].xa),
                           static_cast<float>(pairs[i].ya), 0, 0, 0});
    b.keypoints.push_back({static_cast<float>(pairs[i].xb),
                           static_cast<float>(pairs[i].yb), 0, 0, 0});
    matches[i] = {static_cast<int>(i), static_cast<int>(i), 0};
  }
  RansacConfig cfg;
  cfg.kind = ModelKind::kAffine;
  cfg.inlier_px = 2.0;
  const MatchSet set = ransac_verify(matches, a, b, cfg);
  REQUIRE(set.model.has_value());

  int planted_kept = 0, outliers_admitted = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (i < 100 && set.inlier_mask[i]) ++planted_kept;
    if (i >= 100 && set.inlier_mask[i]) ++outliers_admitted;
  }
  CHECK(planted_kept >= 95);
  CHECK(outliers_admitted <= 2);
}

TEST_CASE("identical point sets verify to the identity with all inliers") {
  KeypointSet a;
  Rng rng(22);
  for (int i = 0; i < 25; ++i)
    a.keypoints.push_back({static_cast<float>(rng.next_range(0, 100)),
                           static_cast<float>(rng.next_range(0, 100)), 0, 0, 0});
  std::vector<Match> matches;
  for (int i = 0; i < 25; ++i) matches.push_back({i, i, 0});
  RansacConfig cfg;
  cfg.kind = ModelKind::kAffine;
  const MatchSet set = ransac_verify(matches, a, a, cfg);
  REQUIRE(set.model.has_value());
  CHECK(set.inlier_count() == 25);
  const double expect[6] = {1, 0, 0, 0, 1, 0};
  for (int i = 0; i < 6; ++i)
    CHECK(set.model->h[i] == doctest::Approx(expect[i]).epsilon(1e-6));
}

TEST_CASE("below the minimal sample no model is fit") {
  KeypointSet a, b;
  for (int i = 0; i < 3; ++i) {
    a.keypoints.push_back({static_cast<float>(i * 10), 0, 0, 0, 0});
    b.keypoints.push_back({static_cast<float>(i * 10), 5, 0, 0, 0});
  }
  std::vector<Match> matches = {{0, 0, 0}, {1, 1, 0}, {2, 2, 0}};
  RansacConfig cfg;  // homography needs 4
  const MatchSet set = ransac_verify(matches, a, b, cfg);
  CHECK(!set.model.has_value());
  CHECK(set.inlier_count() == 0);
  CHECK(set.inlier_mask.size() == 3);
}

TEST_CASE("inlier count is monotone in the threshold") {
  const GeomModel planted = testutil::affine_model(1.0, 0.05, 10.0, -0.05, 1.0, 5.0);
  const auto pairs = planted_affine_pairs(planted, 60, 40, 1.0, 23);
  int previous = 0;
  for (double px : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    RansacConfig cfg;
    cfg.kind = ModelKind::kAffine;
    cfg.inlier_px = px;
    const MatchSet set = ransac_verify_points(pairs, cfg);
    CHECK(set.inlier_count() >= previous);
    previous = set.inlier_count();
  }
}

TEST_CASE("ransac is deterministic for a fixed seed") {
  const GeomModel planted = testutil::affine_model(0.9, 0.0, 5.0, 0.0, 1.1, -3.0);
  const auto pairs = planted_affine_pairs(planted, 50, 25, 0.5, 24);
  RansacConfig cfg;
  cfg.kind = ModelKind::kAffine;
  const MatchSet s1 = ransac_verify_points(pairs, cfg);
  const MatchSet s2 = ransac_verify_points(pairs, cfg);
  CHECK(s1.inlier_mask == s2.inlier_mask);
  REQUIRE(s1.model.has_value());
  REQUIRE(s2.model.has_value());
  for (int i = 0; i < 9; ++i) CHECK(s1.model->h[i] == s2.model->h[i]);
}

TEST_CASE("planted recovery probability stays high") {
  // 60% inliers, 30 correspondences; lighter version of the acceptance run.
  int recovered = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const GeomModel planted = testutil::affine_model(1.1, -0.05, 11.0, 0.08, 0.92, 4.0);
    const auto pairs = planted_affine_pairs(planted, 18, 12, 0.3, 1000 + trial);
    RansacConfig cfg;
    cfg.kind = ModelKind::kAffine;
    cfg.inlier_px = 2.0;
    cfg.seed = 42 + trial;
    const MatchSet set = ransac_verify_points(pairs, cfg);
    int planted_kept = 0;
    for (int i = 0; i < 18; ++i) planted_kept += set.inlier_mask[i];
    if (planted_kept >= 17) ++recovered;
  }
  CHECK(recovered == 20);
}

TEST_CASE("match_count on real pipelines") {
  const Image fixture = testutil::textured_image(256, 256, 31);
  MatcherConfig cfg;

  SUBCASE("self-match reaches at least 80 percent of keypoints") {
    const MatchCountResult r = match_count(fixture, fixture, cfg);
    REQUIRE(r.kps_ref.keypoints.size() > 50);
    CHECK(r.count >= static_cast<int>(0.8 * r.kps_ref.keypoints.size()));
    REQUIRE(r.matchset.model.has_value());
    // Near-identity: corners reproject within a pixel.
    for (auto [x, y] : {std::pair{0.0, 0.0}, {255.0, 0.0}, {0.0, 255.0}, {255.0, 255.0}}) {
      auto [X, Y] = r.matchset.model->apply(x, y);
      CHECK(std::hypot(X - x, Y - y) < 1.0);
    }
  }
  SUBCASE("constant image matches nothing") {
    const Image flat = testutil::constant_image(256, 256, 3, 0.5f);
    CHECK(match_count(fixture, flat, cfg).count == 0);
  }
}

TEST_CASE("rotated image still verifies against the source") {
  const Image fixture = testutil::textured_image(256, 256, 32);
  // 30-degree rotation about the image centre.
  const double th = 30.0 * 3.14159265358979 / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cx = 127.5, cy = 127.5;
  GeomModel rot = testutil::affine_model(c, -s, cx - c * cx + s * cy,
                                         s, c, cy - s * cx - c * cy);
  Image rotated = testutil::constant_image(256, 256, 3, 0.5f);
  testutil::paste_warped(rotated, fixture, rot);

  MatcherConfig cfg;
  const MatchCountResult r = match_count(fixture, rotated, cfg);
  CHECK(r.count > 0);
  REQUIRE(r.matchset.model.has_value());
  // The estimated model should agree with the planted rotation on the corners
  // of the central area.
  for (auto [x, y] : {std::pair{64.0, 64.0}, {192.0, 64.0}, {64.0, 192.0}, {192.0, 192.0}}) {
    auto [X, Y] = r.matchset.model->apply(x, y);
    auto [Xt, Yt] = rot.apply(x, y);
    CHECK(std::hypot(X - Xt, Y - Yt) < 2.0);
  }
}

TEST_CASE("external match import") {
  const fs::path dir = fs::temp_directory_path() / "sfkit-test-matching";
  fs::create_directories(dir);

  SUBCASE("zero pairs round-trip") {
    const fs::path p = dir / "empty.json";
    std::ofstream(p) << R"({"image_a":"a","image_b":"b","pairs":[]})";
    const MatchSet set = load_external_matches(p.string());
    CHECK(set.matches.empty());
    CHECK(set.inlier_count() == 0);
  }
  SUBCASE("exported matchset re-imports with equal inlier count") {
    const GeomModel planted = testutil::affine_model(1.0, 0.1, 3.0, -0.1, 1.0, 2.0);
    const auto pairs = planted_affine_pairs(planted, 40, 10, 0.3, 25);
    RansacConfig cfg;
    cfg.kind = ModelKind::kAffine;
    cfg.inlier_px = 2.0;
    const MatchSet verified = ransac_verify_points(pairs, cfg);
    const fs::path p = dir / "export.json";
    std::ofstream(p) << matchset_to_json(verified, pairs, "a", "b");
    const MatchSet imported = load_external_matches(p.string(), cfg);
    CHECK(imported.inlier_count() == verified.inlier_count());
  }
  SUBCASE("non-finite coordinates name the offending pair") {
    const fs::path p = dir / "nan.json";
    std::ofstream(p) << R"({"image_a":"a","image_b":"b",
      "pairs":[{"xa":1,"ya":2,"xb":3,"yb":4,"score":1},
               {"xa":null,"ya":2,"xb":3,"yb":4,"score":1}]})";
    try {
      load_external_matches(p.string());
      FAIL("expected MatchImportError");
    } catch (const MatchImportError& e) {
      CHECK(std::string(e.what()).find("pair 1") != std::string::npos);
    }
  }
  SUBCASE("schema violations are errors") {
    const fs::path p = dir / "bad.json";
    std::ofstream(p) << R"({"image_a":"a","pairs":[{"xa":1}]})";
    CHECK_THROWS_AS(load_external_matches(p.string()), MatchImportError);
  }
}

}  // TEST_SUITE
