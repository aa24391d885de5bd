#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfkit/image.hpp"
#include "sfkit/keypoints.hpp"

namespace sfkit {

struct Match {
  int idx_a = -1;
  int idx_b = -1;
  int distance = 0;  // Hamming, [0, 256]
};

enum class ModelKind { kAffine, kHomography };

/// 3x3 transform stored row-major; affine models keep the bottom row (0,0,1).
/// Homographies are normalized so h33 = 1 whenever |h33| > 1e-12.
struct GeomModel {
  ModelKind kind = ModelKind::kHomography;
  std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

  std::pair<double, double> apply(double x, double y) const;
  std::optional<GeomModel> inverse() const;
};

struct MatchSet {
  std::vector<Match> matches;
  std::optional<GeomModel> model;
  std::vector<std::uint8_t> inlier_mask;  // parallel to matches
  std::uint64_t rng_seed = 0;

  int inlier_count() const;
};

struct PointPair {
  double xa, ya, xb, yb;
};

struct RansacConfig {
  ModelKind kind = ModelKind::kHomography;
  double inlier_px = 3.0;
  int max_iters = 2000;
  double confidence = 0.995;
  std::uint64_t seed = 42;
};

struct MatcherConfig {
  DetectorConfig detector;
  float ratio = 0.8f;
  RansacConfig ransac;
  // Optional resolution normalization: when > 0 images whose longest side
  // exceeds this are downscaled before detection. Off by default.
  int max_dimension = 0;
};

struct MatchCountResult {
  int count = 0;       // verified (inlier) count
  int raw_count = 0;   // mutual-NN candidates before verification
  MatchSet matchset;
  KeypointSet kps_ref;
  KeypointSet kps_other;
};

class MatchImportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Mutual nearest neighbours under Hamming distance, kept when
/// best < ratio * second_best (second best within the same query; a lone
/// candidate is kept). Ordered by idx_a.
std::vector<Match> match_descriptors(const KeypointSet& a, const KeypointSet& b,
                                     float ratio);

/// Affine by least squares, homography by normalized DLT (Hartley: translate
/// to centroid, scale mean distance to sqrt(2)). Throws EstimationError on
/// degenerate or insufficient input.
GeomModel estimate_model(const std::vector<PointPair>& corr, ModelKind kind);

/// Seeded RANSAC with adaptive iteration bound and a least-squares refit on
/// the final inlier set. Inlier test: symmetric transfer error <= inlier_px.
/// Fewer than minimal-sample matches yields a zero-inlier MatchSet.
MatchSet ransac_verify(const std::vector<Match>& matches, const KeypointSet& a,
                       const KeypointSet& b, const RansacConfig& cfg);

/// RANSAC over raw coordinate pairs (used for imported matches).
MatchSet ransac_verify_points(const std::vector<PointPair>& pairs,
                              const RansacConfig& cfg);

/// Full pipeline: detect -> describe -> match -> verify. count is the inlier
/// count; the raw candidate count is also reported.
MatchCountResult match_count(const Image& img_ref, const Image& img_other,
                             const MatcherConfig& cfg);

struct ExternalMatches {
  MatchSet matchset;
  std::vector<PointPair> pairs;
  std::string image_a;
  std::string image_b;
};

/// Reads the documented external-match JSON {image_a, image_b,
/// pairs:[{xa,ya,xb,yb,score}]}. Coordinates must be finite. Optionally
/// re-verifies with RANSAC, otherwise every pair is an inlier.
ExternalMatches load_external_matches_file(
    const std::string& path, const std::optional<RansacConfig>& verify = std::nullopt);

MatchSet load_external_matches(const std::string& path,
                               const std::optional<RansacConfig>& verify = std::nullopt);

std::string matchset_to_json(const MatchSet& set, const KeypointSet& a,
                             const KeypointSet& b);
std::string matchset_to_json(const MatchSet& set, const std::vector<PointPair>& pairs,
                             const std::string& image_a, const std::string& image_b);

}  // namespace sfkit
