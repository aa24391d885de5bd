#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "sfkit/image.hpp"

namespace sfkit {

/// Oriented corner keypoint. x/y are sub-pixel coordinates in level-0 space;
/// octave is the pyramid level the point was detected on.
struct Keypoint {
  float x = 0.0f;
  float y = 0.0f;
  float orientation = 0.0f;  // radians in [-pi, pi]
  float response = 0.0f;
  int octave = 0;
};

/// 256-bit binary descriptor packed into four 64-bit words.
struct Descriptor {
  std::array<std::uint64_t, 4> bits{};

  int hamming(const Descriptor& o) const;
  bool operator==(const Descriptor& o) const { return bits == o.bits; }
};

inline constexpr const char* kPatternVersion = "brief256-v1";

struct KeypointSet {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;  // parallel to keypoints
  std::string pattern_version = kPatternVersion;
};

struct DetectorConfig {
  float threshold = 20.0f / 255.0f;  // FAST intensity delta, [0,1] scale
  int levels = 8;
  double scale_factor = 1.2;
  int max_per_level = 500;
  int max_total = 2000;
};

/// Level 0 is the input; level k is blurred (sigma=1) and downsampled to
/// floor(dim0 * factor^-k). Stops early once a dimension would drop below 16.
std::vector<Image> build_pyramid(const Image& gray, int levels, double scale_factor);

/// FAST-9 corners with 3x3 non-max suppression over the score map, intensity-
/// centroid orientation, top max_per_level by response, coordinates mapped to
/// level-0 space.
std::vector<Keypoint> detect_keypoints(const std::vector<Image>& pyramid,
                                       float threshold, int max_per_level);

/// Steered BRIEF over a pyramid: pairs rotated by keypoint orientation, bit set
/// when the smoothed intensity at the first point is strictly below the second.
/// Keypoints closer than 20 px to their octave image border are dropped and
/// `kps` is filtered to match.
std::vector<Descriptor> compute_descriptors(const std::vector<Image>& pyramid,
                                            std::vector<Keypoint>& kps);

/// Single-image convenience overload: all keypoints are treated as octave 0.
std::vector<Descriptor> compute_descriptors(const Image& gray,
                                            std::vector<Keypoint>& kps);

/// Full front end: grayscale -> pyramid -> detect -> describe. Deterministic
/// for a given (image, config) at any thread count.
KeypointSet detect_and_describe(const Image& img, const DetectorConfig& cfg,
                                const std::string& image_id = "");

// Documented JSON form {image_id, width, height, keypoints, descriptors
// (base64 of packed bits), pattern_version}.
std::string keypointset_to_json(const KeypointSet& set);
KeypointSet keypointset_from_json(const std::string& json_text);

}  // namespace sfkit
