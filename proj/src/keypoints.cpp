#include "sfkit/keypoints.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "sfkit/kernels.hpp"
#include "sfkit/rng.hpp"

namespace sfkit {

using json = nlohmann::ordered_json;

int Descriptor::hamming(const Descriptor& o) const {
  return std::popcount(bits[0] ^ o.bits[0]) + std::popcount(bits[1] ^ o.bits[1]) +
         std::popcount(bits[2] ^ o.bits[2]) + std::popcount(bits[3] ^ o.bits[3]);
}

namespace {

constexpr int kCentroidRadius = 15;
constexpr int kDetectMargin = 16;    // centroid disc + FAST ring must fit
constexpr int kDescribeMargin = 20;  // rotated BRIEF offsets must fit
constexpr int kMinPyramidDim = 16;

// Per-row half-width of the radius-15 disc, u_max[v] = floor(sqrt(r^2 - v^2)).
std::array<int, kCentroidRadius + 1> centroid_umax() {
  std::array<int, kCentroidRadius + 1> umax{};
  for (int v = 0; v <= kCentroidRadius; ++v)
    umax[v] = static_cast<int>(std::floor(
        std::sqrt(static_cast<double>(kCentroidRadius * kCentroidRadius - v * v))));
  return umax;
}

float intensity_centroid_angle(const Image& img, int cx, int cy) {
  static const auto umax = centroid_umax();
  double m01 = 0.0, m10 = 0.0;
  for (int v = -kCentroidRadius; v <= kCentroidRadius; ++v) {
    const int d = umax[std::abs(v)];
    for (int u = -d; u <= d; ++u) {
      const double val = img.at(cx + u, cy + v);
      m10 += u * val;
      m01 += v * val;
    }
  }
  return static_cast<float>(std::atan2(m01, m10));
}

// 256 test pairs drawn once from a fixed seed; part of the descriptor format,
// versioned by kPatternVersion.
struct BriefPattern {
  std::array<std::array<std::int8_t, 4>, 256> pairs;  // x1,y1,x2,y2
};

const BriefPattern& brief_pattern() {
  static const BriefPattern pattern = [] {
    BriefPattern p{};
    Rng rng(0x5f4b2e19d6a1c3e7ULL);
    for (auto& pr : p.pairs) {
      auto draw = [&rng]() {
        double v = rng.next_normal() * 26.0 / 5.0;
        return static_cast<std::int8_t>(std::clamp(v, -13.0, 13.0));
      };
      do {
        pr = {draw(), draw(), draw(), draw()};
      } while (pr[0] == pr[2] && pr[1] == pr[3]);
    }
    return p;
  }();
  return pattern;
}

}  // namespace

std::vector<Image> build_pyramid(const Image& gray, int levels, double scale_factor) {
  if (levels < 1) throw std::invalid_argument("build_pyramid: levels must be >= 1");
  if (scale_factor <= 1.0) throw std::invalid_argument("build_pyramid: factor must be > 1");
  if (gray.channels != 1) throw std::invalid_argument("build_pyramid: expects 1 channel");

  std::vector<Image> pyr;
  pyr.push_back(gray);
  for (int k = 1; k < levels; ++k) {
    const double inv = std::pow(scale_factor, -k);
    const int w = static_cast<int>(std::floor(gray.width * inv));
    const int h = static_cast<int>(std::floor(gray.height * inv));
    if (w < kMinPyramidDim || h < kMinPyramidDim) break;
    Image blurred = gaussian_blur(pyr.back(), 1.0);
    pyr.push_back(resize(blurred, w, h));
  }
  return pyr;
}

std::vector<Keypoint> detect_keypoints(const std::vector<Image>& pyramid,
                                       float threshold, int max_per_level) {
  if (threshold <= 0.0f) throw std::invalid_argument("detect_keypoints: threshold must be > 0");

  std::vector<Keypoint> all;
  for (std::size_t level = 0; level < pyramid.size(); ++level) {
    const Image& img = pyramid[level];
    const int w = img.width, h = img.height;
    FloatMap score(w, h);
    kernels::fast_score_map(img.pixels.data(), w, h, threshold, score.values.data());

    // 3x3 non-max suppression; ties go to the earlier pixel in raster order.
    std::vector<Keypoint> level_kps;
    for (int y = kDetectMargin; y < h - kDetectMargin; ++y) {
      for (int x = kDetectMargin; x < w - kDetectMargin; ++x) {
        const float s = score.at(x, y);
        if (s <= 0.0f) continue;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const float n = score.at(x + dx, y + dy);
            if (n > s || (n == s && (dy < 0 || (dy == 0 && dx < 0)))) {
              is_max = false;
              break;
            }
          }
        }
        if (!is_max) continue;
        Keypoint kp;
        kp.response = s;
        kp.octave = static_cast<int>(level);
        kp.orientation = intensity_centroid_angle(img, x, y);
        // Map to level-0 coordinates using the actual per-level dimension
        // ratio; clamp guards rounding at the far edge.
        const double sx = static_cast<double>(pyramid[0].width) / w;
        const double sy = static_cast<double>(pyramid[0].height) / h;
        kp.x = static_cast<float>(std::min(x * sx, pyramid[0].width - 1.0));
        kp.y = static_cast<float>(std::min(y * sy, pyramid[0].height - 1.0));
        level_kps.push_back(kp);
      }
    }

    if (static_cast<int>(level_kps.size()) > max_per_level) {
      std::stable_sort(level_kps.begin(), level_kps.end(),
                       [](const Keypoint& a, const Keypoint& b) {
                         return a.response > b.response;
                       });
      level_kps.resize(max_per_level);
    }
    all.insert(all.end(), level_kps.begin(), level_kps.end());
  }
  return all;
}

std::vector<Descriptor> compute_descriptors(const std::vector<Image>& pyramid,
                                            std::vector<Keypoint>& kps) {
  // Smooth each octave once (sigma=2); BRIEF compares smoothed intensities.
  std::vector<Image> smoothed;
  smoothed.reserve(pyramid.size());
  for (const auto& img : pyramid) smoothed.push_back(gaussian_blur(img, 2.0));

  const BriefPattern& pattern = brief_pattern();

  // Keypoint coordinates are in level-0 space; sampling happens at the octave
  // image, so project back with the actual dimension ratios.
  auto octave_xy = [&](const Keypoint& kp) {
    const Image& img = pyramid[kp.octave];
    const double rx = static_cast<double>(img.width) / pyramid[0].width;
    const double ry = static_cast<double>(img.height) / pyramid[0].height;
    return std::pair<int, int>(static_cast<int>(std::lround(kp.x * rx)),
                               static_cast<int>(std::lround(kp.y * ry)));
  };

  std::vector<Keypoint> kept;
  kept.reserve(kps.size());
  for (const auto& kp : kps) {
    if (kp.octave < 0 || kp.octave >= static_cast<int>(pyramid.size())) continue;
    const Image& img = pyramid[kp.octave];
    const auto [x, y] = octave_xy(kp);
    if (x < kDescribeMargin || y < kDescribeMargin ||
        x >= img.width - kDescribeMargin || y >= img.height - kDescribeMargin)
      continue;
    kept.push_back(kp);
  }

  std::vector<Descriptor> descs(kept.size());
  const std::int64_t n = static_cast<std::int64_t>(kept.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const Keypoint& kp = kept[i];
    const Image& img = smoothed[kp.octave];
    const auto [cx, cy] = octave_xy(kp);
    const double ca = std::cos(kp.orientation);
    const double sa = std::sin(kp.orientation);
    Descriptor d{};
    for (int b = 0; b < 256; ++b) {
      const auto& pr = pattern.pairs[b];
      const int x1 = cx + static_cast<int>(std::lround(pr[0] * ca - pr[1] * sa));
      const int y1 = cy + static_cast<int>(std::lround(pr[0] * sa + pr[1] * ca));
      const int x2 = cx + static_cast<int>(std::lround(pr[2] * ca - pr[3] * sa));
      const int y2 = cy + static_cast<int>(std::lround(pr[2] * sa + pr[3] * ca));
      if (img.at(x1, y1) < img.at(x2, y2))
        d.bits[b >> 6] |= (1ULL << (b & 63));
    }
    descs[i] = d;
  }

  kps = std::move(kept);
  return descs;
}

std::vector<Descriptor> compute_descriptors(const Image& gray, std::vector<Keypoint>& kps) {
  std::vector<Image> pyr{gray};
  for (auto& kp : kps) kp.octave = 0;
  return compute_descriptors(pyr, kps);
}

KeypointSet detect_and_describe(const Image& img, const DetectorConfig& cfg,
                                const std::string& image_id) {
  const Image gray = to_grayscale(img);
  std::vector<Image> pyramid = build_pyramid(gray, cfg.levels, cfg.scale_factor);
  std::vector<Keypoint> kps = detect_keypoints(pyramid, cfg.threshold, cfg.max_per_level);
  std::vector<Descriptor> descs = compute_descriptors(pyramid, kps);

  if (cfg.max_total > 0 && static_cast<int>(kps.size()) > cfg.max_total) {
    std::vector<std::size_t> order(kps.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return kps[a].response > kps[b].response;
    });
    order.resize(cfg.max_total);
    std::sort(order.begin(), order.end());
    std::vector<Keypoint> k2;
    std::vector<Descriptor> d2;
    k2.reserve(order.size());
    d2.reserve(order.size());
    for (std::size_t idx : order) {
      k2.push_back(kps[idx]);
      d2.push_back(descs[idx]);
    }
    kps = std::move(k2);
    descs = std::move(d2);
  }

  KeypointSet set;
  set.image_id = image_id;
  set.width = img.width;
  set.height = img.height;
  set.keypoints = std::move(kps);
  set.descriptors = std::move(descs);
  return set;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

namespace {

const char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::vector<std::uint8_t>& data) {
  std::string out;
  out.reserve((data.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < data.size(); i += 3) {
    std::uint32_t v = data[i] << 16;
    const bool has2 = i + 1 < data.size(), has3 = i + 2 < data.size();
    if (has2) v |= data[i + 1] << 8;
    if (has3) v |= data[i + 2];
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(has2 ? kB64Alphabet[(v >> 6) & 63] : '=');
    out.push_back(has3 ? kB64Alphabet[v & 63] : '=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::array<int, 256> rev;
  rev.fill(-1);
  for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kB64Alphabet[i])] = i;
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    const int v = rev[static_cast<unsigned char>(c)];
    if (v < 0) throw std::invalid_argument("base64: invalid character");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

std::vector<std::uint8_t> pack_descriptors(const std::vector<Descriptor>& descs) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(descs.size() * 32);
  for (const auto& d : descs)
    for (std::uint64_t word : d.bits)
      for (int b = 0; b < 8; ++b)
        bytes.push_back(static_cast<std::uint8_t>((word >> (8 * b)) & 0xff));
  return bytes;
}

std::vector<Descriptor> unpack_descriptors(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() % 32 != 0)
    throw std::invalid_argument("descriptor blob length must be a multiple of 32");
  std::vector<Descriptor> descs(bytes.size() / 32);
  for (std::size_t i = 0; i < descs.size(); ++i)
    for (int wi = 0; wi < 4; ++wi) {
      std::uint64_t word = 0;
      for (int b = 0; b < 8; ++b)
        word |= static_cast<std::uint64_t>(bytes[i * 32 + wi * 8 + b]) << (8 * b);
      descs[i].bits[wi] = word;
    }
  return descs;
}

}  // namespace

std::string keypointset_to_json(const KeypointSet& set) {
  json j;
  j["image_id"] = set.image_id;
  j["dims"] = {set.width, set.height};
  json kps = json::array();
  for (const auto& kp : set.keypoints) {
    kps.push_back({{"x", kp.x},
                   {"y", kp.y},
                   {"angle", kp.orientation},
                   {"response", kp.response},
                   {"octave", kp.octave}});
  }
  j["keypoints"] = std::move(kps);
  j["descriptors"] = base64_encode(pack_descriptors(set.descriptors));
  j["pattern_version"] = set.pattern_version;
  return j.dump(2) + "\n";
}

KeypointSet keypointset_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  KeypointSet set;
  set.image_id = j.at("image_id").get<std::string>();
  set.width = j.at("dims").at(0).get<int>();
  set.height = j.at("dims").at(1).get<int>();
  for (const auto& k : j.at("keypoints")) {
    Keypoint kp;
    kp.x = k.at("x").get<float>();
    kp.y = k.at("y").get<float>();
    kp.orientation = k.at("angle").get<float>();
    kp.response = k.at("response").get<float>();
    kp.octave = k.at("octave").get<int>();
    set.keypoints.push_back(kp);
  }
  set.descriptors = unpack_descriptors(base64_decode(j.at("descriptors").get<std::string>()));
  set.pattern_version = j.at("pattern_version").get<std::string>();
  if (set.keypoints.size() != set.descriptors.size())
    throw std::invalid_argument("keypoint/descriptor count mismatch");
  return set;
}

}  // namespace sfkit
