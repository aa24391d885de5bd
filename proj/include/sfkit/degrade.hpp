#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfkit/image.hpp"

namespace sfkit {

enum class DegradeMethod { kBuiltin, kExternal };

/// Degradation recipe for one pseudo pair. level unset means one of
/// {1.0, 0.5, 0.25} is drawn per pair from the seed.
struct DegradeSpec {
  std::optional<double> level;  // must be 1.0, 0.5 or 0.25 when set
  DegradeMethod method = DegradeMethod::kBuiltin;
  double strength = 0.5;        // builtin only, [0,1]
  std::uint64_t seed = 0;
  std::string external_cmd;     // template with {in} {out} [{seed}] [{level}]
  double timeout_sec = 300.0;
};

struct AugmentSpec {
  double crop_fraction_min = 0.8;   // allowed range (0.5, 1.0]
  double crop_fraction_max = 1.0;
  double rotation_min_deg = -15.0;  // allowed range [-30, 30]
  double rotation_max_deg = 15.0;
  double gain_min = 0.9;            // allowed range [0.8, 1.2]
  double gain_max = 1.1;
  double offset_min = -0.02;        // allowed range [-0.05, 0.05]
  double offset_max = 0.02;
  std::uint64_t seed = 0;

  static AugmentSpec identity();
};

/// Parameters actually drawn for one augmentation, kept for reproducibility.
struct AppliedAugment {
  int crop_x0 = 0, crop_y0 = 0, crop_w = 0, crop_h = 0;
  double rotation_deg = 0.0;
  double gains[3] = {1.0, 1.0, 1.0};
  double offsets[3] = {0.0, 0.0, 0.0};
};

struct PairRecord {
  std::string clean_path;
  std::string degraded_path;
  std::string reference_path;
  DegradeSpec degrade_spec;     // with the drawn level filled in
  double chosen_level = 1.0;
  AppliedAugment augment;
  bool role_swapped = false;
};

/// In-memory result of one pseudo-pair synthesis.
struct PseudoPair {
  Image degraded;
  Image reference;
  PairRecord record;
};

struct ValidationReport {
  double pearson_r = 0.0;
  double hi_lo_ratio = 0.0;
  bool degenerate = false;
  int n_variants = 0;
};

/// Band-split perturbation standing in for one-step denoising: the sigma=3 low
/// band is kept, the high band is attenuated by strength, and seeded noise
/// (unit variance in 8-bit units) is injected where the local gradient is
/// strong. strength 0 is the identity.
Image degrade_builtin(const Image& img, double strength, std::uint64_t seed);

/// Round-trips the image through the level resize, hands it to an external
/// command ({in} {out} [{seed}] [{level}] placeholders), and loads the result,
/// which must keep the input dimensions.
Image degrade_external(const Image& img, const std::string& cmd_template,
                       double level, std::uint64_t seed,
                       double timeout_sec = 300.0);

/// Downscale to `level` and back to the original dimensions (identity at 1.0).
Image level_roundtrip(const Image& img, double level);

/// Seeded crop / rotation / per-channel colour map; the drawn parameters are
/// returned with the image.
std::pair<Image, AppliedAugment> augment_reference(const Image& img,
                                                   const AugmentSpec& spec);

/// The three-step pseudo-pair synthesis. With swap, the augmented view is the
/// one degraded and the clean image becomes the reference.
PseudoPair make_pseudo_pair(const Image& clean, const DegradeSpec& dspec,
                            const AugmentSpec& aspec, bool swap);

/// Per-pixel population variance over grayscale conversions of the variants.
FloatMap variance_map(const std::vector<Image>& variants);

/// Correlates the variance map with the clean image's gradient magnitude and
/// compares variance over top- vs bottom-decile-gradient pixels.
ValidationReport validate_degradation(const Image& clean,
                                      const std::vector<Image>& variants);

std::string pair_record_to_json(const PairRecord& rec);
PairRecord pair_record_from_json(const std::string& line);

}  // namespace sfkit
