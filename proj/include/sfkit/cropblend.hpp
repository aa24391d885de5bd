#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfkit/image.hpp"
#include "sfkit/matching.hpp"

namespace sfkit {

class CropError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned subject-centric rectangle. Invariants: fully inside the source
/// image, w/h >= min_size and multiples of snap.
struct CropRegion {
  int x0 = 0;
  int y0 = 0;
  int w = 0;
  int h = 0;
  int src_w = 0;
  int src_h = 0;
  double margin_applied = 0.0;
  int snap = 1;
};

struct CropConfig {
  double margin = 0.15;  // expansion per side, fraction of the inlier span
  int snap = 8;
  int min_size = 64;
};

/// Discrete Poisson equation over the interior of a rectangular region:
/// one unknown per interior pixel, 4-neighbour Laplacian, Dirichlet values
/// folded into the per-channel right-hand side. Symmetric positive definite.
struct LinearSystem {
  int region_w = 0;
  int region_h = 0;
  std::vector<std::int32_t> unknown_of;            // region_w*region_h, -1 on the ring
  std::vector<std::array<std::int32_t, 4>> nbr;    // per unknown; -1 where Dirichlet
  std::vector<std::vector<double>> rhs;            // [channel][unknown]

  std::size_t unknowns() const { return nbr.size(); }
};

struct SolveResult {
  std::vector<double> x;
  int iterations = 0;
  double residual = 0.0;  // final relative residual
};

enum class BlendMode { kSeamless, kMixed, kDirect };

/// Bounding box of the inlier keypoints in the generated image, expanded by
/// margin per side, clamped so a 1-px ring remains for blending, min_size
/// floor (grown centred), then w/h rounded up to snap multiples anchored at
/// the top-left corner. Requires >= 4 inliers.
CropRegion subject_crop(const MatchSet& verified, const KeypointSet& kps_gen,
                        int img_w, int img_h, const CropConfig& cfg);

Image extract_crop(const Image& img, const CropRegion& r);

/// Jacobi-preconditioned conjugate gradient for one channel of the system.
/// Stops at relative residual <= tol or max_iters (default 10x unknowns);
/// non-convergence is a SolveError carrying the final residual.
SolveResult solve_poisson(const LinearSystem& system, int channel,
                          double tol = 1e-6, int max_iters = -1);

/// Builds the blend system for a patch pasted into target at region r.
/// Guidance: patch gradients (seamless) or the per-pixel larger-magnitude
/// field of patch/target gradients (mixed).
LinearSystem build_blend_system(const Image& target, const Image& patch,
                                const CropRegion& r, BlendMode mode);

/// Gradient-domain paste of patch into target over region r. The ring of r
/// and everything outside it keep the target's pixels exactly; direct mode
/// swaps the solve for a 4-px linear feather.
Image poisson_blend(const Image& target, const Image& patch, const CropRegion& r,
                    BlendMode mode);

}  // namespace sfkit
