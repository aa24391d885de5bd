#include "sfkit/cropblend.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sfkit {

// ---------------------------------------------------------------------------
// Subject-centric crop
// ---------------------------------------------------------------------------

namespace {

int round_up_multiple(int v, int m) { return ((v + m - 1) / m) * m; }

// Fit [x0, x0+len) into [lo, hi) keeping len; shrink to a snap multiple only
// when the span itself is too small.
void fit_axis(int& x0, int& len, int lo, int hi, int snap) {
  const int span = hi - lo;
  if (len > span) {
    len = (span / snap) * snap;
    if (len < snap) throw CropError("subject_crop: image too small for a snapped region");
  }
  if (x0 < lo) x0 = lo;
  if (x0 + len > hi) x0 = hi - len;
}

}  // namespace

CropRegion subject_crop(const MatchSet& verified, const KeypointSet& kps_gen,
                        int img_w, int img_h, const CropConfig& cfg) {
  // Inlier keypoint positions in the generated image.
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  double ymin = xmin, ymax = -xmin;
  int inliers = 0;
  for (std::size_t i = 0; i < verified.matches.size(); ++i) {
    if (!verified.inlier_mask[i]) continue;
    const auto& kp = kps_gen.keypoints.at(verified.matches[i].idx_b);
    xmin = std::min(xmin, static_cast<double>(kp.x));
    xmax = std::max(xmax, static_cast<double>(kp.x));
    ymin = std::min(ymin, static_cast<double>(kp.y));
    ymax = std::max(ymax, static_cast<double>(kp.y));
    ++inliers;
  }
  if (inliers < 4) throw CropError("subject not localized: fewer than 4 inliers");

  // Expand by margin per side (fraction of the inclusive pixel span), then
  // take the integer pixel cover of the expanded interval.
  const double ex = cfg.margin * (xmax - xmin + 1.0);
  const double ey = cfg.margin * (ymax - ymin + 1.0);
  int x0 = static_cast<int>(std::floor(xmin - ex));
  int y0 = static_cast<int>(std::floor(ymin - ey));
  int x1 = static_cast<int>(std::ceil(xmax + ex));  // exclusive
  int y1 = static_cast<int>(std::ceil(ymax + ey));
  int w = std::max(1, x1 - x0);
  int h = std::max(1, y1 - y0);

  // min_size floor grows the region centred on its current centre.
  if (w < cfg.min_size) {
    const double cx = x0 + w / 2.0;
    w = cfg.min_size;
    x0 = static_cast<int>(std::lround(cx - w / 2.0));
  }
  if (h < cfg.min_size) {
    const double cy = y0 + h / 2.0;
    h = cfg.min_size;
    y0 = static_cast<int>(std::lround(cy - h / 2.0));
  }

  // Snap w/h up to multiples, anchored at the top-left corner.
  w = round_up_multiple(w, cfg.snap);
  h = round_up_multiple(h, cfg.snap);

  // Keep a 1-px ring inside the image so the region stays blendable; the
  // boundary can force a shrink.
  CropRegion r;
  try {
    fit_axis(x0, w, 1, img_w - 1, cfg.snap);
    fit_axis(y0, h, 1, img_h - 1, cfg.snap);
  } catch (const CropError&) {
    throw CropError("subject not localized: image too small for a blendable crop");
  }
  r.x0 = x0;
  r.y0 = y0;
  r.w = w;
  r.h = h;
  r.src_w = img_w;
  r.src_h = img_h;
  r.margin_applied = cfg.margin;
  r.snap = cfg.snap;
  return r;
}

Image extract_crop(const Image& img, const CropRegion& r) {
  if (r.x0 < 0 || r.y0 < 0 || r.x0 + r.w > img.width || r.y0 + r.h > img.height ||
      r.w < 1 || r.h < 1)
    throw CropError("extract_crop: region out of bounds");
  Image out(r.w, r.h, img.channels);
  for (int y = 0; y < r.h; ++y) {
    const float* src = &img.pixels[((static_cast<std::size_t>(y) + r.y0) * img.width + r.x0) *
                                   img.channels];
    std::copy(src, src + static_cast<std::size_t>(r.w) * img.channels,
              &out.pixels[static_cast<std::size_t>(y) * r.w * img.channels]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Poisson solve
// ---------------------------------------------------------------------------

SolveResult solve_poisson(const LinearSystem& system, int channel, double tol,
                          int max_iters) {
  const std::size_t n = system.unknowns();
  if (n == 0) throw SolveError("solve_poisson: no interior pixels");
  if (channel < 0 || channel >= static_cast<int>(system.rhs.size()))
    throw SolveError("solve_poisson: channel out of range");
  const std::vector<double>& b = system.rhs[channel];
  if (max_iters < 0) max_iters = static_cast<int>(10 * n);

  // A x = 4x - sum(neighbour x); Dirichlet terms already folded into b.
  auto apply = [&](const std::vector<double>& x, std::vector<double>& y) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 4.0 * x[i];
      for (int k = 0; k < 4; ++k) {
        const std::int32_t j = system.nbr[i][k];
        if (j >= 0) acc -= x[j];
      }
      y[i] = acc;
    }
  };

  double bnorm = 0.0;
  for (double v : b) bnorm += v * v;
  bnorm = std::sqrt(bnorm);
  SolveResult res;
  res.x.assign(n, 0.0);
  if (bnorm == 0.0) return res;  // zero RHS: zero solution, zero residual

  std::vector<double> r = b, z(n), p(n), ap(n);
  const double jacobi = 1.0 / 4.0;  // constant diagonal of the 5-point Laplacian
  for (std::size_t i = 0; i < n; ++i) z[i] = jacobi * r[i];
  p = z;
  double rz = 0.0;
  for (std::size_t i = 0; i < n; ++i) rz += r[i] * z[i];

  double rel = 1.0;
  for (int iter = 0; iter < max_iters; ++iter) {
    apply(p, ap);
    double pap = 0.0;
    for (std::size_t i = 0; i < n; ++i) pap += p[i] * ap[i];
    if (pap <= 0.0) throw SolveError("solve_poisson: lost positive-definiteness");
    const double alpha = rz / pap;
    double rnorm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      res.x[i] += alpha * p[i];
      r[i] -= alpha * ap[i];
      rnorm += r[i] * r[i];
    }
    rel = std::sqrt(rnorm) / bnorm;
    res.iterations = iter + 1;
    if (rel <= tol) {
      res.residual = rel;
      return res;
    }
    double rz_new = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = jacobi * r[i];
      rz_new += r[i] * z[i];
    }
    const double beta = rz_new / rz;
    rz = rz_new;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  throw SolveError("solve_poisson: no convergence after " + std::to_string(max_iters) +
                   " iterations (relative residual " + std::to_string(rel) + ")");
}

// ---------------------------------------------------------------------------
// Blend
// ---------------------------------------------------------------------------

namespace {

void check_blend_args(const Image& target, const Image& patch, const CropRegion& r) {
  if (patch.width != r.w || patch.height != r.h || patch.channels != target.channels)
    throw CropError("poisson_blend: patch does not match the region");
  if (r.x0 < 1 || r.y0 < 1 || r.x0 + r.w > target.width - 1 ||
      r.y0 + r.h > target.height - 1)
    throw CropError("poisson_blend: region must leave a 1-px ring inside the target");
}

}  // namespace

LinearSystem build_blend_system(const Image& target, const Image& patch,
                                const CropRegion& r, BlendMode mode) {
  check_blend_args(target, patch, r);
  if (r.w < 3 || r.h < 3)
    throw CropError("build_blend_system: region too small for an interior");

  LinearSystem sys;
  sys.region_w = r.w;
  sys.region_h = r.h;
  sys.unknown_of.assign(static_cast<std::size_t>(r.w) * r.h, -1);

  std::int32_t next = 0;
  for (int y = 1; y < r.h - 1; ++y)
    for (int x = 1; x < r.w - 1; ++x)
      sys.unknown_of[static_cast<std::size_t>(y) * r.w + x] = next++;

  const int ch = target.channels;
  sys.nbr.resize(next);
  sys.rhs.assign(ch, std::vector<double>(next, 0.0));

  // Guidance gradient per region pixel (forward differences, zero at the far
  // edge). Seamless takes the patch field; mixed keeps whichever of
  // patch/target has the larger vector magnitude at that pixel.
  const Image target_region = extract_crop(target, r);
  auto grad = [&](const Image& img, int x, int y, int c) -> std::pair<double, double> {
    const double v = img.at(x, y, c);
    const double gx = x + 1 < r.w ? img.at(x + 1, y, c) - v : 0.0;
    const double gy = y + 1 < r.h ? img.at(x, y + 1, c) - v : 0.0;
    return {gx, gy};
  };
  auto guidance = [&](int x, int y, int c) -> std::pair<double, double> {
    const auto gp = grad(patch, x, y, c);
    if (mode == BlendMode::kSeamless) return gp;
    const auto gt = grad(target_region, x, y, c);
    const double mp = gp.first * gp.first + gp.second * gp.second;
    const double mt = gt.first * gt.first + gt.second * gt.second;
    return mp >= mt ? gp : gt;
  };

  constexpr int dx4[4] = {-1, 1, 0, 0};
  constexpr int dy4[4] = {0, 0, -1, 1};
  for (int y = 1; y < r.h - 1; ++y) {
    for (int x = 1; x < r.w - 1; ++x) {
      const std::int32_t u = sys.unknown_of[static_cast<std::size_t>(y) * r.w + x];
      for (int k = 0; k < 4; ++k) {
        const int nx = x + dx4[k], ny = y + dy4[k];
        sys.nbr[u][k] = sys.unknown_of[static_cast<std::size_t>(ny) * r.w + nx];
      }
      for (int c = 0; c < ch; ++c) {
        // div g via backward differences; for a single-source field this is
        // exactly that image's 5-point Laplacian.
        const auto g = guidance(x, y, c);
        const auto gl = guidance(x - 1, y, c);
        const auto gu = guidance(x, y - 1, c);
        const double div = (g.first - gl.first) + (g.second - gu.second);
        double rhs = -div;  // 4 f - sum f_nbr = -div g
        for (int k = 0; k < 4; ++k) {
          if (sys.nbr[u][k] < 0) {
            const int nx = x + dx4[k], ny = y + dy4[k];
            rhs += target.at(r.x0 + nx, r.y0 + ny, c);
          }
        }
        sys.rhs[c][u] = rhs;
      }
    }
  }
  return sys;
}

Image poisson_blend(const Image& target, const Image& patch, const CropRegion& r,
                    BlendMode mode) {
  check_blend_args(target, patch, r);
  Image out = target;
  const int ch = target.channels;

  if (mode == BlendMode::kDirect) {
    // 4-px linear feather from the region border; the border row/column keeps
    // the target.
    for (int y = 0; y < r.h; ++y) {
      for (int x = 0; x < r.w; ++x) {
        const int d = std::min({x, y, r.w - 1 - x, r.h - 1 - y});
        const float alpha = std::min(1.0f, static_cast<float>(d) / 4.0f);
        for (int c = 0; c < ch; ++c) {
          const float t = target.at(r.x0 + x, r.y0 + y, c);
          const float p = patch.at(x, y, c);
          out.at(r.x0 + x, r.y0 + y, c) = std::clamp(t + alpha * (p - t), 0.0f, 1.0f);
        }
      }
    }
    return out;
  }

  const LinearSystem sys = build_blend_system(target, patch, r, mode);
  std::vector<SolveResult> sols(ch);
  // Channels are independent solves. Exceptions must not unwind out of the
  // parallel region, so they are carried across it.
  std::exception_ptr solve_error;
#pragma omp parallel for schedule(static) num_threads(ch > 1 ? 3 : 1)
  for (int c = 0; c < ch; ++c) {
    try {
      sols[c] = solve_poisson(sys, c);
    } catch (...) {
#pragma omp critical
      if (!solve_error) solve_error = std::current_exception();
    }
  }
  if (solve_error) std::rethrow_exception(solve_error);

  for (int y = 1; y < r.h - 1; ++y) {
    for (int x = 1; x < r.w - 1; ++x) {
      const std::int32_t u = sys.unknown_of[static_cast<std::size_t>(y) * r.w + x];
      for (int c = 0; c < ch; ++c)
        out.at(r.x0 + x, r.y0 + y, c) =
            std::clamp(static_cast<float>(sols[c].x[u]), 0.0f, 1.0f);
    }
  }
  return out;
}

}  // namespace sfkit
