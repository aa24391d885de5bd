#pragma once

// Shared fixtures and independent oracles for the test suites. Fixtures are
// generated in code from fixed seeds so every run sees identical data.

#include <algorithm>
#include <cmath>
#include <vector>

#include "sfkit/cropblend.hpp"
#include "sfkit/image.hpp"
#include "sfkit/matching.hpp"
#include "sfkit/rng.hpp"

namespace testutil {

inline sfkit::Image constant_image(int w, int h, int ch, float v) {
  return sfkit::Image(w, h, ch, v);
}

// Rich deterministic texture: soft color field plus rectangles, discs and
// fine noise. Enough distinct structure for detection/matching tests.
inline sfkit::Image textured_image(int w, int h, std::uint64_t seed, int ch = 3) {
  sfkit::Rng rng(seed);
  sfkit::Image img(w, h, ch);
  // Smooth base gradient.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c)
        img.at(x, y, c) = 0.35f + 0.3f * (static_cast<float>(x) / w) +
                          0.2f * (static_cast<float>(y) / h) * (c == 1 ? -1.0f : 1.0f);

  const int n_shapes = std::max(30, w * h / 350);
  for (int s = 0; s < n_shapes; ++s) {
    const int cx = static_cast<int>(rng.next_below(w));
    const int cy = static_cast<int>(rng.next_below(h));
    const int size = 2 + static_cast<int>(rng.next_below(std::max(4, w / 12)));
    const bool disc = rng.next_below(2) == 0;
    float color[3] = {static_cast<float>(rng.next_double()),
                      static_cast<float>(rng.next_double()),
                      static_cast<float>(rng.next_double())};
    for (int y = std::max(0, cy - size); y < std::min(h, cy + size); ++y)
      for (int x = std::max(0, cx - size); x < std::min(w, cx + size); ++x) {
        if (disc) {
          const int dx = x - cx, dy = y - cy;
          if (dx * dx + dy * dy > size * size) continue;
        }
        for (int c = 0; c < ch; ++c) img.at(x, y, c) = color[c % 3];
      }
  }
  // Mild per-pixel noise so descriptors see no exact ties.
  for (auto& p : img.pixels)
    p = std::clamp(p + 0.02f * static_cast<float>(rng.next_normal()), 0.0f, 1.0f);
  // Snap to the 8-bit grid, as a decoded file would be.
  for (auto& p : img.pixels) p = sfkit::from_u8(sfkit::to_u8(p));
  return img;
}

inline double max_abs_diff(const sfkit::Image& a, const sfkit::Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a.pixels[i]) - b.pixels[i]));
  return m;
}

inline double rms_diff(const sfkit::Image& a, const sfkit::Image& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - b.pixels[i];
    acc += d * d;
  }
  return std::sqrt(acc / a.pixels.size());
}

// Warp `subject` into `scene` with an affine map (subject -> scene coords),
// bilinear sampling, leaving scene pixels outside the warped footprint.
inline void paste_warped(sfkit::Image& scene, const sfkit::Image& subject,
                         const sfkit::GeomModel& model) {
  const auto inv = model.inverse();
  for (int y = 0; y < scene.height; ++y) {
    for (int x = 0; x < scene.width; ++x) {
      const auto [sx, sy] = inv->apply(x, y);
      if (sx < 0 || sy < 0 || sx > subject.width - 1 || sy > subject.height - 1)
        continue;
      const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, subject.width - 1);
      const int y1 = std::min(y0 + 1, subject.height - 1);
      const double tx = sx - x0, ty = sy - y0;
      for (int c = 0; c < scene.channels; ++c) {
        const int sc = subject.channels == scene.channels ? c : 0;
        const double top = subject.at(x0, y0, sc) * (1 - tx) + subject.at(x1, y0, sc) * tx;
        const double bot = subject.at(x0, y1, sc) * (1 - tx) + subject.at(x1, y1, sc) * tx;
        scene.at(x, y, c) = static_cast<float>(top * (1 - ty) + bot * ty);
      }
    }
  }
}

inline sfkit::GeomModel affine_model(double a, double b, double tx, double c, double d,
                                     double ty) {
  sfkit::GeomModel m;
  m.kind = sfkit::ModelKind::kAffine;
  m.h = {a, b, tx, c, d, ty, 0.0, 0.0, 1.0};
  return m;
}

// Dense Gaussian-elimination oracle for the Poisson system; independent of
// the CG path it checks.
inline std::vector<double> dense_poisson_solve(const sfkit::LinearSystem& sys,
                                               int channel) {
  const int n = static_cast<int>(sys.unknowns());
  std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
  std::vector<double> b = sys.rhs.at(channel);
  for (int i = 0; i < n; ++i) {
    a[static_cast<std::size_t>(i) * n + i] = 4.0;
    for (int k = 0; k < 4; ++k) {
      const int j = sys.nbr[i][k];
      if (j >= 0) a[static_cast<std::size_t>(i) * n + j] -= 1.0;
    }
  }
  for (int col = 0; col < n; ++col) {
    int pivot = col;
    for (int r = col + 1; r < n; ++r)
      if (std::fabs(a[static_cast<std::size_t>(r) * n + col]) >
          std::fabs(a[static_cast<std::size_t>(pivot) * n + col]))
        pivot = r;
    if (pivot != col) {
      for (int cc = 0; cc < n; ++cc)
        std::swap(a[static_cast<std::size_t>(col) * n + cc],
                  a[static_cast<std::size_t>(pivot) * n + cc]);
      std::swap(b[col], b[pivot]);
    }
    const double d = a[static_cast<std::size_t>(col) * n + col];
    for (int r = col + 1; r < n; ++r) {
      const double f = a[static_cast<std::size_t>(r) * n + col] / d;
      if (f == 0.0) continue;
      for (int cc = col; cc < n; ++cc)
        a[static_cast<std::size_t>(r) * n + cc] -= f * a[static_cast<std::size_t>(col) * n + cc];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int cc = r + 1; cc < n; ++cc) acc -= a[static_cast<std::size_t>(r) * n + cc] * b[cc];
    b[r] = acc / a[static_cast<std::size_t>(r) * n + r];
  }
  return b;
}

// Brute-force FAST-9 decision at a single pixel, written independently of the
// library's score-map kernel.
inline bool brute_fast9(const sfkit::Image& gray, int x, int y, float t) {
  static const int ox[16] = {0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1};
  static const int oy[16] = {-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3};
  if (x < 3 || y < 3 || x >= gray.width - 3 || y >= gray.height - 3) return false;
  const float c = gray.at(x, y);
  for (int start = 0; start < 16; ++start) {
    bool all_bright = true, all_dark = true;
    for (int k = 0; k < 9; ++k) {
      const int i = (start + k) & 15;
      const float v = gray.at(x + ox[i], y + oy[i]);
      if (!(v > c + t)) all_bright = false;
      if (!(v < c - t)) all_dark = false;
      if (!all_bright && !all_dark) break;
    }
    if (all_bright || all_dark) return true;
  }
  return false;
}

}  // namespace testutil
