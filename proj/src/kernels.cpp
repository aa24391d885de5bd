#include "sfkit/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace sfkit::kernels {

namespace {

inline float luma_px(const float* p) {
  double y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  double q = std::floor(y * 255.0 + 0.5);
  q = std::min(255.0, std::max(0.0, q));
  return static_cast<float>(q / 255.0);
}

inline void conv_h_row(const float* src, float* dst, int w, int ch,
                       const double* taps, int radius, int y) {
  const float* row = src + static_cast<std::size_t>(y) * w * ch;
  float* out = dst + static_cast<std::size_t>(y) * w * ch;
  for (int x = 0; x < w; ++x) {
    for (int c = 0; c < ch; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        int xx = std::clamp(x + k, 0, w - 1);
        acc += taps[k + radius] * row[xx * ch + c];
      }
      out[x * ch + c] = static_cast<float>(acc);
    }
  }
}

inline void conv_v_row(const float* src, float* dst, int w, int h, int ch,
                       const double* taps, int radius, int y) {
  float* out = dst + static_cast<std::size_t>(y) * w * ch;
  for (int x = 0; x < w; ++x) {
    for (int c = 0; c < ch; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        int yy = std::clamp(y + k, 0, h - 1);
        acc += taps[k + radius] *
               src[(static_cast<std::size_t>(yy) * w + x) * ch + c];
      }
      out[x * ch + c] = static_cast<float>(acc);
    }
  }
}

inline void sobel_row(const float* g, float* mag, int w, int h, int y) {
  auto at = [&](int x, int yy) {
    x = std::clamp(x, 0, w - 1);
    yy = std::clamp(yy, 0, h - 1);
    return static_cast<double>(g[static_cast<std::size_t>(yy) * w + x]);
  };
  for (int x = 0; x < w; ++x) {
    double gx = -at(x - 1, y - 1) + at(x + 1, y - 1)
                - 2.0 * at(x - 1, y) + 2.0 * at(x + 1, y)
                - at(x - 1, y + 1) + at(x + 1, y + 1);
    double gy = -at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)
                + at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1);
    mag[static_cast<std::size_t>(y) * w + x] =
        static_cast<float>(std::sqrt(gx * gx + gy * gy));
  }
}

inline void resize_area_row(const float* src, int sw, int sh, int ch,
                            float* dst, int dw, int dh, int dy) {
  const double sx = static_cast<double>(sw) / dw;
  const double sy = static_cast<double>(sh) / dh;
  for (int dx = 0; dx < dw; ++dx) {
    const double x0 = dx * sx, x1 = (dx + 1) * sx;
    const double y0 = dy * sy, y1 = (dy + 1) * sy;
    const int ix0 = static_cast<int>(std::floor(x0));
    const int ix1 = std::min(sw - 1, static_cast<int>(std::ceil(x1)) - 1);
    const int iy0 = static_cast<int>(std::floor(y0));
    const int iy1 = std::min(sh - 1, static_cast<int>(std::ceil(y1)) - 1);
    for (int c = 0; c < ch; ++c) {
      double acc = 0.0, area = 0.0;
      for (int yy = iy0; yy <= iy1; ++yy) {
        const double wy = std::min<double>(yy + 1, y1) - std::max<double>(yy, y0);
        for (int xx = ix0; xx <= ix1; ++xx) {
          const double wx = std::min<double>(xx + 1, x1) - std::max<double>(xx, x0);
          const double wgt = wx * wy;
          acc += wgt * src[(static_cast<std::size_t>(yy) * sw + xx) * ch + c];
          area += wgt;
        }
      }
      dst[(static_cast<std::size_t>(dy) * dw + dx) * ch + c] =
          static_cast<float>(acc / area);
    }
  }
}

inline void resize_bilinear_row(const float* src, int sw, int sh, int ch,
                                float* dst, int dw, int dh, int dy) {
  const double sx = static_cast<double>(sw) / dw;
  const double sy = static_cast<double>(sh) / dh;
  const double fy = (dy + 0.5) * sy - 0.5;
  const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, sh - 1);
  const int y1 = std::min(y0 + 1, sh - 1);
  const double ty = std::clamp(fy - y0, 0.0, 1.0);
  for (int dx = 0; dx < dw; ++dx) {
    const double fx = (dx + 0.5) * sx - 0.5;
    const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, sw - 1);
    const int x1 = std::min(x0 + 1, sw - 1);
    const double tx = std::clamp(fx - x0, 0.0, 1.0);
    for (int c = 0; c < ch; ++c) {
      auto s = [&](int x, int y) {
        return static_cast<double>(src[(static_cast<std::size_t>(y) * sw + x) * ch + c]);
      };
      const double top = s(x0, y0) * (1.0 - tx) + s(x1, y0) * tx;
      const double bot = s(x0, y1) * (1.0 - tx) + s(x1, y1) * tx;
      dst[(static_cast<std::size_t>(dy) * dw + dx) * ch + c] =
          static_cast<float>(top * (1.0 - ty) + bot * ty);
    }
  }
}

// FAST-16 Bresenham circle, radius 3.
constexpr int kCircleX[16] = {0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3, -3, -3, -2, -1};
constexpr int kCircleY[16] = {-3, -3, -2, -1, 0, 1, 2, 3, 3, 3, 2, 1, 0, -1, -2, -3};

inline float fast_score_at(const float* g, int w, int x, int y, float t) {
  const float c = g[static_cast<std::size_t>(y) * w + x];
  float ring[16];
  int cls[16];  // 1 brighter, -1 darker, 0 neither
  for (int i = 0; i < 16; ++i) {
    ring[i] = g[static_cast<std::size_t>(y + kCircleY[i]) * w + (x + kCircleX[i])];
    cls[i] = ring[i] > c + t ? 1 : (ring[i] < c - t ? -1 : 0);
  }
  float best = 0.0f;
  for (int dir = -1; dir <= 1; dir += 2) {
    int run = 0;
    float sum = 0.0f;
    float run_best = 0.0f;
    int run_best_len = 0;
    // Walk the ring twice to catch wrap-around arcs; cap runs at 16.
    for (int i = 0; i < 32; ++i) {
      const int j = i & 15;
      if (cls[j] == dir && run < 16) {
        ++run;
        sum += std::fabs(ring[j] - c);
        if (run >= 9 && (run > run_best_len || (run == run_best_len && sum > run_best))) {
          run_best = sum;
          run_best_len = run;
        }
      } else {
        run = 0;
        sum = 0.0f;
      }
    }
    if (run_best_len >= 9) best = std::max(best, run_best);
  }
  return best;
}

inline void fast_row(const float* g, int w, int h, float t, float* score, int y) {
  float* out = score + static_cast<std::size_t>(y) * w;
  if (y < 3 || y >= h - 3) {
    std::fill(out, out + w, 0.0f);
    return;
  }
  for (int x = 0; x < w; ++x) {
    out[x] = (x < 3 || x >= w - 3) ? 0.0f : fast_score_at(g, w, x, y, t);
  }
}

inline void hamming_best2_one(const std::uint64_t* desc_a, const std::uint64_t* desc_b,
                              std::size_t nb, std::size_t i,
                              int* best_idx, int* best_dist, int* second_dist) {
  const std::uint64_t* a = desc_a + i * 4;
  int b1 = 257, b2 = 257, bi = -1;
  for (std::size_t j = 0; j < nb; ++j) {
    const std::uint64_t* b = desc_b + j * 4;
    const int d = std::popcount(a[0] ^ b[0]) + std::popcount(a[1] ^ b[1]) +
                  std::popcount(a[2] ^ b[2]) + std::popcount(a[3] ^ b[3]);
    if (d < b1) {
      b2 = b1;
      b1 = d;
      bi = static_cast<int>(j);
    } else if (d < b2) {
      b2 = d;
    }
  }
  best_idx[i] = bi;
  best_dist[i] = b1;
  second_dist[i] = b2;
}

inline void variance_px(const float* const* v, int n, std::size_t p, float* out) {
  double mean = 0.0;
  for (int k = 0; k < n; ++k) mean += v[k][p];
  mean /= n;
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    const double d = v[k][p] - mean;
    acc += d * d;
  }
  out[p] = static_cast<float>(acc / n);
}

}  // namespace

// ---------------------------------------------------------------------------
// OpenMP variants
// ---------------------------------------------------------------------------

void gray_from_rgb(const float* rgb, float* gray, std::size_t npx) {
  const std::int64_t n = static_cast<std::int64_t>(npx);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) gray[i] = luma_px(rgb + i * 3);
}

void conv_h(const float* src, float* dst, int w, int h, int ch,
            const double* taps, int radius) {
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) conv_h_row(src, dst, w, ch, taps, radius, y);
}

void conv_v(const float* src, float* dst, int w, int h, int ch,
            const double* taps, int radius) {
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) conv_v_row(src, dst, w, h, ch, taps, radius, y);
}

void sobel_magnitude(const float* gray, float* mag, int w, int h) {
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) sobel_row(gray, mag, w, h, y);
}

void resize_area(const float* src, int sw, int sh, int ch,
                 float* dst, int dw, int dh) {
#pragma omp parallel for schedule(static)
  for (int dy = 0; dy < dh; ++dy) resize_area_row(src, sw, sh, ch, dst, dw, dh, dy);
}

void resize_bilinear(const float* src, int sw, int sh, int ch,
                     float* dst, int dw, int dh) {
#pragma omp parallel for schedule(static)
  for (int dy = 0; dy < dh; ++dy) resize_bilinear_row(src, sw, sh, ch, dst, dw, dh, dy);
}

void fast_score_map(const float* gray, int w, int h, float threshold, float* score) {
#pragma omp parallel for schedule(static)
  for (int y = 0; y < h; ++y) fast_row(gray, w, h, threshold, score, y);
}

void hamming_best2(const std::uint64_t* desc_a, std::size_t na,
                   const std::uint64_t* desc_b, std::size_t nb,
                   int* best_idx, int* best_dist, int* second_dist) {
  const std::int64_t n = static_cast<std::int64_t>(na);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i)
    hamming_best2_one(desc_a, desc_b, nb, static_cast<std::size_t>(i),
                      best_idx, best_dist, second_dist);
}

void variance_across(const float* const* variants, int n, std::size_t npx, float* out) {
  const std::int64_t m = static_cast<std::int64_t>(npx);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < m; ++p)
    variance_px(variants, n, static_cast<std::size_t>(p), out);
}

// ---------------------------------------------------------------------------
// Serial reference
// ---------------------------------------------------------------------------

namespace serial {

void gray_from_rgb(const float* rgb, float* gray, std::size_t npx) {
  for (std::size_t i = 0; i < npx; ++i) gray[i] = luma_px(rgb + i * 3);
}

void conv_h(const float* src, float* dst, int w, int h, int ch,
            const double* taps, int radius) {
  for (int y = 0; y < h; ++y) conv_h_row(src, dst, w, ch, taps, radius, y);
}

void conv_v(const float* src, float* dst, int w, int h, int ch,
            const double* taps, int radius) {
  for (int y = 0; y < h; ++y) conv_v_row(src, dst, w, h, ch, taps, radius, y);
}

void sobel_magnitude(const float* gray, float* mag, int w, int h) {
  for (int y = 0; y < h; ++y) sobel_row(gray, mag, w, h, y);
}

void resize_area(const float* src, int sw, int sh, int ch,
                 float* dst, int dw, int dh) {
  for (int dy = 0; dy < dh; ++dy) resize_area_row(src, sw, sh, ch, dst, dw, dh, dy);
}

void resize_bilinear(const float* src, int sw, int sh, int ch,
                     float* dst, int dw, int dh) {
  for (int dy = 0; dy < dh; ++dy) resize_bilinear_row(src, sw, sh, ch, dst, dw, dh, dy);
}

void fast_score_map(const float* gray, int w, int h, float threshold, float* score) {
  for (int y = 0; y < h; ++y) fast_row(gray, w, h, threshold, score, y);
}

void hamming_best2(const std::uint64_t* desc_a, std::size_t na,
                   const std::uint64_t* desc_b, std::size_t nb,
                   int* best_idx, int* best_dist, int* second_dist) {
  for (std::size_t i = 0; i < na; ++i)
    hamming_best2_one(desc_a, desc_b, nb, i, best_idx, best_dist, second_dist);
}

void variance_across(const float* const* variants, int n, std::size_t npx, float* out) {
  for (std::size_t p = 0; p < npx; ++p) variance_px(variants, n, p, out);
}

}  // namespace serial

}  // namespace sfkit::kernels
