#pragma once

#include <cstdint>
#include <vector>

// Data-parallel inner loops, each in two variants: the OpenMP version used by
// the library and a serial reference kept for testing. Every output element is
// computed independently with identical per-element arithmetic, so the two
// variants produce bit-identical results at any thread count.

namespace sfkit::kernels {

// Interleaved RGB -> luma on the 8-bit grid (round half up, divided by 255).
void gray_from_rgb(const float* rgb, float* gray, std::size_t npx);

// Horizontal/vertical passes of a separable convolution, clamp-to-edge.
// taps has 2*radius+1 entries.
void conv_h(const float* src, float* dst, int w, int h, int ch,
            const double* taps, int radius);
void conv_v(const float* src, float* dst, int w, int h, int ch,
            const double* taps, int radius);

// Sobel 3x3 magnitude on a single-channel image, clamp-to-edge.
void sobel_magnitude(const float* gray, float* mag, int w, int h);

// Box-integration downscale (exact fractional coverage) and half-pixel-center
// bilinear upscale. Either may be applied per axis.
void resize_area(const float* src, int sw, int sh, int ch,
                 float* dst, int dw, int dh);
void resize_bilinear(const float* src, int sw, int sh, int ch,
                     float* dst, int dw, int dh);

// FAST-9 corner score map: per pixel, 0 when not a corner, otherwise the sum
// of absolute deviations over the longest qualifying contiguous arc.
void fast_score_map(const float* gray, int w, int h, float threshold,
                    float* score);

// For each of the na query descriptors (4x u64 words each), the best and
// second-best Hamming distances over the nb candidates plus the best index.
void hamming_best2(const std::uint64_t* desc_a, std::size_t na,
                   const std::uint64_t* desc_b, std::size_t nb,
                   int* best_idx, int* best_dist, int* second_dist);

// Per-pixel population variance across n same-sized single-channel variants.
void variance_across(const float* const* variants, int n, std::size_t npx,
                     float* out);

namespace serial {
void gray_from_rgb(const float* rgb, float* gray, std::size_t npx);
void conv_h(const float* src, float* dst, int w, int h, int ch,
            const double* taps, int radius);
void conv_v(const float* src, float* dst, int w, int h, int ch,
            const double* taps, int radius);
void sobel_magnitude(const float* gray, float* mag, int w, int h);
void resize_area(const float* src, int sw, int sh, int ch,
                 float* dst, int dw, int dh);
void resize_bilinear(const float* src, int sw, int sh, int ch,
                     float* dst, int dw, int dh);
void fast_score_map(const float* gray, int w, int h, float threshold,
                    float* score);
void hamming_best2(const std::uint64_t* desc_a, std::size_t na,
                   const std::uint64_t* desc_b, std::size_t nb,
                   int* best_idx, int* best_dist, int* second_dist);
void variance_across(const float* const* variants, int n, std::size_t npx,
                     float* out);
}  // namespace serial

}  // namespace sfkit::kernels
