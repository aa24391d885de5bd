#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfkit {

enum class ImageIoStatus {
  kNotFound,
  kUnsupportedFormat,
  kCorruptStream,
  kWriteFailed,
};

class ImageIoError : public std::runtime_error {
 public:
  ImageIoError(ImageIoStatus status, const std::string& what)
      : std::runtime_error(what), status_(status) {}
  ImageIoStatus status() const { return status_; }

 private:
  ImageIoStatus status_;
};

/// Decoded raster. Samples are stored row-major, interleaved, as floats in
/// [0,1]; 8-bit only at the file boundary. channels is 1 (gray) or 3 (RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, int ch, float fill = 0.0f)
      : width(w), height(h), channels(ch),
        pixels(static_cast<std::size_t>(w) * h * ch, fill) {}

  float& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool empty() const { return pixels.empty(); }
  std::size_t sample_count() const { return pixels.size(); }
};

/// One float per pixel, unbounded range. Carrier for gradient-magnitude and
/// variance maps.
struct FloatMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  FloatMap() = default;
  FloatMap(int w, int h, float fill = 0.0f)
      : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {}

  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

// 8-bit <-> float conversion. Quantization rounds half up and clamps.
std::uint8_t to_u8(float v);
inline float from_u8(std::uint8_t v) { return static_cast<float>(v) / 255.0f; }

std::vector<std::uint8_t> to_bytes(const Image& img);
Image from_bytes(int width, int height, int channels, const std::vector<std::uint8_t>& bytes);

/// Decode a PNG or JPEG file. JPEG decodes to 3 channels; grayscale PNG to 1.
/// Throws ImageIoError with a status distinguishing missing files, unsupported
/// formats and corrupt streams.
Image load_image(const std::string& path);

/// Decode from an in-memory buffer (same rules as load_image).
Image decode_image(const std::uint8_t* data, std::size_t size);

/// Write a lossless 8-bit PNG (gray or RGB depending on channels).
void save_image(const Image& img, const std::string& path);

/// BT.601 luma, rounded half up onto the 8-bit grid. 1-channel input is
/// returned unchanged.
Image to_grayscale(const Image& img);

/// Area-average when shrinking, bilinear when enlarging (per axis). Resizing
/// to the source dimensions is the identity.
Image resize(const Image& img, int target_w, int target_h);

/// Separable Gaussian, kernel radius ceil(3*sigma), clamp-to-edge borders.
/// sigma = 0 is the identity.
Image gaussian_blur(const Image& img, double sigma);

/// Sobel 3x3 magnitude sqrt(gx^2+gy^2) on a 1-channel image, clamp-to-edge.
FloatMap gradient_magnitude(const Image& img);

}  // namespace sfkit
