#include "sfkit/image.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>

#include "sfkit/kernels.hpp"

namespace sfkit {

std::uint8_t to_u8(float v) {
  const float q = std::floor(v * 255.0f + 0.5f);
  return static_cast<std::uint8_t>(std::min(255.0f, std::max(0.0f, q)));
}

std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> out(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) out[i] = to_u8(img.pixels[i]);
  return out;
}

Image from_bytes(int width, int height, int channels, const std::vector<std::uint8_t>& bytes) {
  Image img(width, height, channels);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = from_u8(bytes[i]);
  return img;
}

// ---------------------------------------------------------------------------
// PNG / JPEG codecs
// ---------------------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct MemReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

void png_mem_read(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->size) {
    png_error(png, "unexpected end of stream");
  }
  std::memcpy(out, r->data + r->pos, n);
  r->pos += n;
}

Image decode_png(const std::uint8_t* data, std::size_t size) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError(ImageIoStatus::kCorruptStream, "png: allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw ImageIoError(ImageIoStatus::kCorruptStream, "png: allocation failed");
  }

  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError(ImageIoStatus::kCorruptStream, "png: corrupt stream");
  }

  MemReader reader{data, size, 0};
  png_set_read_fn(png, &reader, png_mem_read);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ImageIoError(ImageIoStatus::kUnsupportedFormat,
                       "png: unsupported channel count after expansion");
  }

  raw.resize(static_cast<std::size_t>(w) * h * channels);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y)
    rows[y] = raw.data() + static_cast<std::size_t>(y) * w * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  return from_bytes(static_cast<int>(w), static_cast<int>(h), channels, raw);
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image decode_jpeg(const std::uint8_t* data, std::size_t size) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageIoError(ImageIoStatus::kCorruptStream, "jpeg: corrupt stream");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, const_cast<unsigned char*>(data), static_cast<unsigned long>(size));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;  // always decode to 3 channels
  jpeg_start_decompress(&cinfo);

  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = raw.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);

  return from_bytes(w, h, 3, raw);
}

}  // namespace

Image decode_image(const std::uint8_t* data, std::size_t size) {
  static const std::uint8_t kPngSig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (size >= 8 && std::memcmp(data, kPngSig, 8) == 0) return decode_png(data, size);
  if (size >= 2 && data[0] == 0xff && data[1] == 0xd8) return decode_jpeg(data, size);
  throw ImageIoError(ImageIoStatus::kUnsupportedFormat, "not a PNG or JPEG stream");
}

Image load_image(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw ImageIoError(ImageIoStatus::kNotFound, "cannot open " + path);
  std::fseek(f.get(), 0, SEEK_END);
  const long len = std::ftell(f.get());
  std::fseek(f.get(), 0, SEEK_SET);
  if (len <= 0) throw ImageIoError(ImageIoStatus::kCorruptStream, "empty file " + path);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (std::fread(buf.data(), 1, buf.size(), f.get()) != buf.size())
    throw ImageIoError(ImageIoStatus::kCorruptStream, "short read on " + path);
  try {
    return decode_image(buf.data(), buf.size());
  } catch (ImageIoError& e) {
    throw ImageIoError(e.status(), std::string(e.what()) + " (" + path + ")");
  }
}

void save_image(const Image& img, const std::string& path) {
  if (img.width < 1 || img.height < 1 || (img.channels != 1 && img.channels != 3))
    throw ImageIoError(ImageIoStatus::kWriteFailed, "save_image: invalid image");

  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f)
    throw ImageIoError(ImageIoStatus::kWriteFailed,
                       "cannot write " + path + ": " + std::strerror(errno));

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw ImageIoError(ImageIoStatus::kWriteFailed, "png: allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageIoError(ImageIoStatus::kWriteFailed, "png: allocation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError(ImageIoStatus::kWriteFailed, "png: write failed for " + path);
  }

  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> raw = to_bytes(img);
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, raw.data() + static_cast<std::size_t>(y) * img.width * img.channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// ---------------------------------------------------------------------------
// Elementary operations
// ---------------------------------------------------------------------------

Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  if (img.channels != 3)
    throw std::invalid_argument("to_grayscale: channels must be 1 or 3");
  Image out(img.width, img.height, 1);
  kernels::gray_from_rgb(img.pixels.data(), out.pixels.data(),
                         static_cast<std::size_t>(img.width) * img.height);
  return out;
}

Image resize(const Image& img, int target_w, int target_h) {
  if (target_w < 1 || target_h < 1)
    throw std::invalid_argument("resize: target dimensions must be >= 1");
  if (target_w == img.width && target_h == img.height) return img;

  auto one_pass = [](const Image& src, int dw, int dh) {
    Image dst(dw, dh, src.channels);
    if (dw <= src.width && dh <= src.height) {
      kernels::resize_area(src.pixels.data(), src.width, src.height, src.channels,
                           dst.pixels.data(), dw, dh);
    } else {
      kernels::resize_bilinear(src.pixels.data(), src.width, src.height, src.channels,
                               dst.pixels.data(), dw, dh);
    }
    return dst;
  };

  const bool shrink_w = target_w <= img.width;
  const bool shrink_h = target_h <= img.height;
  if (shrink_w == shrink_h) return one_pass(img, target_w, target_h);
  // Mixed direction: handle each axis with its own filter.
  Image mid = one_pass(img, target_w, img.height);
  return one_pass(mid, target_w, target_h);
}

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma < 0.0) throw std::invalid_argument("gaussian_blur: sigma must be >= 0");
  if (sigma == 0.0) return img;

  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    taps[i + radius] = v;
    sum += v;
  }
  for (auto& t : taps) t /= sum;

  Image tmp(img.width, img.height, img.channels);
  Image out(img.width, img.height, img.channels);
  kernels::conv_h(img.pixels.data(), tmp.pixels.data(), img.width, img.height,
                  img.channels, taps.data(), radius);
  kernels::conv_v(tmp.pixels.data(), out.pixels.data(), img.width, img.height,
                  img.channels, taps.data(), radius);
  return out;
}

FloatMap gradient_magnitude(const Image& img) {
  if (img.channels != 1)
    throw std::invalid_argument("gradient_magnitude: expects a 1-channel image");
  FloatMap out(img.width, img.height);
  kernels::sobel_magnitude(img.pixels.data(), out.values.data(), img.width, img.height);
  return out;
}

}  // namespace sfkit
