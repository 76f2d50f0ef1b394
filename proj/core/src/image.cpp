#include "sam/image.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstring>

#include <fmt/format.h>
#include <png.h>

#include "sam/errors.hpp"
#include "sam/nn/ops.hpp"
#include "sam/samb.hpp"

namespace sam {

namespace {

struct ReadCursor {
  const std::string* bytes;
  std::size_t offset;
};

void read_callback(png_structp png, png_bytep out, png_size_t length) {
  auto* cursor = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cursor->offset + length > cursor->bytes->size()) png_error(png, "truncated PNG data");
  std::memcpy(out, cursor->bytes->data() + cursor->offset, length);
  cursor->offset += length;
}

void write_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), length);
}

void flush_callback(png_structp) {}

[[noreturn]] void error_callback(png_structp png, png_const_charp msg) {
  auto* err = static_cast<std::string*>(png_get_error_ptr(png));
  if (err) *err = msg;
  png_longjmp(png, 1);
}

void warning_callback(png_structp, png_const_charp) {}

// Writes rows with libpng; `color_type` is RGB or PALETTE.
std::string write_png_rows(int width, int height, int color_type, const std::vector<std::uint8_t>& rows,
                           const std::vector<png_color>& palette) {
  std::string out;
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, error_callback, warning_callback);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encode failed: " + err);
  }
  png_set_write_fn(png, &out, write_callback, flush_callback);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  if (color_type == PNG_COLOR_TYPE_PALETTE) {
    png_set_PLTE(png, info, palette.data(), static_cast<int>(palette.size()));
  }
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(width) * (color_type == PNG_COLOR_TYPE_RGB ? 3 : 1);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(rows.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace

Image make_image(int height, int width, double fill) { return Image({3, height, width}, fill); }

void check_image(const Image& img) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw ShapeError("expected a [3,H,W] image, got " + nn::shape_str(img.shape()));
  }
}

int image_height(const Image& img) { return img.dim(1); }
int image_width(const Image& img) { return img.dim(2); }

std::uint8_t to_byte(double v) {
  const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(scaled);
}

double from_byte(std::uint8_t b) { return b / 127.5 - 1.0; }

std::string encode_png(const Image& img) {
  check_image(img);
  const int h = img.dim(1);
  const int w = img.dim(2);
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) rows[(static_cast<std::size_t>(y) * w + x) * 3 + c] = to_byte(img.at(c, y, x));
  return write_png_rows(w, h, PNG_COLOR_TYPE_RGB, rows, {});
}

std::string encode_indexed_png(const std::vector<std::uint8_t>& indices, int height, int width,
                               const std::vector<std::array<std::uint8_t, 3>>& palette) {
  if (indices.size() != static_cast<std::size_t>(height) * width) {
    throw ShapeError("indexed PNG: index count does not match dimensions");
  }
  std::vector<png_color> pal;
  for (const auto& p : palette) pal.push_back({p[0], p[1], p[2]});
  return write_png_rows(width, height, PNG_COLOR_TYPE_PALETTE, indices, pal);
}

Image decode_png(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw LoadError("not a PNG image");
  }
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, error_callback, warning_callback);
  if (!png) throw LoadError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> rows;
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("PNG decode failed: " + err);
  }
  ReadCursor cursor{&bytes, 0};
  png_set_read_fn(png, &cursor, read_callback);
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  if (stride != static_cast<std::size_t>(width) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("unsupported PNG pixel layout");
  }
  rows.resize(stride * height);
  std::vector<png_bytep> ptrs(height);
  for (png_uint_32 y = 0; y < height; ++y) ptrs[y] = rows.data() + y * stride;
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Image img = make_image(static_cast<int>(height), static_cast<int>(width));
  for (png_uint_32 y = 0; y < height; ++y)
    for (png_uint_32 x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, static_cast<int>(y), static_cast<int>(x)) = from_byte(rows[y * stride + x * 3 + c]);
  return img;
}

Image read_png(const std::filesystem::path& path) {
  try {
    return decode_png(read_file(path));
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  }
}

void write_png(const std::filesystem::path& path, const Image& img) {
  write_file_atomic(path, encode_png(img));
}

Image resize_image(const Image& img, int height, int width) {
  check_image(img);
  if (img.dim(1) == height && img.dim(2) == width) return img;
  return nn::resize_bilinear(img, height, width);
}

Image hstack(const std::vector<Image>& images) {
  if (images.empty()) throw UsageError("hstack of zero images");
  const int h = images.front().dim(1);
  int total = 0;
  for (const Image& im : images) {
    check_image(im);
    if (im.dim(1) != h) throw ShapeError("hstack: images differ in height");
    total += im.dim(2);
  }
  Image out = make_image(h, total);
  int x0 = 0;
  for (const Image& im : images) {
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < im.dim(2); ++x) out.at(c, y, x0 + x) = im.at(c, y, x);
    x0 += im.dim(2);
  }
  return out;
}

Image quantize_8bit(const Image& img) {
  Image out = img;
  for (double& v : out.values()) v = from_byte(to_byte(v));
  return out;
}

}  // namespace sam
