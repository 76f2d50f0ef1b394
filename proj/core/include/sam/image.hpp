#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sam/nn/tensor.hpp"

namespace sam {

/// RGB image as a [3,H,W] tensor with values in [-1, 1]. 8-bit sRGB only
/// appears at file and network boundaries.
using Image = nn::Tensor;

Image make_image(int height, int width, double fill = 0.0);
int image_height(const Image& img);
int image_width(const Image& img);
/// Throws ShapeError unless `img` is [3,H,W].
void check_image(const Image& img);

std::uint8_t to_byte(double v);
double from_byte(std::uint8_t b);

std::string encode_png(const Image& img);
Image decode_png(const std::string& bytes);
Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& img);

/// 8-bit palette PNG; `indices` is row-major [height*width].
std::string encode_indexed_png(const std::vector<std::uint8_t>& indices, int height, int width,
                               const std::vector<std::array<std::uint8_t, 3>>& palette);

Image resize_image(const Image& img, int height, int width);
/// Concatenates equally tall images left to right.
Image hstack(const std::vector<Image>& images);
/// Quantizes through the 8-bit representation used on disk.
Image quantize_8bit(const Image& img);

}  // namespace sam
