#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "gradet/common.hpp"

namespace gradet {

/// Single-channel intensities in [0, 1]; 1 is a blank page, 0 full ink.
using GrayImage = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// (3, H, W) intensities in [0, 1], channel-major.
struct WordImage {
  Index height = 0;
  Index width = 0;
  std::vector<float> pixels;
  std::string source;

  static constexpr Index kChannels = 3;

  float at(Index c, Index y, Index x) const { return pixels[static_cast<std::size_t>((c * height + y) * width + x)]; }
  float& at(Index c, Index y, Index x) { return pixels[static_cast<std::size_t>((c * height + y) * width + x)]; }

  /// Replicates a gray image into three channels.
  static WordImage from_gray(const GrayImage& gray, std::string source);
};

/// Bilinear resampling with half-pixel centers; aspect ratio is not preserved.
WordImage resize_bilinear(const WordImage& image, Index height, Index width);

/// 8-bit binary PGM (P5).
std::string encode_pgm(const GrayImage& image);
GrayImage decode_pgm(const std::string& bytes);
void write_pgm(const std::string& path, const GrayImage& image);
GrayImage read_pgm(const std::string& path);

/// Loads a PGM as a 3-channel image.
WordImage load_word_image(const std::string& path);

}  // namespace gradet
