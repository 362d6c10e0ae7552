#include "gradet/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gradet {

WordImage WordImage::from_gray(const GrayImage& gray, std::string source) {
  WordImage image;
  image.height = gray.rows();
  image.width = gray.cols();
  image.source = std::move(source);
  const auto plane = static_cast<std::size_t>(gray.size());
  image.pixels.resize(plane * kChannels);
  for (Index c = 0; c < kChannels; ++c) {
    std::copy(gray.data(), gray.data() + plane, image.pixels.begin() + static_cast<std::ptrdiff_t>(c * plane));
  }
  return image;
}

WordImage resize_bilinear(const WordImage& image, Index height, Index width) {
  if (image.height == height && image.width == width) return image;
  if (image.height <= 0 || image.width <= 0) throw std::invalid_argument("resize_bilinear: empty image");
  WordImage out;
  out.height = height;
  out.width = width;
  out.source = image.source;
  out.pixels.resize(static_cast<std::size_t>(WordImage::kChannels * height * width));
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  auto source_coord = [](Index dst, double scale, Index limit, Index& lo, Index& hi, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(limit - 1));
    lo = static_cast<Index>(std::floor(s));
    hi = std::min(lo + 1, limit - 1);
    frac = s - static_cast<double>(lo);
  };
  for (Index y = 0; y < height; ++y) {
    Index y0, y1;
    double fy;
    source_coord(y, sy, image.height, y0, y1, fy);
    for (Index x = 0; x < width; ++x) {
      Index x0, x1;
      double fx;
      source_coord(x, sx, image.width, x0, x1, fx);
      for (Index c = 0; c < WordImage::kChannels; ++c) {
        const double top = image.at(c, y0, x0) * (1.0 - fx) + image.at(c, y0, x1) * fx;
        const double bottom = image.at(c, y1, x0) * (1.0 - fx) + image.at(c, y1, x1) * fx;
        out.at(c, y, x) = static_cast<float>(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

std::string encode_pgm(const GrayImage& image) {
  std::ostringstream out;
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  std::string data(static_cast<std::size_t>(image.size()), '\0');
  for (Index i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image.data()[i], 0.0f, 1.0f);
    data[static_cast<std::size_t>(i)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  out << data;
  return out.str();
}

GrayImage decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto next_token = [&]() -> std::string {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (next_token() != "P5") throw FormatError("not a binary PGM (P5) image");
  Index width = 0, height = 0, maxval = 0;
  try {
    width = std::stoll(next_token());
    height = std::stoll(next_token());
    maxval = std::stoll(next_token());
  } catch (const std::exception&) {
    throw FormatError("malformed PGM header");
  }
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw FormatError("unsupported PGM geometry or maxval");
  }
  ++pos;  // single whitespace byte before the raster
  if (bytes.size() < pos + static_cast<std::size_t>(width * height)) throw FormatError("truncated PGM raster");
  GrayImage image(height, width);
  for (Index i = 0; i < width * height; ++i) {
    image.data()[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)])) /
                      static_cast<float>(maxval);
  }
  return image;
}

void write_pgm(const std::string& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << encode_pgm(image);
}

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return decode_pgm(buffer.str());
}

WordImage load_word_image(const std::string& path) { return WordImage::from_gray(read_pgm(path), path); }

}  // namespace gradet
