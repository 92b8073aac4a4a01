#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "wmocr/tensor.hpp"

namespace wmocr {

/// Grayscale raster, 0 = black, 1 = white, row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> px;

  Image() = default;
  Image(int h, int w, double fill = 1.0)
      : height(h), width(w), px(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw std::invalid_argument("negative image dims");
  }

  std::size_t size() const { return px.size(); }
  double& at(int r, int c) { return px[static_cast<std::size_t>(r) * width + c]; }
  double at(int r, int c) const {
    return px[static_cast<std::size_t>(r) * width + c];
  }
  // Edge-replicated access.
  double clamped(int r, int c) const {
    return at(std::clamp(r, 0, height - 1), std::clamp(c, 0, width - 1));
  }
  bool same_dims(const Image& o) const {
    return height == o.height && width == o.width;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Binary raster marking where perturbation is permitted.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> on;

  Mask() = default;
  Mask(int h, int w, bool fill = false)
      : height(h), width(w),
        on(static_cast<std::size_t>(h) * w, fill ? 1 : 0) {}

  std::size_t size() const { return on.size(); }
  bool at(int r, int c) const {
    return on[static_cast<std::size_t>(r) * width + c] != 0;
  }
  void set(int r, int c, bool v) {
    on[static_cast<std::size_t>(r) * width + c] = v ? 1 : 0;
  }
  std::size_t area() const {
    return static_cast<std::size_t>(std::count(on.begin(), on.end(), 1));
  }
  bool empty() const { return area() == 0; }

  friend bool operator==(const Mask&, const Mask&) = default;
};

inline void require_same_dims(const Image& a, const Image& b, const char* what) {
  if (!a.same_dims(b)) {
    throw std::invalid_argument(std::string(what) + ": image dims " +
                                std::to_string(a.height) + "x" +
                                std::to_string(a.width) + " vs " +
                                std::to_string(b.height) + "x" +
                                std::to_string(b.width));
  }
}

inline void require_same_dims(const Image& a, const Mask& m, const char* what) {
  if (a.height != m.height || a.width != m.width) {
    throw std::invalid_argument(std::string(what) + ": mask dims differ from image");
  }
}

inline void clamp01(Image& img) {
  for (double& v : img.px) v = std::clamp(v, 0.0, 1.0);
}

inline Tensor to_tensor(const Image& img) {
  return Tensor({static_cast<std::size_t>(img.height),
                 static_cast<std::size_t>(img.width), 1},
                img.px);
}

inline double linf_distance(const Image& a, const Image& b) {
  require_same_dims(a, b, "linf_distance");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.px[i] - b.px[i]));
  return m;
}

// Binary PGM (P5, maxval 255); gray = round(value * 255).

inline std::uint8_t to_gray8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    bytes[i] = static_cast<char>(to_gray8(img.px[i]));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline void write_pgm(const std::filesystem::path& path, const Mask& mask) {
  Image img(mask.height, mask.width, 0.0);
  for (std::size_t i = 0; i < mask.size(); ++i) img.px[i] = mask.on[i] ? 1.0 : 0.0;
  write_pgm(path, img);
}

namespace detail {
inline std::string pgm_token(std::istream& in) {
  std::string tok;
  char ch;
  while (in.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}
}  // namespace detail

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  if (detail::pgm_token(in) != "P5") {
    throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
  }
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::pgm_token(in));
    h = std::stoi(detail::pgm_token(in));
    maxval = std::stoi(detail::pgm_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  if (maxval != 255 || w <= 0 || h <= 0) {
    throw std::runtime_error(path.string() + ": unsupported PGM header");
  }
  std::vector<char> bytes(static_cast<std::size_t>(w) * h);
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
    throw std::runtime_error(path.string() + ": truncated PGM data");
  }
  Image img(h, w);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    img.px[i] = static_cast<unsigned char>(bytes[i]) / 255.0;
  }
  return img;
}

// Exact copy for pipeline stages: "WMF8", i32 height, i32 width, f64 pixels,
// little-endian. PGM alone would quantize perturbations below 1/255.

inline void write_f64(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::int32_t dims[2] = {img.height, img.width};
  out.write("WMF8", 4);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(img.px.data()),
            static_cast<std::streamsize>(img.px.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

inline Image read_f64(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[4] = {};
  std::int32_t dims[2] = {};
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || std::string(magic, 4) != "WMF8" || dims[0] < 0 || dims[1] < 0) {
    throw std::runtime_error(path.string() + ": not an f64 image");
  }
  Image img(dims[0], dims[1]);
  in.read(reinterpret_cast<char*>(img.px.data()),
          static_cast<std::streamsize>(img.px.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(img.px.size() * sizeof(double))) {
    throw std::runtime_error(path.string() + ": truncated f64 image");
  }
  return img;
}

inline Mask read_mask_pgm(const std::filesystem::path& path) {
  const Image img = read_pgm(path);
  Mask m(img.height, img.width);
  for (std::size_t i = 0; i < img.size(); ++i) m.on[i] = img.px[i] > 0.5 ? 1 : 0;
  return m;
}

}  // namespace wmocr
