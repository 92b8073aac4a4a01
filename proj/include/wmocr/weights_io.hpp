#pragma once

// Weights file, little-endian:
//   "OMW1" | u64 config hash | u64 charset hash | u32 tensor count |
//   per tensor: u32 rank, u64 dims[rank], f64 data[] | u32 CRC32 of all
//   preceding bytes.
// Tensors are the six model parameters followed by a metadata vector
// [epochs, val_accuracy, seed_hi, seed_lo].

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include <zlib.h>

#include "wmocr/model.hpp"

namespace wmocr {

static_assert(std::endian::native == std::endian::little,
              "weights I/O assumes a little-endian host");

class WeightsFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kWeightsMagic[4] = {'O', 'M', 'W', '1'};

namespace detail {

inline std::uint32_t crc32_of(const std::vector<char>& buf, std::size_t n) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n)));
}

template <typename T>
void put(std::vector<char>& out, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  out.insert(out.end(), b, b + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<char>& buf, std::size_t end, std::string path)
      : buf_(buf), end_(end), path_(std::move(path)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  void need(std::size_t n) const {
    if (end_ - pos_ < n) throw WeightsFormatError(path_ + ": truncated weights file");
  }

  std::size_t remaining() const { return end_ - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 4;
  std::string path_;
};

}  // namespace detail

inline void save_weights(const std::filesystem::path& path, const ModelWeights& w) {
  std::vector<char> out(kWeightsMagic, kWeightsMagic + 4);
  detail::put<std::uint64_t>(out, w.config.hash());
  detail::put<std::uint64_t>(out, w.charset.hash());
  const Tensor meta({4}, {static_cast<double>(w.epochs), w.val_accuracy,
                          static_cast<double>(w.config.seed >> 32),
                          static_cast<double>(w.config.seed & 0xffffffffu)});
  auto tensors = w.params();
  tensors.push_back(&meta);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const Tensor* t : tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t->rank()));
    for (std::size_t d : t->shape()) detail::put<std::uint64_t>(out, d);
    for (double v : t->data()) detail::put<double>(out, v);
  }
  detail::put<std::uint32_t>(out, detail::crc32_of(out, out.size()));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

inline ModelWeights load_weights(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + where);
  const std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (buf.size() < 4 || std::memcmp(buf.data(), kWeightsMagic, 3) != 0) {
    throw WeightsFormatError(where + ": not a weights file (bad magic)");
  }
  if (buf[3] != kWeightsMagic[3]) {
    throw WeightsFormatError(where + ": unsupported weights version '" +
                             std::string(1, buf[3]) + "', expected '1'");
  }
  if (buf.size() < 4 + 8 + 8 + 4 + 4) throw WeightsFormatError(where + ": truncated weights file");

  const std::size_t body_end = buf.size() - 4;
  detail::Reader in(buf, body_end, where);
  const auto config_hash = in.get<std::uint64_t>();
  const auto charset_hash = in.get<std::uint64_t>();
  const auto count = in.get<std::uint32_t>();
  if (count != 7) throw WeightsFormatError(where + ": expected 7 tensors, found " + std::to_string(count));

  std::vector<Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw WeightsFormatError(where + ": implausible tensor rank");
    Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = in.get<std::uint64_t>();
      if (dim != 0 && n > in.remaining() / 8 / dim) {
        throw WeightsFormatError(where + ": truncated weights file");
      }
      shape.push_back(dim);
      n *= dim;
    }
    in.need(n * 8);
    std::vector<double> data(n);
    for (double& v : data) v = in.get<double>();
    tensors.emplace_back(std::move(shape), std::move(data));
  }
  if (in.pos() != body_end) throw WeightsFormatError(where + ": trailing bytes before checksum");
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + body_end, 4);
  if (stored != detail::crc32_of(buf, body_end)) {
    throw WeightsFormatError(where + ": checksum mismatch");
  }

  ModelWeights w;
  bool found = false;
  for (const char* id : {"main", "oracle16"}) {
    const Charset cs = Charset::by_id(id);
    if (cs.hash() == charset_hash) {
      w.charset = cs;
      found = true;
    }
  }
  if (!found) throw WeightsFormatError(where + ": unknown charset");

  const Tensor& k1 = tensors[0];
  const Tensor& k2 = tensors[2];
  const Tensor& wd = tensors[4];
  if (k1.rank() != 4 || k2.rank() != 4 || wd.rank() != 2 || tensors[6].size() != 4) {
    throw WeightsFormatError(where + ": tensor layout does not match the model");
  }
  w.config.charset_id = w.charset.id();
  w.config.conv1 = static_cast<int>(k1.dim(3));
  w.config.conv2 = static_cast<int>(k2.dim(3));
  w.config.height = static_cast<int>(wd.dim(0) / k2.dim(3) * 4);
  if (w.config.hash() != config_hash) {
    throw WeightsFormatError(where + ": config hash mismatch");
  }
  const Tensor& meta = tensors[6];
  w.epochs = static_cast<int>(meta[0]);
  w.val_accuracy = meta[1];
  w.config.seed = (static_cast<std::uint64_t>(meta[2]) << 32) | static_cast<std::uint64_t>(meta[3]);

  const ModelWeights ref = init_weights(w.config);
  auto dst = w.params();
  const auto shapes = ref.params();
  for (std::size_t i = 0; i < 6; ++i) {
    if (tensors[i].shape() != shapes[i]->shape()) {
      throw WeightsFormatError(where + ": tensor " + std::to_string(i) + " has shape " +
                               shape_string(tensors[i].shape()) + ", expected " +
                               shape_string(shapes[i]->shape()));
    }
    *dst[i] = std::move(tensors[i]);
  }
  if (!w.all_finite()) throw WeightsFormatError(where + ": non-finite weights");
  return w;
}

}  // namespace wmocr
