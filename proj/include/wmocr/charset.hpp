#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "wmocr/ctc.hpp"

namespace wmocr {

inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

/// Ordered unique characters; the CTC blank is implicit at index size().
class Charset {
 public:
  Charset() = default;

  Charset(std::string id, std::string chars)
      : id_(std::move(id)), chars_(std::move(chars)) {
    index_.fill(-1);
    for (std::size_t i = 0; i < chars_.size(); ++i) {
      const auto ch = static_cast<unsigned char>(chars_[i]);
      if (index_[ch] != -1) {
        throw std::invalid_argument(std::string("duplicate charset entry '") +
                                    chars_[i] + "'");
      }
      index_[ch] = static_cast<int>(i);
    }
  }

  // 62 alphanumerics plus space and period.
  static Charset main() {
    return Charset("main",
                   "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ"
                   "abcdefghijklmnopqrstuvwxyz .");
  }

  static Charset oracle16() { return Charset("oracle16", "0123456789ABCDEF"); }

  static Charset by_id(std::string_view id) {
    if (id == "main") return main();
    if (id == "oracle16") return oracle16();
    throw std::invalid_argument("unknown charset id '" + std::string(id) + "'");
  }

  const std::string& id() const { return id_; }
  const std::string& chars() const { return chars_; }
  std::size_t size() const { return chars_.size(); }
  int blank() const { return static_cast<int>(chars_.size()); }
  char at(int i) const { return chars_.at(static_cast<std::size_t>(i)); }

  bool contains(char c) const { return index_[static_cast<unsigned char>(c)] >= 0; }

  int index_of(char c) const {
    const int i = index_[static_cast<unsigned char>(c)];
    if (i < 0) {
      throw std::invalid_argument(std::string("character '") + c +
                                  "' not in charset " + id_);
    }
    return i;
  }

  LabelSeq encode(std::string_view text) const {
    LabelSeq out;
    out.reserve(text.size());
    for (char c : text) out.push_back(index_of(c));
    return out;
  }

  std::string decode(const LabelSeq& labels) const {
    std::string out;
    out.reserve(labels.size());
    for (int l : labels) out.push_back(at(l));
    return out;
  }

  std::uint64_t hash() const { return fnv1a64(chars_, fnv1a64(id_)); }

  friend bool operator==(const Charset& a, const Charset& b) {
    return a.id_ == b.id_ && a.chars_ == b.chars_;
  }

 private:
  std::string id_;
  std::string chars_;
  std::array<int, 256> index_{};
};

}  // namespace wmocr
