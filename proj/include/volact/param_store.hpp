#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "volact/errors.hpp"

namespace volact {

/// One named block of parameters, viewed as a rows x cols row-major matrix.
struct LayoutEntry {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  std::size_t end() const { return offset + size(); }
};

/// Flat parameter vector with a same-length gradient buffer and a layout table.
class ParamStore {
 public:
  /// Appends a zero-initialized block and returns its layout entry.
  const LayoutEntry& add(std::string name, std::size_t rows, std::size_t cols) {
    LayoutEntry entry{std::move(name), values_.size(), rows, cols};
    values_.resize(entry.end(), 0.0);
    grads_.resize(entry.end(), 0.0);
    layout_.push_back(std::move(entry));
    return layout_.back();
  }

  std::size_t size() const { return values_.size(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> grads() { return grads_; }
  std::span<const double> grads() const { return grads_; }

  std::span<double> values(const LayoutEntry& e) { return std::span(values_).subspan(e.offset, e.size()); }
  std::span<const double> values(const LayoutEntry& e) const {
    return std::span(values_).subspan(e.offset, e.size());
  }
  std::span<double> grads(const LayoutEntry& e) { return std::span(grads_).subspan(e.offset, e.size()); }

  const std::vector<LayoutEntry>& layout() const { return layout_; }

  const LayoutEntry* find(const std::string& name) const {
    auto it = std::find_if(layout_.begin(), layout_.end(), [&](const auto& e) { return e.name == name; });
    return it == layout_.end() ? nullptr : &*it;
  }

  void zero_grads() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  /// Layout ranges are disjoint, ordered and cover the vector exactly.
  bool layout_valid() const {
    std::size_t cursor = 0;
    for (const auto& e : layout_) {
      if (e.offset != cursor) return false;
      cursor = e.end();
    }
    return cursor == values_.size() && grads_.size() == values_.size();
  }

  bool same_layout(const ParamStore& other) const {
    if (layout_.size() != other.layout_.size()) return false;
    for (std::size_t i = 0; i < layout_.size(); ++i) {
      const auto& a = layout_[i];
      const auto& b = other.layout_[i];
      if (a.name != b.name || a.offset != b.offset || a.rows != b.rows || a.cols != b.cols) return false;
    }
    return true;
  }

 private:
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<LayoutEntry> layout_;
};

namespace detail {

template <class T>
void write_le(std::ostream& out, T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <class T>
T read_le(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  in.read(bytes.data(), sizeof(T));
  if (!in) throw IoError("checkpoint: unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace detail

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary checkpoint: "VACT", u32 version, u32 entry count, entries
/// (u32 name length, name, u64 offset, u64 rows, u64 cols), u64 value count,
/// then little-endian f64 values.
inline void write_checkpoint(std::ostream& out, const ParamStore& store) {
  out.write("VACT", 4);
  detail::write_le<std::uint32_t>(out, kCheckpointVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.layout().size()));
  for (const auto& e : store.layout()) {
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    detail::write_le<std::uint64_t>(out, e.offset);
    detail::write_le<std::uint64_t>(out, e.rows);
    detail::write_le<std::uint64_t>(out, e.cols);
  }
  detail::write_le<std::uint64_t>(out, store.size());
  for (double v : store.values()) detail::write_le<double>(out, v);
}

inline ParamStore read_checkpoint(std::istream& in) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "VACT", 4) != 0) throw IoError("checkpoint: bad magic bytes");
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::read_le<std::uint32_t>(in);
  ParamStore store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint32_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto offset = detail::read_le<std::uint64_t>(in);
    const auto rows = detail::read_le<std::uint64_t>(in);
    const auto cols = detail::read_le<std::uint64_t>(in);
    const auto& e = store.add(std::move(name), rows, cols);
    if (e.offset != offset) throw IoError("checkpoint: layout table is not contiguous");
  }
  const auto n = detail::read_le<std::uint64_t>(in);
  if (n != store.size()) throw IoError("checkpoint: value count does not match layout");
  for (auto& v : store.values()) v = detail::read_le<double>(in);
  return store;
}

inline void save_checkpoint(const std::filesystem::path& path, const ParamStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, store);
  if (!out) throw IoError("failed writing " + path.string());
}

inline ParamStore load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace volact
