#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "volact/errors.hpp"

namespace volact {

/// Interleaved RGB image with values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3, 0.0) {}
  Image(int w, int h, std::vector<double> data) : width(w), height(h), rgb(std::move(data)) {
    if (rgb.size() != static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3)
      throw DegenerateInput("image buffer size does not match its dimensions");
  }

  std::size_t pixels() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  double& at(int x, int y, int c) { return rgb[3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) + static_cast<std::size_t>(c)]; }
  double at(int x, int y, int c) const { return rgb[3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) + static_cast<std::size_t>(c)]; }
};

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline void ensure_parent_dir(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
}

/// Binary 8-bit PPM (P6).
inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  ensure_parent_dir(path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<char> bytes(img.rgb.size());
  for (std::size_t i = 0; i < img.rgb.size(); ++i) bytes[i] = static_cast<char>(quantize(img.rgb[i]));
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        t.push_back(c);
        break;
      }
    }
    while (f.get(c) && !std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    return t;
  };
  if (token() != "P6") throw IoError(path.string() + " is not a binary PPM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError("malformed PPM header in " + path.string());
  }
  if (w < 1 || h < 1 || maxval != 255) throw IoError("unsupported PPM header in " + path.string());
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
  f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (f.gcount() != static_cast<std::streamsize>(bytes.size())) throw IoError("truncated PPM " + path.string());
  Image img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.rgb[i] = bytes[i] / 255.0;
  return img;
}

/// Writes an H x W x C interleaved buffer as C little-endian float32 planes,
/// plus `<path>.json` describing the layout.
inline void write_raw_planes(const std::filesystem::path& path, const std::vector<double>& data, int height,
                             int width, int channels) {
  const std::size_t n = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  if (data.size() != n * static_cast<std::size_t>(channels)) throw DegenerateInput("raw plane buffer size mismatch");
  ensure_parent_dir(path);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  for (int c = 0; c < channels; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      const float v = static_cast<float>(data[p * static_cast<std::size_t>(channels) + static_cast<std::size_t>(c)]);
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      const char le[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                          static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
      f.write(le, 4);
    }
  }
  if (!f) throw IoError("failed writing " + path.string());
  std::ofstream side(path.string() + ".json");
  side << nlohmann::json{{"H", height}, {"W", width}, {"channels", channels}, {"dtype", "float32"},
                         {"layout", "planar"}}
              .dump(2)
       << "\n";
  if (!side) throw IoError("failed writing sidecar for " + path.string());
}

struct RawPlanes {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;  // interleaved H x W x C
};

inline RawPlanes read_raw_planes(const std::filesystem::path& path) {
  std::ifstream side(path.string() + ".json");
  if (!side) throw IoError("missing sidecar for " + path.string());
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad sidecar for " + path.string() + ": " + e.what());
  }
  RawPlanes out;
  out.height = meta.at("H").get<int>();
  out.width = meta.at("W").get<int>();
  out.channels = meta.at("channels").get<int>();
  const std::size_t n = static_cast<std::size_t>(out.height) * static_cast<std::size_t>(out.width);
  out.data.assign(n * static_cast<std::size_t>(out.channels), 0.0);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  for (int c = 0; c < out.channels; ++c) {
    for (std::size_t p = 0; p < n; ++p) {
      unsigned char le[4];
      if (!f.read(reinterpret_cast<char*>(le), 4)) throw IoError("truncated raw planes " + path.string());
      const std::uint32_t bits = static_cast<std::uint32_t>(le[0]) | (static_cast<std::uint32_t>(le[1]) << 8) |
                                 (static_cast<std::uint32_t>(le[2]) << 16) | (static_cast<std::uint32_t>(le[3]) << 24);
      float v;
      std::memcpy(&v, &bits, 4);
      out.data[p * static_cast<std::size_t>(out.channels) + static_cast<std::size_t>(c)] = v;
    }
  }
  return out;
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  ensure_parent_dir(path);
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << j.dump(2) << "\n";
  if (!f) throw IoError("failed writing " + path.string());
}

}  // namespace volact
