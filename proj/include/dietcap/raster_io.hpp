#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dietcap {

// Row-major, top row first, interleaved channels.
template <typename T>
struct Raster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<T> values;

  T at(std::size_t x, std::size_t y, std::size_t c = 0) const { return values[(y * width + x) * channels + c]; }
  bool operator==(const Raster&) const = default;
};

using FloatRaster = Raster<float>;
using ByteRaster = Raster<std::uint8_t>;

// PFM: "Pf" (1 channel) or "PF" (3 channels), negative scale = little-endian,
// rows stored bottom to top as the format requires.
std::string encode_pfm(const FloatRaster& raster);
FloatRaster decode_pfm(std::string_view bytes);

// Binary PGM (P5, 1 channel) and PPM (P6, 3 channels), maxval 255.
std::string encode_pnm(const ByteRaster& raster);
ByteRaster decode_pnm(std::string_view bytes);

FloatRaster read_pfm(const std::filesystem::path& path);
void write_pfm(const std::filesystem::path& path, const FloatRaster& raster);
ByteRaster read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const ByteRaster& raster);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dietcap
