#include "dietcap/raster_io.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dietcap/error.hpp"

namespace dietcap {
namespace {

static_assert(std::endian::native == std::endian::little, "raster IO assumes a little-endian host");

// Reads whitespace-separated header fields, skipping '#' comments.
class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, const char* format) : bytes_(bytes), format_(format) {}

  std::string word() {
    skip_space();
    const auto start = pos_;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) fail(ErrorCode::Input, std::string(format_) + ": truncated header");
    return std::string(bytes_.substr(start, pos_ - start));
  }

  std::size_t positive() {
    const auto w = word();
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
    if (ec != std::errc() || ptr != w.data() + w.size() || v == 0) {
      fail(ErrorCode::Input, std::string(format_) + ": bad header value '" + w + "'");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::string_view payload() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      fail(ErrorCode::Input, std::string(format_) + ": missing payload");
    }
    return bytes_.substr(pos_ + 1);
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::string_view bytes_;
  const char* format_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_pfm(const FloatRaster& r) {
  if (r.channels != 1 && r.channels != 3) fail(ErrorCode::Usage, "PFM supports 1 or 3 channels");
  if (r.values.size() != r.width * r.height * r.channels) fail(ErrorCode::Dimension, "PFM: raster size mismatch");
  std::string out = (r.channels == 1 ? "Pf\n" : "PF\n") + std::to_string(r.width) + " " + std::to_string(r.height) + "\n-1.0\n";
  const auto row_values = r.width * r.channels;
  for (std::size_t y = r.height; y-- > 0;) {
    out.append(reinterpret_cast<const char*>(r.values.data() + y * row_values), row_values * sizeof(float));
  }
  return out;
}

FloatRaster decode_pfm(std::string_view bytes) {
  HeaderReader h(bytes, "PFM");
  const auto magic = h.word();
  FloatRaster r;
  if (magic == "Pf") {
    r.channels = 1;
  } else if (magic == "PF") {
    r.channels = 3;
  } else {
    fail(ErrorCode::Input, "PFM: bad magic '" + magic + "'");
  }
  r.width = h.positive();
  r.height = h.positive();
  const auto scale_text = h.word();
  double scale = 0.0;
  try {
    scale = std::stod(scale_text);
  } catch (const std::exception&) {
    fail(ErrorCode::Input, "PFM: bad scale '" + scale_text + "'");
  }
  if (scale >= 0.0) fail(ErrorCode::Input, "PFM: big-endian data is not supported");
  const auto payload = h.payload();
  const auto row_values = r.width * r.channels;
  const auto n = row_values * r.height;
  if (payload.size() != n * sizeof(float)) {
    fail(ErrorCode::Input, "PFM: expected " + std::to_string(n * sizeof(float)) + " payload bytes, found " +
                               std::to_string(payload.size()));
  }
  r.values.resize(n);
  for (std::size_t y = 0; y < r.height; ++y) {
    const auto src_row = r.height - 1 - y;
    std::memcpy(r.values.data() + y * row_values, payload.data() + src_row * row_values * sizeof(float),
                row_values * sizeof(float));
  }
  return r;
}

std::string encode_pnm(const ByteRaster& r) {
  if (r.channels != 1 && r.channels != 3) fail(ErrorCode::Usage, "PNM supports 1 or 3 channels");
  if (r.values.size() != r.width * r.height * r.channels) fail(ErrorCode::Dimension, "PNM: raster size mismatch");
  std::string out = (r.channels == 1 ? "P5\n" : "P6\n") + std::to_string(r.width) + " " + std::to_string(r.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(r.values.data()), r.values.size());
  return out;
}

ByteRaster decode_pnm(std::string_view bytes) {
  HeaderReader h(bytes, "PNM");
  const auto magic = h.word();
  ByteRaster r;
  if (magic == "P5") {
    r.channels = 1;
  } else if (magic == "P6") {
    r.channels = 3;
  } else {
    fail(ErrorCode::Input, "PNM: unsupported magic '" + magic + "' (need binary P5 or P6)");
  }
  r.width = h.positive();
  r.height = h.positive();
  const auto maxval = h.positive();
  if (maxval != 255) fail(ErrorCode::Input, "PNM: maxval must be 255, got " + std::to_string(maxval));
  const auto payload = h.payload();
  const auto n = r.width * r.height * r.channels;
  if (payload.size() != n) {
    fail(ErrorCode::Input, "PNM: expected " + std::to_string(n) + " payload bytes, found " + std::to_string(payload.size()));
  }
  r.values.assign(payload.begin(), payload.end());
  return r;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "failed writing " + path.string());
}

FloatRaster read_pfm(const std::filesystem::path& path) {
  try {
    return decode_pfm(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Io) throw;
    fail(e.code(), path.string() + ": " + e.detail());
  }
}

void write_pfm(const std::filesystem::path& path, const FloatRaster& raster) { write_file(path, encode_pfm(raster)); }

ByteRaster read_pnm(const std::filesystem::path& path) {
  try {
    return decode_pnm(read_file(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Io) throw;
    fail(e.code(), path.string() + ": " + e.detail());
  }
}

void write_pnm(const std::filesystem::path& path, const ByteRaster& raster) { write_file(path, encode_pnm(raster)); }

}  // namespace dietcap
