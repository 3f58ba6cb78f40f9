#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "dietcap/model.hpp"
#include "dietcap/rng.hpp"

namespace testing {

// d=8, 2 heads, 1 encoder and 1 decoder layer, 2 regions, 5 tokens.
inline dietcap::ModelConfig tiny_config(dietcap::Variant variant = dietcap::Variant::GL) {
  dietcap::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.n_regions = 2;
  c.region_dim = 4;
  c.ffn_dim = 16;
  c.vocab_size = 5;
  c.max_caption_len = 6;
  c.global_dim = 4;
  c.image_height = 4;
  c.image_width = 4;
  c.image_channels = 3;
  c.conv_channels = {2};
  c.variant = variant;
  return c;
}

inline dietcap::Image random_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  dietcap::Rng rng(seed);
  dietcap::Image img;
  img.height = h;
  img.width = w;
  img.channels = c;
  for (std::size_t i = 0; i < h * w * c; ++i) img.pixels.push_back(static_cast<float>(rng.uniform()));
  return img;
}

inline std::vector<float> random_values(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  dietcap::Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal(0.0, scale));
  return v;
}

inline dietcap::VisualInput random_input(const dietcap::ModelConfig& c, std::uint64_t seed, std::size_t regions = 0) {
  dietcap::VisualInput in;
  if (c.uses_global()) {
    if (c.frozen_global()) {
      in.global = dietcap::GlobalFeature::from_vector(random_values(c.global_dim, seed + 1));
    } else {
      in.global = dietcap::GlobalFeature::from_image(random_image(c.image_height, c.image_width, c.image_channels, seed + 2));
    }
  }
  if (c.uses_local()) {
    const std::size_t n = regions == 0 ? c.n_regions : regions;
    in.regions = dietcap::RegionalFeatures::padded(c.n_regions, c.region_dim, random_values(n * c.region_dim, seed + 3), n);
  }
  return in;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("dietcap-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline double rel_diff(double a, double b) {
  const double d = std::max(std::abs(a), std::abs(b));
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

}  // namespace testing

