#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dietcap/geometry.hpp"
#include "dietcap/model.hpp"

namespace dietcap {

// A hemispherical bowl whose rim circle lies in the plane z = rim_depth,
// centred at (x, y) in camera coordinates (meters).
struct BowlSpec {
  double radius = 0.05;
  double x = 0.0;
  double y = 0.0;
  std::string food = "okra";
  // Fill fraction per frame; 0 means empty.
  std::vector<double> schedule;
};

struct CameraSpec {
  std::size_t width = 640;
  std::size_t height = 480;
  double focal = 560.0;
  double rim_depth = 0.35;

  Intrinsics intrinsics() const;
};

struct EpisodeSpec {
  std::string episode_id = "episode";
  std::vector<BowlSpec> bowls;
  CameraSpec camera;
  double noise_sigma = 0.0;  // meters, Gaussian, added to every valid depth
  double frame_interval = 1.0;
  std::uint64_t seed = 0;
  // Learned-feature layout.
  std::size_t image_width = 40;
  std::size_t image_height = 30;
  std::size_t region_dim = 32;
  std::size_t global_dim = 32;
  double feature_noise = 0.05;
};

// Options for drawing random episodes.
struct SynthOptions {
  std::size_t pre_frames = 5;
  std::size_t empty_frames = 2;
  std::vector<double> container_volumes_cm3 = {150.0, 200.0, 300.0, 400.0};
  std::vector<double> start_fractions = {1.0, 0.75, 0.5};
  std::size_t max_bowls = 3;
  double noise_sigma = 0.0;
  CameraSpec camera;
};

// Foods the templates draw from; all are lexicon terms.
const std::vector<std::string>& synth_foods();

// Portion phrase for a fill level that is a multiple of 1/4:
// 1 -> "a full bowl", 1/2 -> "a half bowl", others -> "a k/4 bowl".
std::string fill_phrase(double fraction);

// Caption for one frame. One bowl: "the subject is eating a 3/4 bowl of okra"
// or "the bowl of okra is empty". Several bowls: "the first bowl has ... and
// the second bowl is empty".
std::string frame_caption(const std::vector<BowlSpec>& bowls, std::size_t frame);

// Random episode: 1..max_bowls bowls with volumes and start fractions drawn
// from the option lists, pre_frames frames at the start fraction, eating
// frames stepping down by 1/4 to 1/4, then empty_frames empty frames.
EpisodeSpec random_episode(const std::string& episode_id, std::uint64_t seed, const SynthOptions& options);

double hemisphere_volume(double radius);
double radius_for_volume(double volume_m3);
// Height of a spherical cap filling `fraction` of the hemisphere.
double fill_height(double radius, double fraction);

struct RenderedFrame {
  DepthMap depth;
  std::vector<ContainerMask> masks;  // container ids are 1-based bowl indices
  ByteRaster image;                  // RGB
  FloatRaster features;              // bowls x region_dim
  FloatRaster global;                // 1 x global_dim
  std::string caption;
};

// Throws ErrorCode::Spec for geometry that cannot be rendered (bowl outside
// the view or the sensor range, overlapping bowls, fill outside [0, 1]).
void validate_episode(const EpisodeSpec& spec);
RenderedFrame render_frame(const EpisodeSpec& spec, std::size_t frame);

// Writes manifest.jsonl, intrinsics.json and the per-frame rasters into `dir`.
void write_episode(const EpisodeSpec& spec, const std::filesystem::path& dir);

// Writes `count` random episodes into out/<prefix>-NNN, each drawn from its
// own child seed of `seed`, and returns their directories.
std::vector<std::filesystem::path> write_synthetic_dataset(const std::filesystem::path& out, std::size_t count,
                                                           std::uint64_t seed, const SynthOptions& options,
                                                           const std::string& prefix = "synth");

// Visual input for the captioner from rendered rasters.
Image image_from_raster(const ByteRaster& raster);
RegionalFeatures regions_from_raster(const FloatRaster& features, std::size_t n_regions);

}  // namespace dietcap
