#include "dietcap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "dietcap/episode.hpp"
#include "dietcap/error.hpp"
#include "dietcap/rng.hpp"
#include "dietcap/text.hpp"

namespace dietcap {
namespace {

constexpr double kLevels[] = {0.0, 0.25, 0.5, 0.75, 1.0};
constexpr const char* kOrdinals[] = {"first", "second", "third"};
constexpr std::uint64_t kProjectionSeed = 0x5eed0f91ba1ULL;

struct Rgb {
  double r, g, b;
};

Rgb food_color(const std::string& food) {
  static const std::vector<std::pair<std::string, Rgb>> table = {
      {"okra", {0.30, 0.55, 0.20}},  {"rice", {0.95, 0.93, 0.85}},     {"stew", {0.70, 0.25, 0.10}},
      {"soup", {0.85, 0.45, 0.15}},  {"banku", {0.88, 0.82, 0.60}},    {"fufu", {0.93, 0.88, 0.72}},
      {"porridge", {0.80, 0.70, 0.45}}, {"jollof", {0.85, 0.35, 0.12}}};
  for (const auto& [name, c] : table) {
    if (name == food) return c;
  }
  return {0.6, 0.4, 0.2};
}

std::size_t level_index(double fraction) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < std::size(kLevels); ++i) {
    if (std::abs(kLevels[i] - fraction) < std::abs(kLevels[best] - fraction)) best = i;
  }
  return best;
}

std::size_t food_index(const std::string& food) {
  const auto& foods = synth_foods();
  const auto it = std::find(foods.begin(), foods.end(), food);
  return it == foods.end() ? foods.size() : static_cast<std::size_t>(it - foods.begin());
}

std::size_t frame_count(const EpisodeSpec& spec) {
  return spec.bowls.empty() ? 0 : spec.bowls.front().schedule.size();
}

// Ray through pixel (u, v): direction with unit z component.
Point3 ray(const Intrinsics& k, double u, double v) { return {(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0}; }

struct Hit {
  int bowl = -1;  // -1: table
  double depth = 0.0;
  bool food = false;
};

Hit trace(const EpisodeSpec& spec, const Intrinsics& k, double u, double v, std::size_t frame, double table_depth) {
  const Point3 d = ray(k, u, v);
  const double zr = spec.camera.rim_depth;
  for (std::size_t b = 0; b < spec.bowls.size(); ++b) {
    const auto& bowl = spec.bowls[b];
    const double dx = zr * d.x() - bowl.x, dy = zr * d.y() - bowl.y;
    if (dx * dx + dy * dy > bowl.radius * bowl.radius) continue;
    const Point3 c(bowl.x, bowl.y, zr);
    const double a = d.squaredNorm();
    const double half_b = d.dot(c);
    const double disc = half_b * half_b - a * (c.squaredNorm() - bowl.radius * bowl.radius);
    const double t_far = (half_b + std::sqrt(std::max(0.0, disc))) / a;
    Hit h;
    h.bowl = static_cast<int>(b);
    h.depth = t_far;
    const double fill = bowl.schedule[frame];
    if (fill > 0.0) {
      const double surface = zr + bowl.radius - fill_height(bowl.radius, fill);
      if (surface < t_far) {
        h.depth = surface;
        h.food = true;
      }
    }
    return h;
  }
  return {-1, table_depth, false};
}

double table_depth(const EpisodeSpec& spec) {
  double r = 0.0;
  for (const auto& b : spec.bowls) r = std::max(r, b.radius);
  return spec.camera.rim_depth + r + 0.005;
}

}  // namespace

Intrinsics CameraSpec::intrinsics() const {
  Intrinsics k;
  k.fx = focal;
  k.fy = focal;
  k.cx = (static_cast<double>(width) - 1.0) / 2.0;
  k.cy = (static_cast<double>(height) - 1.0) / 2.0;
  k.width = width;
  k.height = height;
  return k;
}

const std::vector<std::string>& synth_foods() {
  static const std::vector<std::string> foods = {"okra", "rice", "stew", "soup", "banku", "fufu", "porridge", "jollof"};
  return foods;
}

std::string fill_phrase(double fraction) {
  const auto quarters = static_cast<int>(std::lround(fraction * 4.0));
  if (std::abs(fraction * 4.0 - quarters) > 1e-9 || quarters <= 0 || quarters > 4) {
    fail(ErrorCode::Spec, "fill " + std::to_string(fraction) + " is not a positive multiple of 1/4 up to 1");
  }
  if (quarters == 4) return "a full bowl";
  if (quarters == 2) return "a half bowl";
  return "a " + std::to_string(quarters) + "/4 bowl";
}

std::string frame_caption(const std::vector<BowlSpec>& bowls, std::size_t frame) {
  if (bowls.size() == 1) {
    const auto& b = bowls.front();
    const double fill = b.schedule.at(frame);
    if (fill == 0.0) return "the bowl of " + b.food + " is empty";
    return "the subject is eating " + fill_phrase(fill) + " of " + b.food;
  }
  std::vector<std::string> parts;
  for (std::size_t i = 0; i < bowls.size(); ++i) {
    const double fill = bowls[i].schedule.at(frame);
    const std::string head = std::string("the ") + kOrdinals[i] + " bowl";
    parts.push_back(fill == 0.0 ? head + " is empty" : head + " has " + fill_phrase(fill) + " of " + bowls[i].food);
  }
  return join_tokens(parts, " and ");
}

double hemisphere_volume(double radius) { return 2.0 / 3.0 * std::numbers::pi * radius * radius * radius; }

double radius_for_volume(double volume_m3) { return std::cbrt(volume_m3 * 3.0 / (2.0 * std::numbers::pi)); }

double fill_height(double radius, double fraction) {
  if (fraction <= 0.0) return 0.0;
  if (fraction >= 1.0) return radius;
  // t^2 (3 - t) = 2 fraction on [0, 1], increasing in t.
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid * mid * (3.0 - mid) < 2.0 * fraction) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return radius * 0.5 * (lo + hi);
}

EpisodeSpec random_episode(const std::string& episode_id, std::uint64_t seed, const SynthOptions& options) {
  if (options.max_bowls < 1 || options.max_bowls > 3) fail(ErrorCode::Spec, "episodes hold 1 to 3 bowls");
  if (options.container_volumes_cm3.empty() || options.start_fractions.empty()) {
    fail(ErrorCode::Spec, "volume and start-fraction lists must be nonempty");
  }
  Rng rng(seed);
  EpisodeSpec spec;
  spec.episode_id = episode_id;
  spec.seed = seed;
  spec.camera = options.camera;
  spec.noise_sigma = options.noise_sigma;

  const auto n_bowls = 1 + static_cast<std::size_t>(rng.below(options.max_bowls));
  static const std::vector<std::vector<std::pair<double, double>>> layouts = {
      {{0.0, 0.0}},
      {{-0.062, 0.0}, {0.062, 0.0}},
      {{0.0, -0.06}, {-0.062, 0.045}, {0.062, 0.045}},
  };
  std::vector<double> starts;
  for (std::size_t b = 0; b < n_bowls; ++b) {
    BowlSpec bowl;
    const double v = options.container_volumes_cm3[rng.below(options.container_volumes_cm3.size())];
    bowl.radius = radius_for_volume(v / kCubicMetersToCm3);
    bowl.x = layouts[n_bowls - 1][b].first;
    bowl.y = layouts[n_bowls - 1][b].second;
    bowl.food = synth_foods()[rng.below(synth_foods().size())];
    starts.push_back(options.start_fractions[rng.below(options.start_fractions.size())]);
    spec.bowls.push_back(bowl);
  }

  std::size_t eating = 0;
  for (double s : starts) eating = std::max(eating, static_cast<std::size_t>(std::lround((s - 0.25) * 4.0)));
  for (std::size_t b = 0; b < n_bowls; ++b) {
    auto& sched = spec.bowls[b].schedule;
    for (std::size_t i = 0; i < options.pre_frames; ++i) sched.push_back(starts[b]);
    for (std::size_t i = 1; i <= eating; ++i) sched.push_back(std::max(0.25, starts[b] - 0.25 * static_cast<double>(i)));
    for (std::size_t i = 0; i < options.empty_frames; ++i) sched.push_back(0.0);
  }
  return spec;
}

void validate_episode(const EpisodeSpec& spec) {
  if (spec.bowls.empty() || spec.bowls.size() > 3) fail(ErrorCode::Spec, "episodes hold 1 to 3 bowls");
  const auto frames = frame_count(spec);
  if (frames == 0) fail(ErrorCode::Spec, "fill schedule is empty");
  const auto k = spec.camera.intrinsics();
  k.validate();
  const DepthRange range;
  const double zr = spec.camera.rim_depth;
  if (spec.noise_sigma < 0.0) fail(ErrorCode::Spec, "noise sigma must be non-negative");
  for (std::size_t b = 0; b < spec.bowls.size(); ++b) {
    const auto& bowl = spec.bowls[b];
    const auto name = "bowl " + std::to_string(b + 1) + ": ";
    if (bowl.schedule.size() != frames) fail(ErrorCode::Spec, name + "schedule length differs from the other bowls");
    for (double f : bowl.schedule) {
      if (!(f >= 0.0 && f <= 1.0)) fail(ErrorCode::Spec, name + "fill " + std::to_string(f) + " outside [0, 1]");
      if (std::abs(f * 4.0 - std::round(f * 4.0)) > 1e-9) {
        fail(ErrorCode::Spec, name + "fill " + std::to_string(f) + " is not a multiple of 1/4");
      }
    }
    if (!(bowl.radius > 0.0)) fail(ErrorCode::Spec, name + "radius must be positive");
    if (zr < range.min || zr + bowl.radius > range.max) {
      fail(ErrorCode::Spec, name + "depths " + std::to_string(zr) + ".." + std::to_string(zr + bowl.radius) +
                                " m leave the sensor range " + std::to_string(range.min) + ".." +
                                std::to_string(range.max) + " m");
    }
    const double u0 = k.cx + k.fx * (bowl.x - bowl.radius) / zr, u1 = k.cx + k.fx * (bowl.x + bowl.radius) / zr;
    const double v0 = k.cy + k.fy * (bowl.y - bowl.radius) / zr, v1 = k.cy + k.fy * (bowl.y + bowl.radius) / zr;
    if (u0 < 0.0 || v0 < 0.0 || u1 > static_cast<double>(k.width - 1) || v1 > static_cast<double>(k.height - 1)) {
      fail(ErrorCode::Spec, name + "rim is not fully inside the image");
    }
    if (food_index(bowl.food) == synth_foods().size()) fail(ErrorCode::Spec, name + "unknown food '" + bowl.food + "'");
    for (std::size_t o = 0; o < b; ++o) {
      const auto& other = spec.bowls[o];
      if (std::hypot(bowl.x - other.x, bowl.y - other.y) < bowl.radius + other.radius) {
        fail(ErrorCode::Spec, name + "overlaps bowl " + std::to_string(o + 1));
      }
    }
  }
  if (table_depth(spec) > range.max) fail(ErrorCode::Spec, "table lies beyond the sensor range");
}

RenderedFrame render_frame(const EpisodeSpec& spec, std::size_t frame) {
  validate_episode(spec);
  if (frame >= frame_count(spec)) fail(ErrorCode::Spec, "frame " + std::to_string(frame) + " outside the schedule");
  const auto k = spec.camera.intrinsics();
  const double table = table_depth(spec);
  Rng root(spec.seed);
  Rng noise = root.fork(1000 + frame);
  Rng feature_noise = root.fork(2000 + frame);
  Rng image_noise = root.fork(3000 + frame);

  RenderedFrame out;
  out.depth.width = k.width;
  out.depth.height = k.height;
  out.depth.values.assign(k.width * k.height, 0.0f);
  for (std::size_t b = 0; b < spec.bowls.size(); ++b) {
    ContainerMask m;
    m.container_id = static_cast<int>(b) + 1;
    m.mask.width = k.width;
    m.mask.height = k.height;
    m.mask.values.assign(k.width * k.height, 0);
    out.masks.push_back(std::move(m));
  }
  for (std::size_t v = 0; v < k.height; ++v) {
    for (std::size_t u = 0; u < k.width; ++u) {
      const auto hit = trace(spec, k, static_cast<double>(u), static_cast<double>(v), frame, table);
      double z = hit.depth;
      if (spec.noise_sigma > 0.0) z += noise.normal(0.0, spec.noise_sigma);
      out.depth.values[v * k.width + u] = static_cast<float>(z);
      if (hit.bowl >= 0) out.masks[static_cast<std::size_t>(hit.bowl)].mask.values[v * k.width + u] = 255;
    }
  }

  // Low-resolution colour image, one ray per block centre.
  out.image.width = spec.image_width;
  out.image.height = spec.image_height;
  out.image.channels = 3;
  out.image.values.resize(spec.image_width * spec.image_height * 3);
  const double sx = static_cast<double>(k.width) / static_cast<double>(spec.image_width);
  const double sy = static_cast<double>(k.height) / static_cast<double>(spec.image_height);
  for (std::size_t y = 0; y < spec.image_height; ++y) {
    for (std::size_t x = 0; x < spec.image_width; ++x) {
      const auto hit = trace(spec, k, (static_cast<double>(x) + 0.5) * sx - 0.5, (static_cast<double>(y) + 0.5) * sy - 0.5,
                             frame, table);
      Rgb c{0.35, 0.30, 0.25};
      if (hit.bowl >= 0) c = hit.food ? food_color(spec.bowls[static_cast<std::size_t>(hit.bowl)].food) : Rgb{0.92, 0.92, 0.92};
      const double rgb[3] = {c.r, c.g, c.b};
      for (int ch = 0; ch < 3; ++ch) {
        const double val = std::clamp(rgb[ch] + image_noise.normal(0.0, 0.02), 0.0, 1.0);
        out.image.values[(y * spec.image_width + x) * 3 + static_cast<std::size_t>(ch)] =
            static_cast<std::uint8_t>(std::lround(val * 255.0));
      }
    }
  }

  // One feature row per bowl: fill level, food, ordinal and bowl count as
  // one-hots, then position and size, then noise.
  const std::size_t n_foods = synth_foods().size();
  const std::size_t informative = std::size(kLevels) + n_foods + 3 + 3 + 3;
  if (spec.region_dim < informative) {
    fail(ErrorCode::Spec, "region_dim must be at least " + std::to_string(informative));
  }
  out.features.width = spec.region_dim;
  out.features.height = spec.bowls.size();
  out.features.values.assign(spec.region_dim * spec.bowls.size(), 0.0f);
  for (std::size_t b = 0; b < spec.bowls.size(); ++b) {
    const auto& bowl = spec.bowls[b];
    float* row = out.features.values.data() + b * spec.region_dim;
    std::size_t o = 0;
    row[o + level_index(bowl.schedule[frame])] = 1.0f;
    o += std::size(kLevels);
    row[o + food_index(bowl.food)] = 1.0f;
    o += n_foods;
    row[o + b] = 1.0f;
    o += 3;
    row[o + spec.bowls.size() - 1] = 1.0f;
    o += 3;
    row[o++] = static_cast<float>(bowl.x / 0.1);
    row[o++] = static_cast<float>(bowl.y / 0.1);
    row[o++] = static_cast<float>(bowl.radius / 0.1);
    for (std::size_t i = 0; i < spec.region_dim; ++i) {
      row[i] += static_cast<float>(feature_noise.normal(0.0, spec.feature_noise));
    }
  }

  // Stand-in for a frozen image network: a fixed random projection of the
  // colour image squashed by tanh.
  out.global.width = spec.global_dim;
  out.global.height = 1;
  out.global.values.assign(spec.global_dim, 0.0f);
  Rng projection(kProjectionSeed);
  const double gain = 1.0 / std::sqrt(static_cast<double>(out.image.values.size()));
  std::vector<double> acc(spec.global_dim, 0.0);
  for (auto px : out.image.values) {
    const double value = static_cast<double>(px) / 255.0 - 0.5;
    for (std::size_t j = 0; j < spec.global_dim; ++j) acc[j] += value * projection.normal(0.0, 1.0);
  }
  for (std::size_t j = 0; j < spec.global_dim; ++j) out.global.values[j] = static_cast<float>(std::tanh(4.0 * gain * acc[j]));

  out.caption = frame_caption(spec.bowls, frame);
  return out;
}

void write_episode(const EpisodeSpec& spec, const std::filesystem::path& dir) {
  validate_episode(spec);
  std::filesystem::create_directories(dir / "frames");
  const auto k = spec.camera.intrinsics();
  write_file(dir / "intrinsics.json", k.to_json());

  EpisodeManifest m;
  m.episode_id = spec.episode_id;
  m.dir = dir;
  for (std::size_t b = 0; b < spec.bowls.size(); ++b) {
    ContainerTruth t;
    t.container_id = static_cast<int>(b) + 1;
    const double v = hemisphere_volume(spec.bowls[b].radius);
    t.container_cm3 = v * kCubicMetersToCm3;
    // The pre-eating fill is the first frame's fill.
    t.food_cm3 = v * spec.bowls[b].schedule.front() * kCubicMetersToCm3;
    m.ground_truth.push_back(t);
  }
  const auto frames = frame_count(spec);
  for (std::size_t f = 0; f < frames; ++f) {
    const auto rendered = render_frame(spec, f);
    char stem[32];
    std::snprintf(stem, sizeof stem, "frames/%03zu", f);
    FrameRecord rec;
    rec.timestamp = static_cast<double>(f) * spec.frame_interval;
    rec.image = std::string(stem) + ".ppm";
    rec.features = std::string(stem) + ".regions.pfm";
    rec.global = std::string(stem) + ".global.pfm";
    rec.depth = std::string(stem) + ".depth.pfm";
    write_pnm(dir / rec.image, rendered.image);
    write_pfm(dir / rec.features, rendered.features);
    write_pfm(dir / rec.global, rendered.global);
    write_pfm(dir / rec.depth, rendered.depth);
    for (const auto& mask : rendered.masks) {
      MaskRef ref;
      ref.container_id = mask.container_id;
      ref.path = std::string(stem) + ".mask" + std::to_string(mask.container_id) + ".pgm";
      write_pnm(dir / ref.path, mask.mask);
      rec.masks.push_back(ref);
    }
    rec.captions.push_back(rendered.caption);
    m.frames.push_back(std::move(rec));
  }
  write_file(dir / "manifest.jsonl", m.to_jsonl());
}

std::vector<std::filesystem::path> write_synthetic_dataset(const std::filesystem::path& out, std::size_t count,
                                                           std::uint64_t seed, const SynthOptions& options,
                                                           const std::string& prefix) {
  Rng rng(seed);
  std::vector<std::filesystem::path> dirs;
  for (std::size_t i = 0; i < count; ++i) {
    char id[64];
    std::snprintf(id, sizeof id, "%s-%03zu", prefix.c_str(), i);
    const auto spec = random_episode(id, rng.next_u64(), options);
    dirs.push_back(out / id);
    write_episode(spec, dirs.back());
  }
  return dirs;
}

Image image_from_raster(const ByteRaster& raster) {
  Image img;
  img.height = raster.height;
  img.width = raster.width;
  img.channels = raster.channels;
  img.pixels.reserve(raster.values.size());
  for (auto v : raster.values) img.pixels.push_back(static_cast<float>(v) / 255.0f);
  return img;
}

RegionalFeatures regions_from_raster(const FloatRaster& features, std::size_t n_regions) {
  if (features.channels != 1) fail(ErrorCode::Input, "regional features must be a 1-channel raster");
  return RegionalFeatures::padded(n_regions, features.width, features.values, features.height);
}

}  // namespace dietcap
