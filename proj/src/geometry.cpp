#include "dietcap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <optional>
#include <thread>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "dietcap/error.hpp"

namespace dietcap {

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) fail(ErrorCode::Input, "intrinsics: focal lengths must be positive");
  if (width == 0 || height == 0) fail(ErrorCode::Input, "intrinsics: image size must be positive");
  if (!(cx >= 0.0 && cx < static_cast<double>(width)) || !(cy >= 0.0 && cy < static_cast<double>(height))) {
    fail(ErrorCode::Input, "intrinsics: principal point lies outside the image");
  }
}

std::string Intrinsics::to_json() const {
  nlohmann::ordered_json j;
  j["fx"] = fx;
  j["fy"] = fy;
  j["cx"] = cx;
  j["cy"] = cy;
  j["width"] = width;
  j["height"] = height;
  return j.dump(2) + "\n";
}

Intrinsics Intrinsics::from_json(std::string_view text) {
  Intrinsics k;
  try {
    const auto j = nlohmann::json::parse(text);
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<std::size_t>();
    k.height = j.at("height").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Input, std::string("intrinsics: ") + e.what());
  }
  k.validate();
  return k;
}

namespace {

bool valid_depth(float z, DepthRange range) {
  return std::isfinite(z) && z > 0.0f && z >= range.min && z <= range.max;
}

void check_dims(const DepthMap& depth, const ByteRaster* mask) {
  if (depth.channels != 1) fail(ErrorCode::Dimension, "depth map must have one channel");
  if (mask && (mask->width != depth.width || mask->height != depth.height || mask->channels != 1)) {
    fail(ErrorCode::Dimension, "mask " + std::to_string(mask->width) + "x" + std::to_string(mask->height) +
                                   " does not match depth " + std::to_string(depth.width) + "x" +
                                   std::to_string(depth.height));
  }
}

}  // namespace

PointCloud project(const DepthMap& depth, const Intrinsics& k, const ByteRaster* mask, DepthRange range) {
  check_dims(depth, mask);
  if (k.width != depth.width || k.height != depth.height) {
    fail(ErrorCode::Dimension, "intrinsics describe a " + std::to_string(k.width) + "x" + std::to_string(k.height) +
                                   " image, depth is " + std::to_string(depth.width) + "x" + std::to_string(depth.height));
  }
  PointCloud cloud;
  for (std::size_t v = 0; v < depth.height; ++v) {
    for (std::size_t u = 0; u < depth.width; ++u) {
      if (mask && mask->values[v * depth.width + u] == 0) continue;
      const float z = depth.values[v * depth.width + u];
      if (!valid_depth(z, range)) continue;
      const double zd = z;
      cloud.emplace_back((static_cast<double>(u) - k.cx) * zd / k.fx, (static_cast<double>(v) - k.cy) * zd / k.fy, zd);
    }
  }
  if (cloud.empty()) fail(ErrorCode::Degenerate, "no valid depth pixel to project (empty point cloud)");
  return cloud;
}

double mask_coverage(const DepthMap& depth, const ByteRaster& mask, DepthRange range) {
  check_dims(depth, &mask);
  std::size_t masked = 0, valid = 0;
  for (std::size_t i = 0; i < mask.values.size(); ++i) {
    if (mask.values[i] == 0) continue;
    ++masked;
    if (valid_depth(depth.values[i], range)) ++valid;
  }
  return masked == 0 ? 0.0 : static_cast<double>(valid) / static_cast<double>(masked);
}

double median(std::vector<double> values) {
  if (values.empty()) fail(ErrorCode::Usage, "median of an empty list");
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

PointCloud denoise(const PointCloud& cloud, DenoiseOptions options) {
  if (cloud.size() < 8) {
    fail(ErrorCode::Degenerate, "denoise needs at least 8 points, got " + std::to_string(cloud.size()));
  }
  std::vector<double> z;
  z.reserve(cloud.size());
  for (const auto& p : cloud) z.push_back(p.z());
  const double med = median(z);
  std::vector<double> dev;
  dev.reserve(z.size());
  for (double v : z) dev.push_back(std::abs(v - med));
  double mad = median(dev);
  if (mad == 0.0) return cloud;
  if (options.normalized) mad *= 1.4826;
  const double limit = options.threshold * mad;
  PointCloud kept;
  kept.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (dev[i] <= limit) kept.push_back(cloud[i]);
  }
  if (kept.size() < 4) {
    fail(ErrorCode::Degenerate, "only " + std::to_string(kept.size()) + " points survive outlier removal");
  }
  return kept;
}

PointCloud smooth_surface(const PointCloud& cloud, double radius) {
  if (radius <= 0.0 || cloud.size() < 3) return cloud;
  struct CellHash {
    std::size_t operator()(const Eigen::Vector3i& c) const {
      return (static_cast<std::size_t>(c.x()) * 73856093u) ^ (static_cast<std::size_t>(c.y()) * 19349663u) ^
             (static_cast<std::size_t>(c.z()) * 83492791u);
    }
  };
  auto cell_of = [radius](const Point3& p) {
    return Eigen::Vector3i(static_cast<int>(std::floor(p.x() / radius)), static_cast<int>(std::floor(p.y() / radius)),
                           static_cast<int>(std::floor(p.z() / radius)));
  };
  std::unordered_map<Eigen::Vector3i, std::vector<int>, CellHash> grid;
  for (std::size_t i = 0; i < cloud.size(); ++i) grid[cell_of(cloud[i])].push_back(static_cast<int>(i));

  const double r2 = radius * radius;
  PointCloud out(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud[i];
    const auto c = cell_of(p);
    Point3 mean = Point3::Zero();
    std::vector<int> nbrs;
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) {
          auto it = grid.find(Eigen::Vector3i(c.x() + dx, c.y() + dy, c.z() + dz));
          if (it == grid.end()) continue;
          for (int j : it->second) {
            if ((cloud[j] - p).squaredNorm() <= r2) {
              nbrs.push_back(j);
              mean += cloud[j];
            }
          }
        }
    if (nbrs.size() < 3) {
      out[i] = p;
      continue;
    }
    mean /= static_cast<double>(nbrs.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (int j : nbrs) {
      const Point3 d = cloud[j] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
    const Point3 normal = solver.eigenvectors().col(0);
    out[i] = p - normal * normal.dot(p - mean);
  }
  return out;
}

namespace {

struct FrameOutcome {
  std::optional<double> volume;
  std::string diagnostic;
};

FrameOutcome reconstruct(const VolumeFrame& f, const VolumeOptions& o) {
  FrameOutcome out;
  const auto prefix = "frame " + std::to_string(f.frame_index) + " container " + std::to_string(f.container_id) + ": ";
  const double coverage = mask_coverage(*f.depth, *f.mask, o.range);
  if (coverage < o.min_coverage) {
    out.diagnostic = prefix + "valid depth covers " + std::to_string(coverage * 100.0) + "% of the mask, below " +
                     std::to_string(o.min_coverage * 100.0) + "%";
    return out;
  }
  try {
    auto cloud = project(*f.depth, f.intrinsics, f.mask, o.range);
    cloud = denoise(cloud, o.denoise);
    cloud = smooth_surface(cloud, o.smoothing_radius);
    out.volume = convex_hull(cloud).volume;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Degenerate) throw;
    out.diagnostic = prefix + e.detail();
  }
  return out;
}

}  // namespace

std::map<int, ContainerVolume> container_volume(const std::vector<VolumeFrame>& frames, const VolumeOptions& options) {
  for (const auto& f : frames) {
    if (!f.depth || !f.mask) fail(ErrorCode::Usage, "volume frame without depth or mask");
  }
  std::vector<FrameOutcome> outcomes(frames.size());
  const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, frames.size()));
  if (threads <= 1) {
    for (std::size_t i = 0; i < frames.size(); ++i) outcomes[i] = reconstruct(frames[i], options);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < frames.size(); i += threads) outcomes[i] = reconstruct(frames[i], options);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::map<int, ContainerVolume> result;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    auto& cv = result[frames[i].container_id];
    cv.container_id = frames[i].container_id;
    if (outcomes[i].volume) {
      cv.frame_volumes.push_back(*outcomes[i].volume);
      cv.frames_used.push_back(frames[i].frame_index);
    } else {
      cv.diagnostics.push_back(outcomes[i].diagnostic);
    }
  }
  for (auto& [id, cv] : result) {
    if (cv.frame_volumes.empty()) {
      std::string why;
      for (const auto& d : cv.diagnostics) why += "\n  " + d;
      fail(ErrorCode::Reconstruction, "container " + std::to_string(id) + ": no usable empty frame" + why);
    }
    cv.volume = median(cv.frame_volumes);
  }
  return result;
}

double food_volume(double v_empty, const std::vector<double>& fractions, std::size_t n) {
  if (n == 0) fail(ErrorCode::Usage, "food volume needs n >= 1");
  if (!(v_empty >= 0.0)) fail(ErrorCode::Data, "empty-container volume must be non-negative");
  double total = 0.0;
  for (std::size_t i = 0; i < std::min(n, fractions.size()); ++i) {
    if (!(fractions[i] >= 0.0)) fail(ErrorCode::Data, "portion fraction " + std::to_string(fractions[i]) + " is negative");
    total += v_empty * fractions[i];
  }
  return total / static_cast<double>(n);
}

}  // namespace dietcap
