#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "dietcap/raster_io.hpp"

namespace dietcap {

using Point3 = Eigen::Vector3d;
using PointCloud = std::vector<Point3>;

// Pinhole camera. Pixel (u, v) at depth z maps to ((u - cx) z / fx, (v - cy) z / fy, z).
struct Intrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  std::size_t width = 0;
  std::size_t height = 0;

  // Throws ErrorCode::Input.
  void validate() const;
  std::string to_json() const;
  static Intrinsics from_json(std::string_view text);
  bool operator==(const Intrinsics&) const = default;
};

struct DepthRange {
  double min = 0.07;
  double max = 0.50;
};

// Depth maps are 1-channel float rasters in meters; 0, NaN and out-of-range
// values are invalid. Masks are 1-channel byte rasters, nonzero = container.
using DepthMap = FloatRaster;

struct ContainerMask {
  ByteRaster mask;
  int container_id = 0;
};

// Back-projects valid depths (restricted to `mask` when given). Throws
// ErrorCode::Dimension on size mismatch and ErrorCode::Degenerate when no
// pixel survives.
PointCloud project(const DepthMap& depth, const Intrinsics& k, const ByteRaster* mask = nullptr,
                   DepthRange range = {});

// Fraction of masked pixels holding a valid depth (0 for an empty mask).
double mask_coverage(const DepthMap& depth, const ByteRaster& mask, DepthRange range = {});

struct DenoiseOptions {
  double threshold = 2.5;
  // Scale the MAD by 1.4826 so the threshold reads in standard deviations.
  bool normalized = true;
};

// Drops points whose depth lies more than threshold x MAD from the median
// depth. MAD = 0 keeps everything. Needs at least 8 points; fewer than 4
// survivors raise ErrorCode::Degenerate.
PointCloud denoise(const PointCloud& cloud, DenoiseOptions options = {});

// Moving-least-squares style smoothing: each point is projected onto the
// least-squares plane of its neighbours within `radius` (points with fewer
// than 3 neighbours are kept as they are).
PointCloud smooth_surface(const PointCloud& cloud, double radius);

struct ConvexHull {
  std::vector<Point3> vertices;
  std::vector<std::array<int, 3>> faces;  // counter-clockwise seen from outside
  double volume = 0.0;                    // m^3
};

// Quickhull. Needs 4 affinely independent points; otherwise ErrorCode::Degenerate.
// Non-finite coordinates raise ErrorCode::Input.
ConvexHull convex_hull(const PointCloud& cloud);

// |sum of signed tetrahedra (centroid, face)|.
double hull_volume(const std::vector<Point3>& vertices, const std::vector<std::array<int, 3>>& faces);

struct VolumeFrame {
  const DepthMap* depth = nullptr;
  const ByteRaster* mask = nullptr;
  int container_id = 0;
  Intrinsics intrinsics;
  std::size_t frame_index = 0;  // for diagnostics only
};

struct VolumeOptions {
  DenoiseOptions denoise;
  double smoothing_radius = 0.0;  // meters; 0 disables surface smoothing
  double min_coverage = 0.3;
  DepthRange range;
  std::size_t threads = 1;
};

struct ContainerVolume {
  int container_id = 0;
  double volume = 0.0;                // m^3, median over accepted frames
  std::vector<double> frame_volumes;  // accepted frames, input order
  std::vector<std::size_t> frames_used;
  std::vector<std::string> diagnostics;  // one line per rejected frame
};

// Per frame: coverage check, project, denoise, optional smoothing, hull.
// Results are grouped by container id. An id whose frames were all rejected
// raises ErrorCode::Reconstruction. Output does not depend on `threads`.
std::map<int, ContainerVolume> container_volume(const std::vector<VolumeFrame>& frames, const VolumeOptions& options = {});

// (1/n) sum_{i<n} v_empty * P_i, missing P_i counted as 0. n == 0 is a usage
// error, a negative fraction or volume a data error.
double food_volume(double v_empty, const std::vector<double>& fractions, std::size_t n);

double median(std::vector<double> values);

inline constexpr double kCubicMetersToCm3 = 1e6;

}  // namespace dietcap
