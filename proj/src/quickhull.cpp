#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <unordered_map>

#include "dietcap/error.hpp"
#include "dietcap/geometry.hpp"

namespace dietcap {
namespace {

struct Face {
  std::array<int, 3> v;
  Point3 normal;
  double offset = 0.0;  // plane: normal . x = offset
  std::vector<int> outside;
  bool alive = true;
  int visit = -1;

  double distance(const Point3& p) const { return normal.dot(p) - offset; }
};

std::uint64_t edge_key(int a, int b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

class QuickHull {
 public:
  explicit QuickHull(const PointCloud& pts) : pts_(pts) {
    double scale = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
      double m = 0.0;
      for (const auto& p : pts_) m = std::max(m, std::abs(p[axis]));
      scale += m;
    }
    eps_ = 3.0 * std::numeric_limits<double>::epsilon() * scale;
  }

  ConvexHull run() {
    initial_simplex();
    std::deque<int> pending;
    for (std::size_t f = 0; f < faces_.size(); ++f) pending.push_back(static_cast<int>(f));
    int stamp = 0;
    while (!pending.empty()) {
      const int fi = pending.front();
      pending.pop_front();
      if (!faces_[fi].alive || faces_[fi].outside.empty()) continue;

      int eye = -1;
      double best = -1.0;
      for (int p : faces_[fi].outside) {
        const double d = faces_[fi].distance(pts_[p]);
        if (d > best) {
          best = d;
          eye = p;
        }
      }

      // Visible region, grown from fi across shared edges.
      std::vector<int> visible;
      std::vector<int> stack = {fi};
      faces_[fi].visit = stamp;
      while (!stack.empty()) {
        const int f = stack.back();
        stack.pop_back();
        visible.push_back(f);
        for (int e = 0; e < 3; ++e) {
          const int nb = neighbour(f, e);
          if (nb < 0 || faces_[nb].visit == stamp || !faces_[nb].alive) continue;
          if (faces_[nb].distance(pts_[eye]) > eps_) {
            faces_[nb].visit = stamp;
            stack.push_back(nb);
          }
        }
      }

      std::vector<std::pair<int, int>> horizon;
      for (int f : visible) {
        for (int e = 0; e < 3; ++e) {
          const int nb = neighbour(f, e);
          if (nb < 0 || faces_[nb].visit != stamp) {
            horizon.emplace_back(faces_[f].v[e], faces_[f].v[(e + 1) % 3]);
          }
        }
      }
      ++stamp;

      std::vector<int> orphans;
      for (int f : visible) {
        auto& face = faces_[f];
        for (int p : face.outside) {
          if (p != eye) orphans.push_back(p);
        }
        face.outside.clear();
        face.alive = false;
        for (int e = 0; e < 3; ++e) edges_.erase(edge_key(face.v[e], face.v[(e + 1) % 3]));
      }

      std::vector<int> created;
      for (const auto& [a, b] : horizon) created.push_back(add_face(a, b, eye));
      std::sort(orphans.begin(), orphans.end());
      for (int p : orphans) {
        for (int f : created) {
          if (faces_[f].distance(pts_[p]) > eps_) {
            faces_[f].outside.push_back(p);
            break;
          }
        }
      }
      for (int f : created) pending.push_back(f);
    }
    return collect();
  }

 private:
  int neighbour(int f, int e) const {
    const auto& v = faces_[f].v;
    auto it = edges_.find(edge_key(v[(e + 1) % 3], v[e]));
    return it == edges_.end() ? -1 : it->second;
  }

  int add_face(int a, int b, int c) {
    Face f;
    f.v = {a, b, c};
    const Point3 n = (pts_[b] - pts_[a]).cross(pts_[c] - pts_[a]);
    const double len = n.norm();
    f.normal = len > 0.0 ? Point3(n / len) : n;
    f.offset = f.normal.dot(pts_[a]);
    faces_.push_back(std::move(f));
    const int id = static_cast<int>(faces_.size()) - 1;
    edges_[edge_key(a, b)] = id;
    edges_[edge_key(b, c)] = id;
    edges_[edge_key(c, a)] = id;
    return id;
  }

  void initial_simplex() {
    const int n = static_cast<int>(pts_.size());
    std::array<int, 6> extreme{};
    for (int axis = 0; axis < 3; ++axis) {
      for (int i = 0; i < n; ++i) {
        if (pts_[i][axis] < pts_[extreme[2 * axis]][axis]) extreme[2 * axis] = i;
        if (pts_[i][axis] > pts_[extreme[2 * axis + 1]][axis]) extreme[2 * axis + 1] = i;
      }
    }
    int a = extreme[0], b = extreme[1];
    double best = -1.0;
    for (int i : extreme)
      for (int j : extreme) {
        const double d = (pts_[i] - pts_[j]).squaredNorm();
        if (d > best) {
          best = d;
          a = i;
          b = j;
        }
      }
    if (std::sqrt(best) <= eps_) fail(ErrorCode::Degenerate, "convex hull: all points coincide");

    const Point3 dir = (pts_[b] - pts_[a]).normalized();
    int c = -1;
    best = eps_;
    for (int i = 0; i < n; ++i) {
      const double d = (pts_[i] - pts_[a]).cross(dir).norm();
      if (d > best) {
        best = d;
        c = i;
      }
    }
    if (c < 0) fail(ErrorCode::Degenerate, "convex hull: points are collinear");

    const Point3 normal = (pts_[b] - pts_[a]).cross(pts_[c] - pts_[a]).normalized();
    int d = -1;
    best = eps_;
    for (int i = 0; i < n; ++i) {
      const double dist = std::abs(normal.dot(pts_[i] - pts_[a]));
      if (dist > best) {
        best = dist;
        d = i;
      }
    }
    if (d < 0) fail(ErrorCode::Degenerate, "convex hull: points are coplanar");

    if (normal.dot(pts_[d] - pts_[a]) > 0.0) std::swap(b, c);
    add_face(a, b, c);
    add_face(a, d, b);
    add_face(b, d, c);
    add_face(c, d, a);

    for (int i = 0; i < n; ++i) {
      if (i == a || i == b || i == c || i == d) continue;
      for (int f = 0; f < 4; ++f) {
        if (faces_[f].distance(pts_[i]) > eps_) {
          faces_[f].outside.push_back(i);
          break;
        }
      }
    }
  }

  ConvexHull collect() const {
    ConvexHull hull;
    std::unordered_map<int, int> remap;
    for (const auto& f : faces_) {
      if (!f.alive) continue;
      std::array<int, 3> tri{};
      for (int k = 0; k < 3; ++k) {
        auto [it, inserted] = remap.emplace(f.v[k], static_cast<int>(hull.vertices.size()));
        if (inserted) hull.vertices.push_back(pts_[f.v[k]]);
        tri[k] = it->second;
      }
      hull.faces.push_back(tri);
    }
    hull.volume = hull_volume(hull.vertices, hull.faces);
    return hull;
  }

  const PointCloud& pts_;
  double eps_ = 0.0;
  std::vector<Face> faces_;
  std::unordered_map<std::uint64_t, int> edges_;
};

}  // namespace

double hull_volume(const std::vector<Point3>& vertices, const std::vector<std::array<int, 3>>& faces) {
  if (vertices.empty()) return 0.0;
  Point3 centroid = Point3::Zero();
  for (const auto& v : vertices) centroid += v;
  centroid /= static_cast<double>(vertices.size());
  double six_v = 0.0;
  for (const auto& f : faces) {
    const Point3 a = vertices[f[0]] - centroid;
    const Point3 b = vertices[f[1]] - centroid;
    const Point3 c = vertices[f[2]] - centroid;
    six_v += a.dot(b.cross(c));
  }
  return std::abs(six_v) / 6.0;
}

ConvexHull convex_hull(const PointCloud& cloud) {
  for (const auto& p : cloud) {
    if (!p.allFinite()) fail(ErrorCode::Input, "convex hull: non-finite coordinate");
  }
  if (cloud.size() < 4) {
    fail(ErrorCode::Degenerate, "convex hull needs at least 4 points, got " + std::to_string(cloud.size()));
  }
  return QuickHull(cloud).run();
}

}  // namespace dietcap
