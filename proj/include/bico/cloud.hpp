#pragma once

// Point-cloud containers, mesh loading and sampling, normal estimation,
// farthest point sampling and nearest-neighbor queries.

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <queue>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bico/error.hpp"
#include "bico/geom3d.hpp"
#include "bico/parallel.hpp"
#include "bico/rng.hpp"

namespace bico {

enum class Frame { camera, model };

struct OrientedCloud {
  Frame frame = Frame::model;
  std::vector<OrientedPoint> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  std::vector<Vec3> positions() const {
    std::vector<Vec3> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.position);
    return out;
  }
};

inline OrientedCloud transformed(const OrientedCloud& cloud, const RigidTransform& t, Frame frame) {
  OrientedCloud out{frame, {}};
  out.points.reserve(cloud.size());
  for (const auto& p : cloud.points) out.points.push_back({apply_point(t, p.position), apply_normal(t, p.normal)});
  return out;
}

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<std::uint32_t, 3>> triangles;
};

// ---------------------------------------------------------------------------
// File formats

namespace detail {

[[noreturn]] inline void parse_fail(const std::string& name, std::size_t line, const std::string& msg) {
  throw Error(ErrorCode::ParseError, name + ":" + std::to_string(line) + ": " + msg);
}

inline double parse_double(const std::string& tok, const std::string& name, std::size_t line) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size() || !std::isfinite(v)) parse_fail(name, line, "bad number '" + tok + "'");
    return v;
  } catch (const std::logic_error&) {
    parse_fail(name, line, "bad number '" + tok + "'");
  }
}

inline long long parse_int(const std::string& tok, const std::string& name, std::size_t line) {
  try {
    std::size_t used = 0;
    long long v = std::stoll(tok, &used);
    if (used != tok.size()) parse_fail(name, line, "bad integer '" + tok + "'");
    return v;
  } catch (const std::logic_error&) {
    parse_fail(name, line, "bad integer '" + tok + "'");
  }
}

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

inline void fan_triangulate(const std::vector<std::uint32_t>& poly, TriangleMesh& mesh) {
  for (std::size_t k = 1; k + 1 < poly.size(); ++k) mesh.triangles.push_back({poly[0], poly[k], poly[k + 1]});
}

struct PlyData {
  std::vector<Vec3> positions;
  std::vector<Vec3> normals;  // empty when the file has no nx/ny/nz
  std::vector<std::vector<std::uint32_t>> faces;
};

inline PlyData read_ply(std::istream& in, const std::string& name) {
  struct Property {
    std::string name;
    bool is_list = false;
  };
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<Property> props;
  };

  std::string line;
  std::size_t lineno = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next() || line != "ply") parse_fail(name, lineno, "missing 'ply' magic");
  std::vector<Element> elements;
  bool ascii = false;
  for (;;) {
    if (!next()) parse_fail(name, lineno, "unterminated header");
    auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") parse_fail(name, lineno, "only ASCII PLY is supported");
      ascii = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) parse_fail(name, lineno, "malformed element line");
      long long n = parse_int(tok[2], name, lineno);
      if (n < 0) parse_fail(name, lineno, "negative element count");
      elements.push_back({tok[1], static_cast<std::size_t>(n), {}});
    } else if (tok[0] == "property") {
      if (elements.empty()) parse_fail(name, lineno, "property before element");
      if (tok.size() >= 5 && tok[1] == "list") {
        elements.back().props.push_back({tok[4], true});
      } else if (tok.size() == 3) {
        elements.back().props.push_back({tok[2], false});
      } else {
        parse_fail(name, lineno, "malformed property line");
      }
    } else {
      parse_fail(name, lineno, "unknown header keyword '" + tok[0] + "'");
    }
  }
  if (!ascii) parse_fail(name, lineno, "missing format line");

  PlyData data;
  for (const auto& el : elements) {
    auto index_of = [&](const std::string& p) -> int {
      for (std::size_t k = 0; k < el.props.size(); ++k)
        if (el.props[k].name == p) return static_cast<int>(k);
      return -1;
    };
    if (el.name == "vertex") {
      int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
      int inx = index_of("nx"), iny = index_of("ny"), inz = index_of("nz");
      if (ix < 0 || iy < 0 || iz < 0) parse_fail(name, lineno, "vertex element lacks x/y/z");
      for (const auto& p : el.props)
        if (p.is_list) parse_fail(name, lineno, "list property on vertex element");
      bool has_normals = inx >= 0 && iny >= 0 && inz >= 0;
      for (std::size_t v = 0; v < el.count; ++v) {
        if (!next()) parse_fail(name, lineno, "unexpected end of file in vertex data");
        auto tok = split_ws(line);
        if (tok.size() != el.props.size())
          parse_fail(name, lineno, "expected " + std::to_string(el.props.size()) + " vertex values");
        data.positions.emplace_back(parse_double(tok[ix], name, lineno), parse_double(tok[iy], name, lineno),
                                    parse_double(tok[iz], name, lineno));
        if (has_normals)
          data.normals.emplace_back(parse_double(tok[inx], name, lineno), parse_double(tok[iny], name, lineno),
                                    parse_double(tok[inz], name, lineno));
      }
    } else if (el.name == "face") {
      if (el.props.size() != 1 || !el.props[0].is_list ||
          (el.props[0].name != "vertex_indices" && el.props[0].name != "vertex_index"))
        parse_fail(name, lineno, "face element must hold a single vertex_indices list");
      for (std::size_t f = 0; f < el.count; ++f) {
        if (!next()) parse_fail(name, lineno, "unexpected end of file in face data");
        auto tok = split_ws(line);
        if (tok.empty()) parse_fail(name, lineno, "empty face record");
        long long n = parse_int(tok[0], name, lineno);
        if (n < 3 || static_cast<std::size_t>(n) + 1 != tok.size()) parse_fail(name, lineno, "bad face vertex count");
        std::vector<std::uint32_t> poly;
        for (long long k = 1; k <= n; ++k) {
          long long idx = parse_int(tok[k], name, lineno);
          if (idx < 0 || static_cast<std::size_t>(idx) >= data.positions.size())
            parse_fail(name, lineno, "face index out of range");
          poly.push_back(static_cast<std::uint32_t>(idx));
        }
        data.faces.push_back(std::move(poly));
      }
    } else {
      for (std::size_t k = 0; k < el.count; ++k)
        if (!next()) parse_fail(name, lineno, "unexpected end of file in element '" + el.name + "'");
    }
  }
  return data;
}

inline TriangleMesh read_obj(std::istream& in, const std::string& name) {
  TriangleMesh mesh;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto tok = split_ws(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok[0] == "v") {
      if (tok.size() < 4) parse_fail(name, lineno, "vertex needs 3 coordinates");
      mesh.vertices.emplace_back(parse_double(tok[1], name, lineno), parse_double(tok[2], name, lineno),
                                 parse_double(tok[3], name, lineno));
    } else if (tok[0] == "f") {
      if (tok.size() < 4) parse_fail(name, lineno, "face needs at least 3 vertices");
      std::vector<std::uint32_t> poly;
      for (std::size_t k = 1; k < tok.size(); ++k) {
        long long idx = parse_int(tok[k].substr(0, tok[k].find('/')), name, lineno);
        long long n = static_cast<long long>(mesh.vertices.size());
        if (idx == 0) parse_fail(name, lineno, "face index 0 (OBJ indices are 1-based)");
        long long zero_based = idx > 0 ? idx - 1 : n + idx;
        if (zero_based < 0 || zero_based >= n) parse_fail(name, lineno, "face index out of range");
        poly.push_back(static_cast<std::uint32_t>(zero_based));
      }
      fan_triangulate(poly, mesh);
    }
  }
  return mesh;
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(a) == std::tolower(b); });
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return in;
}

}  // namespace detail

/// Loads an ASCII OBJ or ASCII PLY mesh; polygons are fan-triangulated.
inline TriangleMesh load_mesh(std::istream& in, const std::string& name) {
  TriangleMesh mesh;
  if (detail::has_suffix(name, ".ply")) {
    auto data = detail::read_ply(in, name);
    mesh.vertices = std::move(data.positions);
    for (const auto& f : data.faces) detail::fan_triangulate(f, mesh);
  } else {
    mesh = detail::read_obj(in, name);
  }
  if (mesh.triangles.empty()) throw Error(ErrorCode::EmptyMesh, name + ": no faces");
  return mesh;
}

inline TriangleMesh load_mesh(const std::string& path) {
  auto in = detail::open_input(path);
  return load_mesh(in, path);
}

/// Oriented cloud as ASCII PLY with float properties x y z nx ny nz (meters).
inline OrientedCloud read_cloud_ply(std::istream& in, const std::string& name, Frame frame) {
  auto data = detail::read_ply(in, name);
  if (data.positions.empty()) throw Error(ErrorCode::EmptyCloud, name + ": no vertices");
  if (data.normals.size() != data.positions.size())
    throw Error(ErrorCode::ParseError, name + ": vertices need nx/ny/nz properties");
  OrientedCloud cloud{frame, {}};
  for (std::size_t i = 0; i < data.positions.size(); ++i) {
    double len = data.normals[i].norm();
    if (len < 1e-12) throw Error(ErrorCode::ParseError, name + ": zero normal at vertex " + std::to_string(i));
    cloud.points.push_back({data.positions[i], data.normals[i] / len});
  }
  return cloud;
}

inline OrientedCloud read_cloud_ply(const std::string& path, Frame frame) {
  auto in = detail::open_input(path);
  return read_cloud_ply(in, path, frame);
}

inline void write_cloud_ply(std::ostream& out, const OrientedCloud& cloud) {
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z"
         "\nproperty float nx\nproperty float ny\nproperty float nz\nend_header\n";
  out << std::setprecision(17);
  for (const auto& p : cloud.points)
    out << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' ' << p.normal.x() << ' '
        << p.normal.y() << ' ' << p.normal.z() << '\n';
}

inline void write_cloud_ply(const std::string& path, const OrientedCloud& cloud) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  write_cloud_ply(out, cloud);
}

inline void write_mesh_obj(std::ostream& out, const TriangleMesh& mesh) {
  out << std::setprecision(17);
  for (const auto& v : mesh.vertices) out << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
  for (const auto& t : mesh.triangles) out << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
}

// ---------------------------------------------------------------------------
// Sampling

/// Area-weighted surface sampling with uniform barycentric coordinates. Each
/// point carries the face normal of its triangle (counterclockwise winding is
/// outward). Zero-area triangles are never chosen.
inline OrientedCloud sample_surface(const TriangleMesh& mesh, std::size_t count, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "sample count must be >= 1");
  std::vector<double> cumulative;
  std::vector<Vec3> normals;
  cumulative.reserve(mesh.triangles.size());
  double total = 0.0;
  for (const auto& t : mesh.triangles) {
    if (t[0] >= mesh.vertices.size() || t[1] >= mesh.vertices.size() || t[2] >= mesh.vertices.size())
      throw Error(ErrorCode::InvalidArgument, "triangle index out of range");
    Vec3 cross = (mesh.vertices[t[1]] - mesh.vertices[t[0]]).cross(mesh.vertices[t[2]] - mesh.vertices[t[0]]);
    double area = 0.5 * cross.norm();
    total += area;
    cumulative.push_back(total);
    normals.push_back(area > 0 ? Vec3(cross / (2.0 * area)) : Vec3::UnitZ());
  }
  if (mesh.triangles.empty() || !(total > 0.0)) throw Error(ErrorCode::EmptyMesh, "mesh has no surface area");
  std::size_t last_positive = cumulative.size() - 1;
  while (last_positive > 0 && cumulative[last_positive] == cumulative[last_positive - 1]) --last_positive;

  Rng rng(seed);
  OrientedCloud cloud{Frame::model, {}};
  cloud.points.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    double u = rng.uniform() * total;
    // Zero-area entries repeat the previous total, so upper_bound never lands on them.
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    std::size_t tri = it == cumulative.end() ? last_positive : static_cast<std::size_t>(it - cumulative.begin());
    const auto& t = mesh.triangles[tri];
    double r1 = std::sqrt(rng.uniform());
    double r2 = rng.uniform();
    Vec3 p = (1.0 - r1) * mesh.vertices[t[0]] + r1 * (1.0 - r2) * mesh.vertices[t[1]] +
             r1 * r2 * mesh.vertices[t[2]];
    cloud.points.push_back({p, normals[tri]});
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Neighbor queries

/// Static k-d tree over a point set. Queries return exact results with ties
/// broken toward the lowest point index.
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    nodes_.reserve(points_.size());
    if (!points_.empty()) build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  /// (index, distance) of the nearest point.
  std::pair<std::size_t, double> nearest(const Vec3& q) const {
    if (points_.empty()) throw Error(ErrorCode::EmptyCloud, "nearest neighbor in an empty cloud");
    Best best{std::numeric_limits<double>::infinity(), std::numeric_limits<std::uint32_t>::max()};
    search_nearest(0, q, best);
    return {best.index, std::sqrt(best.d2)};
  }

  /// Indices of the k nearest points ordered by (distance, index).
  std::vector<std::size_t> knn(const Vec3& q, std::size_t k) const {
    k = std::min(k, points_.size());
    std::vector<std::size_t> out;
    if (k == 0) return out;
    std::priority_queue<std::pair<double, std::uint32_t>> heap;
    search_knn(0, q, k, heap);
    out.resize(heap.size());
    for (std::size_t i = heap.size(); i-- > 0;) {
      out[i] = heap.top().second;
      heap.pop();
    }
    return out;
  }

 private:
  struct Node {
    std::uint32_t point;
    std::int32_t axis;  // -1 for leaves
    std::uint32_t left, right;  // node ids, 0 = none (root is never a child)
  };
  struct Best {
    double d2;
    std::uint32_t index;
  };

  std::uint32_t build(std::size_t begin, std::size_t end) {
    std::uint32_t id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.push_back({0, -1, 0, 0});
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 hi = -lo;
    for (std::size_t i = begin; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis;
    (hi - lo).maxCoeff(&axis);
    std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       double va = points_[a](axis), vb = points_[b](axis);
                       return va < vb || (va == vb && a < b);
                     });
    nodes_[id].point = order_[mid];
    nodes_[id].axis = axis;
    if (mid > begin) {
      std::uint32_t l = build(begin, mid);
      nodes_[id].left = l;
    }
    if (mid + 1 < end) {
      std::uint32_t r = build(mid + 1, end);
      nodes_[id].right = r;
    }
    return id;
  }

  static bool better(double d2, std::uint32_t idx, double best_d2, std::uint32_t best_idx) {
    return d2 < best_d2 || (d2 == best_d2 && idx < best_idx);
  }

  void search_nearest(std::uint32_t id, const Vec3& q, Best& best) const {
    const Node& n = nodes_[id];
    double d2 = (points_[n.point] - q).squaredNorm();
    if (better(d2, n.point, best.d2, best.index)) best = {d2, n.point};
    double diff = q(n.axis) - points_[n.point](n.axis);
    std::uint32_t near = diff < 0 ? n.left : n.right;
    std::uint32_t far = diff < 0 ? n.right : n.left;
    if (near) search_nearest(near, q, best);
    if (far && diff * diff <= best.d2) search_nearest(far, q, best);
  }

  void search_knn(std::uint32_t id, const Vec3& q, std::size_t k,
                  std::priority_queue<std::pair<double, std::uint32_t>>& heap) const {
    const Node& n = nodes_[id];
    double d2 = (points_[n.point] - q).squaredNorm();
    if (heap.size() < k) {
      heap.emplace(d2, n.point);
    } else if (better(d2, n.point, heap.top().first, heap.top().second)) {
      heap.pop();
      heap.emplace(d2, n.point);
    }
    double diff = q(n.axis) - points_[n.point](n.axis);
    std::uint32_t near = diff < 0 ? n.left : n.right;
    std::uint32_t far = diff < 0 ? n.right : n.left;
    if (near) search_knn(near, q, k, heap);
    if (far && (heap.size() < k || diff * diff <= heap.top().first)) search_knn(far, q, k, heap);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// (index, distance) of the cloud point nearest to query; ties to the lowest index.
inline std::pair<std::size_t, double> nearest_neighbor(std::span<const Vec3> cloud, const Vec3& query) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "nearest neighbor in an empty cloud");
  return KdTree(std::vector<Vec3>(cloud.begin(), cloud.end())).nearest(query);
}

// ---------------------------------------------------------------------------
// Normals

inline constexpr std::size_t kDefaultNormalNeighbors = 10;

/// PCA normals: for each point, the smallest-eigenvalue eigenvector of the
/// covariance of the point and its k nearest neighbors, oriented toward the
/// viewpoint. If `ambiguous` is given, it flags points whose two smallest
/// eigenvalues are within 1% of each other (ratio > 0.99).
inline OrientedCloud estimate_normals(std::span<const Vec3> positions, std::size_t k, const Vec3& viewpoint,
                                      std::vector<char>* ambiguous = nullptr, unsigned threads = 1) {
  if (k < 3) throw Error(ErrorCode::InvalidArgument, "k must be >= 3");
  if (positions.size() < k + 1)
    throw Error(ErrorCode::TooFewPoints, "need at least k+1 = " + std::to_string(k + 1) + " points");
  KdTree tree(std::vector<Vec3>(positions.begin(), positions.end()));
  OrientedCloud cloud{Frame::camera, std::vector<OrientedPoint>(positions.size())};
  std::vector<char> flags(positions.size(), 0);
  parallel_for(positions.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      auto nn = tree.knn(positions[i], k + 1);
      Vec3 mean = Vec3::Zero();
      for (auto j : nn) mean += positions[j];
      mean /= static_cast<double>(nn.size());
      Mat3 cov = Mat3::Zero();
      for (auto j : nn) {
        Vec3 d = positions[j] - mean;
        cov.noalias() += d * d.transpose();
      }
      Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
      Vec3 n = solver.eigenvectors().col(0).normalized();
      const auto& ev = solver.eigenvalues();
      // Lines and isotropic blobs both land here; the slack absorbs rounding at zero.
      flags[i] = ev(0) >= 0.99 * ev(1) - 1e-12 * ev(2);
      if (n.dot(viewpoint - positions[i]) < 0) n = -n;
      cloud.points[i] = {positions[i], n};
    }
  });
  if (ambiguous) *ambiguous = std::move(flags);
  return cloud;
}

// ---------------------------------------------------------------------------
// Downsampling and extent

/// Greedy farthest point sampling. The first index is drawn uniformly from
/// the seed; each next index maximizes the distance to the selected set, with
/// ties going to the lowest index.
inline std::vector<std::size_t> farthest_point_sampling(std::span<const Vec3> cloud, std::size_t z,
                                                        std::uint64_t seed) {
  if (z < 1 || z > cloud.size())
    throw Error(ErrorCode::ZOutOfRange,
                "Z=" + std::to_string(z) + " outside [1, " + std::to_string(cloud.size()) + "]");
  Rng rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(z);
  std::vector<double> min_d2(cloud.size(), std::numeric_limits<double>::infinity());
  std::size_t current = rng.uniform_index(cloud.size());
  for (;;) {
    picked.push_back(current);
    min_d2[current] = -1.0;  // selected
    if (picked.size() == z) break;
    std::size_t best = 0;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      double d2 = (cloud[i] - cloud[current]).squaredNorm();
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    current = best;
  }
  return picked;
}

/// Maximum pairwise distance, exact O(N²).
inline double diameter(std::span<const Vec3> cloud) {
  if (cloud.size() < 2) throw Error(ErrorCode::TooFewPoints, "diameter needs at least 2 points");
  double best = 0.0;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    for (std::size_t j = i + 1; j < cloud.size(); ++j) best = std::max(best, (cloud[i] - cloud[j]).squaredNorm());
  return std::sqrt(best);
}

}  // namespace bico
