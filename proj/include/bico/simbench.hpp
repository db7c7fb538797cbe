#pragma once

// Synthetic scenes, simulated correspondence branches and the sweep harness.
//
// Seeding: every scene takes its seed from (base seed, scene index) only, so
// all values of a sweep see the same poses, surface samples and noise draws
// and differ only in the swept variable. Sub-streams (pose, sampling,
// occlusion, noise, oracles, solver) are split off with derive_seed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bico/cloud.hpp"
#include "bico/error.hpp"
#include "bico/geom3d.hpp"
#include "bico/metrics.hpp"
#include "bico/parallel.hpp"
#include "bico/rng.hpp"
#include "bico/solver.hpp"

namespace bico {

// ---------------------------------------------------------------------------
// Builtin shapes

/// Axis-aligned cube centered at the origin with the given half side.
inline TriangleMesh make_cube_mesh(double half) {
  TriangleMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.emplace_back((i & 1 ? half : -half), (i & 2 ? half : -half), (i & 4 ? half : -half));
  // Counterclockwise seen from outside.
  m.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                 {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

/// Closed cylinder along z, centered at the origin.
inline TriangleMesh make_cylinder_mesh(double radius, double height, std::uint32_t segments = 48) {
  TriangleMesh m;
  const double h = 0.5 * height;
  for (std::uint32_t k = 0; k < segments; ++k) {
    double a = 2.0 * std::numbers::pi * k / segments;
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), -h);
    m.vertices.emplace_back(radius * std::cos(a), radius * std::sin(a), h);
  }
  const auto bottom = static_cast<std::uint32_t>(m.vertices.size());
  m.vertices.emplace_back(0, 0, -h);
  m.vertices.emplace_back(0, 0, h);
  const std::uint32_t top = bottom + 1;
  for (std::uint32_t k = 0; k < segments; ++k) {
    std::uint32_t b0 = 2 * k, t0 = 2 * k + 1;
    std::uint32_t b1 = 2 * ((k + 1) % segments), t1 = b1 + 1;
    m.triangles.push_back({b0, b1, t1});
    m.triangles.push_back({b0, t1, t0});
    m.triangles.push_back({bottom, b1, b0});
    m.triangles.push_back({top, t0, t1});
  }
  return m;
}

inline TriangleMesh make_icosphere(int subdivisions) {
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  TriangleMesh m;
  m.vertices = {{-1, p, 0}, {1, p, 0}, {-1, -p, 0}, {1, -p, 0}, {0, -1, p}, {0, 1, p},
                {0, -1, -p}, {0, 1, -p}, {p, 0, -1}, {p, 0, 1}, {-p, 0, -1}, {-p, 0, 1}};
  for (auto& v : m.vertices) v.normalize();
  m.triangles = {{0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                 {11, 10, 2}, {10, 7, 6}, {7, 1, 8}, {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8},
                 {3, 8, 9}, {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::uint32_t> mid;
    auto midpoint = [&](std::uint32_t a, std::uint32_t b) {
      auto key = std::minmax(a, b);
      auto it = mid.find(key);
      if (it != mid.end()) return it->second;
      m.vertices.push_back((m.vertices[a] + m.vertices[b]).normalized());
      auto id = static_cast<std::uint32_t>(m.vertices.size() - 1);
      mid.emplace(key, id);
      return id;
    };
    std::vector<std::array<std::uint32_t, 3>> next;
    for (const auto& t : m.triangles) {
      std::uint32_t ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
      next.push_back({t[0], ab, ca});
      next.push_back({t[1], bc, ab});
      next.push_back({t[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    m.triangles = std::move(next);
  }
  return m;
}

/// Star-shaped asymmetric blob: an icosphere whose radius is modulated by a
/// fixed set of low-frequency harmonics, r(u) = radius (1 + Σ a_k cos(w_k d_k·u + φ_k)).
inline TriangleMesh make_blob_mesh(double radius) {
  TriangleMesh m = make_icosphere(3);
  Rng rng(0xB10B);
  struct Harmonic {
    Vec3 dir;
    double freq, phase, amp;
  };
  std::vector<Harmonic> hs;
  for (int k = 0; k < 5; ++k) {
    Vec3 d(rng.normal(), rng.normal(), rng.normal());
    hs.push_back({d.normalized(), 1.0 + static_cast<double>(k % 3), rng.uniform(0.0, 2.0 * std::numbers::pi),
                  rng.uniform(0.04, 0.09)});
  }
  for (auto& v : m.vertices) {
    double r = 1.0;
    for (const auto& h : hs) r += h.amp * std::cos(h.freq * h.dir.dot(v) + h.phase);
    v *= radius * r;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Configuration

enum class SweepVariable { occlusion, z, corr_noise, outlier_ratio };

inline const char* to_string(SweepVariable v) {
  switch (v) {
    case SweepVariable::occlusion: return "occlusion";
    case SweepVariable::z: return "Z";
    case SweepVariable::corr_noise: return "corr_noise";
    case SweepVariable::outlier_ratio: return "outlier_ratio";
  }
  return "?";
}

enum class Method { bico, bico_unfiltered, bcm_s_only, bcm_m_only, kabsch, ransac };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::bico: return "bico";
    case Method::bico_unfiltered: return "bico_unfiltered";
    case Method::bcm_s_only: return "bcm_s_only";
    case Method::bcm_m_only: return "bcm_m_only";
    case Method::kabsch: return "kabsch";
    case Method::ransac: return "ransac";
  }
  return "?";
}

struct ScenarioConfig {
  std::uint64_t seed = 0;
  std::string model = "blob";  // blob | cube | cylinder | path to OBJ/PLY mesh
  double model_scale = 0.05;   // m; half-size of builtin shapes
  std::size_t M = 1000;        // model points
  std::size_t N = 1000;        // scene points before occlusion
  double occlusion_fraction = 0.0;
  double depth_noise_sigma = 0.0;  // m
  double corr_noise_sigma = 0.002; // m
  double outlier_ratio = 0.0;
  std::size_t Z = 100;
  double keep_fraction = 0.10;
  double translation_range = 0.5;  // m
  bool use_pr = false;
  std::size_t pr_count = 0;  // 0: one regressed pose per visible scene point
  double pr_sigma_rot_deg = 3.0;
  double pr_sigma_t = 0.003;  // m
  std::size_t normal_neighbors = kDefaultNormalNeighbors;

  void validate() const {
    auto bad = [](const char* key, const std::string& why) {
      throw Error(ErrorCode::InvalidConfig, std::string(key) + ": " + why);
    };
    if (!(model_scale > 0)) bad("model_scale", "must be > 0");
    if (M < 1) bad("M", "must be >= 1");
    if (N < 1) bad("N", "must be >= 1");
    if (!(occlusion_fraction >= 0 && occlusion_fraction < 1)) bad("occlusion_fraction", "must be in [0, 1)");
    if (!(depth_noise_sigma >= 0)) bad("depth_noise_sigma", "must be >= 0");
    if (!(corr_noise_sigma >= 0)) bad("corr_noise_sigma", "must be >= 0");
    if (!(outlier_ratio >= 0 && outlier_ratio < 1)) bad("outlier_ratio", "must be in [0, 1)");
    if (Z < 2) bad("Z", "must be >= 2");
    if (!(keep_fraction > 0 && keep_fraction <= 1)) bad("keep_fraction", "must be in (0, 1]");
    if (!(translation_range > 0)) bad("translation_range", "must be > 0");
    if (!(pr_sigma_rot_deg >= 0)) bad("pr_sigma_rot_deg", "must be >= 0");
    if (!(pr_sigma_t >= 0)) bad("pr_sigma_t", "must be >= 0");
    if (normal_neighbors < 3) bad("normal_neighbors", "must be >= 3");
    std::size_t removed = static_cast<std::size_t>(std::ceil(occlusion_fraction * static_cast<double>(N) - 1e-9));
    if (N - removed < normal_neighbors + 1) bad("occlusion_fraction", "leaves too few scene points for normals");
    if (Z > N - removed) bad("Z", "exceeds the number of visible scene points");
    if (Z > M) bad("Z", "exceeds the number of model points");
  }
};

inline TriangleMesh model_mesh(const ScenarioConfig& cfg) {
  if (cfg.model == "blob") return make_blob_mesh(cfg.model_scale);
  if (cfg.model == "cube") return make_cube_mesh(cfg.model_scale);
  if (cfg.model == "cylinder") return make_cylinder_mesh(cfg.model_scale, 2.0 * cfg.model_scale);
  return load_mesh(cfg.model);
}

// ---------------------------------------------------------------------------
// Poses and scenes

/// Uniform unit quaternion (normalized 4D Gaussian).
inline Eigen::Quaterniond random_unit_quaternion(Rng& rng) {
  for (;;) {
    Eigen::Vector4d v(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    double n = v.norm();
    if (n > 1e-12) return Eigen::Quaterniond(v(0) / n, v(1) / n, v(2) / n, v(3) / n);
  }
}

/// Rotation uniform on SO(3), translation uniform in [-range, range]³.
inline RigidTransform sample_pose(std::uint64_t seed, double translation_range) {
  if (!(translation_range > 0)) throw Error(ErrorCode::InvalidArgument, "translation range must be > 0");
  Rng rng(seed);
  Rotation r = Rotation::from_quaternion(random_unit_quaternion(rng));
  Vec3 t;
  for (int k = 0; k < 3; ++k) t(k) = rng.uniform(-translation_range, translation_range);
  return {r, t};
}

struct SceneInstance {
  RigidTransform gt_pose;
  OrientedCloud scene{Frame::camera, {}};  // visible, noisy, PCA normals
  OrientedCloud model{Frame::model, {}};   // M clean samples with face normals
  OrientedCloud resample{Frame::model, {}};  // the N points the scene was made from
  std::vector<char> visible;                 // over the N resampled points
  std::vector<Vec3> clean_scene;             // noise-free camera positions of visible points
  std::size_t patch_seed = 0;                // index into resample
};

inline std::size_t occluded_count(double occlusion_fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(occlusion_fraction * static_cast<double>(n) - 1e-9));
}

/// Samples the model and an independent N-point resample, moves the resample
/// by a random pose, removes the contiguous patch of ceil(occlusion * N) points
/// nearest a random surface point, adds isotropic position noise and
/// re-estimates normals with the viewpoint at the camera origin.
inline SceneInstance make_scene(const ScenarioConfig& cfg, const TriangleMesh& mesh, std::uint64_t scene_seed) {
  cfg.validate();
  SceneInstance s;
  s.gt_pose = sample_pose(derive_seed(scene_seed, {1}), cfg.translation_range);
  s.model = sample_surface(mesh, cfg.M, derive_seed(scene_seed, {2}));
  s.resample = sample_surface(mesh, cfg.N, derive_seed(scene_seed, {3}));
  OrientedCloud moved = transformed(s.resample, s.gt_pose, Frame::camera);

  Rng occ_rng(derive_seed(scene_seed, {4}));
  s.patch_seed = occ_rng.uniform_index(cfg.N);
  const Vec3 centre = moved.points[s.patch_seed].position;
  std::vector<std::size_t> order(cfg.N);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> d2(cfg.N);
  for (std::size_t i = 0; i < cfg.N; ++i) d2[i] = (moved.points[i].position - centre).squaredNorm();
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return d2[a] < d2[b] || (d2[a] == d2[b] && a < b);
  });
  s.visible.assign(cfg.N, 1);
  const std::size_t removed = occluded_count(cfg.occlusion_fraction, cfg.N);
  for (std::size_t k = 0; k < removed; ++k) s.visible[order[k]] = 0;

  // Noise is drawn for every resampled point so survivors keep their draws
  // when the occlusion level changes.
  Rng noise_rng(derive_seed(scene_seed, {5}));
  std::vector<Vec3> noisy;
  for (std::size_t i = 0; i < cfg.N; ++i) {
    Vec3 eta(noise_rng.normal(), noise_rng.normal(), noise_rng.normal());
    if (!s.visible[i]) continue;
    s.clean_scene.push_back(moved.points[i].position);
    noisy.push_back(moved.points[i].position + cfg.depth_noise_sigma * eta);
  }
  s.scene = estimate_normals(noisy, cfg.normal_neighbors, Vec3::Zero());
  return s;
}

inline SceneInstance make_scene(const ScenarioConfig& cfg) { return make_scene(cfg, model_mesh(cfg), cfg.seed); }

// ---------------------------------------------------------------------------
// Simulated correspondence branches

/// Position noise (m), normal perturbation (per-component std before
/// renormalization) and outlier fraction of a simulated branch.
struct OracleNoise {
  double position_sigma = 0.0;
  double normal_sigma = 0.0;
  double outlier_ratio = 0.0;

  /// Normal noise coupled to position noise through the loss weight: a
  /// normal error δ costs as much as a position error λδ, so σ_n = σ / λ.
  static OracleNoise coupled(double position_sigma, double outlier_ratio, double lambda = 0.05) {
    return {position_sigma, position_sigma / lambda, outlier_ratio};
  }
};

namespace detail {

inline Vec3 random_unit_vector(Rng& rng) {
  for (;;) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

// Maps `source` through `to_generated`, perturbs it and replaces an outlier
// subset by uniform samples inside `box`.
inline OrientedCloud simulate_generated(const OrientedCloud& source, const RigidTransform& to_generated, Frame frame,
                                        const OracleNoise& noise, const Vec3& box_lo, const Vec3& box_hi,
                                        std::uint64_t seed, std::vector<char>* outlier_mask) {
  if (!(noise.position_sigma >= 0 && noise.normal_sigma >= 0))
    throw Error(ErrorCode::InvalidArgument, "noise sigmas must be >= 0");
  if (!(noise.outlier_ratio >= 0 && noise.outlier_ratio <= 1))
    throw Error(ErrorCode::InvalidArgument, "outlier ratio must be in [0, 1]");
  Rng rng(derive_seed(seed, {1}));
  OrientedCloud out{frame, {}};
  out.points.reserve(source.size());
  for (const auto& p : source.points) {
    Vec3 eta(rng.normal(), rng.normal(), rng.normal());
    Vec3 xi(rng.normal(), rng.normal(), rng.normal());
    Vec3 pos = apply_point(to_generated, p.position) + noise.position_sigma * eta;
    Vec3 n = apply_normal(to_generated, p.normal);
    if (noise.normal_sigma > 0) {
      Vec3 perturbed = n + noise.normal_sigma * xi;
      if (perturbed.norm() > 1e-12) n = perturbed.normalized();
    }
    out.points.push_back({pos, n});
  }

  const std::size_t count = out.size();
  const std::size_t replaced = std::min(count, occluded_count(noise.outlier_ratio, count));
  Rng pick(derive_seed(seed, {2}));
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::vector<char> mask(count, 0);
  for (std::size_t k = 0; k < replaced; ++k) {
    std::size_t j = k + pick.uniform_index(count - k);
    std::swap(idx[k], idx[j]);
    mask[idx[k]] = 1;
  }
  for (std::size_t i = 0; i < count; ++i) {
    if (!mask[i]) continue;
    Vec3 pos;
    for (int a = 0; a < 3; ++a) pos(a) = pick.uniform(box_lo(a), box_hi(a));
    out.points[i] = {pos, random_unit_vector(pick)};
  }
  if (outlier_mask) *outlier_mask = std::move(mask);
  return out;
}

inline std::pair<Vec3, Vec3> bounding_box(const std::vector<Vec3>& pts) {
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : pts) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  return {lo, hi};
}

}  // namespace detail

/// Scene -> model direction: each visible scene point paired with its
/// ground-truth model-space location, perturbed, with outliers drawn from the
/// model bounding box.
inline CorrespondenceSet oracle_bcm_s(const SceneInstance& scene, const OracleNoise& noise, std::uint64_t seed,
                                      std::vector<char>* outlier_mask = nullptr) {
  auto [lo, hi] = detail::bounding_box(scene.model.positions());
  CorrespondenceSet corr;
  corr.camera = scene.scene;
  corr.model = detail::simulate_generated(scene.scene, invert(scene.gt_pose), Frame::model, noise, lo, hi, seed,
                                          outlier_mask);
  return corr;
}

inline CorrespondenceSet oracle_bcm_s(const SceneInstance& scene, double corr_noise_sigma, double outlier_ratio,
                                      std::uint64_t seed) {
  return oracle_bcm_s(scene, OracleNoise::coupled(corr_noise_sigma, outlier_ratio), seed);
}

/// Model -> scene direction: each clean model point paired with its
/// ground-truth camera-space location, perturbed, with outliers drawn from the
/// bounding box of the posed model.
inline CorrespondenceSet oracle_bcm_m(const SceneInstance& scene, const OracleNoise& noise, std::uint64_t seed,
                                      std::vector<char>* outlier_mask = nullptr) {
  auto [lo, hi] = detail::bounding_box(transformed(scene.model, scene.gt_pose, Frame::camera).positions());
  CorrespondenceSet corr;
  corr.model = scene.model;
  corr.camera = detail::simulate_generated(scene.model, scene.gt_pose, Frame::camera, noise, lo, hi, seed,
                                           outlier_mask);
  return corr;
}

inline CorrespondenceSet oracle_bcm_m(const SceneInstance& scene, double corr_noise_sigma, double outlier_ratio,
                                      std::uint64_t seed) {
  return oracle_bcm_m(scene, OracleNoise::coupled(corr_noise_sigma, outlier_ratio), seed);
}

/// Simulated point-wise regression: gt composed with a random axis-angle
/// rotation (angle ~ |N(0, sigma_rot)|) and a N(0, sigma_t² I) translation offset.
inline PoseSet oracle_pr(const RigidTransform& gt, std::size_t count, double sigma_rot_deg, double sigma_t,
                         std::uint64_t seed) {
  if (count < 1) throw Error(ErrorCode::InvalidArgument, "pr count must be >= 1");
  Rng rng(seed);
  PoseSet set{Branch::PR, {}};
  set.poses.reserve(count);
  const double sigma_rot = sigma_rot_deg * std::numbers::pi / 180.0;
  for (std::size_t k = 0; k < count; ++k) {
    Vec3 axis = detail::random_unit_vector(rng);
    double angle = std::abs(rng.normal()) * sigma_rot;
    Vec3 dt(rng.normal(), rng.normal(), rng.normal());
    Rotation delta = Rotation::from_axis_angle(axis, angle);
    set.poses.push_back({delta * gt.rotation, gt.translation + sigma_t * dt});
  }
  return set;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepConfig {
  ScenarioConfig base;
  MetricConfig metrics;
  SweepVariable variable = SweepVariable::occlusion;
  std::vector<double> values{0.0};
  std::size_t scenes_per_value = 200;
  std::vector<Method> methods{Method::bico, Method::bcm_s_only, Method::bcm_m_only, Method::kabsch, Method::ransac};
  std::size_t ransac_iterations = 500;

  ScenarioConfig scenario_for(double value) const {
    ScenarioConfig c = base;
    switch (variable) {
      case SweepVariable::occlusion: c.occlusion_fraction = value; break;
      case SweepVariable::z: c.Z = static_cast<std::size_t>(std::llround(value)); break;
      case SweepVariable::corr_noise: c.corr_noise_sigma = value; break;
      case SweepVariable::outlier_ratio: c.outlier_ratio = value; break;
    }
    return c;
  }

  void validate() const {
    metrics.validate();
    if (values.empty()) throw Error(ErrorCode::InvalidConfig, "sweep_values: must not be empty");
    if (scenes_per_value < 1) throw Error(ErrorCode::InvalidConfig, "scenes_per_value: must be >= 1");
    if (methods.empty()) throw Error(ErrorCode::InvalidConfig, "methods: must not be empty");
    if (ransac_iterations < 1) throw Error(ErrorCode::InvalidConfig, "ransac_iterations: must be >= 1");
    for (double v : values) {
      if (variable == SweepVariable::z && (v < 2 || v != std::floor(v)))
        throw Error(ErrorCode::InvalidConfig, "sweep_values: Z values must be integers >= 2");
      scenario_for(v).validate();
    }
  }
};

struct MetricRow {
  std::size_t value_index = 0;
  std::size_t scene_index = 0;
  double value = 0.0;
  Method method = Method::bico;
  double add = 0.0, adds = 0.0, rot_deg = 0.0, trans = 0.0;  // +inf on failure
  double diameter = 0.0;
  std::string failure;
};

struct MethodAggregate {
  Method method = Method::bico;
  std::size_t scenes = 0, failures = 0;
  double add_accuracy = 0, adds_accuracy = 0, adds_accuracy_2cm = 0;  // percent
  double add_auc = 0, adds_auc = 0;                                   // percent
  double add_mean = 0, add_median = 0, adds_mean = 0, adds_median = 0;
  double rot_deg_mean = 0, rot_deg_median = 0, trans_mean = 0, trans_median = 0;
};

struct CellAggregate {
  double value = 0.0;
  double bcm_s_loss_mean = 0.0, bcm_m_loss_mean = 0.0;
  std::vector<MethodAggregate> methods;
};

struct Report {
  SweepConfig config;
  std::vector<MetricRow> rows;
  std::vector<CellAggregate> cells;

  const MethodAggregate& aggregate(std::size_t value_index, Method m) const {
    for (const auto& a : cells.at(value_index).methods)
      if (a.method == m) return a;
    throw Error(ErrorCode::InvalidArgument, std::string("method not in report: ") + to_string(m));
  }
};

namespace detail {

inline double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct SceneOutcome {
  std::vector<MetricRow> rows;
  double bcm_s_loss = 0.0, bcm_m_loss = 0.0;
};

inline SceneOutcome run_scene(const SweepConfig& sweep, const TriangleMesh& mesh, std::size_t vi, std::size_t si) {
  const double value = sweep.values[vi];
  const ScenarioConfig cfg = sweep.scenario_for(value);
  const std::uint64_t scene_seed = derive_seed(sweep.base.seed, {si});
  constexpr double inf = std::numeric_limits<double>::infinity();

  SceneOutcome out;
  auto fail_all = [&](const std::string& why) {
    for (Method m : sweep.methods) out.rows.push_back({vi, si, value, m, inf, inf, inf, inf, 0.0, why});
  };

  SceneInstance scene;
  CorrespondenceSet s_corr, m_corr;
  std::optional<PoseSet> pr;
  double diam = 0.0;
  try {
    scene = make_scene(cfg, mesh, scene_seed);
    OracleNoise noise = OracleNoise::coupled(cfg.corr_noise_sigma, cfg.outlier_ratio, sweep.metrics.lambda);
    s_corr = oracle_bcm_s(scene, noise, derive_seed(scene_seed, {11}));
    m_corr = oracle_bcm_m(scene, noise, derive_seed(scene_seed, {12}));
    if (cfg.use_pr)
      pr = oracle_pr(scene.gt_pose, cfg.pr_count ? cfg.pr_count : scene.scene.size(), cfg.pr_sigma_rot_deg,
                     cfg.pr_sigma_t, derive_seed(scene_seed, {13}));
    diam = diameter(scene.model.positions());

    // Loss of each simulated branch against its noise-free target.
    OrientedCloud s_target = transformed(scene.scene, invert(scene.gt_pose), Frame::model);
    OrientedCloud m_target = transformed(scene.model, scene.gt_pose, Frame::camera);
    out.bcm_s_loss = bcm_loss(s_corr.model, s_target, sweep.metrics.lambda);
    out.bcm_m_loss = bcm_loss(m_corr.camera, m_target, sweep.metrics.lambda);
  } catch (const std::exception& e) {
    fail_all(e.what());
    return out;
  }

  const auto model_pts = scene.model.positions();
  std::optional<SolveResult> solved;
  std::string solve_error;
  auto need_solve = [&] {
    for (Method m : sweep.methods)
      if (m == Method::bico || m == Method::bico_unfiltered || m == Method::bcm_s_only || m == Method::bcm_m_only)
        return true;
    return false;
  };
  if (need_solve()) {
    try {
      SolveOptions opt{cfg.Z, cfg.keep_fraction, derive_seed(scene_seed, {21}), 1};
      solved = solve(scene.scene, scene.model, s_corr, m_corr, pr, opt);
    } catch (const std::exception& e) {
      solve_error = e.what();
    }
  }

  for (Method m : sweep.methods) {
    MetricRow row{vi, si, value, m, inf, inf, inf, inf, diam, {}};
    try {
      RigidTransform pose;
      auto require_solve = [&]() -> const SolveResult& {
        if (!solved) throw Error(ErrorCode::AllPairsDegenerate, solve_error);
        return *solved;
      };
      auto branch_mean = [&](const BranchOutcome& b) {
        if (!b.mean) throw Error(ErrorCode::AllPairsDegenerate, b.message);
        return *b.mean;
      };
      switch (m) {
        case Method::bico: pose = require_solve().pose; break;
        case Method::bico_unfiltered: {
          const auto& r = require_solve();
          std::vector<PoseSet> all;
          for (const BranchOutcome* b : {&r.bcm_s, &r.bcm_m}) {
            PoseSet set{b->branch, {}};
            for (const auto& c : b->ranked) set.poses.push_back(c.transform);
            all.push_back(std::move(set));
          }
          if (pr) all.push_back(*pr);
          pose = ensemble(all);
          break;
        }
        case Method::bcm_s_only: pose = branch_mean(require_solve().bcm_s); break;
        case Method::bcm_m_only: pose = branch_mean(require_solve().bcm_m); break;
        case Method::kabsch: pose = kabsch(concatenate(s_corr, m_corr)); break;
        case Method::ransac:
          pose = ransac(concatenate(s_corr, m_corr), 0.5 * sweep.metrics.accuracy_diameter_fraction * diam,
                        sweep.ransac_iterations, derive_seed(scene_seed, {22}))
                     .pose;
          break;
      }
      row.add = add(pose, scene.gt_pose, model_pts);
      row.adds = adds(pose, scene.gt_pose, model_pts);
      row.rot_deg = rotation_error_deg(pose, scene.gt_pose);
      row.trans = translation_error(pose, scene.gt_pose);
    } catch (const std::exception& e) {
      row.failure = e.what();
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace detail

/// Runs every method on scenes_per_value scenes for each sweep value.
/// Per-scene failures become +inf rows. Output is independent of `threads`.
inline Report run_sweep(const SweepConfig& sweep, unsigned threads = 1) {
  sweep.validate();
  const TriangleMesh mesh = model_mesh(sweep.base);
  const std::size_t nv = sweep.values.size(), ns = sweep.scenes_per_value;
  std::vector<detail::SceneOutcome> outcomes(nv * ns);
  parallel_for(outcomes.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) outcomes[k] = detail::run_scene(sweep, mesh, k / ns, k % ns);
  });

  Report report;
  report.config = sweep;
  for (std::size_t vi = 0; vi < nv; ++vi) {
    CellAggregate cell;
    cell.value = sweep.values[vi];
    std::vector<double> s_loss, m_loss;
    for (std::size_t si = 0; si < ns; ++si) {
      const auto& o = outcomes[vi * ns + si];
      report.rows.insert(report.rows.end(), o.rows.begin(), o.rows.end());
      s_loss.push_back(o.bcm_s_loss);
      m_loss.push_back(o.bcm_m_loss);
    }
    cell.bcm_s_loss_mean = detail::mean_of(s_loss);
    cell.bcm_m_loss_mean = detail::mean_of(m_loss);
    for (Method m : sweep.methods) {
      MethodAggregate agg;
      agg.method = m;
      std::vector<double> a, as, r, t;
      std::size_t add_ok = 0, adds_ok = 0, adds_2cm = 0;
      for (std::size_t si = 0; si < ns; ++si)
        for (const auto& row : outcomes[vi * ns + si].rows) {
          if (row.method != m) continue;
          ++agg.scenes;
          if (!row.failure.empty()) ++agg.failures;
          a.push_back(row.add);
          as.push_back(row.adds);
          r.push_back(row.rot_deg);
          t.push_back(row.trans);
          double thr = sweep.metrics.accuracy_diameter_fraction * row.diameter;
          add_ok += row.add < thr;
          adds_ok += row.adds < thr;
          adds_2cm += row.adds < 0.02;
        }
      const double n = static_cast<double>(agg.scenes);
      agg.add_accuracy = 100.0 * static_cast<double>(add_ok) / n;
      agg.adds_accuracy = 100.0 * static_cast<double>(adds_ok) / n;
      agg.adds_accuracy_2cm = 100.0 * static_cast<double>(adds_2cm) / n;
      agg.add_auc = auc(a, sweep.metrics);
      agg.adds_auc = auc(as, sweep.metrics);
      agg.add_mean = detail::mean_of(a);
      agg.add_median = detail::median_of(a);
      agg.adds_mean = detail::mean_of(as);
      agg.adds_median = detail::median_of(as);
      agg.rot_deg_mean = detail::mean_of(r);
      agg.rot_deg_median = detail::median_of(r);
      agg.trans_mean = detail::mean_of(t);
      agg.trans_median = detail::median_of(t);
      cell.methods.push_back(agg);
    }
    report.cells.push_back(std::move(cell));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Config files: JSON object or key = value lines (# comments, comma lists)

namespace detail {

inline nlohmann::json parse_scalar(std::string v) {
  auto trim = [](std::string s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  v = trim(v);
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    return v.substr(1, v.size() - 2);
  if (v == "true") return true;
  if (v == "false") return false;
  try {
    std::size_t used = 0;
    if (v.find_first_of(".eE") == std::string::npos && v.find_first_not_of("+-0123456789") == std::string::npos) {
      long long i = std::stoll(v, &used);
      if (used == v.size()) return i;
    }
    double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  return v;
}

inline nlohmann::json parse_key_values(const std::string& text, const std::string& name) {
  nlohmann::json j = nlohmann::json::object();
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::InvalidConfig, name + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string value = line.substr(eq + 1);
    std::string stripped = value;
    stripped.erase(0, stripped.find_first_not_of(" \t"));
    if (!stripped.empty() && stripped.front() == '[') {
      auto close = stripped.rfind(']');
      stripped = stripped.substr(1, close == std::string::npos ? std::string::npos : close - 1);
      value = stripped + ",";
    }
    if (value.find(',') != std::string::npos) {
      nlohmann::json arr = nlohmann::json::array();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ','))
        if (item.find_first_not_of(" \t\r") != std::string::npos) arr.push_back(parse_scalar(item));
      j[key] = arr;
    } else {
      j[key] = parse_scalar(value);
    }
  }
  return j;
}

}  // namespace detail

inline SweepVariable parse_sweep_variable(const std::string& s) {
  if (s == "occlusion") return SweepVariable::occlusion;
  if (s == "Z" || s == "z") return SweepVariable::z;
  if (s == "corr_noise") return SweepVariable::corr_noise;
  if (s == "outlier_ratio") return SweepVariable::outlier_ratio;
  throw Error(ErrorCode::InvalidConfig, "sweep_variable: unknown variable '" + s + "'");
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::bico, Method::bico_unfiltered, Method::bcm_s_only, Method::bcm_m_only, Method::kabsch,
                   Method::ransac})
    if (s == to_string(m)) return m;
  throw Error(ErrorCode::InvalidConfig, "methods: unknown method '" + s + "'");
}

/// Applies a JSON object of config keys. Unknown keys and ill-typed values
/// throw InvalidConfig naming the key.
inline SweepConfig sweep_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be an object");
  SweepConfig c;
  auto& b = c.base;
  for (const auto& [key, v] : j.items()) {
    auto bad = [&](const char* want) { throw Error(ErrorCode::InvalidConfig, key + ": expected " + want); };
    auto num = [&]() -> double {
      if (!v.is_number()) bad("a number");
      return v.get<double>();
    };
    auto count = [&]() -> std::size_t {
      if (!v.is_number_integer() || v.get<long long>() < 0) bad("a non-negative integer");
      return static_cast<std::size_t>(v.get<long long>());
    };
    auto str = [&]() -> std::string {
      if (!v.is_string()) bad("a string");
      return v.get<std::string>();
    };
    auto flag = [&]() -> bool {
      if (!v.is_boolean()) bad("true or false");
      return v.get<bool>();
    };
    auto list = [&]() -> nlohmann::json {
      return v.is_array() ? v : nlohmann::json::array({v});
    };

    if (key == "seed") b.seed = count();
    else if (key == "model") b.model = str();
    else if (key == "model_scale") b.model_scale = num();
    else if (key == "M") b.M = count();
    else if (key == "N") b.N = count();
    else if (key == "occlusion_fraction") b.occlusion_fraction = num();
    else if (key == "depth_noise_sigma") b.depth_noise_sigma = num();
    else if (key == "corr_noise_sigma") b.corr_noise_sigma = num();
    else if (key == "outlier_ratio") b.outlier_ratio = num();
    else if (key == "Z") b.Z = count();
    else if (key == "keep_fraction") b.keep_fraction = num();
    else if (key == "translation_range") b.translation_range = num();
    else if (key == "use_pr") b.use_pr = flag();
    else if (key == "pr_count") b.pr_count = count();
    else if (key == "pr_sigma_rot_deg") b.pr_sigma_rot_deg = num();
    else if (key == "pr_sigma_t") b.pr_sigma_t = num();
    else if (key == "normal_neighbors") b.normal_neighbors = count();
    else if (key == "lambda") c.metrics.lambda = num();
    else if (key == "auc_max_threshold") c.metrics.auc_max_threshold = num();
    else if (key == "auc_steps") c.metrics.auc_steps = count();
    else if (key == "accuracy_diameter_fraction") c.metrics.accuracy_diameter_fraction = num();
    else if (key == "sweep_variable") c.variable = parse_sweep_variable(str());
    else if (key == "sweep_values") {
      c.values.clear();
      for (const auto& x : list()) {
        if (!x.is_number()) bad("a list of numbers");
        c.values.push_back(x.get<double>());
      }
    } else if (key == "scenes_per_value") c.scenes_per_value = count();
    else if (key == "methods") {
      c.methods.clear();
      for (const auto& x : list()) {
        if (!x.is_string()) bad("a list of method names");
        c.methods.push_back(parse_method(x.get<std::string>()));
      }
    } else if (key == "ransac_iterations") c.ransac_iterations = count();
    else throw Error(ErrorCode::InvalidConfig, key + ": unknown key");
  }
  c.validate();
  return c;
}

inline SweepConfig parse_sweep_config(const std::string& text, const std::string& name) {
  auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::InvalidConfig, name + ": " + e.what());
    }
    return sweep_config_from_json(j);
  }
  return sweep_config_from_json(detail::parse_key_values(text, name));
}

/// Reads a config file. A relative mesh path in `model` is resolved against
/// the config file's directory.
inline SweepConfig load_sweep_config(const std::string& path) {
  auto in = detail::open_input(path);
  std::stringstream ss;
  ss << in.rdbuf();
  SweepConfig c = parse_sweep_config(ss.str(), path);
  const auto& m = c.base.model;
  if (m != "blob" && m != "cube" && m != "cylinder" && std::filesystem::path(m).is_relative())
    c.base.model = (std::filesystem::path(path).parent_path() / m).string();
  return c;
}

inline nlohmann::json to_json(const SweepConfig& c) {
  nlohmann::json methods = nlohmann::json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  const auto& b = c.base;
  return {{"seed", b.seed},
          {"model", b.model},
          {"model_scale", b.model_scale},
          {"M", b.M},
          {"N", b.N},
          {"occlusion_fraction", b.occlusion_fraction},
          {"depth_noise_sigma", b.depth_noise_sigma},
          {"corr_noise_sigma", b.corr_noise_sigma},
          {"outlier_ratio", b.outlier_ratio},
          {"Z", b.Z},
          {"keep_fraction", b.keep_fraction},
          {"translation_range", b.translation_range},
          {"use_pr", b.use_pr},
          {"pr_count", b.pr_count},
          {"pr_sigma_rot_deg", b.pr_sigma_rot_deg},
          {"pr_sigma_t", b.pr_sigma_t},
          {"normal_neighbors", b.normal_neighbors},
          {"lambda", c.metrics.lambda},
          {"auc_max_threshold", c.metrics.auc_max_threshold},
          {"auc_steps", c.metrics.auc_steps},
          {"accuracy_diameter_fraction", c.metrics.accuracy_diameter_fraction},
          {"sweep_variable", to_string(c.variable)},
          {"sweep_values", c.values},
          {"scenes_per_value", c.scenes_per_value},
          {"methods", methods},
          {"ransac_iterations", c.ransac_iterations}};
}

// ---------------------------------------------------------------------------
// Report output

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string scene_id(const Report& r, const MetricRow& row) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s=%g/%zu", to_string(r.config.variable), row.value, row.scene_index);
  return buf;
}

inline constexpr const char* kReportHeader = "scene_id,method,add_m,adds_m,rot_deg,trans_m,sweep_value,diameter_m";

inline void write_report_csv(std::ostream& out, const Report& r) {
  out << kReportHeader << '\n';
  for (const auto& row : r.rows)
    out << scene_id(r, row) << ',' << to_string(row.method) << ',' << format_double(row.add) << ','
        << format_double(row.adds) << ',' << format_double(row.rot_deg) << ',' << format_double(row.trans) << ','
        << format_double(row.value) << ',' << format_double(row.diameter) << '\n';
}

inline nlohmann::json report_aggregates_json(const Report& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    nlohmann::json methods = nlohmann::json::object();
    for (const auto& a : c.methods) {
      methods[to_string(a.method)] = {
          {"scenes", a.scenes},
          {"failures", a.failures},
          {"add_accuracy_pct", a.add_accuracy},
          {"adds_accuracy_pct", a.adds_accuracy},
          {"adds_accuracy_2cm_pct", a.adds_accuracy_2cm},
          {"add_auc_pct", a.add_auc},
          {"adds_auc_pct", a.adds_auc},
          {"add_mean_m", a.add_mean},
          {"add_median_m", a.add_median},
          {"adds_mean_m", a.adds_mean},
          {"adds_median_m", a.adds_median},
          {"rot_deg_mean", a.rot_deg_mean},
          {"rot_deg_median", a.rot_deg_median},
          {"trans_mean_m", a.trans_mean},
          {"trans_median_m", a.trans_median},
      };
    }
    cells.push_back({{"value", c.value},
                     {"bcm_s_loss_mean_m", c.bcm_s_loss_mean},
                     {"bcm_m_loss_mean_m", c.bcm_m_loss_mean},
                     {"methods", methods}});
  }
  return {{"config", to_json(r.config)}, {"cells", cells}};
}

}  // namespace bico
