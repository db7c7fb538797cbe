#pragma once

// Pose pipeline: candidate poses from oriented point pairs, residual scoring,
// top-fraction filtering and ensembling, plus least-squares and RANSAC
// baselines.

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "bico/cloud.hpp"
#include "bico/error.hpp"
#include "bico/geom3d.hpp"
#include "bico/parallel.hpp"
#include "bico/rng.hpp"

namespace bico {

/// Correspondence direction. BCM-S pairs observed scene points with
/// generated model-space points; BCM-M pairs model points with generated
/// camera-space points.
enum class Branch { PR, BCM_S, BCM_M };

inline const char* to_string(Branch b) {
  switch (b) {
    case Branch::PR: return "PR";
    case Branch::BCM_S: return "BCM-S";
    case Branch::BCM_M: return "BCM-M";
  }
  return "?";
}

/// camera[i] corresponds to model[i].
struct CorrespondenceSet {
  OrientedCloud camera{Frame::camera, {}};
  OrientedCloud model{Frame::model, {}};

  std::size_t size() const { return camera.size(); }

  void validate() const {
    if (camera.size() != model.size())
      throw Error(ErrorCode::LengthMismatch, "camera and model sides differ in length");
    if (camera.empty()) throw Error(ErrorCode::EmptyInput, "no correspondences");
    if (camera.frame != Frame::camera || model.frame != Frame::model)
      throw Error(ErrorCode::InvalidArgument, "correspondence frames mislabeled");
  }
};

inline CorrespondenceSet concatenate(const CorrespondenceSet& a, const CorrespondenceSet& b) {
  CorrespondenceSet out = a;
  out.camera.points.insert(out.camera.points.end(), b.camera.points.begin(), b.camera.points.end());
  out.model.points.insert(out.model.points.end(), b.model.points.begin(), b.model.points.end());
  return out;
}

struct PoseCandidate {
  RigidTransform transform;  // model -> camera
  double error = 0.0;        // meters
  std::uint32_t anchor = 0;  // correspondence index r
  std::uint32_t other = 0;   // correspondence index i
};

struct PoseSet {
  Branch source = Branch::PR;
  std::vector<RigidTransform> poses;
};

// ---------------------------------------------------------------------------
// Scoring

/// Space in which a candidate's residual is measured.
enum class ResidualSpace { model, camera };

namespace detail {

// Structure-of-arrays copy of the correspondence positions for the inner
// scoring loop.
class ResidualTable {
 public:
  explicit ResidualTable(const CorrespondenceSet& corr) {
    std::size_t n = corr.size();
    for (auto* v : {&sx_, &sy_, &sz_, &mx_, &my_, &mz_}) v->resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec3& s = corr.camera.points[i].position;
      const Vec3& m = corr.model.points[i].position;
      sx_[i] = s.x(), sy_[i] = s.y(), sz_[i] = s.z();
      mx_[i] = m.x(), my_[i] = m.y(), mz_[i] = m.z();
    }
  }

  // (1/N) Σ ‖Rᵀ(s_i − t) − m_i‖
  double mean_model_space(const RigidTransform& t) const {
    const Mat3& r = t.rotation.matrix();
    const double r00 = r(0, 0), r01 = r(0, 1), r02 = r(0, 2);
    const double r10 = r(1, 0), r11 = r(1, 1), r12 = r(1, 2);
    const double r20 = r(2, 0), r21 = r(2, 1), r22 = r(2, 2);
    const double tx = t.translation.x(), ty = t.translation.y(), tz = t.translation.z();
    const std::size_t n = sx_.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dx = sx_[i] - tx, dy = sy_[i] - ty, dz = sz_[i] - tz;
      double ex = r00 * dx + r10 * dy + r20 * dz - mx_[i];
      double ey = r01 * dx + r11 * dy + r21 * dz - my_[i];
      double ez = r02 * dx + r12 * dy + r22 * dz - mz_[i];
      sum += std::sqrt(ex * ex + ey * ey + ez * ez);
    }
    return sum / static_cast<double>(n);
  }

  // (1/N) Σ ‖(R m_i + t) − s_i‖
  double mean_camera_space(const RigidTransform& t) const {
    const Mat3& r = t.rotation.matrix();
    const double r00 = r(0, 0), r01 = r(0, 1), r02 = r(0, 2);
    const double r10 = r(1, 0), r11 = r(1, 1), r12 = r(1, 2);
    const double r20 = r(2, 0), r21 = r(2, 1), r22 = r(2, 2);
    const double tx = t.translation.x(), ty = t.translation.y(), tz = t.translation.z();
    const std::size_t n = sx_.size();
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double ex = r00 * mx_[i] + r01 * my_[i] + r02 * mz_[i] + tx - sx_[i];
      double ey = r10 * mx_[i] + r11 * my_[i] + r12 * mz_[i] + ty - sy_[i];
      double ez = r20 * mx_[i] + r21 * my_[i] + r22 * mz_[i] + tz - sz_[i];
      sum += std::sqrt(ex * ex + ey * ey + ez * ez);
    }
    return sum / static_cast<double>(n);
  }

  double mean(const RigidTransform& t, ResidualSpace space) const {
    return space == ResidualSpace::model ? mean_model_space(t) : mean_camera_space(t);
  }

 private:
  std::vector<double> sx_, sy_, sz_, mx_, my_, mz_;
};

}  // namespace detail

/// Mean residual of a model->camera candidate over all correspondences.
/// Model space: (1/N) Σ ‖Rᵀ(s_i − t) − m_i‖. Camera space: (1/N) Σ ‖(R m_i + t) − s_i‖.
/// The two are equal up to rounding.
inline double score_candidate(const RigidTransform& t, const CorrespondenceSet& corr,
                              ResidualSpace space = ResidualSpace::model) {
  corr.validate();
  return detail::ResidualTable(corr).mean(t, space);
}

// ---------------------------------------------------------------------------
// Candidates

/// FPS-downsamples the observed side to Z correspondences and computes one
/// pose per ordered pair (r, i), r != i. BCM-S maps the model-side pair onto
/// the camera-side pair; BCM-M maps camera onto model and inverts, so every
/// candidate is model -> camera. Degenerate pairs are skipped. Output order is
/// the FPS order of (anchor, other) and does not depend on `threads`.
inline std::vector<PoseCandidate> generate_candidates(const CorrespondenceSet& corr, std::size_t z,
                                                      std::uint64_t seed, Branch direction,
                                                      unsigned threads = 1) {
  corr.validate();
  if (direction == Branch::PR) throw Error(ErrorCode::InvalidArgument, "PR is not a pair-matching branch");
  if (z < 2 || z > corr.size())
    throw Error(ErrorCode::TooFewPoints,
                "need 2 <= Z <= correspondences, got Z=" + std::to_string(z) + " for " +
                    std::to_string(corr.size()) + " correspondences");
  const bool scene_side = direction == Branch::BCM_S;
  const OrientedCloud& observed = scene_side ? corr.camera : corr.model;
  const OrientedCloud& generated = scene_side ? corr.model : corr.camera;
  auto picked = farthest_point_sampling(observed.positions(), z, seed);

  // src is always the generated side, dst the observed side.
  std::vector<AnchorFrame> src(z), dst(z);
  for (std::size_t k = 0; k < z; ++k) {
    src[k] = anchor_frame(generated.points[picked[k]]);
    dst[k] = anchor_frame(observed.points[picked[k]]);
  }

  detail::ResidualTable table(corr);
  const ResidualSpace space = scene_side ? ResidualSpace::model : ResidualSpace::camera;
  const std::size_t per_anchor = z - 1;
  std::vector<PoseCandidate> slots(z * per_anchor);
  std::vector<char> valid(slots.size(), 0);

  parallel_for(z, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t a = begin; a < end; ++a) {
      for (std::size_t b = 0; b < z; ++b) {
        if (a == b) continue;
        std::size_t slot = a * per_anchor + (b < a ? b : b - 1);
        RigidTransform pose;
        try {
          pose = pair_pose(src[a], generated.points[picked[b]].position, dst[a], observed.points[picked[b]].position);
        } catch (const Error&) {
          continue;
        }
        // BCM-M poses map camera -> model.
        if (!scene_side) pose = invert(pose);
        slots[slot] = {pose, table.mean(pose, space), static_cast<std::uint32_t>(picked[a]),
                       static_cast<std::uint32_t>(picked[b])};
        valid[slot] = 1;
      }
    }
  });

  std::vector<PoseCandidate> out;
  out.reserve(slots.size());
  for (std::size_t k = 0; k < slots.size(); ++k)
    if (valid[k]) out.push_back(slots[k]);
  if (out.empty()) throw Error(ErrorCode::AllPairsDegenerate, std::string(to_string(direction)) + ": every pair is degenerate");
  return out;
}

/// Sorts ascending by error, ties by (anchor, other).
inline void rank_candidates(std::vector<PoseCandidate>& candidates) {
  std::sort(candidates.begin(), candidates.end(), [](const PoseCandidate& a, const PoseCandidate& b) {
    if (a.error != b.error) return a.error < b.error;
    if (a.anchor != b.anchor) return a.anchor < b.anchor;
    return a.other < b.other;
  });
}

/// Number kept out of `count` for a keep fraction: ceil(fraction * count), at least 1.
inline std::size_t kept_count(std::size_t count, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "keep fraction must be in (0, 1]");
  // The small offset keeps products like 0.1 * 100 from rounding up to 11.
  auto k = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(count) - 1e-9));
  return std::clamp<std::size_t>(k, 1, count);
}

/// Keeps the lowest-error ceil(keep_fraction * count) candidates.
inline PoseSet filter_candidates(std::vector<PoseCandidate> candidates, double keep_fraction = 0.10,
                                 Branch source = Branch::BCM_S) {
  if (candidates.empty()) throw Error(ErrorCode::EmptyInput, "no candidates to filter");
  std::size_t keep = kept_count(candidates.size(), keep_fraction);
  rank_candidates(candidates);
  PoseSet set{source, {}};
  set.poses.reserve(keep);
  for (std::size_t k = 0; k < keep; ++k) set.poses.push_back(candidates[k].transform);
  return set;
}

/// Equal-weight average of all poses in the union of the sets: arithmetic
/// mean translation, chordal mean rotation.
inline RigidTransform ensemble(std::span<const PoseSet> sets) {
  std::vector<Rotation> rotations;
  Vec3 t = Vec3::Zero();
  for (const auto& s : sets)
    for (const auto& p : s.poses) {
      rotations.push_back(p.rotation);
      t += p.translation;
    }
  if (rotations.empty()) throw Error(ErrorCode::EmptyInput, "ensemble of no poses");
  return {rotation_mean(rotations), t / static_cast<double>(rotations.size())};
}

// ---------------------------------------------------------------------------
// Least squares and RANSAC

/// Rigid transform minimizing Σ ‖(R m_i + t) − s_i‖² (model -> camera).
inline RigidTransform kabsch(std::span<const Vec3> model, std::span<const Vec3> camera) {
  if (model.size() != camera.size()) throw Error(ErrorCode::LengthMismatch, "kabsch inputs differ in length");
  if (model.size() < 3) throw Error(ErrorCode::DegenerateConfiguration, "kabsch needs at least 3 correspondences");
  const double n = static_cast<double>(model.size());
  Vec3 mbar = Vec3::Zero(), sbar = Vec3::Zero();
  for (std::size_t i = 0; i < model.size(); ++i) {
    mbar += model[i];
    sbar += camera[i];
  }
  mbar /= n;
  sbar /= n;
  Mat3 h = Mat3::Zero(), spread = Mat3::Zero();
  for (std::size_t i = 0; i < model.size(); ++i) {
    Vec3 dm = model[i] - mbar;
    h.noalias() += dm * (camera[i] - sbar).transpose();
    spread.noalias() += dm * dm.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(spread, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  if (!(ev(2) > 1e-24) || ev(1) <= 1e-12 * ev(2))
    throw Error(ErrorCode::DegenerateConfiguration, "model points are collinear or coincident");

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3& u = svd.matrixU();
  const Mat3& v = svd.matrixV();
  double d = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  Mat3 r = v * Eigen::Vector3d(1.0, 1.0, d).asDiagonal() * u.transpose();
  Rotation rot = Rotation::from_matrix(r);
  return {rot, sbar - rot * mbar};
}

inline RigidTransform kabsch(const CorrespondenceSet& corr) {
  corr.validate();
  auto m = corr.model.positions();
  auto s = corr.camera.positions();
  return kabsch(m, s);
}

struct RansacResult {
  RigidTransform pose;
  std::size_t inliers = 0;
};

/// Three-point hypotheses fitted by kabsch, scored by inlier count (ties:
/// lower summed inlier residual), then refit on the best inlier set.
inline RansacResult ransac(const CorrespondenceSet& corr, double inlier_threshold, std::size_t iterations,
                           std::uint64_t seed) {
  corr.validate();
  if (corr.size() < 3) throw Error(ErrorCode::TooFewPoints, "ransac needs at least 3 correspondences");
  if (!(inlier_threshold > 0)) throw Error(ErrorCode::InvalidArgument, "inlier threshold must be positive");
  if (iterations < 1) throw Error(ErrorCode::InvalidArgument, "ransac needs at least one iteration");
  const auto model = corr.model.positions();
  const auto camera = corr.camera.positions();
  const std::size_t n = model.size();

  auto evaluate = [&](const RigidTransform& t, std::vector<std::size_t>* inliers) {
    std::size_t count = 0;
    double residual = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double e = (apply_point(t, model[i]) - camera[i]).norm();
      if (e < inlier_threshold) {
        ++count;
        residual += e;
        if (inliers) inliers->push_back(i);
      }
    }
    return std::pair{count, residual};
  };

  Rng rng(seed);
  std::optional<RigidTransform> best;
  std::size_t best_count = 0;
  double best_residual = 0.0;
  for (std::size_t it = 0; it < iterations; ++it) {
    std::size_t a = rng.uniform_index(n), b, c;
    do b = rng.uniform_index(n); while (b == a);
    do c = rng.uniform_index(n); while (c == a || c == b);
    std::array<Vec3, 3> ms{model[a], model[b], model[c]};
    std::array<Vec3, 3> ss{camera[a], camera[b], camera[c]};
    RigidTransform hyp;
    try {
      hyp = kabsch(ms, ss);
    } catch (const Error&) {
      continue;
    }
    auto [count, residual] = evaluate(hyp, nullptr);
    if (!best || count > best_count || (count == best_count && residual < best_residual)) {
      best = hyp;
      best_count = count;
      best_residual = residual;
    }
  }
  if (!best) throw Error(ErrorCode::NoValidHypothesis, "every sampled triple was degenerate");

  std::vector<std::size_t> inliers;
  evaluate(*best, &inliers);
  RansacResult result{*best, inliers.size()};
  if (inliers.size() >= 3) {
    std::vector<Vec3> mi, si;
    for (auto i : inliers) {
      mi.push_back(model[i]);
      si.push_back(camera[i]);
    }
    try {
      result.pose = kabsch(mi, si);
      result.inliers = evaluate(result.pose, nullptr).first;
    } catch (const Error&) {
      // keep the hypothesis
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Full pipeline

struct SolveOptions {
  std::size_t z = 100;
  double keep_fraction = 0.10;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

struct BranchOutcome {
  Branch branch = Branch::BCM_S;
  enum class Status { ok, failed, absent } status = Status::absent;
  std::string message;
  std::vector<PoseCandidate> ranked;  // all candidates, ascending error
  PoseSet kept;
  std::optional<RigidTransform> mean;  // ensemble of `kept` alone
};

inline const char* to_string(BranchOutcome::Status s) {
  switch (s) {
    case BranchOutcome::Status::ok: return "ok";
    case BranchOutcome::Status::failed: return "failed";
    case BranchOutcome::Status::absent: return "absent";
  }
  return "?";
}

struct SolveResult {
  RigidTransform pose;
  BranchOutcome bcm_s;
  BranchOutcome bcm_m;
  std::size_t pr_poses = 0;
  std::vector<std::string> warnings;
  nlohmann::json diagnostics;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& v, double q) {
  if (v.empty()) return 0.0;
  double pos = q * static_cast<double>(v.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline BranchOutcome run_branch(const std::optional<CorrespondenceSet>& corr, Branch branch, const SolveOptions& opt) {
  BranchOutcome out;
  out.branch = branch;
  out.kept.source = branch;
  if (!corr) return out;
  try {
    out.ranked = generate_candidates(*corr, opt.z, derive_seed(opt.seed, {static_cast<std::uint64_t>(branch)}),
                                     branch, opt.threads);
    rank_candidates(out.ranked);
    std::size_t keep = kept_count(out.ranked.size(), opt.keep_fraction);
    for (std::size_t k = 0; k < keep; ++k) out.kept.poses.push_back(out.ranked[k].transform);
    out.mean = ensemble(std::span<const PoseSet>(&out.kept, 1));
    out.status = BranchOutcome::Status::ok;
  } catch (const Error& e) {
    out.status = BranchOutcome::Status::failed;
    out.message = e.what();
    out.ranked.clear();
    out.kept.poses.clear();
  }
  return out;
}

inline nlohmann::json branch_json(const BranchOutcome& b) {
  nlohmann::json j{{"name", to_string(b.branch)}, {"status", to_string(b.status)}};
  if (b.status == BranchOutcome::Status::failed) j["message"] = b.message;
  if (b.status != BranchOutcome::Status::ok) return j;
  std::vector<double> errors;
  errors.reserve(b.ranked.size());
  for (const auto& c : b.ranked) errors.push_back(c.error);
  double kept_sum = 0.0;
  for (std::size_t k = 0; k < b.kept.poses.size(); ++k) kept_sum += b.ranked[k].error;
  j["candidates"] = b.ranked.size();
  j["kept"] = b.kept.poses.size();
  j["error_quantiles_m"] = {{"min", errors.front()},
                            {"p10", quantile_sorted(errors, 0.10)},
                            {"median", quantile_sorted(errors, 0.50)},
                            {"p90", quantile_sorted(errors, 0.90)},
                            {"max", errors.back()}};
  j["kept_mean_error_m"] = kept_sum / static_cast<double>(b.kept.poses.size());
  j["kept_max_error_m"] = b.ranked[b.kept.poses.size() - 1].error;
  j["mean_pose"] = pose_to_json(*b.mean);
  return j;
}

}  // namespace detail

/// Runs both correspondence branches (either may be absent), filters each to
/// its lowest-error fraction, pools them with the optional regressed poses and
/// returns the ensemble. A branch that fails is reported as a warning; the
/// call throws only when nothing is left to average.
inline SolveResult solve(const OrientedCloud& scene, const OrientedCloud& model,
                         const std::optional<CorrespondenceSet>& bcm_s, const std::optional<CorrespondenceSet>& bcm_m,
                         const std::optional<PoseSet>& pr_poses, const SolveOptions& opt) {
  if (opt.z < 2) throw Error(ErrorCode::InvalidArgument, "Z must be >= 2");
  kept_count(1, opt.keep_fraction);  // validates the fraction

  SolveResult res;
  res.bcm_s = detail::run_branch(bcm_s, Branch::BCM_S, opt);
  res.bcm_m = detail::run_branch(bcm_m, Branch::BCM_M, opt);

  std::vector<PoseSet> pooled;
  for (const BranchOutcome* b : {&res.bcm_s, &res.bcm_m}) {
    if (b->status == BranchOutcome::Status::ok) {
      pooled.push_back(b->kept);
    } else if (b->status == BranchOutcome::Status::failed) {
      res.warnings.push_back(std::string(to_string(b->branch)) + " branch failed: " + b->message);
    } else {
      res.warnings.push_back(std::string(to_string(b->branch)) + " branch absent");
    }
  }
  if (pr_poses && !pr_poses->poses.empty()) {
    pooled.push_back(*pr_poses);
    res.pr_poses = pr_poses->poses.size();
  }

  std::size_t total = 0;
  for (const auto& s : pooled) total += s.poses.size();
  if (total == 0) {
    for (const BranchOutcome* b : {&res.bcm_s, &res.bcm_m})
      if (b->status == BranchOutcome::Status::failed)
        throw Error(ErrorCode::AllPairsDegenerate, "no usable pose: " + b->message);
    throw Error(ErrorCode::EmptyInput, "no correspondence branch and no regressed poses");
  }
  res.pose = ensemble(pooled);

  nlohmann::json d;
  d["z"] = opt.z;
  d["keep_fraction"] = opt.keep_fraction;
  d["seed"] = opt.seed;
  d["scene_points"] = scene.size();
  d["model_points"] = model.size();
  d["branches"] = {detail::branch_json(res.bcm_s), detail::branch_json(res.bcm_m)};
  d["pr_poses"] = res.pr_poses;
  d["pooled_poses"] = total;
  d["warnings"] = res.warnings;
  d["pose"] = pose_to_json(res.pose);
  res.diagnostics = std::move(d);
  return res;
}

// ---------------------------------------------------------------------------
// Correspondence CSV: header sx,sy,sz,snx,sny,snz,mx,my,mz,mnx,mny,mnz (meters)

inline constexpr const char* kCorrespondenceHeader = "sx,sy,sz,snx,sny,snz,mx,my,mz,mnx,mny,mnz";

inline CorrespondenceSet read_correspondences(std::istream& in, const std::string& name) {
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) { detail::parse_fail(name, lineno, msg); };
  if (!std::getline(in, line)) {
    lineno = 1;
    fail("empty file");
  }
  ++lineno;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kCorrespondenceHeader) fail(std::string("expected header '") + kCorrespondenceHeader + "'");
  CorrespondenceSet corr;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(detail::parse_double(cell, name, lineno));
    if (!line.empty() && line.back() == ',') fail("trailing comma");
    if (v.size() != 12) fail("expected 12 fields, got " + std::to_string(v.size()));
    Vec3 sn(v[3], v[4], v[5]), mn(v[9], v[10], v[11]);
    if (sn.norm() < 1e-12 || mn.norm() < 1e-12) fail("zero-length normal");
    corr.camera.points.push_back({Vec3(v[0], v[1], v[2]), sn.normalized()});
    corr.model.points.push_back({Vec3(v[6], v[7], v[8]), mn.normalized()});
  }
  if (corr.size() == 0) fail("no correspondence rows");
  return corr;
}

inline CorrespondenceSet read_correspondences(const std::string& path) {
  auto in = detail::open_input(path);
  return read_correspondences(in, path);
}

inline void write_correspondences(std::ostream& out, const CorrespondenceSet& corr) {
  corr.validate();
  out << kCorrespondenceHeader << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < corr.size(); ++i) {
    const auto& s = corr.camera.points[i];
    const auto& m = corr.model.points[i];
    out << s.position.x() << ',' << s.position.y() << ',' << s.position.z() << ',' << s.normal.x() << ','
        << s.normal.y() << ',' << s.normal.z() << ',' << m.position.x() << ',' << m.position.y() << ','
        << m.position.z() << ',' << m.normal.x() << ',' << m.normal.y() << ',' << m.normal.z() << '\n';
  }
}

inline void write_correspondences(const std::string& path, const CorrespondenceSet& corr) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  write_correspondences(out, corr);
}

/// Pose sets on disk: a single pose object, an array of pose objects, or {"poses": [...]}.
inline PoseSet pose_set_from_json(const nlohmann::json& j, Branch source = Branch::PR) {
  PoseSet set{source, {}};
  const nlohmann::json* arr = &j;
  if (j.is_object() && j.contains("poses")) arr = &j.at("poses");
  if (arr->is_array()) {
    for (const auto& p : *arr) set.poses.push_back(pose_from_json(p));
  } else {
    set.poses.push_back(pose_from_json(*arr));
  }
  return set;
}

}  // namespace bico
