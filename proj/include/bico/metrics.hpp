#pragma once

// Pose error metrics and the correspondence loss as plain distance functions.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "bico/cloud.hpp"
#include "bico/error.hpp"
#include "bico/geom3d.hpp"

namespace bico {

struct MetricConfig {
  double auc_max_threshold = 0.10;  // m
  std::size_t auc_steps = 1000;
  double accuracy_diameter_fraction = 0.10;
  double lambda = 0.05;

  void validate() const {
    if (!(auc_max_threshold > 0)) throw Error(ErrorCode::InvalidConfig, "auc_max_threshold must be > 0");
    if (auc_steps < 2) throw Error(ErrorCode::InvalidConfig, "auc_steps must be >= 2");
    if (!(accuracy_diameter_fraction > 0)) throw Error(ErrorCode::InvalidConfig, "accuracy_diameter_fraction must be > 0");
    if (!(lambda > 0)) throw Error(ErrorCode::InvalidConfig, "lambda must be > 0");
  }
};

/// ADD: (1/K) Σ_k ‖(R x_k + t) − (R̂ x_k + t̂)‖.
inline double add(const RigidTransform& pred, const RigidTransform& gt, std::span<const Vec3> model_points) {
  if (model_points.empty()) throw Error(ErrorCode::EmptyModel, "ADD over an empty model");
  double sum = 0.0;
  for (const auto& x : model_points) sum += (apply_point(gt, x) - apply_point(pred, x)).norm();
  return sum / static_cast<double>(model_points.size());
}

/// ADD-S: (1/K) Σ_k min_l ‖(R x_k + t) − (R̂ x_l + t̂)‖.
inline double adds(const RigidTransform& pred, const RigidTransform& gt, std::span<const Vec3> model_points) {
  if (model_points.empty()) throw Error(ErrorCode::EmptyModel, "ADD-S over an empty model");
  std::vector<Vec3> moved;
  moved.reserve(model_points.size());
  for (const auto& x : model_points) moved.push_back(apply_point(pred, x));
  KdTree tree(std::move(moved));
  double sum = 0.0;
  for (const auto& x : model_points) sum += tree.nearest(apply_point(gt, x)).second;
  return sum / static_cast<double>(model_points.size());
}

inline double rotation_error_deg(const RigidTransform& pred, const RigidTransform& gt) {
  return geodesic_angle(pred.rotation, gt.rotation) * 180.0 / std::numbers::pi;
}

inline double translation_error(const RigidTransform& pred, const RigidTransform& gt) {
  return (pred.translation - gt.translation).norm();
}

/// Fraction of errors strictly below threshold.
inline double accuracy_at(std::span<const double> errors, double threshold) {
  if (errors.empty()) throw Error(ErrorCode::EmptyInput, "accuracy of no errors");
  if (!(threshold > 0)) throw Error(ErrorCode::InvalidArgument, "threshold must be > 0");
  std::size_t below = 0;
  for (double e : errors) below += e < threshold;
  return static_cast<double>(below) / static_cast<double>(errors.size());
}

/// Area under the accuracy-threshold curve on [0, auc_max], in percent.
/// Trapezoid rule over auc_steps uniform intervals; the curve value at zero is
/// its right limit (the fraction of exactly-zero errors).
inline double auc(std::span<const double> errors, const MetricConfig& cfg = {}) {
  if (errors.empty()) throw Error(ErrorCode::EmptyInput, "AUC of no errors");
  cfg.validate();
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  auto curve = [&](std::size_t j) {
    if (j == 0) return static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), 0.0) - sorted.begin()) / n;
    double h = cfg.auc_max_threshold * static_cast<double>(j) / static_cast<double>(cfg.auc_steps);
    return static_cast<double>(std::lower_bound(sorted.begin(), sorted.end(), h) - sorted.begin()) / n;
  };
  double sum = 0.0;
  double prev = curve(0);
  for (std::size_t j = 1; j <= cfg.auc_steps; ++j) {
    double cur = curve(j);
    sum += 0.5 * (prev + cur);
    prev = cur;
  }
  return 100.0 * sum / static_cast<double>(cfg.auc_steps);
}

/// (1/N) Σ (‖p_i − p̂_i‖ + λ‖n_i − n̂_i‖), accumulated as two separate means.
inline double bcm_loss(const OrientedCloud& generated, const OrientedCloud& target, double lambda) {
  if (generated.size() != target.size()) throw Error(ErrorCode::LengthMismatch, "clouds differ in length");
  if (generated.empty()) throw Error(ErrorCode::EmptyInput, "loss over empty clouds");
  double pos = 0.0, nrm = 0.0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    pos += (generated.points[i].position - target.points[i].position).norm();
    nrm += (generated.points[i].normal - target.points[i].normal).norm();
  }
  const double n = static_cast<double>(generated.size());
  return pos / n + lambda * (nrm / n);
}

}  // namespace bico
