#include <gtest/gtest.h>

#include <numbers>

#include "bico/metrics.hpp"
#include "oracles.hpp"

using namespace bico;

namespace {

std::vector<Vec3> random_points(Rng& rng, std::size_t n, double range = 0.05) {
  std::vector<Vec3> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back(oracle::random_point(rng, range));
  return pts;
}

// 4 rings of 50 points on a cylinder of radius 5 cm, height 10 cm, axis z.
std::vector<Vec3> cylinder_rings() {
  std::vector<Vec3> pts;
  for (int ring = 0; ring < 4; ++ring)
    for (int k = 0; k < 50; ++k) {
      double a = 2 * std::numbers::pi * k / 50;
      pts.push_back(Vec3(0.05 * std::cos(a), 0.05 * std::sin(a), -0.05 + ring * (0.1 / 3)));
    }
  return pts;
}

}  // namespace

TEST(Add, ZeroAndOffset) {
  Rng rng(1);
  auto pts = random_points(rng, 100);
  auto gt = oracle::random_transform(rng);
  EXPECT_EQ(add(gt, gt, pts), 0.0);
  Vec3 d(0.01, -0.02, 0.005);
  auto pred = gt;
  pred.translation += d;
  EXPECT_NEAR(add(pred, gt, pts), d.norm(), 1e-12);
  EXPECT_THROW(add(pred, gt, std::vector<Vec3>{}), Error);
}

TEST(Add, MatchesNaiveLoopAndIsSymmetric) {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto pts = random_points(rng, 50);
    auto p = oracle::random_transform(rng), g = oracle::random_transform(rng);
    EXPECT_NEAR(add(p, g, pts), oracle::naive_add(p, g, pts), 1e-12);
    EXPECT_EQ(add(p, g, pts), add(g, p, pts));
  }
}

TEST(Adds, ZeroNaiveLoopAndBound) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto pts = random_points(rng, 1 + rng.uniform_index(80));
    auto g = oracle::random_transform(rng);
    EXPECT_EQ(adds(g, g, pts), 0.0);
    auto p = trial % 2 ? oracle::random_transform(rng) : RigidTransform{
        Rotation::from_axis_angle(oracle::random_unit(rng), 0.1) * g.rotation, g.translation};
    double s = adds(p, g, pts);
    EXPECT_NEAR(s, oracle::naive_adds(p, g, pts), 1e-12);
    EXPECT_LE(s, add(p, g, pts));
  }
  EXPECT_THROW(adds(RigidTransform::identity(), RigidTransform::identity(), std::vector<Vec3>{}), Error);
}

TEST(Adds, CylinderRotatedAboutAxis) {
  auto pts = cylinder_rings();
  Rng rng(4);
  auto gt = oracle::random_transform(rng);
  RigidTransform pred{gt.rotation * Rotation::from_axis_angle(Vec3::UnitZ(), 2.0), gt.translation};
  double diam = diameter(pts);
  double s = adds(pred, gt, pts);
  EXPECT_NEAR(s, oracle::naive_adds(pred, gt, pts), 1e-12);
  EXPECT_LE(s, 0.02 * diam);
  EXPECT_GT(add(pred, gt, pts), 0.5 * diam);
}

TEST(Metrics, PermutationInvariant) {
  Rng rng(5);
  auto pts = random_points(rng, 60);
  auto p = oracle::random_transform(rng, 0.01), g = oracle::random_transform(rng, 0.01);
  auto shuffled = pts;
  for (std::size_t k = shuffled.size(); k > 1; --k) std::swap(shuffled[k - 1], shuffled[rng.uniform_index(k)]);
  EXPECT_NEAR(add(p, g, pts), add(p, g, shuffled), 1e-12);
  EXPECT_NEAR(adds(p, g, pts), adds(p, g, shuffled), 1e-12);
}

TEST(PoseErrors, RotationAndTranslation) {
  RigidTransform a = RigidTransform::identity();
  RigidTransform b{rot_x(std::numbers::pi / 2), Vec3(0, 3, 4)};
  EXPECT_NEAR(rotation_error_deg(a, b), 90.0, 1e-12);
  EXPECT_EQ(translation_error(a, b), 5.0);
}

TEST(AccuracyAt, Examples) {
  std::vector<double> zeros(10, 0.0);
  EXPECT_EQ(accuracy_at(zeros, 1e-6), 1.0);
  std::vector<double> two{0.01, 0.03};
  EXPECT_EQ(accuracy_at(two, 0.02), 0.5);
  std::vector<double> at{0.02};
  EXPECT_EQ(accuracy_at(at, 0.02), 0.0);  // strict
  Rng rng(6);
  std::vector<double> u;
  for (int i = 0; i < 1000; ++i) u.push_back(rng.uniform(0.0, 0.1));
  EXPECT_NEAR(accuracy_at(u, 0.02), 0.2, 0.04);
  double prev = 0;
  for (double h = 0.001; h < 0.12; h += 0.001) {
    double a = accuracy_at(u, h);
    EXPECT_GE(a, prev);
    prev = a;
  }
  EXPECT_THROW(accuracy_at(std::vector<double>{}, 0.1), Error);
  EXPECT_THROW(accuracy_at(two, 0.0), Error);
}

TEST(Auc, Examples) {
  std::vector<double> zeros(7, 0.0);
  EXPECT_EQ(auc(zeros), 100.0);
  std::vector<double> big{0.11, 0.5, 1.0};
  EXPECT_EQ(auc(big), 0.0);
  std::vector<double> half{0.05};
  EXPECT_NEAR(auc(half), 50.0, 0.1);
  EXPECT_THROW(auc(std::vector<double>{}), Error);
}

TEST(Auc, ClosedFormForUniformErrors) {
  // Errors uniform on [0, 0.1]: the accuracy curve is the identity, area 50.
  std::vector<double> e;
  for (int i = 0; i < 10000; ++i) e.push_back((i + 0.5) * 1e-5);
  EXPECT_NEAR(auc(e), 50.0, 0.1);
  MetricConfig cfg;
  cfg.auc_max_threshold = 0.05;
  // half of the errors are beyond 5 cm; the rest are uniform below it
  EXPECT_NEAR(auc(e, cfg), 25.0, 0.1);
}

TEST(Auc, MonotoneAndPermutationInvariant) {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> e, smaller;
    for (int i = 0; i < 50; ++i) {
      e.push_back(rng.uniform(0.0, 0.15));
      smaller.push_back(e.back() * rng.uniform());
    }
    EXPECT_GE(auc(smaller), auc(e));
    auto shuffled = e;
    std::reverse(shuffled.begin(), shuffled.end());
    EXPECT_EQ(auc(shuffled), auc(e));
  }
}

TEST(MetricConfig, Validation) {
  MetricConfig c;
  EXPECT_NO_THROW(c.validate());
  c.auc_steps = 1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.lambda = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.auc_max_threshold = -1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(BcmLoss, Examples) {
  Rng rng(8);
  OrientedCloud a{Frame::model, {}};
  for (int i = 0; i < 100; ++i) a.points.push_back({oracle::random_point(rng), oracle::random_unit(rng)});
  EXPECT_EQ(bcm_loss(a, a, 0.05), 0.0);
  OrientedCloud flipped = a;
  for (auto& p : flipped.points) p.normal = -p.normal;
  // ‖n − (−n)‖ = 2 for unit normals
  EXPECT_NEAR(bcm_loss(a, flipped, 0.05), 0.1, 1e-15);

  OrientedCloud b{Frame::model, {}};
  for (int i = 0; i < 100; ++i) b.points.push_back({oracle::random_point(rng), oracle::random_unit(rng)});
  double expect = 0;
  for (int i = 0; i < 100; ++i)
    expect += (a.points[i].position - b.points[i].position).norm() +
              0.05 * (a.points[i].normal - b.points[i].normal).norm();
  EXPECT_NEAR(bcm_loss(a, b, 0.05), expect / 100, 1e-12);

  b.points.pop_back();
  EXPECT_THROW(bcm_loss(a, b, 0.05), Error);
}

TEST(BcmLoss, AxisFlippedNormalsGiveExactlyTenCentimeters) {
  OrientedCloud a{Frame::camera, {}}, b{Frame::camera, {}};
  for (int i = 0; i < 3; ++i) {
    Vec3 n = Vec3::Unit(i);
    a.points.push_back({Vec3(i, 0, 0), n});
    b.points.push_back({Vec3(i, 0, 0), -n});
  }
  EXPECT_EQ(bcm_loss(a, b, 0.05), 0.1);
}
