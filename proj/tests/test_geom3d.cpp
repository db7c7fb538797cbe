#include <gtest/gtest.h>

#include <algorithm>
#include <numbers>

#include "bico/geom3d.hpp"
#include "oracles.hpp"

using namespace bico;

namespace {

constexpr double kPi = std::numbers::pi;

double max_abs(const Mat3& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST(RotX, IdentityAndHalfTurn) {
  EXPECT_EQ(max_abs(rot_x(0.0).matrix() - Mat3::Identity()), 0.0);
  Mat3 half = Vec3(1, -1, -1).asDiagonal();
  EXPECT_LT(max_abs(rot_x(kPi).matrix() - half), 1e-15);
}

TEST(RotX, MatchesSeriesExponential) {
  Vec3 v = rot_x(kPi / 3) * Vec3(0, 1, 0);
  EXPECT_NEAR(v.x(), 0.0, 1e-15);
  EXPECT_NEAR(v.y(), std::cos(kPi / 3), 1e-15);
  EXPECT_NEAR(v.z(), std::sin(kPi / 3), 1e-15);
  for (double a : {kPi / 3, -1.1, 2.9, 0.01})
    EXPECT_LT(max_abs(rot_x(a).matrix() - oracle::expm_series(Vec3(a, 0, 0))), 1e-13) << a;
}

TEST(AlignToX, IdentityCase) {
  auto t = align_to_x({Vec3::Zero(), Vec3::UnitX()});
  EXPECT_LT(max_abs(t.rotation.matrix() - Mat3::Identity()), 1e-15);
  EXPECT_LT(t.translation.norm(), 1e-15);
}

TEST(AlignToX, NormalAlongY) {
  OrientedPoint p{Vec3(1, 2, 3), Vec3::UnitY()};
  auto t = align_to_x(p);
  // Minimal arc from +y to +x is -pi/2 about z.
  Mat3 expected = Rotation::from_axis_angle(Vec3::UnitZ(), -kPi / 2).matrix();
  EXPECT_LT(max_abs(t.rotation.matrix() - expected), 1e-15);
  EXPECT_LT(apply_point(t, p.position).norm(), 1e-12);
  EXPECT_LT((t.rotation * p.normal - Vec3::UnitX()).norm(), 1e-12);
}

TEST(AlignToX, AntipodalNormalUsesHalfTurnAboutZ) {
  OrientedPoint p{Vec3(0.5, -1, 2), -Vec3::UnitX()};
  auto t = align_to_x(p);
  Mat3 expected = Vec3(-1, -1, 1).asDiagonal();
  EXPECT_LT(max_abs(t.rotation.matrix() - expected), 1e-15);
  EXPECT_LT((t.rotation * p.normal - Vec3::UnitX()).norm(), 1e-15);
  EXPECT_LT(apply_point(t, p.position).norm(), 1e-12);
}

TEST(AlignToX, NearAntipodalStaysAccurate) {
  for (double eps : {1e-4, 1e-8, 1e-12}) {
    OrientedPoint p{Vec3(1, 1, 1), Vec3(-1, eps, -eps).normalized()};
    auto t = align_to_x(p);
    EXPECT_LT((t.rotation * p.normal - Vec3::UnitX()).norm(), 1e-12) << eps;
  }
}

TEST(AlignToX, PostconditionsOnRandomPoints) {
  Rng rng(7);
  double worst_pos = 0, worst_nrm = 0, worst_orth = 0;
  for (int k = 0; k < 1'000'000; ++k) {
    OrientedPoint p{oracle::random_point(rng, 1.0), oracle::random_unit(rng)};
    auto t = align_to_x(p);
    worst_pos = std::max(worst_pos, apply_point(t, p.position).norm());
    worst_nrm = std::max(worst_nrm, (t.rotation * p.normal - Vec3::UnitX()).norm());
    if (k % 1000 == 0) {
      const Mat3& r = t.rotation.matrix();
      worst_orth = std::max({worst_orth, max_abs(r.transpose() * r - Mat3::Identity()), std::abs(r.determinant() - 1)});
      // Shortest arc: the rotation axis is orthogonal to both normal and +x.
      Eigen::AngleAxisd aa(r);
      if (aa.angle() > 1e-6) {
        EXPECT_LT(std::abs(aa.axis().dot(Vec3::UnitX())), 1e-9);
        EXPECT_LT(std::abs(aa.axis().dot(p.normal)), 1e-9);
      }
    }
  }
  EXPECT_LT(worst_pos, 1e-11);
  EXPECT_LT(worst_nrm, 1e-11);
  EXPECT_LT(worst_orth, 1e-9);
}

TEST(PairPose, SamePairGivesIdentity) {
  OrientedPoint a{Vec3(0.1, 0.2, 0.3), Vec3(0.3, -0.4, 0.5).normalized()};
  Vec3 b(0.4, -0.1, 0.0);
  auto t = pair_pose(a, b, a, b);
  EXPECT_LT(max_abs(t.rotation.matrix() - Mat3::Identity()), 1e-12);
  EXPECT_LT(t.translation.norm(), 1e-12);
}

TEST(PairPose, OnAxisSecondPointIsDegenerate) {
  OrientedPoint a{Vec3(0.1, 0.2, 0.3), Vec3(0, 0, 1)};
  Vec3 on_axis = a.position + a.normal;
  OrientedPoint d{Vec3(1, 1, 1), Vec3(1, 0, 0)};
  try {
    pair_pose(a, on_axis, d, Vec3(1, 2, 1));
    FAIL() << "expected DegeneratePair";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegeneratePair);
  }
  EXPECT_THROW(pair_pose(d, Vec3(1, 2, 1), a, on_axis), Error);
}

TEST(PairPose, RecoversSampledTransform) {
  Rng rng(11);
  double worst_rot = 0, worst_t = 0;
  for (int k = 0; k < 20000; ++k) {
    RigidTransform truth = oracle::random_transform(rng, 1.0);
    OrientedPoint src{oracle::random_point(rng), oracle::random_unit(rng)};
    Vec3 other = oracle::random_point(rng);
    Vec3 a = align_to_x(src).rotation * (other - src.position);
    if (std::hypot(a.y(), a.z()) < 1e-3) continue;
    OrientedPoint dst{apply_point(truth, src.position), apply_normal(truth, src.normal)};
    auto t = pair_pose(src, other, dst, apply_point(truth, other));
    worst_rot = std::max(worst_rot, geodesic_angle(t.rotation, truth.rotation));
    worst_t = std::max(worst_t, (t.translation - truth.translation).norm());
  }
  EXPECT_LT(worst_rot, 1e-9);
  EXPECT_LT(worst_t, 1e-9);
}

TEST(PairPose, AnchorExactUnderNoise) {
  Rng rng(12);
  double worst = 0;
  for (int k = 0; k < 20000; ++k) {
    OrientedPoint src{oracle::random_point(rng), oracle::random_unit(rng)};
    OrientedPoint dst{oracle::random_point(rng), oracle::random_unit(rng)};
    Vec3 so = oracle::random_point(rng), dso = oracle::random_point(rng);
    RigidTransform t;
    try {
      t = pair_pose(src, so, dst, dso);
    } catch (const Error&) {
      continue;
    }
    worst = std::max({worst, (apply_point(t, src.position) - dst.position).norm(),
                      (apply_normal(t, src.normal) - dst.normal).norm()});
  }
  EXPECT_LT(worst, 1e-11);
}

TEST(PairPose, AlphaAlignsSecondPointHalfPlane) {
  // The image of src_other lies in the half-plane spanned by the dst anchor
  // normal and dst_other.
  Rng rng(13);
  for (int k = 0; k < 1000; ++k) {
    OrientedPoint src{oracle::random_point(rng), oracle::random_unit(rng)};
    OrientedPoint dst{oracle::random_point(rng), oracle::random_unit(rng)};
    Vec3 so = oracle::random_point(rng), dso = oracle::random_point(rng);
    auto t = pair_pose(src, so, dst, dso);
    Vec3 img = apply_point(t, so) - dst.position;
    Vec3 tgt = dso - dst.position;
    Vec3 img_perp = img - img.dot(dst.normal) * dst.normal;
    Vec3 tgt_perp = tgt - tgt.dot(dst.normal) * dst.normal;
    EXPECT_GT(img_perp.normalized().dot(tgt_perp.normalized()), 1 - 1e-9);
  }
}

TEST(Transform, InvertAndApply) {
  Rng rng(3);
  Vec3 p(0.3, -2, 5);
  EXPECT_EQ(apply_point(RigidTransform::identity(), p), p);
  for (int k = 0; k < 1000; ++k) {
    auto t = oracle::random_transform(rng, 2.0);
    auto tt = invert(invert(t));
    EXPECT_LT(max_abs(tt.rotation.matrix() - t.rotation.matrix()), 1e-12);
    EXPECT_LT((tt.translation - t.translation).norm(), 1e-12);
    Vec3 q = oracle::random_point(rng, 3.0);
    EXPECT_LT((apply_point(invert(t), apply_point(t, q)) - q).norm(), 1e-9);
    EXPECT_LT((apply_normal(t, Vec3::UnitZ()) - t.rotation.matrix().col(2)).norm(), 1e-15);
    // distances preserved
    Vec3 r = oracle::random_point(rng, 3.0);
    EXPECT_NEAR((apply_point(t, q) - apply_point(t, r)).norm(), (q - r).norm(), 1e-9);
  }
}

TEST(RotationMean, Trivial) {
  Rng rng(5);
  Rotation r = oracle::random_rotation(rng);
  std::vector<Rotation> three{r, r, r};
  EXPECT_LT(geodesic_angle(rotation_mean(three), r), 1e-12);
  std::vector<Rotation> sym{rot_x(0.7), rot_x(-0.7)};
  EXPECT_LT(geodesic_angle(rotation_mean(sym), Rotation::identity()), 1e-9);
  EXPECT_THROW(rotation_mean(std::vector<Rotation>{}), Error);
}

TEST(RotationMean, SmallPerturbationsMatchGridOracle) {
  Rng rng(17);
  for (int trial = 0; trial < 3; ++trial) {
    Rotation center = oracle::random_rotation(rng);
    std::vector<Rotation> rs;
    double worst = 0;
    for (int k = 0; k < 5; ++k) {
      Vec3 axis = oracle::random_unit(rng);
      double angle = rng.uniform(0.0, 5.0) * kPi / 180.0;
      rs.push_back(Rotation::from_axis_angle(axis, angle) * center);
      worst = std::max(worst, geodesic_angle(rs.back(), center));
    }
    Rotation mean = rotation_mean(rs);
    EXPECT_LE(geodesic_angle(mean, center), 5.0 * kPi / 180.0);
    EXPECT_LT(geodesic_angle(mean, center), worst);
    Mat3 grid = oracle::grid_chordal_mean(rs, center.matrix(), 6.0 * kPi / 180.0, 1e-5);
    EXPECT_LT(geodesic_angle(mean, Rotation::from_matrix(grid)), 5e-5);
  }
}

TEST(RotationMean, SignAndOrderInvariant) {
  Rng rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Rotation> rs;
    for (int k = 0; k < 12; ++k) rs.push_back(oracle::random_rotation(rng));
    Rotation ref = rotation_mean(rs);
    std::vector<Rotation> shuffled = rs;
    for (std::size_t k = shuffled.size(); k > 1; --k) std::swap(shuffled[k - 1], shuffled[rng.uniform_index(k)]);
    // Sign flips: rebuild some rotations from the negated quaternion.
    for (auto& r : shuffled)
      if (rng.uniform() < 0.5) {
        Eigen::Quaterniond q = r.quaternion();
        q.coeffs() = -q.coeffs();
        r = Rotation::from_quaternion(q);
      }
    EXPECT_LE(geodesic_angle(rotation_mean(shuffled), ref), 1e-12);
  }
}

TEST(GeodesicAngle, KnownValues) {
  Rng rng(23);
  Rotation r = oracle::random_rotation(rng);
  EXPECT_EQ(geodesic_angle(r, r), 0.0);
  EXPECT_NEAR(geodesic_angle(Rotation::identity(), rot_x(kPi / 2)), kPi / 2, 1e-15);
  EXPECT_NEAR(geodesic_angle(Rotation::identity(), rot_x(kPi)), kPi, 1e-15);
}

TEST(GeodesicAngle, AgreesWithQuaternionFormula) {
  Rng rng(29);
  for (int k = 0; k < 10000; ++k) {
    Rotation a = oracle::random_rotation(rng), b = oracle::random_rotation(rng);
    double g = geodesic_angle(a, b);
    double q = oracle::quaternion_angle(a, b);
    // acos loses precision near 0 and pi; compare away from the ends.
    if (q > 1e-3 && q < kPi - 1e-3) EXPECT_NEAR(g, q, 1e-9);
    double tr = 0.5 * ((a.matrix().transpose() * b.matrix()).trace() - 1.0);
    if (q > 1e-3 && q < kPi - 1e-3) EXPECT_NEAR(g, std::acos(std::clamp(tr, -1.0, 1.0)), 1e-9);
  }
}

TEST(PoseJson, RoundTripAndValidation) {
  Rng rng(31);
  auto t = oracle::random_transform(rng);
  auto j = pose_to_json(t);
  ASSERT_EQ(j["rotation"].size(), 9u);
  EXPECT_DOUBLE_EQ(j["rotation"][1].get<double>(), t.rotation.matrix()(0, 1));
  auto back = pose_from_json(j);
  EXPECT_LT(geodesic_angle(back.rotation, t.rotation), 1e-12);
  EXPECT_LT((back.translation - t.translation).norm(), 1e-15);

  auto bad = j;
  bad["rotation"][0] = 2.0;
  EXPECT_THROW(pose_from_json(bad), Error);
  EXPECT_THROW(pose_from_json(nlohmann::json{{"rotation", {1, 0, 0}}}), Error);
}
