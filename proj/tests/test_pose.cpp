#include <doctest.h>

#include <cmath>

#include "mapmerge/pose.hpp"
#include "mapmerge/random.hpp"
#include "support/test_util.hpp"

using namespace mapmerge;

TEST_CASE("compose with inverse yields identity") {
  Pose a;
  a.R = yaw_rotation(M_PI / 2.0);
  a.t = Eigen::Vector3d(1.0, 0.0, 0.0);
  const Pose id = compose(a, inverse(a));
  CHECK((id.R - Eigen::Matrix3d::Identity()).norm() < 1e-12);
  CHECK(id.t.norm() < 1e-12);
}

TEST_CASE("compose hand-computed example") {
  // a = 90 degree yaw plus unit x shift, b = unit y shift.
  Pose a;
  a.R = yaw_rotation(M_PI / 2.0);
  a.t = Eigen::Vector3d(1.0, 0.0, 0.0);
  Pose b;
  b.t = Eigen::Vector3d(0.0, 1.0, 0.0);

  const Pose ab = compose(a, b);
  CHECK(ab.t.norm() < 1e-12);  // R_a * (0,1,0) = (-1,0,0) cancels t_a
  CHECK((ab.R - a.R).norm() < 1e-12);

  const Pose ba = compose(b, a);
  CHECK((ba.t - Eigen::Vector3d(1.0, 1.0, 0.0)).norm() < 1e-12);
}

TEST_CASE("between satisfies its defining identity") {
  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Pose a = test::random_pose(rng);
    const Pose b = test::random_pose(rng);
    const Pose rebuilt = compose(a, between(a, b));
    CHECK((rebuilt.R - b.R).norm() < 1e-12);
    CHECK((rebuilt.t - b.t).norm() < 1e-10);
  }
}

TEST_CASE("so3 exp/log round trip") {
  Rng rng(12);
  for (int i = 0; i < 200; ++i) {
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    const double angle = rng.uniform(0.0, M_PI - 1e-4);
    const Eigen::Vector3d w = angle * axis;
    const Eigen::Vector3d back = log_so3(exp_so3(w));
    CHECK((back - w).norm() < 1e-8);
  }
}

TEST_CASE("so3 log near zero and near pi") {
  CHECK(log_so3(Eigen::Matrix3d::Identity()).norm() == 0.0);

  const Eigen::Vector3d tiny(1e-9, -2e-9, 3e-10);
  CHECK((log_so3(exp_so3(tiny)) - tiny).norm() < 1e-12);

  // Exactly pi about z: log must return pi with the right axis up to sign.
  const Eigen::Vector3d wz(0.0, 0.0, M_PI);
  const Eigen::Vector3d back = log_so3(exp_so3(wz));
  CHECK(std::abs(back.norm() - M_PI) < 1e-9);
  CHECK(std::abs(std::abs(back.z()) - M_PI) < 1e-9);

  // Just below pi, generic axis.
  Eigen::Vector3d axis(1.0, 2.0, -0.5);
  axis.normalize();
  const Eigen::Vector3d w = (M_PI - 1e-6) * axis;
  CHECK((log_so3(exp_so3(w)) - w).norm() < 1e-5);
}

TEST_CASE("se3 exp of pure translation and pure yaw") {
  Tangent xi = Tangent::Zero();
  xi.tail<3>() = Eigen::Vector3d(1.0, -2.0, 3.0);
  const Pose T = exp_se3(xi);
  CHECK((T.R - Eigen::Matrix3d::Identity()).norm() < 1e-15);
  CHECK((T.t - Eigen::Vector3d(1.0, -2.0, 3.0)).norm() < 1e-15);

  Tangent yaw = Tangent::Zero();
  yaw[2] = M_PI / 2.0;
  CHECK((exp_se3(yaw).R - yaw_rotation(M_PI / 2.0)).norm() < 1e-12);
}

TEST_CASE("se3 exp/log round trip") {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const Pose T = test::random_pose(rng, 20.0);
    const Pose back = exp_se3(log_se3(T));
    CHECK((back.R - T.R).norm() < 1e-9);
    CHECK((back.t - T.t).norm() < 1e-8);
  }
}

TEST_CASE("adjoint conjugation identity") {
  Rng rng(14);
  for (int i = 0; i < 50; ++i) {
    const Pose T = test::random_pose(rng);
    Tangent xi;
    for (int k = 0; k < 6; ++k) xi[k] = rng.uniform(-0.5, 0.5);
    const Pose lhs = compose(compose(T, exp_se3(xi)), inverse(T));
    const Pose rhs = exp_se3(adjoint(T) * xi);
    CHECK((lhs.R - rhs.R).norm() < 1e-9);
    CHECK((lhs.t - rhs.t).norm() < 1e-8);
  }
}

TEST_CASE("so3 left jacobian inverse is the inverse") {
  Rng rng(15);
  for (int i = 0; i < 100; ++i) {
    Eigen::Vector3d w(rng.normal(), rng.normal(), rng.normal());
    w *= rng.uniform(0.0, 3.0) / (w.norm() + 1e-12);
    const Eigen::Matrix3d prod =
        left_jacobian_inv_so3(w) * left_jacobian_so3(w);
    CHECK((prod - Eigen::Matrix3d::Identity()).norm() < 1e-9);
  }
}

TEST_CASE("se3 right jacobian matches the retraction derivative") {
  // Exp(xi + d) ~ Exp(xi) * Exp(Jr(xi) d) for small d.
  Rng rng(16);
  for (int i = 0; i < 50; ++i) {
    Tangent xi;
    for (int k = 0; k < 6; ++k) xi[k] = rng.uniform(-1.5, 1.5);
    const Mat6 Jr = right_jacobian_se3(xi);
    for (int k = 0; k < 6; ++k) {
      const double h = 1e-6;
      Tangent d = Tangent::Zero();
      d[k] = h;
      const Tangent lhs = log_se3(compose(inverse(exp_se3(xi)), exp_se3(xi + d)));
      CHECK((lhs / h - Jr.col(k)).norm() < 1e-5);
    }
  }
}

TEST_CASE("project_to_so3 restores a perturbed rotation") {
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Matrix3d R = test::random_rotation(rng);
    Eigen::Matrix3d noisy = R;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) noisy(r, c) += rng.uniform(-1e-4, 1e-4);
    const Eigen::Matrix3d proj = project_to_so3(noisy);
    CHECK(std::abs(proj.determinant() - 1.0) < 1e-12);
    CHECK((proj * proj.transpose() - Eigen::Matrix3d::Identity()).norm() < 1e-12);
    CHECK((proj - R).norm() < 1e-3);
  }
}

TEST_CASE("rotation angle and distance") {
  CHECK(rotation_angle(yaw_rotation(0.3)) == doctest::Approx(0.3).epsilon(1e-12));
  Pose a, b;
  b.R = yaw_rotation(0.25);
  CHECK(rotation_distance(a, b) == doctest::Approx(0.25).epsilon(1e-12));
}
