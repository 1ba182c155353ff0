#pragma once

#include <Eigen/Dense>

namespace mapmerge {

// Tangent vectors stack rotation before translation: [wx wy wz vx vy vz].
// Covariances over poses use the same ordering (rad^2 block first).
using Tangent = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

// Rigid transform, column-vector convention: p' = R * p + t.
struct Pose {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();

  static Pose identity() { return Pose{}; }

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return R * p + t; }
};

Pose compose(const Pose& a, const Pose& b);
Pose inverse(const Pose& a);

// Relative transform satisfying compose(a, between(a, b)) == b.
Pose between(const Pose& a, const Pose& b);

Eigen::Matrix3d skew(const Eigen::Vector3d& v);

Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w);
Eigen::Vector3d log_so3(const Eigen::Matrix3d& R);

// SO(3) left Jacobian and its inverse, closed form with small-angle series.
Eigen::Matrix3d left_jacobian_so3(const Eigen::Vector3d& w);
Eigen::Matrix3d left_jacobian_inv_so3(const Eigen::Vector3d& w);

Pose exp_se3(const Tangent& xi);
Tangent log_se3(const Pose& T);

// retract(x, xi) = x * exp(xi); the local parametrization used everywhere a
// pose is perturbed (optimizer updates, derivative checks).
Pose retract(const Pose& x, const Tangent& xi);

// Adjoint satisfying exp(adjoint(T) * xi) = T * exp(xi) * T^-1.
Mat6 adjoint(const Pose& T);

// ad(xi) such that adjoint(exp(xi)) = expm(ad(xi)).
Mat6 adjoint_tangent(const Tangent& xi);

// SE(3) left Jacobian, evaluated as the series sum ad^n / (n+1)!. Converges
// for any log-range input; terms are added until they fall below machine
// precision. right_jacobian(xi) = left_jacobian(-xi).
Mat6 left_jacobian_se3(const Tangent& xi);
Mat6 right_jacobian_se3(const Tangent& xi);

// Rotation angle in radians, in [0, pi].
double rotation_angle(const Eigen::Matrix3d& R);

// Geodesic rotation distance between two poses, radians.
double rotation_distance(const Pose& a, const Pose& b);

// Nearest rotation matrix by SVD, det forced to +1.
Eigen::Matrix3d project_to_so3(const Eigen::Matrix3d& M);

// Yaw-only rotation about +z.
Eigen::Matrix3d yaw_rotation(double yaw);

bool is_finite(const Pose& T);

}  // namespace mapmerge
