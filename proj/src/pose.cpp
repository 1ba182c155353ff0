#include "mapmerge/pose.hpp"

#include <cmath>

namespace mapmerge {

Pose compose(const Pose& a, const Pose& b) {
  return Pose{a.R * b.R, a.R * b.t + a.t};
}

Pose inverse(const Pose& a) {
  Pose out;
  out.R = a.R.transpose();
  out.t = -(out.R * a.t);
  return out;
}

Pose between(const Pose& a, const Pose& b) { return compose(inverse(a), b); }

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Eigen::Matrix3d exp_so3(const Eigen::Vector3d& w) {
  const double theta2 = w.squaredNorm();
  const Eigen::Matrix3d W = skew(w);
  if (theta2 < 1e-16) {
    return Eigen::Matrix3d::Identity() + W + 0.5 * W * W;
  }
  const double theta = std::sqrt(theta2);
  return Eigen::Matrix3d::Identity() + (std::sin(theta) / theta) * W +
         ((1.0 - std::cos(theta)) / theta2) * W * W;
}

Eigen::Vector3d log_so3(const Eigen::Matrix3d& R) {
  const double cos_theta = std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0);
  const double theta = std::acos(cos_theta);
  const Eigen::Vector3d axis_raw(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0),
                                 R(1, 0) - R(0, 1));
  if (theta < 1e-7) {
    // log(R) ~ 0.5 * vee(R - R^T) to second order.
    return 0.5 * axis_raw;
  }
  if (theta > M_PI - 1e-5) {
    // Near pi the vee form loses the axis; recover it from R + I whose
    // columns are parallel to the rotation axis.
    const Eigen::Matrix3d S = R + Eigen::Matrix3d::Identity();
    int col = 0;
    S.colwise().norm().maxCoeff(&col);
    Eigen::Vector3d axis = S.col(col).normalized();
    // Resolve the sign ambiguity of the axis with the vee part when it is
    // nonzero, otherwise any sign is a valid log at exactly pi.
    if (axis.dot(axis_raw) < 0.0) axis = -axis;
    return theta * axis;
  }
  return (theta / (2.0 * std::sin(theta))) * axis_raw;
}

Eigen::Matrix3d left_jacobian_so3(const Eigen::Vector3d& w) {
  const double theta2 = w.squaredNorm();
  const Eigen::Matrix3d W = skew(w);
  if (theta2 < 1e-14) {
    return Eigen::Matrix3d::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
  }
  const double theta = std::sqrt(theta2);
  return Eigen::Matrix3d::Identity() +
         ((1.0 - std::cos(theta)) / theta2) * W +
         ((theta - std::sin(theta)) / (theta2 * theta)) * W * W;
}

Eigen::Matrix3d left_jacobian_inv_so3(const Eigen::Vector3d& w) {
  const double theta2 = w.squaredNorm();
  const Eigen::Matrix3d W = skew(w);
  if (theta2 < 1e-14) {
    return Eigen::Matrix3d::Identity() - 0.5 * W + (1.0 / 12.0) * W * W;
  }
  const double theta = std::sqrt(theta2);
  const double half = 0.5 * theta;
  const double cot_term = 1.0 / theta2 - 0.5 * std::cos(half) / (theta * std::sin(half));
  return Eigen::Matrix3d::Identity() - 0.5 * W + cot_term * W * W;
}

Pose exp_se3(const Tangent& xi) {
  const Eigen::Vector3d w = xi.head<3>();
  const Eigen::Vector3d v = xi.tail<3>();
  Pose out;
  out.R = exp_so3(w);
  out.t = left_jacobian_so3(w) * v;
  return out;
}

Tangent log_se3(const Pose& T) {
  Tangent xi;
  const Eigen::Vector3d w = log_so3(T.R);
  xi.head<3>() = w;
  xi.tail<3>() = left_jacobian_inv_so3(w) * T.t;
  return xi;
}

Pose retract(const Pose& x, const Tangent& xi) {
  return compose(x, exp_se3(xi));
}

Mat6 adjoint(const Pose& T) {
  Mat6 ad = Mat6::Zero();
  ad.topLeftCorner<3, 3>() = T.R;
  ad.bottomRightCorner<3, 3>() = T.R;
  ad.bottomLeftCorner<3, 3>() = skew(T.t) * T.R;
  return ad;
}

Mat6 adjoint_tangent(const Tangent& xi) {
  Mat6 ad = Mat6::Zero();
  const Eigen::Matrix3d W = skew(xi.head<3>());
  ad.topLeftCorner<3, 3>() = W;
  ad.bottomRightCorner<3, 3>() = W;
  ad.bottomLeftCorner<3, 3>() = skew(xi.tail<3>());
  return ad;
}

Mat6 left_jacobian_se3(const Tangent& xi) {
  const Mat6 ad = adjoint_tangent(xi);
  Mat6 sum = Mat6::Identity();
  Mat6 term = Mat6::Identity();
  // term_n = ad^n / (n+1)!; |xi| <= pi + translation keeps this well under
  // 80 terms for machine precision.
  for (int n = 1; n <= 80; ++n) {
    term = (term * ad) / static_cast<double>(n + 1);
    sum += term;
    if (term.lpNorm<Eigen::Infinity>() < 1e-18) break;
  }
  return sum;
}

Mat6 right_jacobian_se3(const Tangent& xi) { return left_jacobian_se3(-xi); }

double rotation_angle(const Eigen::Matrix3d& R) {
  return std::acos(std::clamp(0.5 * (R.trace() - 1.0), -1.0, 1.0));
}

double rotation_distance(const Pose& a, const Pose& b) {
  return rotation_angle(a.R.transpose() * b.R);
}

Eigen::Matrix3d project_to_so3(const Eigen::Matrix3d& M) {
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d U = svd.matrixU();
  Eigen::Matrix3d V = svd.matrixV();
  Eigen::Matrix3d R = U * V.transpose();
  if (R.determinant() < 0.0) {
    U.col(2) *= -1.0;
    R = U * V.transpose();
  }
  return R;
}

Eigen::Matrix3d yaw_rotation(double yaw) {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  const double c = std::cos(yaw), s = std::sin(yaw);
  R(0, 0) = c;
  R(0, 1) = -s;
  R(1, 0) = s;
  R(1, 1) = c;
  return R;
}

bool is_finite(const Pose& T) {
  return T.R.allFinite() && T.t.allFinite();
}

}  // namespace mapmerge
