#include "mapmerge/fine_alignment.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "mapmerge/errors.hpp"
#include "mapmerge/kd_tree.hpp"
#include "mapmerge/threading.hpp"

namespace mapmerge {

namespace {

struct Association {
  std::vector<uint32_t> target_index;  // one per source point
  std::vector<double> dist2;           // squared distance at the query pose
};

Association associate(const PointCloud& source, const KdTree3& target_tree,
                      const Pose& transform) {
  Association out;
  out.target_index.resize(source.size());
  out.dist2.resize(source.size());
  parallel_for(0, source.size(), [&](std::size_t i) {
    const auto hit = target_tree.nearest(transform.apply(source.points[i]));
    out.target_index[i] = hit.index;
    out.dist2[i] = hit.dist2;
  });
  return out;
}

TruncatedMse truncated_mse_of(const Association& assoc, double d_max) {
  const double d2_max = d_max * d_max;
  double sum = 0.0;
  std::size_t n = 0;
  for (double d2 : assoc.dist2) {
    if (d2 <= d2_max) {
      sum += d2;
      ++n;
    }
  }
  TruncatedMse out;
  if (n > 0) {
    out.value = sum / static_cast<double>(n);
    out.n_inliers = n;
  }
  return out;
}

// mean(min(d^2, d_max^2)) over all source points: the cost each fit descends.
double surrogate_cost(const Association& assoc, double d_max) {
  const double d2_max = d_max * d_max;
  double sum = 0.0;
  for (double d2 : assoc.dist2) sum += std::min(d2, d2_max);
  return sum / static_cast<double>(assoc.dist2.size());
}

// Closed-form least-squares rigid fit mapping source[i] onto
// target[assoc[i]] over the surviving pairs (demeaned SVD, det sign fixed).
Pose fit_pairs(const PointCloud& source, const PointCloud& target,
               const Association& assoc, double d_max) {
  const double d2_max = d_max * d_max;
  Eigen::Vector3d mean_s = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_t = Eigen::Vector3d::Zero();
  std::size_t n = 0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (assoc.dist2[i] > d2_max) continue;
    mean_s += source.points[i];
    mean_t += target.points[assoc.target_index[i]];
    ++n;
  }
  if (n == 0) {
    throw PipelineError(
        "icp: no correspondence within the truncation distance");
  }
  if (n < 3) {
    throw PipelineError(
        "icp: fewer than 3 correspondences within the truncation distance");
  }
  mean_s /= static_cast<double>(n);
  mean_t /= static_cast<double>(n);

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (assoc.dist2[i] > d2_max) continue;
    h += (source.points[i] - mean_s) *
         (target.points[assoc.target_index[i]] - mean_t).transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if ((v * u.transpose()).determinant() < 0.0) v.col(2) *= -1.0;
  Pose out;
  out.R = v * u.transpose();
  out.t = mean_t - out.R * mean_s;
  return out;
}

}  // namespace

TruncatedMse truncated_mse(const PointCloud& source, const PointCloud& target,
                           const Pose& transform, double d_max) {
  if (d_max <= 0.0) {
    throw std::invalid_argument("truncated_mse: d_max must be positive");
  }
  if (source.empty() || target.empty()) return {};
  const KdTree3 tree(target.points);
  return truncated_mse_of(associate(source, tree, transform), d_max);
}

IcpResult icp_truncated(const PointCloud& source, const PointCloud& target,
                        const Pose& init, double d_max) {
  if (d_max <= 0.0) {
    throw std::invalid_argument("icp: d_max must be positive");
  }
  if (source.empty() || target.empty()) {
    throw PipelineError("icp: empty input cloud");
  }
  constexpr int kMaxIterations = 50;
  constexpr double kStepTolerance = 1e-6;  // metres and radians

  const KdTree3 tree(target.points);
  IcpResult result;
  result.transform = init;
  result.source_size = source.size();
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    const Association assoc = associate(source, tree, result.transform);
    result.cost_trace.push_back(surrogate_cost(assoc, d_max));
    const Pose refined = fit_pairs(source, target, assoc, d_max);
    const Pose step = between(result.transform, refined);
    result.transform = refined;
    result.iterations = iter + 1;
    if (step.t.norm() < kStepTolerance &&
        rotation_angle(step.R) < kStepTolerance) {
      result.converged = true;
      break;
    }
  }
  const Association final_assoc = associate(source, tree, result.transform);
  result.cost_trace.push_back(surrogate_cost(final_assoc, d_max));
  const TruncatedMse score = truncated_mse_of(final_assoc, d_max);
  result.t_mse = score.value;
  result.n_inliers = score.n_inliers;
  return result;
}

bool validate_loop(const IcpResult& icp, double tau_mse,
                   double min_inlier_fraction) {
  if (!icp.converged || icp.source_size == 0) return false;
  if (!(icp.t_mse <= tau_mse)) return false;  // +inf sentinel fails here
  const double fraction = static_cast<double>(icp.n_inliers) /
                          static_cast<double>(icp.source_size);
  return fraction >= min_inlier_fraction;
}

}  // namespace mapmerge
