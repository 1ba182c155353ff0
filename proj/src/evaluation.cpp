#include "mapmerge/evaluation.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/SVD>

#include "mapmerge/errors.hpp"
#include "mapmerge/kd_tree.hpp"

namespace mapmerge {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

Pose align_trajectory(const TrajectoryPair& pair) {
  const std::size_t n = pair.estimated.size();
  if (n != pair.ground_truth.size()) {
    throw InputError("align_trajectory: trajectory lengths differ");
  }
  if (n < 3) {
    throw InputError("align_trajectory: need at least 3 poses");
  }

  Eigen::Vector3d mean_est = Eigen::Vector3d::Zero();
  Eigen::Vector3d mean_gt = Eigen::Vector3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    mean_est += pair.estimated[i].t;
    mean_gt += pair.ground_truth[i].t;
  }
  mean_est /= static_cast<double>(n);
  mean_gt /= static_cast<double>(n);

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    h += (pair.estimated[i].t - mean_est) *
         (pair.ground_truth[i].t - mean_gt).transpose();
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  // Collinear positions leave the rotation about the line undetermined: the
  // cross-covariance then has rank <= 1.
  if (!(s(1) > 1e-9 * std::max(s(0), 1e-300))) {
    throw InputError("align_trajectory: positions are collinear, fit is underdetermined");
  }

  Eigen::Matrix3d v = svd.matrixV();
  if ((v * svd.matrixU().transpose()).determinant() < 0.0) {
    v.col(2) *= -1.0;
  }
  Pose out;
  out.R = v * svd.matrixU().transpose();
  out.t = mean_gt - out.R * mean_est;
  return out;
}

IsaeResult isae(const TrajectoryPair& central, const TrajectoryPair& query,
                const Pose& t_gt) {
  const Pose align_c = align_trajectory(central);
  const Pose align_q = align_trajectory(query);
  IsaeResult out;
  out.discrepancy = compose(inverse(align_c), compose(t_gt, align_q));
  out.translation_error = out.discrepancy.t.norm();
  out.rotation_error = rotation_angle(out.discrepancy.R) * kRadToDeg;
  return out;
}

bool isae_failure(const IsaeResult& result) {
  return result.translation_error > 100.0 || result.rotation_error > 20.0;
}

double ape_rmse(const TrajectoryPair& pair) {
  const Pose align = align_trajectory(pair);
  double sum = 0.0;
  for (std::size_t i = 0; i < pair.estimated.size(); ++i) {
    sum += (align.apply(pair.estimated[i].t) - pair.ground_truth[i].t).squaredNorm();
  }
  return std::sqrt(sum / static_cast<double>(pair.estimated.size()));
}

LoopClassification classify_loops(const std::vector<LoopConstraint>& loops,
                                  const std::vector<Pose>& gt_central,
                                  const std::vector<Pose>& gt_query) {
  LoopClassification out;
  for (const LoopConstraint& loop : loops) {
    if (!loop.accepted) continue;
    if (loop.central >= gt_central.size() || loop.query >= gt_query.size()) {
      throw InputError("classify_loops: loop references a node outside the trajectories");
    }
    const Pose z_true = between(gt_central[loop.central], gt_query[loop.query]);
    const double dt = (loop.z.t - z_true.t).norm();
    const double dr = rotation_distance(loop.z, z_true) * kRadToDeg;
    if (dt < 2.0 && dr < 10.0) {
      ++out.true_positives;
    } else {
      ++out.false_positives;
    }
  }
  return out;
}

double map_overlap(const PointCloud& query_map, const PointCloud& central_map,
                   double radius) {
  if (query_map.empty() || central_map.empty()) return 0.0;
  const KdTree3 tree(central_map.points);
  const double r2 = radius * radius;
  std::size_t hits = 0;
  for (const Eigen::Vector3d& p : query_map.points) {
    if (tree.nearest(p).dist2 <= r2) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(query_map.size());
}

}  // namespace mapmerge
