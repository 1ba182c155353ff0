#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "mapmerge/point_cloud.hpp"
#include "mapmerge/pose.hpp"

namespace mapmerge {

// Truncated mean squared error: mean squared nearest-neighbour distance from
// transform(source) into target, counting only associations with distance
// <= d_max. Pairs beyond d_max are dropped from numerator and denominator, so
// the score is insensitive to the part of source that target never observed.
struct TruncatedMse {
  // +infinity when no association survives the truncation (disjoint clouds).
  double value = std::numeric_limits<double>::infinity();
  std::size_t n_inliers = 0;
};

TruncatedMse truncated_mse(const PointCloud& source, const PointCloud& target,
                           const Pose& transform, double d_max);

// Outcome of icp_truncated. `transform` maps source coordinates into the
// target frame; `t_mse` / `n_inliers` are evaluated at the final transform.
struct IcpResult {
  Pose transform;
  double t_mse = std::numeric_limits<double>::infinity();
  std::size_t n_inliers = 0;     // <= source_size
  std::size_t source_size = 0;
  int iterations = 0;
  bool converged = false;
  // Truncated surrogate cost mean(min(d^2, d_max^2)) over source points,
  // recorded before every fit and once at the final transform. Each fit
  // minimizes the surrogate for capped outliers, so the trace never rises.
  std::vector<double> cost_trace;
};

// Point-to-point ICP with truncated association: each iteration matches every
// source point to its nearest target point, discards pairs farther than
// d_max, and refits the full source->target transform by the closed-form SVD
// solution on the demeaned survivors. Stops when the update falls below
// 1e-6 m / 1e-6 rad (converged) or after 50 iterations.
//
// The basin of attraction is local: a far-off init in self-similar geometry
// settles into whichever alignment is nearest, and the caller is expected to
// reject such loops downstream (validate_loop). Throws std::invalid_argument
// for a non-positive d_max and PipelineError when an iteration retains no
// (or degenerately few, < 3) correspondences.
IcpResult icp_truncated(const PointCloud& source, const PointCloud& target,
                        const Pose& init, double d_max);

// Acceptance test for a refined loop-closure candidate: the refinement must
// have converged, scored t_mse <= tau_mse, and matched at least
// min_inlier_fraction of the source points. The fraction guard rejects
// alignments whose score rests on a sliver of the cloud.
bool validate_loop(const IcpResult& icp, double tau_mse,
                   double min_inlier_fraction);

}  // namespace mapmerge
