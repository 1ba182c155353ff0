#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mapmerge/features.hpp"
#include "mapmerge/point_cloud.hpp"
#include "mapmerge/pose.hpp"

namespace mapmerge {

// Translation-invariant measurement: the difference of two corresponded
// points on each side. If both pairs are inliers with per-point noise bound
// e, then beta = R * alpha + eps with ||eps|| <= 2e, independent of t.
struct TimPair {
  Eigen::Vector3d alpha;  // central-side difference
  Eigen::Vector3d beta;   // query-side difference
};
using TimPairSet = std::vector<TimPair>;

// Chained differences over consecutive correspondences with wrap-around:
// alpha_k = p_c[a_k] - p_c[a_(k+1 mod N)], beta_k likewise on the query side.
// Requires at least 2 correspondences.
TimPairSet build_tims(const PointCloud& cloud_c, const PointCloud& cloud_q,
                      const CorrespondenceSet& pairs);

struct MaxCliqueOptions {
  // Deterministic search budget in branch-and-bound work units (vertices
  // visited by the coloring bound). Roughly a second of work; a wall-clock
  // budget would make results depend on machine load, which would break
  // bit-reproducible runs.
  uint64_t node_budget = 2000000;
};

// Exact maximum clique via branch-and-bound with a greedy-coloring bound,
// seeded by a greedy clique. `exact` reports whether the search completed
// within the budget; when it did not, the best clique found so far (at least
// the greedy one) is returned.
std::vector<uint32_t> max_clique(const std::vector<std::vector<bool>>& adjacency,
                                 const MaxCliqueOptions& options, bool* exact);

struct MaxCliqueResult {
  CorrespondenceSet pruned;  // clique members, input order preserved
  TimPairSet tims;           // rebuilt over the survivors
  std::size_t clique_size = 0;
  bool exact = true;
};

// Consistency-graph pruning: correspondences i and j are compatible iff
// | ||p_ai - p_aj|| - ||p_bi - p_bj|| | <= 2 * noise_bound, since a rigid
// motion preserves pairwise distances. Keeps the maximum clique.
MaxCliqueResult max_clique_prune(const CorrespondenceSet& pairs,
                                 const PointCloud& cloud_c,
                                 const PointCloud& cloud_q, double noise_bound,
                                 const MaxCliqueOptions& options = {});

enum class RotationMode { kYawOnly, kFullSo3 };

struct GncRotationResult {
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  std::vector<double> weights;  // per TIM, in [0, 1]
  int iterations = 0;
  bool converged = false;
};

// Truncated-least-squares rotation fit under graduated non-convexity.
// Alternates a weighted closed-form fit (full Kabsch, or a yaw-only fit on
// xy-projected TIMs) with the TLS weight update; the surrogate parameter
// starts near-convex from the worst initial residual and grows by
// `mu_growth` each outer iteration until weights settle below 1e-6 change
// or 100 iterations. `c_bar` is the residual truncation threshold in meters.
// Throws PipelineError on degenerate geometry (e.g. collinear TIMs in
// full-SO3 mode) or when every weight collapses to zero.
GncRotationResult gnc_rotation(const TimPairSet& tims, double c_bar,
                               RotationMode mode, double mu_growth = 1.4);

// Component-wise truncated estimate of t in p_b = R p_a + t. For each axis,
// every pair votes with the interval [v - sigma*c_bar, v + sigma*c_bar]
// around its discrepancy v = (p_b - R p_a)[axis]; a sweep over the 2N
// interval endpoints finds the point of maximum consensus (leftmost on
// ties), and the estimate is the mean of the consensus members.
Eigen::Vector3d cote_translation(const PointCloud& cloud_c,
                                 const PointCloud& cloud_q,
                                 const CorrespondenceSet& pairs,
                                 const Eigen::Matrix3d& R, double sigma,
                                 double c_bar);

struct RegistrationParams {
  double voxel = 2.0;          // downsample resolution for matching
  RotationMode mode = RotationMode::kYawOnly;
  double noise_bound = 1.0;    // per-point noise bound sigma, meters
  double c_bar = 1.0;          // unitless truncation multiplier
  double mu_growth = 1.4;
  MatchParams match;
  MaxCliqueOptions clique;
};

struct RegistrationResult {
  // Maps cloud_c coordinates into cloud_q coordinates:
  // transform_cloud(transform, cloud_c) overlaps cloud_q.
  Pose transform;
  // Pairs consistent with the final estimate; indices refer to the clouds
  // the correspondences were built on.
  CorrespondenceSet inlier_pairs;
  bool converged = false;
  int iterations = 0;          // GNC outer iterations
  std::size_t clique_size = 0;
  bool clique_exact = true;
  // Wall-clock phase breakdown; informational only, never affects results.
  double voxel_seconds = 0.0;
  double descriptor_seconds = 0.0;
  double solve_seconds = 0.0;
};

// Solver path: clique pruning, GNC rotation on the surviving TIMs, then
// consensus translation. `pairs` index into cloud_c / cloud_q directly.
// Throws PipelineError when fewer than 2 correspondences survive any stage.
RegistrationResult register_correspondences(const PointCloud& cloud_c,
                                            const PointCloud& cloud_q,
                                            const CorrespondenceSet& pairs,
                                            const RegistrationParams& params);

// Full outlier-robust registration: descriptor matching at params.voxel,
// then the solver path on the matched correspondences.
RegistrationResult register_clouds(const PointCloud& cloud_c,
                                   const PointCloud& cloud_q,
                                   const RegistrationParams& params);

}  // namespace mapmerge
