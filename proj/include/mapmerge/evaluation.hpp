#pragma once

#include <cstddef>
#include <vector>

#include "mapmerge/pipeline.hpp"
#include "mapmerge/point_cloud.hpp"
#include "mapmerge/pose.hpp"

namespace mapmerge {

// Estimated and ground-truth trajectories of one session, index-aligned.
struct TrajectoryPair {
  std::vector<Pose> estimated;
  std::vector<Pose> ground_truth;
};

// Rigid (scale-free) least-squares fit of the estimated positions onto the
// ground-truth positions; returns the transform mapping estimated
// coordinates into the ground-truth frame. Throws InputError when the
// lengths differ, fewer than 3 poses are given, or the positions are
// collinear (the fit is underdetermined about the line).
Pose align_trajectory(const TrajectoryPair& pair);

struct IsaeResult {
  double translation_error = 0.0;  // meters
  double rotation_error = 0.0;     // geodesic degrees
  Pose discrepancy;                // the transform the magnitudes summarize
};

// Inter-session alignment error. Each session's estimated trajectory is
// rigidly aligned to its own ground truth, which cancels any common rigid
// offset of that session's estimates; what remains is how far the implied
// inter-session transform deviates from the known ground-truth one:
//   discrepancy = A_c^-1 * t_gt * A_q,   A_s = align_trajectory(session s)
// where t_gt maps the query GT world frame into the central GT world frame.
// Perfectly merged trajectories give identity. Both estimated trajectories
// are expected in one common (global/merged) frame.
IsaeResult isae(const TrajectoryPair& central, const TrajectoryPair& query,
                const Pose& t_gt);

// Customary failure classification for a merge: beyond 100 m or 20 degrees
// the alignment is counted as failed rather than merely inaccurate.
bool isae_failure(const IsaeResult& result);

// Absolute position error after rigid alignment: root-mean-square distance
// between aligned estimated positions and ground-truth positions.
double ape_rmse(const TrajectoryPair& pair);

struct LoopClassification {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
};

// Scores the accepted loop constraints against true node poses (both
// sessions' poses expressed in one common frame). A loop is true when its
// measured relative pose is within 2 m and 10 degrees of the ground-truth
// relative pose between its two nodes; otherwise it is a false positive.
// Rejected candidates are ignored. Throws InputError on out-of-range node
// indices.
LoopClassification classify_loops(const std::vector<LoopConstraint>& loops,
                                  const std::vector<Pose>& gt_central,
                                  const std::vector<Pose>& gt_query);

// Fraction of query-map points that have a central-map point within
// `radius`. Empty query map yields 0.
double map_overlap(const PointCloud& query_map, const PointCloud& central_map,
                   double radius = 1.0);

}  // namespace mapmerge
