#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mapmerge/diagnostics.hpp"
#include "mapmerge/point_cloud.hpp"
#include "mapmerge/pose.hpp"
#include "mapmerge/pose_graph.hpp"
#include "mapmerge/registration.hpp"

namespace mapmerge {

// Covariance with one variance for all rotation axes and one for all
// translation axes (tangent order: rotation first).
inline Mat6 diagonal_covariance(double rotation_variance,
                                double translation_variance) {
  Mat6 m = Mat6::Zero();
  m.diagonal().head<3>().setConstant(rotation_variance);
  m.diagonal().tail<3>().setConstant(translation_variance);
  return m;
}

enum class SessionRole { kCentral, kQuery };

struct SessionNode {
  Pose pose;        // estimated pose in the session's own world frame
  PointCloud scan;  // sensor points in this node's body frame
};

// Loop closure the session's own SLAM produced between two of its nodes:
// z maps node-b body coordinates into node-a body coordinates, i.e. the
// relative pose of b expressed in a.
struct IntraLoop {
  uint32_t a = 0;
  uint32_t b = 0;
  Pose z;
  Mat6 covariance = Mat6::Identity();
};

// One mapping session as produced by an independent SLAM run: estimated
// keyframe poses (possibly drifted), the scan captured at each keyframe, and
// any loop closures the run detected internally.
struct Session {
  std::string id;
  SessionRole role = SessionRole::kCentral;
  std::vector<SessionNode> nodes;
  std::vector<IntraLoop> intra_loops;
};

// Inter-session loop candidate between central node `central` and query node
// `query`. z maps query-node body coordinates into central-node body
// coordinates. Every evaluated candidate is recorded; `accepted` marks the
// ones that passed validation and entered the pose graph.
struct LoopConstraint {
  uint32_t central = 0;
  uint32_t query = 0;
  Pose z;
  Mat6 covariance = Mat6::Identity();
  double t_mse = std::numeric_limits<double>::infinity();
  std::size_t n_inliers = 0;
  bool accepted = false;
};

// How the query side of a loop candidate is built: a submap around the query
// node, or just that node's own scan (cheaper, less constrained).
enum class LoopMode { kSubmapToSubmap, kScanToSubmap };

struct PipelineConfig {
  double map_voxel = 2.0;       // session-map resolution, meters
  double submap_voxel = 0.4;    // submap resolution for loop refinement
  int submap_half_window = 20;  // frames accumulated on each side of a node
  double icp_d_max = 2.0;       // truncation distance for refinement and t-MSE
  double tau_mse = 0.4;         // accept threshold on the truncated MSE
  double min_inlier_fraction = 0.05;   // accept threshold on inlier coverage
  int loop_stride = 5;                 // every stride-th query node is a candidate
  double loop_search_radius = 10.0;    // meters, in the warped global frame
  std::size_t min_inter_loops = 3;     // merge fails below this many accepted
  LoopMode loop_mode = LoopMode::kSubmapToSubmap;

  // Solver settings for the two registration scales. The voxel fields are
  // ignored: map_voxel / submap_voxel above are used instead.
  RegistrationParams map_registration = {};
  RegistrationParams submap_registration = [] {
    RegistrationParams p;
    p.noise_bound = 0.5;  // submaps are fine-grained; correspondences tighter
    return p;
  }();

  // Factor covariances for the merged pose graph.
  Mat6 odometry_covariance = diagonal_covariance(2.5e-5, 4e-4);
  Mat6 origin_prior_covariance = diagonal_covariance(1e-6, 1e-6);
  Mat6 anchor_covariance_central = diagonal_covariance(1e-6, 1e-6);
  Mat6 anchor_covariance_query = diagonal_covariance(1e4, 1e4);

  // Base standard deviation of an accepted loop factor (per tangent axis).
  // The covariance is scaled by the loop's fit quality:
  //   sigma^2 * clamp(t_mse / tau_mse, 0.25, 1.0) * I
  double inter_loop_sigma = 0.1;
};

struct MergeResult {
  std::vector<Pose> central_poses;  // optimized, in the central session frame
  std::vector<Pose> query_poses;    // optimized, in the query session frame
  Pose anchor_central;              // central session frame -> global frame
  Pose anchor_query;                // query session frame -> global frame
  Pose initial_guess;               // map-level alignment before optimization
  std::vector<LoopConstraint> loops;
  OptimizationReport report;
  std::vector<StageTiming> timings;
  double total_seconds = 0.0;
};

// Union of every scan transformed by its node pose, downsampled at `voxel`.
// Requires a non-empty session with at least one non-empty scan.
PointCloud accumulate_map(const Session& session, double voxel);

struct InitialAlignment {
  Pose transform;  // maps query-map coordinates into central-map coordinates
  RegistrationResult registration;  // raw solver output and phase timings
};

// Outlier-robust map-to-map registration of the two session maps. The voxel
// inside `params` is the matching resolution (the session-map voxel).
InitialAlignment initial_alignment(const PointCloud& map_central,
                                   const PointCloud& map_query,
                                   const RegistrationParams& params);

// Propose and validate inter-session loops. Every loop_stride-th query node
// is warped into the central frame by `initial_guess`; if a central node
// lies within loop_search_radius, submaps around the pair are registered and
// refined with truncated ICP, and the result is validated on truncated MSE
// and inlier coverage. Candidates whose solver fails are skipped silently;
// an empty result is a valid outcome.
std::vector<LoopConstraint> find_inter_loops(const Session& central,
                                             const Session& query,
                                             const Pose& initial_guess,
                                             const PipelineConfig& config);

// Full merge: build both session maps, align them, validate inter-session
// loops, then jointly optimize both trajectories plus one anchor node per
// session (the session-frame-to-global transforms). The central anchor is
// pinned tightly at identity and the query anchor starts at the map-level
// alignment with a loose prior, so the loop constraints place the query
// session. Sessions keep their own frames; each session's first pose carries
// a tight prior, leaving the anchors to absorb the inter-session alignment.
// Throws PipelineError when fewer than config.min_inter_loops candidates are
// accepted, or when any underlying stage fails.
MergeResult merge_sessions(const Session& central, const Session& query,
                           const PipelineConfig& config = {});

struct GlobalMapInput {
  const Session* session = nullptr;
  Pose anchor;                               // session frame -> global frame
  const std::vector<Pose>* poses = nullptr;  // optional trajectory override
};

// Union of all sessions' scans placed by anchor * node_pose, downsampled at
// `voxel`. When an input carries a pose override (e.g. the optimized
// trajectory from merge_sessions) it replaces the session's stored poses.
PointCloud build_global_map(const std::vector<GlobalMapInput>& inputs,
                            double voxel);

}  // namespace mapmerge
