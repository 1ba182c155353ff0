#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "mapmerge/pipeline.hpp"

namespace mapmerge {

// Synthetic two-session benchmark. Each session drives one lap of a circle
// through a structured world (ground plane, boxes, walls, pole clusters) and
// records range-limited, field-of-view-masked scans of it. The generator is
// fully deterministic in the seed: every world point, scan point, keep/drop
// decision, and noise sample is keyed by stable indices, so regenerating
// with one knob changed perturbs only what that knob controls (an
// omnidirectional rerun of a masked session contains the masked scans as
// exact subsets).
struct ScenarioSpec {
  uint64_t seed = 0;
  int nodes_per_session = 200;

  double path_radius = 15.0;   // trajectory circle radius, meters
  double sensor_range = 20.0;  // scan visibility radius, meters

  // World content. The world is tiled into structure_cell-sized cells; each
  // cell holds one randomized structure with probability structure_density.
  double ground_spacing = 1.5;
  double structure_cell = 8.0;
  double structure_density = 0.55;

  // Scan sampling: each world point visible from a node is kept with this
  // probability (keyed per node and point, independent of any mask), then
  // perturbed by isotropic Gaussian noise.
  double scan_keep_fraction = 0.35;
  double scan_noise_sigma = 0.02;

  // Fraction of the query session's coverage that overlaps the central
  // session's, controlled by separating the two path circles; 1 = same
  // region, 0 = disjoint regions. Must lie in [0, 1].
  double overlap = 1.0;

  // Odometry corruption: per-step noise std dev as a fraction of the step
  // length (translation axes), and the same fraction times 0.02 rad per
  // meter (rotation axes). Stored node poses are dead-reckoned through this
  // noise; scans are always taken at the true poses.
  double drift_per_meter = 0.0;

  // Horizontal field of view, degrees, centered on the heading; 360 = omni.
  double central_fov_deg = 360.0;
  double query_fov_deg = 360.0;

  // Ground-truth transform from the query session's world frame to the
  // central session's world frame: yaw about +z plus a translation.
  double query_yaw_deg = 0.0;
  Eigen::Vector3d query_offset = Eigen::Vector3d::Zero();

  // Scene change between the sessions' visits: fraction of world structures
  // replaced with different ones before the query session maps the area, and
  // extra transient clutter blobs present only during the query session.
  double changed_structure_fraction = 0.0;
  int transient_clusters = 0;

  // Intra-session loop closures emitted with each session: every stride-th
  // node pair with index gap > min_gap whose true poses lie within radius.
  // min_gap 0 means half the session length.
  double intra_loop_radius = 3.0;
  int intra_loop_min_gap = 0;
  int intra_loop_stride = 4;
  double intra_loop_sigma_rot = 1e-3;    // rad, measurement noise + covariance
  double intra_loop_sigma_trans = 1e-2;  // meters
};

struct Scenario {
  Session central;
  Session query;
  Pose t_gt;  // query GT world frame expressed in the central GT world frame
  std::vector<Pose> gt_central;  // true node poses, central session frame
  std::vector<Pose> gt_query;    // true node poses, query session frame
  PointCloud world_central;  // world as the central session saw it
  PointCloud world_query;    // world as the query session saw it (same frame)
};

// Throws std::invalid_argument for infeasible parameters (overlap outside
// [0, 1], fewer than 2 nodes, non-positive geometry).
Scenario generate_scenario(const ScenarioSpec& spec);

}  // namespace mapmerge
