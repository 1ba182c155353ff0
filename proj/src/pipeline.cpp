#include "mapmerge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "mapmerge/errors.hpp"
#include "mapmerge/fine_alignment.hpp"
#include "mapmerge/kd_tree.hpp"

namespace mapmerge {

namespace {

void append_cloud(PointCloud& acc, const PointCloud& part) {
  acc.points.insert(acc.points.end(), part.points.begin(), part.points.end());
}

// Scans of the half-window around `center`, expressed in the center node's
// body frame using the session's own (possibly drifted) pose estimates.
PointCloud build_submap(const Session& session, uint32_t center,
                        int half_window, double voxel) {
  const int n = static_cast<int>(session.nodes.size());
  const int lo = std::max(0, static_cast<int>(center) - half_window);
  const int hi = std::min(n - 1, static_cast<int>(center) + half_window);
  const Pose& ref = session.nodes[center].pose;
  PointCloud acc;
  for (int i = lo; i <= hi; ++i) {
    append_cloud(acc, transform_cloud(between(ref, session.nodes[i].pose),
                                      session.nodes[i].scan));
  }
  return voxel_downsample(acc, voxel);
}

void validate_config(const PipelineConfig& config) {
  const auto fail = [](const char* what) { throw std::invalid_argument(what); };
  if (!(config.map_voxel > 0.0)) fail("merge: map_voxel must be positive");
  if (!(config.submap_voxel > 0.0)) fail("merge: submap_voxel must be positive");
  if (config.submap_half_window < 0) fail("merge: submap_half_window must be non-negative");
  if (!(config.icp_d_max > 0.0)) fail("merge: icp_d_max must be positive");
  if (!(config.tau_mse > 0.0)) fail("merge: tau_mse must be positive");
  if (config.min_inlier_fraction < 0.0 || config.min_inlier_fraction > 1.0)
    fail("merge: min_inlier_fraction must lie in [0, 1]");
  if (config.loop_stride < 1) fail("merge: loop_stride must be positive");
  if (!(config.loop_search_radius > 0.0)) fail("merge: loop_search_radius must be positive");
  if (!(config.inter_loop_sigma > 0.0)) fail("merge: inter_loop_sigma must be positive");
}

}  // namespace

PointCloud accumulate_map(const Session& session, double voxel) {
  if (session.nodes.empty()) {
    throw std::invalid_argument("accumulate_map: session has no nodes");
  }
  PointCloud acc;
  std::size_t total = 0;
  for (const SessionNode& node : session.nodes) total += node.scan.size();
  acc.points.reserve(total);
  for (const SessionNode& node : session.nodes) {
    append_cloud(acc, transform_cloud(node.pose, node.scan));
  }
  if (acc.empty()) {
    throw PipelineError("accumulate_map: every scan in the session is empty");
  }
  return voxel_downsample(acc, voxel);
}

InitialAlignment initial_alignment(const PointCloud& map_central,
                                   const PointCloud& map_query,
                                   const RegistrationParams& params) {
  InitialAlignment out;
  out.registration = register_clouds(map_central, map_query, params);
  // The solver reports the transform taking central-map coordinates into
  // query-map coordinates; the merge places the query session, so it wants
  // the opposite direction.
  out.transform = inverse(out.registration.transform);
  return out;
}

std::vector<LoopConstraint> find_inter_loops(const Session& central,
                                             const Session& query,
                                             const Pose& initial_guess,
                                             const PipelineConfig& config) {
  validate_config(config);
  if (central.nodes.empty() || query.nodes.empty()) {
    throw std::invalid_argument("find_inter_loops: a session has no nodes");
  }

  std::vector<Eigen::Vector3d> central_positions;
  central_positions.reserve(central.nodes.size());
  for (const SessionNode& node : central.nodes) {
    central_positions.push_back(node.pose.t);
  }
  const KdTree3 tree(std::move(central_positions));
  const double radius2 = config.loop_search_radius * config.loop_search_radius;

  RegistrationParams submap_params = config.submap_registration;
  submap_params.voxel = config.submap_voxel;

  std::vector<LoopConstraint> out;
  for (uint32_t k = 0; k < query.nodes.size();
       k += static_cast<uint32_t>(config.loop_stride)) {
    const Pose warped = compose(initial_guess, query.nodes[k].pose);
    const auto hit = tree.nearest(warped.t);
    if (!(hit.dist2 <= radius2)) continue;
    const uint32_t j = hit.index;

    // A candidate that fails any solver stage is simply not a loop;
    // an empty result is a valid outcome.
    try {
      const PointCloud target =
          build_submap(central, j, config.submap_half_window, config.submap_voxel);
      const PointCloud source =
          config.loop_mode == LoopMode::kSubmapToSubmap
              ? build_submap(query, k, config.submap_half_window, config.submap_voxel)
              : voxel_downsample(query.nodes[k].scan, config.submap_voxel);

      // Coarse pose from features, refined by truncated ICP; both map
      // query-node body coordinates into central-node body coordinates.
      const RegistrationResult coarse =
          register_clouds(source, target, submap_params);
      const IcpResult icp =
          icp_truncated(source, target, coarse.transform, config.icp_d_max);

      LoopConstraint loop;
      loop.central = j;
      loop.query = k;
      loop.z = icp.transform;
      loop.t_mse = icp.t_mse;
      loop.n_inliers = icp.n_inliers;
      loop.accepted =
          validate_loop(icp, config.tau_mse, config.min_inlier_fraction);
      // Weight accepted loops by fit quality; the floor keeps even perfect
      // fits from overpowering everything else.
      const double scale =
          std::clamp(icp.t_mse / config.tau_mse, 0.25, 1.0);
      loop.covariance = Mat6::Identity() *
                        (config.inter_loop_sigma * config.inter_loop_sigma * scale);
      out.push_back(loop);
    } catch (const PipelineError&) {
      continue;
    }
  }
  return out;
}

MergeResult merge_sessions(const Session& central, const Session& query,
                           const PipelineConfig& config) {
  validate_config(config);
  if (central.nodes.size() < 2 || query.nodes.size() < 2) {
    throw std::invalid_argument("merge: each session needs at least 2 nodes");
  }

  const double t_start = now_seconds();
  MergeResult res;

  StageTiming st_voxel{"Voxel sampl.", 0.0, 0};
  PointCloud map_central, map_query;
  {
    StageStopwatch watch(st_voxel.seconds);
    map_central = accumulate_map(central, config.map_voxel);
    map_query = accumulate_map(query, config.map_voxel);
  }
  st_voxel.items = map_central.size() + map_query.size();

  RegistrationParams map_params = config.map_registration;
  map_params.voxel = config.map_voxel;
  const InitialAlignment init =
      initial_alignment(map_central, map_query, map_params);
  res.initial_guess = init.transform;
  st_voxel.seconds += init.registration.voxel_seconds;
  StageTiming st_desc{"Desc. ext.", init.registration.descriptor_seconds,
                      init.registration.inlier_pairs.size()};
  StageTiming st_optim{"Optim.", init.registration.solve_seconds,
                       init.registration.clique_size};

  StageTiming st_loops{"Loop search", 0.0, 0};
  {
    StageStopwatch watch(st_loops.seconds);
    res.loops = find_inter_loops(central, query, init.transform, config);
  }
  std::size_t accepted = 0;
  for (const LoopConstraint& loop : res.loops) accepted += loop.accepted ? 1 : 0;
  st_loops.items = accepted;
  if (accepted < config.min_inter_loops) {
    std::ostringstream msg;
    msg << "merge: only " << accepted << " inter-session loop(s) validated, need "
        << config.min_inter_loops;
    throw PipelineError(msg.str());
  }

  StageTiming st_pgo{"PGO", 0.0, 0};
  {
    StageStopwatch watch(st_pgo.seconds);
    PoseGraph graph;
    for (uint32_t i = 0; i < central.nodes.size(); ++i) {
      graph.add_node({NodeKind::kCentral, i}, central.nodes[i].pose);
    }
    for (uint32_t k = 0; k < query.nodes.size(); ++k) {
      graph.add_node({NodeKind::kQuery, k}, query.nodes[k].pose);
    }
    graph.add_node({NodeKind::kAnchorCentral, 0}, Pose::identity());
    graph.add_node({NodeKind::kAnchorQuery, 0}, init.transform);

    // Each session pins its own origin: the sessions keep their frames and
    // the anchors, not the trajectories, absorb the inter-session alignment.
    graph.add_prior({NodeKind::kCentral, 0}, central.nodes[0].pose,
                    config.origin_prior_covariance);
    graph.add_prior({NodeKind::kQuery, 0}, query.nodes[0].pose,
                    config.origin_prior_covariance);

    const auto add_chain = [&](NodeKind kind, const Session& session) {
      for (uint32_t i = 0; i + 1 < session.nodes.size(); ++i) {
        graph.add_odometry({kind, i}, {kind, i + 1},
                           between(session.nodes[i].pose, session.nodes[i + 1].pose),
                           config.odometry_covariance);
      }
      for (const IntraLoop& loop : session.intra_loops) {
        graph.add_intra_loop({kind, loop.a}, {kind, loop.b}, loop.z,
                             loop.covariance);
      }
    };
    add_chain(NodeKind::kCentral, central);
    add_chain(NodeKind::kQuery, query);

    for (const LoopConstraint& loop : res.loops) {
      if (!loop.accepted) continue;
      graph.add_inter_loop(loop.central, loop.query, loop.z, loop.covariance);
    }
    graph.set_anchor_covariances(config.anchor_covariance_central,
                                 config.anchor_covariance_query);

    res.report = graph.optimize();
    st_pgo.items = graph.factors().size();

    res.central_poses.reserve(central.nodes.size());
    for (uint32_t i = 0; i < central.nodes.size(); ++i) {
      res.central_poses.push_back(graph.estimate({NodeKind::kCentral, i}));
    }
    res.query_poses.reserve(query.nodes.size());
    for (uint32_t k = 0; k < query.nodes.size(); ++k) {
      res.query_poses.push_back(graph.estimate({NodeKind::kQuery, k}));
    }
    res.anchor_central = graph.estimate({NodeKind::kAnchorCentral, 0});
    res.anchor_query = graph.estimate({NodeKind::kAnchorQuery, 0});
  }

  res.timings = {st_voxel, st_desc, st_optim, st_loops, st_pgo};
  res.total_seconds = now_seconds() - t_start;
  return res;
}

PointCloud build_global_map(const std::vector<GlobalMapInput>& inputs,
                            double voxel) {
  if (inputs.empty()) {
    throw std::invalid_argument("build_global_map: no sessions given");
  }
  PointCloud acc;
  for (const GlobalMapInput& input : inputs) {
    if (input.session == nullptr) {
      throw std::invalid_argument("build_global_map: null session");
    }
    const std::vector<SessionNode>& nodes = input.session->nodes;
    if (input.poses != nullptr && input.poses->size() != nodes.size()) {
      throw std::invalid_argument(
          "build_global_map: pose override length does not match the session");
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Pose& local = input.poses ? (*input.poses)[i] : nodes[i].pose;
      append_cloud(acc, transform_cloud(compose(input.anchor, local),
                                        nodes[i].scan));
    }
  }
  if (acc.empty()) {
    throw PipelineError("build_global_map: every scan is empty");
  }
  return voxel_downsample(acc, voxel);
}

}  // namespace mapmerge
