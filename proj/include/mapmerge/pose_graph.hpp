#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <vector>

#include "mapmerge/pose.hpp"

namespace mapmerge {

// Two sessions and their anchors. A session node's estimate x_{s,i} lives in
// its session frame; an anchor's estimate is the transform from the global
// frame to that session frame, so the node's global pose is anchor * x_{s,i}.
enum class NodeKind : uint8_t {
  kCentral,
  kQuery,
  kAnchorCentral,
  kAnchorQuery,
};

struct NodeId {
  NodeKind kind = NodeKind::kCentral;
  uint32_t index = 0;  // anchors are singletons with index 0

  friend bool operator==(const NodeId& a, const NodeId& b) {
    return a.kind == b.kind && a.index == b.index;
  }
};

enum class FactorKind : uint8_t { kPrior, kOdometry, kIntraLoop, kInterLoop };

// Residual convention for every factor: r = log(prediction^-1 * z), a 6-vector
// on the tangent ([rad, rad, rad, m, m, m]); zero when the prediction equals
// the measurement. Predictions:
//   prior       x
//   odometry / intra-loop   between(x_a, x_b)
//   inter-loop  between(anchor_c * x_cj, anchor_q * x_qk)
struct Factor {
  FactorKind kind = FactorKind::kPrior;
  // prior: [x]; odometry/intra: [a, b]; inter: [x_cj, x_qk, anchor_c,
  // anchor_q] (always exactly four).
  std::vector<NodeId> nodes;
  Pose z;
  Mat6 covariance = Mat6::Identity();
  // Cauchy kernel (scale 1) applied to the whitened squared norm. Set on
  // loop-closure factors so a wrong loop saturates instead of dominating.
  bool robust = false;
};

// Residual of the anchored inter-session loop factor, exposed standalone:
// the measured z is the pose of query node k expressed in central node j's
// frame, and the prediction composes each node with its session anchor.
Tangent inter_loop_residual(const Pose& x_cj, const Pose& x_qk,
                            const Pose& anchor_c, const Pose& anchor_q,
                            const Pose& z);

// One factor linearized at the current estimates: unwhitened residual plus
// the Jacobian of r with respect to each involved variable under the right
// perturbation x -> x * exp(delta).
struct FactorLinearization {
  Tangent residual;
  std::vector<NodeId> variables;
  std::vector<Mat6> jacobians;
};

struct OptimizeOptions {
  int max_iterations = 100;
  double relative_cost_tolerance = 1e-8;
  double initial_lambda = 1e-4;
};

struct OptimizationReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;  // never above initial_cost
  int iterations = 0;
  bool converged = false;
};

// Factor graph over poses with Levenberg-Marquardt optimization. Estimates
// are stored in insertion order; all evaluation is deterministic.
class PoseGraph {
 public:
  // Throws std::invalid_argument for duplicate ids, anchors with a nonzero
  // index, or non-finite estimates.
  void add_node(NodeId id, const Pose& estimate);
  bool has_node(NodeId id) const;
  const Pose& estimate(NodeId id) const;
  void set_estimate(NodeId id, const Pose& value);
  std::vector<NodeId> node_ids() const;
  std::size_t node_count() const;

  // Factor endpoints must exist; covariances must be symmetric positive
  // definite (std::invalid_argument otherwise).
  void add_prior(NodeId id, const Pose& z, const Mat6& covariance);
  void add_odometry(NodeId a, NodeId b, const Pose& z, const Mat6& covariance);
  void add_intra_loop(NodeId a, NodeId b, const Pose& z,
                      const Mat6& covariance);
  // Requires both anchors to be present already.
  void add_inter_loop(uint32_t central_j, uint32_t query_k, const Pose& z,
                      const Mat6& covariance);

  // Installs prior factors pinning each anchor at its current estimate,
  // replacing any previous anchor priors. The central covariance is chosen
  // tight and the query covariance loose, so the query anchor absorbs the
  // inter-session alignment while the central frame stays put.
  void set_anchor_covariances(const Mat6& covariance_central,
                              const Mat6& covariance_query);

  const std::vector<Factor>& factors() const { return factors_; }

  Tangent residual(const Factor& f) const;
  FactorLinearization linearize(const Factor& f) const;

  // Total robustified cost: sum over factors of e or log(1 + e) for robust
  // ones, where e = r^T * covariance^-1 * r.
  double cost() const;

  // Levenberg-Marquardt with sparse block normal equations. Accepts only
  // improving steps; stops when the relative cost drop of an accepted step
  // falls below the tolerance or after max_iterations. Throws PipelineError
  // when the graph is under-constrained (a factor-connected component with
  // no prior, or singular normal equations at the initial estimates).
  OptimizationReport optimize(const OptimizeOptions& options = {});

 private:
  std::size_t index_of(NodeId id) const;  // throws on unknown id

  std::vector<NodeId> ids_;
  std::vector<Pose> estimates_;
  std::vector<Factor> factors_;
  std::map<uint64_t, std::size_t> lookup_;  // packed NodeId -> ids_ index
};

// Line-oriented text form: one node or factor per line,
//   node <kind> <index> qx qy qz qw tx ty tz
//   prior|odom|intra|inter <kind> <i> [<kind> <k>] <pose> <21 covariance>
// with kinds C, Q, AC, AQ, poses as quaternion x y z w + translation x y z,
// and covariance as the row-major upper triangle. '#' starts a comment.
// load_graph throws InputError with the offending line number.
void save_graph(const PoseGraph& graph, std::ostream& out);
PoseGraph load_graph(std::istream& in);

}  // namespace mapmerge
