#include "mapmerge/pose_graph.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "mapmerge/errors.hpp"

namespace mapmerge {

namespace {

uint64_t node_key(NodeId id) {
  return (static_cast<uint64_t>(id.kind) << 32) | id.index;
}

bool is_anchor(NodeKind kind) {
  return kind == NodeKind::kAnchorCentral || kind == NodeKind::kAnchorQuery;
}

void validate_covariance(const Mat6& cov, const char* what) {
  const double scale = cov.cwiseAbs().maxCoeff();
  if (!cov.allFinite() ||
      (cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-9 * (1.0 + scale)) {
    throw std::invalid_argument(std::string(what) +
                                ": covariance must be symmetric");
  }
  Eigen::LLT<Mat6> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw std::invalid_argument(std::string(what) +
                                ": covariance must be positive definite");
  }
}

Mat6 sqrt_information(const Mat6& cov) {
  // cov = L L^T; the whitener L^-1 maps residuals to unit covariance.
  return Eigen::LLT<Mat6>(cov).matrixL().solve(Mat6::Identity());
}

Mat6 inverse6(const Mat6& m) { return m.partialPivLu().solve(Mat6::Identity()); }

// Robust kernel on the whitened squared norm e: rho(e) = log(1 + e) (Cauchy,
// scale 1) and its IRLS weight rho'(e) = 1 / (1 + e).
double robust_cost(double e, bool robust) {
  return robust ? std::log1p(e) : e;
}
double robust_weight(double e, bool robust) {
  return robust ? 1.0 / (1.0 + e) : 1.0;
}

const char* kind_token(NodeKind kind) {
  switch (kind) {
    case NodeKind::kCentral: return "C";
    case NodeKind::kQuery: return "Q";
    case NodeKind::kAnchorCentral: return "AC";
    case NodeKind::kAnchorQuery: return "AQ";
  }
  return "?";
}

}  // namespace

Tangent inter_loop_residual(const Pose& x_cj, const Pose& x_qk,
                            const Pose& anchor_c, const Pose& anchor_q,
                            const Pose& z) {
  const Pose pred =
      between(compose(anchor_c, x_cj), compose(anchor_q, x_qk));
  return log_se3(compose(inverse(pred), z));
}

void PoseGraph::add_node(NodeId id, const Pose& estimate) {
  if (is_anchor(id.kind) && id.index != 0) {
    throw std::invalid_argument("pose graph: anchor nodes use index 0");
  }
  if (has_node(id)) {
    throw std::invalid_argument("pose graph: duplicate node");
  }
  if (!is_finite(estimate)) {
    throw std::invalid_argument("pose graph: non-finite node estimate");
  }
  lookup_.emplace(node_key(id), ids_.size());
  ids_.push_back(id);
  estimates_.push_back(estimate);
}

bool PoseGraph::has_node(NodeId id) const {
  return lookup_.count(node_key(id)) != 0;
}

std::size_t PoseGraph::index_of(NodeId id) const {
  const auto it = lookup_.find(node_key(id));
  if (it == lookup_.end()) {
    throw std::invalid_argument("pose graph: unknown node");
  }
  return it->second;
}

const Pose& PoseGraph::estimate(NodeId id) const {
  return estimates_[index_of(id)];
}

void PoseGraph::set_estimate(NodeId id, const Pose& value) {
  if (!is_finite(value)) {
    throw std::invalid_argument("pose graph: non-finite node estimate");
  }
  estimates_[index_of(id)] = value;
}

std::vector<NodeId> PoseGraph::node_ids() const { return ids_; }

std::size_t PoseGraph::node_count() const { return ids_.size(); }

void PoseGraph::add_prior(NodeId id, const Pose& z, const Mat6& covariance) {
  index_of(id);
  validate_covariance(covariance, "prior factor");
  factors_.push_back(Factor{FactorKind::kPrior, {id}, z, covariance, false});
}

void PoseGraph::add_odometry(NodeId a, NodeId b, const Pose& z,
                             const Mat6& covariance) {
  index_of(a);
  index_of(b);
  validate_covariance(covariance, "odometry factor");
  factors_.push_back(
      Factor{FactorKind::kOdometry, {a, b}, z, covariance, false});
}

void PoseGraph::add_intra_loop(NodeId a, NodeId b, const Pose& z,
                               const Mat6& covariance) {
  index_of(a);
  index_of(b);
  validate_covariance(covariance, "intra-session loop factor");
  factors_.push_back(
      Factor{FactorKind::kIntraLoop, {a, b}, z, covariance, true});
}

void PoseGraph::add_inter_loop(uint32_t central_j, uint32_t query_k,
                               const Pose& z, const Mat6& covariance) {
  const NodeId cj{NodeKind::kCentral, central_j};
  const NodeId qk{NodeKind::kQuery, query_k};
  const NodeId ac{NodeKind::kAnchorCentral, 0};
  const NodeId aq{NodeKind::kAnchorQuery, 0};
  index_of(cj);
  index_of(qk);
  if (!has_node(ac) || !has_node(aq)) {
    throw std::invalid_argument(
        "pose graph: add both anchor nodes before inter-session loops");
  }
  validate_covariance(covariance, "inter-session loop factor");
  factors_.push_back(
      Factor{FactorKind::kInterLoop, {cj, qk, ac, aq}, z, covariance, true});
}

void PoseGraph::set_anchor_covariances(const Mat6& covariance_central,
                                       const Mat6& covariance_query) {
  const NodeId ac{NodeKind::kAnchorCentral, 0};
  const NodeId aq{NodeKind::kAnchorQuery, 0};
  index_of(ac);
  index_of(aq);
  validate_covariance(covariance_central, "central anchor prior");
  validate_covariance(covariance_query, "query anchor prior");
  factors_.erase(std::remove_if(factors_.begin(), factors_.end(),
                                [](const Factor& f) {
                                  return f.kind == FactorKind::kPrior &&
                                         is_anchor(f.nodes[0].kind);
                                }),
                 factors_.end());
  factors_.push_back(Factor{FactorKind::kPrior,
                            {ac},
                            estimate(ac),
                            covariance_central,
                            false});
  factors_.push_back(
      Factor{FactorKind::kPrior, {aq}, estimate(aq), covariance_query, false});
}

Tangent PoseGraph::residual(const Factor& f) const {
  switch (f.kind) {
    case FactorKind::kPrior: {
      const Pose& x = estimate(f.nodes[0]);
      return log_se3(compose(inverse(x), f.z));
    }
    case FactorKind::kOdometry:
    case FactorKind::kIntraLoop: {
      const Pose pred = between(estimate(f.nodes[0]), estimate(f.nodes[1]));
      return log_se3(compose(inverse(pred), f.z));
    }
    case FactorKind::kInterLoop:
      return inter_loop_residual(estimate(f.nodes[0]), estimate(f.nodes[1]),
                                 estimate(f.nodes[2]), estimate(f.nodes[3]),
                                 f.z);
  }
  throw std::logic_error("pose graph: unknown factor kind");
}

FactorLinearization PoseGraph::linearize(const Factor& f) const {
  FactorLinearization lin;
  lin.residual = residual(f);
  lin.variables = f.nodes;
  const Mat6 jl_inv = inverse6(left_jacobian_se3(lin.residual));
  const Mat6 jr_inv = inverse6(left_jacobian_se3(-lin.residual));
  switch (f.kind) {
    case FactorKind::kPrior:
      lin.jacobians = {-jl_inv};
      break;
    case FactorKind::kOdometry:
    case FactorKind::kIntraLoop:
      lin.jacobians = {jr_inv * adjoint(inverse(f.z)), -jl_inv};
      break;
    case FactorKind::kInterLoop: {
      const Pose& x_cj = estimate(f.nodes[0]);
      const Pose& x_qk = estimate(f.nodes[1]);
      lin.jacobians = {jr_inv * adjoint(inverse(f.z)),
                       -jl_inv,
                       jr_inv * adjoint(inverse(compose(x_cj, f.z))),
                       -jl_inv * adjoint(inverse(x_qk))};
      break;
    }
  }
  return lin;
}

double PoseGraph::cost() const {
  double total = 0.0;
  for (const Factor& f : factors_) {
    const Tangent rw = sqrt_information(f.covariance) * residual(f);
    total += robust_cost(rw.squaredNorm(), f.robust);
  }
  return total;
}

OptimizationReport PoseGraph::optimize(const OptimizeOptions& options) {
  if (ids_.empty() || factors_.empty()) {
    throw PipelineError("pose graph: nothing to optimize");
  }

  // Structural gauge check: every factor-connected component needs at least
  // one prior, or its global placement is free and the normal equations are
  // singular before any numerics happen.
  {
    std::vector<std::size_t> parent(ids_.size());
    for (std::size_t i = 0; i < parent.size(); ++i) parent[i] = i;
    auto find = [&](std::size_t i) {
      while (parent[i] != i) i = parent[i] = parent[parent[i]];
      return i;
    };
    for (const Factor& f : factors_) {
      const std::size_t root = find(index_of(f.nodes[0]));
      for (std::size_t k = 1; k < f.nodes.size(); ++k) {
        parent[find(index_of(f.nodes[k]))] = root;
      }
    }
    std::vector<bool> has_prior(ids_.size(), false);
    for (const Factor& f : factors_) {
      if (f.kind == FactorKind::kPrior) has_prior[find(index_of(f.nodes[0]))] = true;
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!has_prior[find(i)]) {
        throw PipelineError(
            "pose graph is under-constrained: a connected component has no "
            "prior");
      }
    }
  }

  const std::size_t n = ids_.size();
  const Eigen::Index dim = static_cast<Eigen::Index>(6 * n);

  // Per-factor constants.
  std::vector<Mat6> whiteners;
  whiteners.reserve(factors_.size());
  std::vector<std::vector<std::size_t>> var_index(factors_.size());
  for (std::size_t fi = 0; fi < factors_.size(); ++fi) {
    whiteners.push_back(sqrt_information(factors_[fi].covariance));
    for (const NodeId& id : factors_[fi].nodes) {
      var_index[fi].push_back(index_of(id));
    }
  }

  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::VectorXd gradient(dim);
  const auto assemble = [&]() {
    triplets.clear();
    gradient.setZero();
    for (std::size_t fi = 0; fi < factors_.size(); ++fi) {
      const Factor& f = factors_[fi];
      const FactorLinearization lin = linearize(f);
      const Tangent rw = whiteners[fi] * lin.residual;
      const double w = robust_weight(rw.squaredNorm(), f.robust);
      std::vector<Mat6> jw(lin.jacobians.size());
      for (std::size_t a = 0; a < jw.size(); ++a) {
        jw[a] = whiteners[fi] * lin.jacobians[a];
      }
      for (std::size_t a = 0; a < jw.size(); ++a) {
        const Eigen::Index row0 = static_cast<Eigen::Index>(6 * var_index[fi][a]);
        gradient.segment<6>(row0) += w * jw[a].transpose() * rw;
        for (std::size_t b = 0; b < jw.size(); ++b) {
          const Mat6 block = w * jw[a].transpose() * jw[b];
          const Eigen::Index col0 =
              static_cast<Eigen::Index>(6 * var_index[fi][b]);
          for (int r = 0; r < 6; ++r) {
            for (int c = 0; c < 6; ++c) {
              triplets.emplace_back(row0 + r, col0 + c, block(r, c));
            }
          }
        }
      }
    }
  };

  OptimizationReport report;
  double current_cost = cost();
  report.initial_cost = current_cost;
  double lambda = options.initial_lambda;

  Eigen::SparseMatrix<double> hessian(dim, dim);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver;

  for (int iter = 1; iter <= options.max_iterations; ++iter) {
    assemble();
    hessian.setFromTriplets(triplets.begin(), triplets.end());

    if (iter == 1) {
      // Rank backstop for gauge freedoms the structural check cannot see
      // (e.g. anchors tied only through inter-session loops, no anchor
      // priors): the undamped system then has an exact null space.
      solver.compute(hessian);
      if (solver.info() != Eigen::Success) {
        throw PipelineError(
            "pose graph is under-constrained: singular normal equations");
      }
      const Eigen::VectorXd d = solver.vectorD().cwiseAbs();
      if (d.minCoeff() < 1e-13 * d.maxCoeff()) {
        throw PipelineError(
            "pose graph is under-constrained: singular normal equations");
      }
    }

    const Eigen::VectorXd diagonal = hessian.diagonal();
    bool accepted = false;
    double drop = 0.0;
    while (lambda <= 1e10) {
      Eigen::SparseMatrix<double> damped = hessian;
      for (Eigen::Index i = 0; i < dim; ++i) {
        damped.coeffRef(i, i) =
            diagonal[i] + lambda * std::max(diagonal[i], 1e-12);
      }
      solver.compute(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd delta = solver.solve(-gradient);
      if (solver.info() != Eigen::Success || !delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const std::vector<Pose> backup = estimates_;
      for (std::size_t i = 0; i < n; ++i) {
        estimates_[i] = retract(
            estimates_[i], delta.segment<6>(static_cast<Eigen::Index>(6 * i)));
      }
      const double candidate_cost = cost();
      if (std::isfinite(candidate_cost) && candidate_cost <= current_cost) {
        drop = current_cost - candidate_cost;
        current_cost = candidate_cost;
        lambda = std::max(lambda * 0.25, 1e-12);
        accepted = true;
        break;
      }
      estimates_ = backup;
      lambda *= 10.0;
    }
    report.iterations = iter;
    if (!accepted) {
      // No improving step at any damping: only happens at (numerical)
      // stationarity; report convergence if the gradient agrees.
      report.converged = gradient.lpNorm<Eigen::Infinity>() < 1e-9;
      break;
    }
    if (drop <= options.relative_cost_tolerance *
                    std::max(current_cost + drop, 1e-300)) {
      report.converged = true;
      break;
    }
  }
  report.final_cost = current_cost;
  return report;
}

namespace {

NodeKind parse_kind(const std::string& token, std::size_t line_no) {
  if (token == "C") return NodeKind::kCentral;
  if (token == "Q") return NodeKind::kQuery;
  if (token == "AC") return NodeKind::kAnchorCentral;
  if (token == "AQ") return NodeKind::kAnchorQuery;
  throw InputError("graph line " + std::to_string(line_no) +
                   ": unknown node kind '" + token + "'");
}

Pose read_pose_tokens(std::istringstream& in, std::size_t line_no) {
  double qx, qy, qz, qw, tx, ty, tz;
  if (!(in >> qx >> qy >> qz >> qw >> tx >> ty >> tz)) {
    throw InputError("graph line " + std::to_string(line_no) +
                     ": expected quaternion x y z w and translation x y z");
  }
  Eigen::Quaterniond q(qw, qx, qy, qz);
  if (std::abs(q.norm() - 1.0) > 1e-3) {
    throw InputError("graph line " + std::to_string(line_no) +
                     ": quaternion norm deviates from 1 beyond 1e-3");
  }
  q.normalize();
  Pose pose;
  pose.R = q.toRotationMatrix();
  pose.t = Eigen::Vector3d(tx, ty, tz);
  return pose;
}

Mat6 read_covariance_tokens(std::istringstream& in, std::size_t line_no) {
  Mat6 cov;
  for (int r = 0; r < 6; ++r) {
    for (int c = r; c < 6; ++c) {
      double v;
      if (!(in >> v)) {
        throw InputError("graph line " + std::to_string(line_no) +
                         ": expected 21 upper-triangular covariance entries");
      }
      cov(r, c) = v;
      cov(c, r) = v;
    }
  }
  return cov;
}

void write_pose(std::ostream& out, const Pose& pose) {
  const Eigen::Quaterniond q(pose.R);
  out << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' ' << q.w() << ' '
      << pose.t.x() << ' ' << pose.t.y() << ' ' << pose.t.z();
}

void write_covariance(std::ostream& out, const Mat6& cov) {
  for (int r = 0; r < 6; ++r) {
    for (int c = r; c < 6; ++c) out << ' ' << cov(r, c);
  }
}

}  // namespace

void save_graph(const PoseGraph& graph, std::ostream& out) {
  out << std::setprecision(17);
  for (const NodeId& id : graph.node_ids()) {
    out << "node " << kind_token(id.kind) << ' ' << id.index;
    write_pose(out, graph.estimate(id));
    out << '\n';
  }
  for (const Factor& f : graph.factors()) {
    switch (f.kind) {
      case FactorKind::kPrior:
        out << "prior " << kind_token(f.nodes[0].kind) << ' '
            << f.nodes[0].index;
        break;
      case FactorKind::kOdometry:
      case FactorKind::kIntraLoop:
        out << (f.kind == FactorKind::kOdometry ? "odom " : "intra ")
            << kind_token(f.nodes[0].kind) << ' ' << f.nodes[0].index << ' '
            << kind_token(f.nodes[1].kind) << ' ' << f.nodes[1].index;
        break;
      case FactorKind::kInterLoop:
        // Anchors are implicit: an inter-session loop always references both.
        out << "inter " << kind_token(f.nodes[0].kind) << ' '
            << f.nodes[0].index << ' ' << kind_token(f.nodes[1].kind) << ' '
            << f.nodes[1].index;
        break;
    }
    write_pose(out, f.z);
    write_covariance(out, f.covariance);
    out << '\n';
  }
}

PoseGraph load_graph(std::istream& in) {
  PoseGraph graph;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream tokens(line);
    std::string tag;
    if (!(tokens >> tag)) continue;  // blank or comment-only line
    try {
      if (tag == "node") {
        std::string kind;
        uint32_t index;
        if (!(tokens >> kind >> index)) {
          throw InputError("graph line " + std::to_string(line_no) +
                           ": expected node kind and index");
        }
        graph.add_node(NodeId{parse_kind(kind, line_no), index},
                       read_pose_tokens(tokens, line_no));
      } else if (tag == "prior") {
        std::string kind;
        uint32_t index;
        if (!(tokens >> kind >> index)) {
          throw InputError("graph line " + std::to_string(line_no) +
                           ": expected node kind and index");
        }
        const Pose z = read_pose_tokens(tokens, line_no);
        graph.add_prior(NodeId{parse_kind(kind, line_no), index}, z,
                        read_covariance_tokens(tokens, line_no));
      } else if (tag == "odom" || tag == "intra" || tag == "inter") {
        std::string kind_a, kind_b;
        uint32_t index_a, index_b;
        if (!(tokens >> kind_a >> index_a >> kind_b >> index_b)) {
          throw InputError("graph line " + std::to_string(line_no) +
                           ": expected two node references");
        }
        const NodeId a{parse_kind(kind_a, line_no), index_a};
        const NodeId b{parse_kind(kind_b, line_no), index_b};
        const Pose z = read_pose_tokens(tokens, line_no);
        const Mat6 cov = read_covariance_tokens(tokens, line_no);
        if (tag == "odom") {
          graph.add_odometry(a, b, z, cov);
        } else if (tag == "intra") {
          graph.add_intra_loop(a, b, z, cov);
        } else {
          if (a.kind != NodeKind::kCentral || b.kind != NodeKind::kQuery) {
            throw InputError("graph line " + std::to_string(line_no) +
                             ": inter loops connect a C node to a Q node");
          }
          graph.add_inter_loop(a.index, b.index, z, cov);
        }
      } else {
        throw InputError("graph line " + std::to_string(line_no) +
                         ": unknown record '" + tag + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw InputError("graph line " + std::to_string(line_no) + ": " +
                       e.what());
    }
    std::string extra;
    if (tokens >> extra) {
      throw InputError("graph line " + std::to_string(line_no) +
                       ": unexpected trailing token '" + extra + "'");
    }
  }
  return graph;
}

}  // namespace mapmerge
