#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <Eigen/SVD>

#include "mapmerge/errors.hpp"
#include "mapmerge/registration.hpp"

namespace mapmerge {

namespace {

// Weighted closed-form rotation fit for beta ~= R * alpha.
Eigen::Matrix3d fit_rotation(const TimPairSet& tims,
                             const std::vector<double>& weights,
                             RotationMode mode) {
  if (mode == RotationMode::kYawOnly) {
    double s_sin = 0.0, s_cos = 0.0, mass = 0.0;
    for (std::size_t k = 0; k < tims.size(); ++k) {
      const double w = weights[k];
      if (w <= 0.0) continue;
      const Eigen::Vector3d& a = tims[k].alpha;
      const Eigen::Vector3d& b = tims[k].beta;
      s_sin += w * (a.x() * b.y() - a.y() * b.x());
      s_cos += w * (a.x() * b.x() + a.y() * b.y());
      mass += w * (a.x() * a.x() + a.y() * a.y());
    }
    if (std::hypot(s_sin, s_cos) <= 1e-12 * (1.0 + mass)) {
      throw PipelineError(
          "rotation fit is degenerate: no usable horizontal extent");
    }
    return yaw_rotation(std::atan2(s_sin, s_cos));
  }

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (std::size_t k = 0; k < tims.size(); ++k) {
    if (weights[k] <= 0.0) continue;
    h += weights[k] * tims[k].alpha * tims[k].beta.transpose();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sing = svd.singularValues();
  // Rank < 2 means the weighted pairs are (near-)collinear and the rotation
  // about that axis is unobservable.
  if (sing(1) <= 1e-9 * std::max(sing(0), 1e-300)) {
    throw PipelineError("rotation fit is degenerate: collinear geometry");
  }
  Eigen::Matrix3d r = svd.matrixV() * svd.matrixU().transpose();
  if (r.determinant() < 0.0) {
    Eigen::Matrix3d v = svd.matrixV();
    v.col(2) *= -1.0;
    r = v * svd.matrixU().transpose();
  }
  return r;
}

std::vector<double> squared_residuals(const TimPairSet& tims,
                                      const Eigen::Matrix3d& r) {
  std::vector<double> out(tims.size());
  for (std::size_t k = 0; k < tims.size(); ++k) {
    out[k] = (tims[k].beta - r * tims[k].alpha).squaredNorm();
  }
  return out;
}

double truncated_cost(const TimPairSet& tims, const Eigen::Matrix3d& r,
                      double c2) {
  double cost = 0.0;
  for (const TimPair& tim : tims) {
    cost += std::min((tim.beta - r * tim.alpha).squaredNorm(), c2);
  }
  return cost;
}

// Global 1-DoF initializer for the yaw mode: every pair difference with
// usable planar extent votes for the yaw aligning its alpha to its beta,
// with an angular slack derived from the truncation threshold. An interval
// sweep on the circle finds the angle covered by the most votes; the
// circular mean of the covering votes seeds the local iteration. The
// graduated surrogate is a local scheme, and with heavy outlier fractions
// the plain least-squares start can sit in a spurious basin.
bool yaw_consensus_vote(const TimPairSet& tims, double c_bar, double* theta) {
  std::vector<std::pair<double, double>> votes;  // (angle, slack)
  int whole_circle = 0;
  for (const TimPair& tim : tims) {
    const double na = std::hypot(tim.alpha.x(), tim.alpha.y());
    const double nb = std::hypot(tim.beta.x(), tim.beta.y());
    const double n_min = std::min(na, nb);
    if (n_min <= 1e-9) continue;
    const double angle =
        std::atan2(tim.alpha.x() * tim.beta.y() - tim.alpha.y() * tim.beta.x(),
                   tim.alpha.x() * tim.beta.x() + tim.alpha.y() * tim.beta.y());
    // Rotating off the vote by d moves the planar residual by about
    // 2 * n_min * sin(d / 2); keep it within the truncation threshold.
    const double ratio = c_bar / (2.0 * n_min);
    if (ratio >= 1.0) {
      ++whole_circle;
      continue;
    }
    votes.emplace_back(angle, 2.0 * std::asin(ratio));
  }
  if (votes.empty()) return false;

  // Closed-interval sweep with wrap-around: replicate intervals shifted by
  // 2*pi and sweep one period.
  std::vector<std::tuple<double, int, uint32_t>> events;
  for (uint32_t k = 0; k < votes.size(); ++k) {
    const auto [angle, slack] = votes[k];
    for (const double shift : {-2.0 * M_PI, 0.0, 2.0 * M_PI}) {
      events.emplace_back(angle + shift - slack, 0, k);
      events.emplace_back(angle + shift + slack, 1, k);
    }
  }
  std::sort(events.begin(), events.end());
  std::vector<int> depth(votes.size(), 0);
  int active = 0, best = -1;
  std::size_t best_event = 0;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto [pos, type, k] = events[e];
    if (type == 0) {
      if (depth[k]++ == 0) ++active;
      if (pos >= -M_PI && pos < M_PI && active > best) {
        best = active;
        best_event = e;
      }
    } else {
      if (--depth[k] == 0) --active;
    }
  }
  if (best < 0) return false;
  std::fill(depth.begin(), depth.end(), 0);
  for (std::size_t e = 0; e <= best_event; ++e) {
    const auto [pos, type, k] = events[e];
    depth[k] += type == 0 ? 1 : -1;
  }
  double s = 0.0, c = 0.0;
  for (std::size_t k = 0; k < votes.size(); ++k) {
    if (depth[k] > 0) {
      s += std::sin(votes[k].first);
      c += std::cos(votes[k].first);
    }
  }
  (void)whole_circle;  // always-covering votes carry no angle preference
  if (s == 0.0 && c == 0.0) return false;
  *theta = std::atan2(s, c);
  return true;
}

}  // namespace

TimPairSet build_tims(const PointCloud& cloud_c, const PointCloud& cloud_q,
                      const CorrespondenceSet& pairs) {
  if (pairs.size() < 2) {
    throw std::invalid_argument("build_tims needs at least 2 correspondences");
  }
  TimPairSet tims;
  tims.reserve(pairs.size());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const std::size_t next = (k + 1) % pairs.size();
    tims.push_back(
        {cloud_c.points[pairs[k].a] - cloud_c.points[pairs[next].a],
         cloud_q.points[pairs[k].b] - cloud_q.points[pairs[next].b]});
  }
  return tims;
}

GncRotationResult gnc_rotation(const TimPairSet& tims, double c_bar,
                               RotationMode mode, double mu_growth) {
  const std::size_t min_tims = mode == RotationMode::kFullSo3 ? 3 : 2;
  if (tims.size() < min_tims) {
    throw PipelineError("rotation fit has fewer pair differences than the "
                        "rotation degrees of freedom require");
  }
  const double c2 = c_bar * c_bar;
  GncRotationResult result;
  result.weights.assign(tims.size(), 1.0);
  result.R = fit_rotation(tims, result.weights, mode);
  if (mode == RotationMode::kYawOnly) {
    double theta = 0.0;
    if (yaw_consensus_vote(tims, c_bar, &theta)) {
      const Eigen::Matrix3d voted = yaw_rotation(theta);
      if (truncated_cost(tims, voted, c2) < truncated_cost(tims, result.R, c2)) {
        result.R = voted;
      }
    }
  }

  std::vector<double> r2 = squared_residuals(tims, result.R);
  const double r2_max = *std::max_element(r2.begin(), r2.end());

  // Surrogate starts near-convex; when even the worst residual is inside the
  // truncation bound the all-ones fit already is the TLS optimum.
  if (2.0 * r2_max <= c2) {
    result.converged = true;
    return result;
  }
  double mu = c2 / (2.0 * r2_max - c2);

  std::vector<double> weights(tims.size(), 1.0);
  for (int iter = 1; iter <= 100; ++iter) {
    result.iterations = iter;
    const double upper = (mu + 1.0) / mu * c2;
    const double lower = mu / (mu + 1.0) * c2;
    double mass = 0.0;
    double change = 0.0;
    for (std::size_t k = 0; k < tims.size(); ++k) {
      double w;
      if (r2[k] >= upper) {
        w = 0.0;
      } else if (r2[k] <= lower) {
        w = 1.0;
      } else {
        w = std::sqrt(c2 * mu * (mu + 1.0) / r2[k]) - mu;
      }
      change = std::max(change, std::abs(w - weights[k]));
      weights[k] = w;
      mass += w;
    }
    if (mass <= 0.0) {
      throw PipelineError("rotation fit rejected every pair difference");
    }
    result.weights = weights;
    result.R = fit_rotation(tims, weights, mode);
    r2 = squared_residuals(tims, result.R);
    if (change < 1e-6) {
      result.converged = true;
      break;
    }
    mu *= mu_growth;
  }
  return result;
}

Eigen::Vector3d cote_translation(const PointCloud& cloud_c,
                                 const PointCloud& cloud_q,
                                 const CorrespondenceSet& pairs,
                                 const Eigen::Matrix3d& R, double sigma,
                                 double c_bar) {
  if (pairs.empty()) {
    throw std::invalid_argument("cote_translation needs correspondences");
  }
  const double half = sigma * c_bar;
  const std::size_t n = pairs.size();
  Eigen::Vector3d estimate = Eigen::Vector3d::Zero();
  std::vector<double> v(n);
  // Event type 0 = interval start, 1 = interval end; starts sort first at a
  // shared position so touching closed intervals count as overlapping.
  std::vector<std::tuple<double, int, uint32_t>> events;
  for (int axis = 0; axis < 3; ++axis) {
    for (std::size_t k = 0; k < n; ++k) {
      v[k] = (cloud_q.points[pairs[k].b] - R * cloud_c.points[pairs[k].a])(axis);
    }
    events.clear();
    events.reserve(2 * n);
    for (std::size_t k = 0; k < n; ++k) {
      events.emplace_back(v[k] - half, 0, static_cast<uint32_t>(k));
      events.emplace_back(v[k] + half, 1, static_cast<uint32_t>(k));
    }
    std::sort(events.begin(), events.end());
    // Leftmost maximum-consensus point; membership comes from replaying the
    // events up to the winning one, so closed-interval semantics hold exactly
    // on the computed endpoint values.
    int active = 0, best = 0;
    std::size_t best_event = 0;
    for (std::size_t e = 0; e < events.size(); ++e) {
      if (std::get<1>(events[e]) == 0) {
        if (++active > best) {
          best = active;
          best_event = e;
        }
      } else {
        --active;
      }
    }
    std::vector<bool> member(n, false);
    for (std::size_t e = 0; e <= best_event; ++e) {
      member[std::get<2>(events[e])] = std::get<1>(events[e]) == 0;
    }
    double sum = 0.0;
    int count = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (member[k]) {
        sum += v[k];
        ++count;
      }
    }
    estimate(axis) = sum / count;
  }
  return estimate;
}

RegistrationResult register_correspondences(const PointCloud& cloud_c,
                                            const PointCloud& cloud_q,
                                            const CorrespondenceSet& pairs,
                                            const RegistrationParams& params) {
  if (pairs.size() < 2) {
    throw PipelineError("registration needs at least 2 correspondences");
  }
  const MaxCliqueResult clique = max_clique_prune(
      pairs, cloud_c, cloud_q, params.noise_bound, params.clique);
  if (clique.pruned.size() < 2) {
    throw PipelineError("consistency pruning left fewer than 2 pairs");
  }

  const double c_bar_meters = 2.0 * params.noise_bound * params.c_bar;
  const GncRotationResult rotation =
      gnc_rotation(clique.tims, c_bar_meters, params.mode, params.mu_growth);
  const Eigen::Vector3d t = cote_translation(
      cloud_c, cloud_q, clique.pruned, rotation.R, params.noise_bound,
      params.c_bar);

  RegistrationResult result;
  result.transform = Pose{rotation.R, t};
  result.converged = rotation.converged;
  result.iterations = rotation.iterations;
  result.clique_size = clique.clique_size;
  result.clique_exact = clique.exact;
  const double inlier_tol = 2.0 * params.noise_bound * params.c_bar;
  for (const Correspondence& pair : pairs) {
    const double residual =
        (cloud_q.points[pair.b] - result.transform.apply(cloud_c.points[pair.a]))
            .norm();
    if (residual <= inlier_tol) result.inlier_pairs.push_back(pair);
  }
  return result;
}

RegistrationResult register_clouds(const PointCloud& cloud_c,
                                   const PointCloud& cloud_q,
                                   const RegistrationParams& params) {
  const auto tick = [] {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };
  const MatchResult match =
      match_features(cloud_c, cloud_q, params.voxel, params.match);
  const double t0 = tick();
  RegistrationResult result = register_correspondences(
      match.cloud_c, match.cloud_q, match.pairs, params);
  result.solve_seconds = tick() - t0;
  result.voxel_seconds = match.voxel_seconds;
  // Descriptor extraction plus descriptor-space matching; the latter is part
  // of producing correspondences, not of the pose solve.
  result.descriptor_seconds = match.descriptor_seconds + match.match_seconds;
  return result;
}

}  // namespace mapmerge
