#include "mapmerge/features.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mapmerge/errors.hpp"
#include "mapmerge/kd_tree.hpp"
#include "mapmerge/random.hpp"
#include "mapmerge/threading.hpp"

namespace mapmerge {

PointCloud estimate_normals(const PointCloud& cloud, double radius) {
  if (!(radius > 0.0)) {
    throw std::invalid_argument("estimate_normals: radius must be positive");
  }
  PointCloud out;
  out.points = cloud.points;
  out.normals.assign(cloud.size(),
                     Eigen::Vector3d::Constant(
                         std::numeric_limits<double>::quiet_NaN()));
  if (cloud.empty()) return out;

  const KdTree3 tree(cloud.points);
  const Eigen::Vector3d viewpoint =
      centroid(cloud) + Eigen::Vector3d(0.0, 0.0, 1e6);

  parallel_for(0, cloud.size(), [&](std::size_t i) {
    const auto nbrs = tree.radius(cloud.points[i], radius);
    if (nbrs.size() < 3) return;  // leave the NaN marker
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const uint32_t j : nbrs) mean += cloud.points[j];
    mean /= static_cast<double>(nbrs.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const uint32_t j : nbrs) {
      const Eigen::Vector3d d = cloud.points[j] - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    Eigen::Vector3d n = eig.eigenvectors().col(0);  // smallest eigenvalue
    if (n.dot(viewpoint - cloud.points[i]) < 0.0) n = -n;
    out.normals[i] = n.normalized();
  });
  return out;
}

namespace {

// Darboux-frame angles of an oriented point pair. Returns false for
// degenerate geometry (coincident points or a normal parallel to the line).
bool pair_features(const Eigen::Vector3d& pi, const Eigen::Vector3d& ni,
                   const Eigen::Vector3d& pj, const Eigen::Vector3d& nj,
                   double& f1, double& f2, double& f3) {
  Eigen::Vector3d dp = pj - pi;
  const double dist = dp.norm();
  if (dist < 1e-12) return false;
  dp /= dist;

  const double a1 = ni.dot(dp), a2 = nj.dot(dp);
  // The point whose normal is closer to the connecting line acts as source,
  // making the frame independent of argument order. Exact angle ties are
  // frequent on symmetric geometry (points sharing a normal), where a strict
  // comparison would flip with floating-point noise under rotation; ties are
  // resolved toward the non-negative third feature instead.
  const double m1 = std::abs(a1), m2 = std::abs(a2);
  constexpr double kTieTol = 1e-7;
  bool swapped;
  if (m2 > m1 + kTieTol) {
    swapped = true;
  } else if (m1 > m2 + kTieTol) {
    swapped = false;
  } else {
    swapped = -a2 > a1;
  }
  const Eigen::Vector3d& ns = swapped ? nj : ni;
  const Eigen::Vector3d& nt = swapped ? ni : nj;
  if (swapped) dp = -dp;
  f3 = swapped ? -a2 : a1;

  Eigen::Vector3d v = dp.cross(ns);
  const double v_norm = v.norm();
  if (v_norm < 1e-7) return false;
  v /= v_norm;
  const Eigen::Vector3d w = ns.cross(v);
  f1 = v.dot(nt);
  // Antiparallel normals put the twist angle exactly at the +-pi wrap; pin
  // it to +pi so rotation noise cannot flip the outermost bins.
  double y = w.dot(nt);
  const double x = ns.dot(nt);
  if (std::abs(y) < 1e-7 && x < 0.0) y = 0.0;
  f2 = std::atan2(y, x);
  return true;
}

inline int bin11(double value, double lo, double hi) {
  const int b = static_cast<int>(std::floor(11.0 * (value - lo) / (hi - lo)));
  return std::clamp(b, 0, 10);
}

void normalize_blocks(Descriptor& d) {
  for (int block = 0; block < 3; ++block) {
    const double sum = d.segment<11>(11 * block).sum();
    if (sum > 0.0) d.segment<11>(11 * block) *= 100.0 / sum;
  }
}

}  // namespace

std::vector<Descriptor> compute_fpfh(const PointCloud& cloud, double radius) {
  if (!cloud.has_normals()) {
    throw std::invalid_argument("compute_fpfh: input cloud has no normals");
  }
  if (!(radius > 0.0)) {
    throw std::invalid_argument("compute_fpfh: radius must be positive");
  }
  const std::size_t n = cloud.size();
  std::vector<Descriptor> spfh(n, Descriptor::Zero());
  std::vector<Descriptor> fpfh(n, Descriptor::Zero());
  if (n == 0) return fpfh;

  const KdTree3 tree(cloud.points);
  std::vector<std::vector<uint32_t>> neighborhoods(n);

  parallel_for(0, n, [&](std::size_t i) {
    if (!cloud.normal_valid(i)) return;
    std::vector<uint32_t> kept;
    for (const uint32_t j : tree.radius(cloud.points[i], radius)) {
      if (j != i && cloud.normal_valid(j)) kept.push_back(j);
    }
    neighborhoods[i] = std::move(kept);

    const auto& nbrs = neighborhoods[i];
    if (nbrs.empty()) return;
    Descriptor& hist = spfh[i];
    std::size_t counted = 0;
    for (const uint32_t j : nbrs) {
      double f1, f2, f3;
      if (!pair_features(cloud.points[i], cloud.normals[i], cloud.points[j],
                         cloud.normals[j], f1, f2, f3)) {
        continue;
      }
      hist[bin11(f1, -1.0, 1.0)] += 1.0;
      hist[11 + bin11(f2, -M_PI, M_PI)] += 1.0;
      hist[22 + bin11(f3, -1.0, 1.0)] += 1.0;
      ++counted;
    }
    if (counted > 0) hist *= 100.0 / static_cast<double>(counted);
  });

  parallel_for(0, n, [&](std::size_t i) {
    const auto& nbrs = neighborhoods[i];
    Descriptor acc = spfh[i];
    if (!nbrs.empty()) {
      Descriptor blend = Descriptor::Zero();
      std::size_t used = 0;
      for (const uint32_t j : nbrs) {
        const double dist = (cloud.points[i] - cloud.points[j]).norm();
        if (dist < 1e-12) continue;
        blend += spfh[j] / dist;
        ++used;
      }
      if (used > 0) acc += blend / static_cast<double>(used);
    }
    normalize_blocks(acc);
    fpfh[i] = acc;
  });
  return fpfh;
}

namespace {

PointCloud drop_invalid_normals(const PointCloud& cloud) {
  PointCloud out;
  out.points.reserve(cloud.size());
  out.normals.reserve(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (cloud.normal_valid(i)) {
      out.points.push_back(cloud.points[i]);
      out.normals.push_back(cloud.normals[i]);
    }
  }
  return out;
}

std::vector<uint32_t> nearest_descriptor(const KdTree<33>& tree,
                                         const std::vector<Descriptor>& queries) {
  std::vector<uint32_t> nn(queries.size());
  parallel_for(0, queries.size(), [&](std::size_t i) {
    nn[i] = tree.nearest(queries[i]).index;
  });
  return nn;
}

}  // namespace

MatchResult match_features(const PointCloud& cloud_c, const PointCloud& cloud_q,
                           double voxel, const MatchParams& params) {
  const auto tick = [] {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
  };

  MatchResult result;
  double t0 = tick();
  PointCloud down_c = voxel_downsample(cloud_c, voxel);
  PointCloud down_q = voxel_downsample(cloud_q, voxel);
  result.voxel_seconds = tick() - t0;

  t0 = tick();
  result.cloud_c = drop_invalid_normals(
      estimate_normals(std::move(down_c), params.normal_radius_factor * voxel));
  result.cloud_q = drop_invalid_normals(
      estimate_normals(std::move(down_q), params.normal_radius_factor * voxel));
  if (result.cloud_c.empty() || result.cloud_q.empty()) {
    throw PipelineError(
        "match_features: a cloud is empty after downsampling and normal "
        "filtering");
  }

  const double fpfh_radius = params.fpfh_radius_factor * voxel;
  const auto desc_c = compute_fpfh(result.cloud_c, fpfh_radius);
  const auto desc_q = compute_fpfh(result.cloud_q, fpfh_radius);
  result.descriptor_seconds = tick() - t0;

  t0 = tick();
  const KdTree<33> tree_c(desc_c);
  const KdTree<33> tree_q(desc_q);
  const auto c_to_q = nearest_descriptor(tree_q, desc_c);
  const auto q_to_c = nearest_descriptor(tree_c, desc_q);

  CorrespondenceSet mutual;
  for (uint32_t i = 0; i < c_to_q.size(); ++i) {
    const uint32_t j = c_to_q[i];
    if (q_to_c[j] == i) mutual.push_back({i, j});
  }
  result.mutual_count = mutual.size();

  if (mutual.size() < 3) {
    result.pairs = std::move(mutual);
    result.match_seconds = tick() - t0;
    return result;
  }

  // Length-ratio consistency over sampled triples: a rigid motion preserves
  // pairwise distances, so all three cross ratios must stay near 1.
  std::vector<char> keep(mutual.size(), 0);
  Rng rng(params.seed);
  const double lo = params.tuple_ratio, hi = 1.0 / params.tuple_ratio;
  for (int t = 0; t < params.tuple_count; ++t) {
    const std::size_t i0 = rng.index(mutual.size());
    const std::size_t i1 = rng.index(mutual.size());
    const std::size_t i2 = rng.index(mutual.size());
    if (i0 == i1 || i1 == i2 || i0 == i2) continue;
    bool ok = true;
    const std::size_t tri[3] = {i0, i1, i2};
    for (int e = 0; e < 3 && ok; ++e) {
      const auto& u = mutual[tri[e]];
      const auto& v = mutual[tri[(e + 1) % 3]];
      const double da =
          (result.cloud_c.points[u.a] - result.cloud_c.points[v.a]).norm();
      const double db =
          (result.cloud_q.points[u.b] - result.cloud_q.points[v.b]).norm();
      if (da < 1e-9 || db < 1e-9) {
        ok = false;
      } else {
        const double r = da / db;
        ok = r >= lo && r <= hi;
      }
    }
    if (ok) {
      keep[i0] = keep[i1] = keep[i2] = 1;
    }
  }

  for (std::size_t i = 0;
       i < mutual.size() &&
       result.pairs.size() < static_cast<std::size_t>(params.max_pairs);
       ++i) {
    if (keep[i]) result.pairs.push_back(mutual[i]);
  }
  result.match_seconds = tick() - t0;
  return result;
}

}  // namespace mapmerge
