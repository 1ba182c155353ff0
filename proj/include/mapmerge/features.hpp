#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "mapmerge/point_cloud.hpp"

namespace mapmerge {

// 33-bin descriptor: three angular pair features, 11 bins each.
using Descriptor = Eigen::Matrix<double, 33, 1>;

struct Correspondence {
  uint32_t a = 0;  // index into the first (central-side) cloud
  uint32_t b = 0;  // index into the second (query-side) cloud
  bool operator==(const Correspondence&) const = default;
};
using CorrespondenceSet = std::vector<Correspondence>;

// Per-point normals from the smallest-eigenvalue eigenvector of the
// neighborhood covariance within `radius`. Points with fewer than 3
// neighborhood members (self included) get a NaN normal. Signs are oriented
// toward a fixed viewpoint above the cloud centroid, so a cloud and its
// rigidly moved copy orient consistently relative to their own geometry.
PointCloud estimate_normals(const PointCloud& cloud, double radius);

// Two-pass histogram descriptor over the Darboux frame angles of point
// pairs within `radius`: a per-point signature first, then a 1/distance
// weighted blend over neighbors. Each 11-bin block is normalized to sum 100;
// isolated points keep an all-zero descriptor. Requires normals; points with
// invalid normals get a zero descriptor and are skipped as neighbors.
std::vector<Descriptor> compute_fpfh(const PointCloud& cloud, double radius);

struct MatchParams {
  double normal_radius_factor = 3.5;  // times the downsample voxel
  double fpfh_radius_factor = 5.0;
  double tuple_ratio = 0.9;
  int tuple_count = 1000;
  int max_pairs = 3000;
  uint64_t seed = 0;
};

struct MatchResult {
  // Downsampled inputs with normals, invalid-normal points removed. The
  // correspondence indices refer to these clouds.
  PointCloud cloud_c;
  PointCloud cloud_q;
  CorrespondenceSet pairs;
  std::size_t mutual_count = 0;  // pairs before the tuple consistency filter
  // Wall-clock phase breakdown; informational only, never affects results.
  double voxel_seconds = 0.0;
  double descriptor_seconds = 0.0;
  double match_seconds = 0.0;
};

// Downsample both clouds at `voxel`, describe them, then keep mutual nearest
// neighbors in descriptor space that survive a sampled length-ratio tuple
// test. Throws PipelineError when either cloud is empty after downsampling
// and normal filtering.
MatchResult match_features(const PointCloud& cloud_c, const PointCloud& cloud_q,
                           double voxel, const MatchParams& params = {});

}  // namespace mapmerge
