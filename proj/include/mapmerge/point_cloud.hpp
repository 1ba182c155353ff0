#pragma once

#include <vector>

#include <Eigen/Dense>

#include "mapmerge/pose.hpp"

namespace mapmerge {

// Point set with optional per-point normals. When normals are present the
// vector has one entry per point; entries may be NaN for points whose normal
// could not be estimated (see estimate_normals).
struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> normals;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty(); }
  bool normal_valid(std::size_t i) const {
    return has_normals() && normals[i].allFinite();
  }
};

// Points mapped affinely, normals rotated only.
PointCloud transform_cloud(const Pose& T, const PointCloud& cloud);

// Centroid-per-voxel reduction. Voxel key is floor(coord / voxel) per axis;
// output is sorted by key, so the result does not depend on input order.
// Normals are dropped (they are re-estimated at the new density).
// Throws std::invalid_argument for a non-positive voxel.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

Eigen::Vector3d centroid(const PointCloud& cloud);

}  // namespace mapmerge
