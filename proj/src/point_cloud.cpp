#include "mapmerge/point_cloud.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace mapmerge {

PointCloud transform_cloud(const Pose& T, const PointCloud& cloud) {
  PointCloud out;
  out.points.resize(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    out.points[i] = T.apply(cloud.points[i]);
  }
  if (cloud.has_normals()) {
    out.normals.resize(cloud.normals.size());
    for (std::size_t i = 0; i < cloud.normals.size(); ++i) {
      out.normals[i] = T.R * cloud.normals[i];
    }
  }
  return out;
}

namespace {

struct VoxelEntry {
  std::array<int64_t, 3> key;
  uint32_t index;
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) {
    throw std::invalid_argument("voxel_downsample: voxel size must be positive");
  }
  PointCloud out;
  if (cloud.empty()) return out;

  const double inv = 1.0 / voxel;
  std::vector<VoxelEntry> entries(cloud.points.size());
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3d& p = cloud.points[i];
    entries[i].key = {static_cast<int64_t>(std::floor(p.x() * inv)),
                      static_cast<int64_t>(std::floor(p.y() * inv)),
                      static_cast<int64_t>(std::floor(p.z() * inv))};
    entries[i].index = static_cast<uint32_t>(i);
  }
  std::sort(entries.begin(), entries.end(),
            [](const VoxelEntry& a, const VoxelEntry& b) {
              if (a.key != b.key) return a.key < b.key;
              return a.index < b.index;
            });

  out.points.reserve(entries.size() / 2);
  std::size_t run = 0;
  while (run < entries.size()) {
    std::size_t end = run + 1;
    while (end < entries.size() && entries[end].key == entries[run].key) ++end;
    Eigen::Vector3d sum = Eigen::Vector3d::Zero();
    for (std::size_t i = run; i < end; ++i) {
      sum += cloud.points[entries[i].index];
    }
    out.points.push_back(sum / static_cast<double>(end - run));
    run = end;
  }
  return out;
}

Eigen::Vector3d centroid(const PointCloud& cloud) {
  Eigen::Vector3d sum = Eigen::Vector3d::Zero();
  if (cloud.empty()) return sum;
  for (const auto& p : cloud.points) sum += p;
  return sum / static_cast<double>(cloud.points.size());
}

}  // namespace mapmerge
