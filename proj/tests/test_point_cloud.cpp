#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mapmerge/kd_tree.hpp"
#include "mapmerge/point_cloud.hpp"
#include "mapmerge/random.hpp"
#include "support/test_util.hpp"

using namespace mapmerge;

TEST_CASE("voxel downsample merges points sharing a cell") {
  PointCloud cloud;
  cloud.points = {{0.1, 0.1, 0.1}, {0.9, 0.9, 0.9}};
  const PointCloud out = voxel_downsample(cloud, 1.0);
  REQUIRE(out.size() == 1);
  CHECK((out.points[0] - Eigen::Vector3d(0.5, 0.5, 0.5)).norm() < 1e-12);
}

TEST_CASE("voxel downsample of a unit cube with a huge voxel") {
  PointCloud cloud;
  for (int x = 0; x <= 1; ++x)
    for (int y = 0; y <= 1; ++y)
      for (int z = 0; z <= 1; ++z) cloud.points.emplace_back(x, y, z);
  const PointCloud out = voxel_downsample(cloud, 10.0);
  REQUIRE(out.size() == 1);
  CHECK((out.points[0] - Eigen::Vector3d(0.5, 0.5, 0.5)).norm() < 1e-12);
}

TEST_CASE("voxel downsample uses floor for negative coordinates") {
  PointCloud cloud;
  cloud.points = {{-0.1, -0.1, -0.1}, {-0.9, -0.9, -0.9}, {0.1, 0.1, 0.1}};
  const PointCloud out = voxel_downsample(cloud, 1.0);
  REQUIRE(out.size() == 2);
  // Sorted by voxel key: cell (-1,-1,-1) first.
  CHECK((out.points[0] - Eigen::Vector3d(-0.5, -0.5, -0.5)).norm() < 1e-12);
  CHECK((out.points[1] - Eigen::Vector3d(0.1, 0.1, 0.1)).norm() < 1e-12);
}

TEST_CASE("voxel downsample rejects non-positive voxel and empty input") {
  PointCloud cloud;
  CHECK(voxel_downsample(cloud, 1.0).empty());
  cloud.points.emplace_back(0, 0, 0);
  CHECK_THROWS_AS(voxel_downsample(cloud, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(voxel_downsample(cloud, -1.0), std::invalid_argument);
}

TEST_CASE("voxel downsample output is independent of input order") {
  Rng rng(21);
  PointCloud cloud = test::random_cloud(rng, 500, 5.0);
  PointCloud shuffled = cloud;
  // Deterministic Fisher-Yates.
  for (std::size_t i = shuffled.size() - 1; i > 0; --i) {
    std::swap(shuffled.points[i], shuffled.points[rng.index(i + 1)]);
  }
  const PointCloud a = voxel_downsample(cloud, 0.8);
  const PointCloud b = voxel_downsample(shuffled, 0.8);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK((a.points[i] - b.points[i]).norm() < 1e-12);
  }
}

TEST_CASE("voxel downsample preserves isolated points and key order") {
  Rng rng(22);
  PointCloud cloud;
  for (int i = 0; i < 100; ++i) {
    cloud.points.emplace_back(3.0 * i, 0.0, 0.0);
  }
  const PointCloud out = voxel_downsample(cloud, 1.0);
  CHECK(out.size() == cloud.size());
  for (std::size_t i = 1; i < out.size(); ++i) {
    CHECK(out.points[i - 1].x() < out.points[i].x());
  }
}

TEST_CASE("transform_cloud maps points affinely and normals by rotation only") {
  PointCloud cloud;
  cloud.points = {{1.0, 0.0, 0.0}};
  cloud.normals = {{1.0, 0.0, 0.0}};
  Pose T;
  T.R = yaw_rotation(M_PI / 2.0);
  T.t = Eigen::Vector3d(5.0, 0.0, 0.0);
  const PointCloud out = transform_cloud(T, cloud);
  CHECK((out.points[0] - Eigen::Vector3d(5.0, 1.0, 0.0)).norm() < 1e-12);
  CHECK((out.normals[0] - Eigen::Vector3d(0.0, 1.0, 0.0)).norm() < 1e-12);
}

TEST_CASE("kd-tree agrees with a linear scan") {
  Rng rng(23);
  const PointCloud cloud = test::random_cloud(rng, 1000, 20.0);
  const KdTree3 tree(cloud.points);

  auto linear_nearest = [&](const Eigen::Vector3d& q) {
    uint32_t best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (uint32_t i = 0; i < cloud.size(); ++i) {
      const double d2 = (cloud.points[i] - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
        best_d2 = d2;
        best = i;
      }
    }
    return std::pair<uint32_t, double>(best, best_d2);
  };

  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector3d q(rng.uniform(-22, 22), rng.uniform(-22, 22),
                            rng.uniform(-22, 22));

    const auto [li, ld2] = linear_nearest(q);
    const auto hit = tree.nearest(q);
    CHECK(hit.index == li);
    CHECK(hit.dist2 == doctest::Approx(ld2).epsilon(1e-12));

    // k-NN oracle: full sort by (distance, index).
    std::vector<uint32_t> order(cloud.size());
    std::iota(order.begin(), order.end(), 0u);
    std::vector<double> d2(cloud.size());
    for (uint32_t i = 0; i < cloud.size(); ++i)
      d2[i] = (cloud.points[i] - q).squaredNorm();
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
      if (d2[a] != d2[b]) return d2[a] < d2[b];
      return a < b;
    });
    const auto knn = tree.knn(q, 7);
    REQUIRE(knn.size() == 7);
    for (int k = 0; k < 7; ++k) CHECK(knn[k].index == order[k]);

    // Radius oracle.
    const double r = rng.uniform(0.5, 6.0);
    std::vector<uint32_t> expect;
    for (uint32_t i = 0; i < cloud.size(); ++i)
      if (d2[i] <= r * r) expect.push_back(i);
    const auto got = tree.radius(q, r);
    CHECK(got == expect);
  }
}

TEST_CASE("kd-tree breaks exact ties by index") {
  std::vector<Eigen::Vector3d> pts = {{1, 1, 1}, {1, 1, 1}, {2, 2, 2}};
  const KdTree3 tree(pts);
  const auto hit = tree.nearest(Eigen::Vector3d(1, 1, 1));
  CHECK(hit.index == 0);
  CHECK(hit.dist2 == 0.0);
}

TEST_CASE("kd-tree handles queries on empty and tiny sets") {
  const KdTree3 empty{std::vector<Eigen::Vector3d>{}};
  CHECK(empty.nearest(Eigen::Vector3d::Zero()).index ==
        std::numeric_limits<uint32_t>::max());
  CHECK(empty.radius(Eigen::Vector3d::Zero(), 1.0).empty());

  const KdTree3 one{std::vector<Eigen::Vector3d>{{1, 2, 3}}};
  CHECK(one.nearest(Eigen::Vector3d::Zero()).index == 0);
  CHECK(one.knn(Eigen::Vector3d::Zero(), 5).size() == 1);
}

TEST_CASE("centroid") {
  PointCloud cloud;
  cloud.points = {{0, 0, 0}, {2, 4, 6}};
  CHECK((centroid(cloud) - Eigen::Vector3d(1, 2, 3)).norm() < 1e-15);
}
