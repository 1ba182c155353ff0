#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

namespace mapmerge {

// Static KD-tree over fixed-dimension points. Exact queries; ties broken by
// the lower point index, so results are reproducible. Splits on the axis of
// widest spread at the median.
template <int D>
class KdTree {
 public:
  using Point = Eigen::Matrix<double, D, 1>;

  KdTree() = default;

  explicit KdTree(std::vector<Point> points) : points_(std::move(points)) {
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), uint32_t{0});
    nodes_.reserve(points_.size() / kLeafSize * 2 + 2);
    if (!points_.empty()) {
      root_ = build(0, static_cast<uint32_t>(points_.size()));
    }
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Point>& points() const { return points_; }

  struct Hit {
    uint32_t index = std::numeric_limits<uint32_t>::max();
    double dist2 = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Point& q) const {
    Hit best;
    if (root_ >= 0) search_nearest(static_cast<uint32_t>(root_), q, best);
    return best;
  }

  // k nearest, ascending by (distance, index).
  std::vector<Hit> knn(const Point& q, std::size_t k) const {
    std::vector<Hit> heap;  // max-heap on (dist2, index)
    if (k == 0 || root_ < 0) return heap;
    search_knn(static_cast<uint32_t>(root_), q, k, heap);
    std::sort(heap.begin(), heap.end(), [](const Hit& a, const Hit& b) {
      if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
      return a.index < b.index;
    });
    return heap;
  }

  // Indices of all points with distance <= radius, ascending by index.
  std::vector<uint32_t> radius(const Point& q, double r) const {
    std::vector<uint32_t> out;
    if (root_ >= 0 && r >= 0.0) {
      search_radius(static_cast<uint32_t>(root_), q, r * r, out);
      std::sort(out.begin(), out.end());
    }
    return out;
  }

 private:
  static constexpr uint32_t kLeafSize = 16;

  struct Node {
    double split = 0.0;
    int32_t left = -1;
    int32_t right = -1;
    uint32_t begin = 0;
    uint32_t end = 0;
    uint16_t axis = 0;
    bool leaf = false;
  };

  int32_t build(uint32_t begin, uint32_t end) {
    Node node;
    node.begin = begin;
    node.end = end;
    if (end - begin <= kLeafSize) {
      node.leaf = true;
      // Stable index order inside leaves keeps tie-breaking well defined.
      std::sort(order_.begin() + begin, order_.begin() + end);
      nodes_.push_back(node);
      return static_cast<int32_t>(nodes_.size() - 1);
    }
    Point lo = points_[order_[begin]], hi = points_[order_[begin]];
    for (uint32_t i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(points_[order_[i]]);
      hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const uint32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](uint32_t a, uint32_t b) {
                       const double pa = points_[a][axis], pb = points_[b][axis];
                       if (pa != pb) return pa < pb;
                       return a < b;
                     });
    node.axis = static_cast<uint16_t>(axis);
    node.split = points_[order_[mid]][axis];
    const int32_t self = static_cast<int32_t>(nodes_.size());
    nodes_.push_back(node);
    const int32_t left = build(begin, mid);
    const int32_t right = build(mid, end);
    nodes_[self].left = left;
    nodes_[self].right = right;
    return self;
  }

  void scan_leaf(const Node& node, const Point& q, Hit& best) const {
    for (uint32_t i = node.begin; i < node.end; ++i) {
      const uint32_t idx = order_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (d2 < best.dist2 || (d2 == best.dist2 && idx < best.index)) {
        best.dist2 = d2;
        best.index = idx;
      }
    }
  }

  void search_nearest(uint32_t n, const Point& q, Hit& best) const {
    const Node& node = nodes_[n];
    if (node.leaf) {
      scan_leaf(node, q, best);
      return;
    }
    const double diff = q[node.axis] - node.split;
    const uint32_t first = diff < 0.0 ? node.left : node.right;
    const uint32_t second = diff < 0.0 ? node.right : node.left;
    search_nearest(first, q, best);
    if (diff * diff <= best.dist2) search_nearest(second, q, best);
  }

  static void heap_push(std::vector<Hit>& heap, std::size_t k, Hit h) {
    auto cmp = [](const Hit& a, const Hit& b) {
      if (a.dist2 != b.dist2) return a.dist2 < b.dist2;
      return a.index < b.index;
    };
    if (heap.size() < k) {
      heap.push_back(h);
      std::push_heap(heap.begin(), heap.end(), cmp);
    } else if (cmp(h, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), cmp);
      heap.back() = h;
      std::push_heap(heap.begin(), heap.end(), cmp);
    }
  }

  void search_knn(uint32_t n, const Point& q, std::size_t k,
                  std::vector<Hit>& heap) const {
    const Node& node = nodes_[n];
    if (node.leaf) {
      for (uint32_t i = node.begin; i < node.end; ++i) {
        const uint32_t idx = order_[i];
        heap_push(heap, k, Hit{idx, (points_[idx] - q).squaredNorm()});
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const uint32_t first = diff < 0.0 ? node.left : node.right;
    const uint32_t second = diff < 0.0 ? node.right : node.left;
    search_knn(first, q, k, heap);
    const double bound =
        heap.size() < k ? std::numeric_limits<double>::infinity() : heap.front().dist2;
    if (diff * diff <= bound) search_knn(second, q, k, heap);
  }

  void search_radius(uint32_t n, const Point& q, double r2,
                     std::vector<uint32_t>& out) const {
    const Node& node = nodes_[n];
    if (node.leaf) {
      for (uint32_t i = node.begin; i < node.end; ++i) {
        const uint32_t idx = order_[i];
        if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const uint32_t first = diff < 0.0 ? node.left : node.right;
    const uint32_t second = diff < 0.0 ? node.right : node.left;
    search_radius(first, q, r2, out);
    if (diff * diff <= r2) search_radius(second, q, r2, out);
  }

  std::vector<Point> points_;
  std::vector<uint32_t> order_;
  std::vector<Node> nodes_;
  int32_t root_ = -1;
};

using KdTree3 = KdTree<3>;

inline KdTree3 build_kd_tree(const std::vector<Eigen::Vector3d>& points) {
  return KdTree3(points);
}

}  // namespace mapmerge
