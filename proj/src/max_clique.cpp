#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "mapmerge/registration.hpp"
#include "mapmerge/threading.hpp"

namespace mapmerge {

namespace {

// Row-major bitset adjacency for fast intersection during the search.
class BitGraph {
 public:
  explicit BitGraph(std::size_t n)
      : n_(n), words_((n + 63) / 64), bits_(n * words_, 0) {}

  void add_edge(std::size_t i, std::size_t j) {
    bits_[i * words_ + j / 64] |= uint64_t{1} << (j % 64);
    bits_[j * words_ + i / 64] |= uint64_t{1} << (i % 64);
  }

  bool has_edge(std::size_t i, std::size_t j) const {
    return (bits_[i * words_ + j / 64] >> (j % 64)) & 1;
  }

  const uint64_t* row(std::size_t i) const { return bits_.data() + i * words_; }
  std::size_t words() const { return words_; }
  std::size_t size() const { return n_; }

  std::size_t degree(std::size_t i) const {
    std::size_t d = 0;
    for (std::size_t w = 0; w < words_; ++w) d += std::popcount(row(i)[w]);
    return d;
  }

 private:
  std::size_t n_;
  std::size_t words_;
  std::vector<uint64_t> bits_;
};

class CliqueSearch {
 public:
  CliqueSearch(const BitGraph& graph, uint64_t node_budget)
      : graph_(graph), budget_(node_budget) {}

  std::vector<uint32_t> run(bool* exact) {
    const std::size_t n = graph_.size();
    best_.clear();
    if (n == 0) {
      if (exact) *exact = true;
      return best_;
    }

    // Greedy cliques over a degree-descending order seed the bound and are
    // the fallback answer if the budget runs out. Candidates are tracked as
    // a bitset intersected with each accepted vertex's neighbor row.
    std::vector<uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
      const std::size_t da = graph_.degree(a), db = graph_.degree(b);
      if (da != db) return da > db;
      return a < b;
    });
    std::vector<uint64_t> candidates(graph_.words());
    for (const uint32_t seed : order) {
      std::vector<uint32_t> clique = {seed};
      std::copy(graph_.row(seed), graph_.row(seed) + graph_.words(),
                candidates.begin());
      for (const uint32_t v : order) {
        if (candidates[v / 64] >> (v % 64) & 1) {
          clique.push_back(v);
          const uint64_t* row = graph_.row(v);
          for (std::size_t w = 0; w < candidates.size(); ++w) {
            candidates[w] &= row[w];
          }
        }
      }
      if (clique.size() > best_.size()) best_ = clique;
      work_ += n;
      if (work_ > budget_) break;
    }

    std::vector<uint64_t> all(graph_.words(), 0);
    for (std::size_t i = 0; i < n; ++i) all[i / 64] |= uint64_t{1} << (i % 64);
    std::vector<uint32_t> current;
    aborted_ = false;
    expand(all, current);
    if (exact) *exact = !aborted_;
    std::sort(best_.begin(), best_.end());
    return best_;
  }

 private:
  // Greedy sequential coloring; vertices are returned color-major so the
  // tail of the list carries the highest bound.
  void color_sort(const std::vector<uint64_t>& candidates,
                  std::vector<uint32_t>& out_vertices,
                  std::vector<uint32_t>& out_colors) {
    out_vertices.clear();
    out_colors.clear();
    std::vector<uint64_t> uncolored = candidates;
    uint32_t color = 0;
    while (true) {
      bool any = false;
      ++color;
      std::vector<uint64_t> admissible = uncolored;
      for (std::size_t w = 0; w < admissible.size(); ++w) {
        while (admissible[w]) {
          const uint32_t v =
              static_cast<uint32_t>(w * 64 + std::countr_zero(admissible[w]));
          any = true;
          out_vertices.push_back(v);
          out_colors.push_back(color);
          uncolored[w] &= ~(uint64_t{1} << (v % 64));
          // Neighbors of v cannot share its color.
          const uint64_t* row = graph_.row(v);
          for (std::size_t x = w; x < admissible.size(); ++x) {
            admissible[x] &= ~row[x];
          }
          admissible[w] &= uncolored[w];
        }
      }
      if (!any) break;
      uint64_t remaining = 0;
      for (const uint64_t word : uncolored) remaining |= word;
      if (!remaining) break;
    }
  }

  void expand(const std::vector<uint64_t>& candidates,
              std::vector<uint32_t>& current) {
    if (aborted_) return;
    std::vector<uint32_t> verts, colors;
    color_sort(candidates, verts, colors);
    // The coloring pass dominates each expansion's cost, so work is charged
    // per vertex colored rather than per call.
    work_ += verts.size() + 1;
    if (work_ > budget_) {
      aborted_ = true;
      return;
    }
    if (verts.empty()) {
      if (current.size() > best_.size()) best_ = current;
      return;
    }
    for (std::size_t i = verts.size(); i-- > 0;) {
      if (current.size() + colors[i] <= best_.size()) return;
      const uint32_t v = verts[i];
      std::vector<uint64_t> next(candidates.size());
      const uint64_t* row = graph_.row(v);
      for (std::size_t w = 0; w < next.size(); ++w) {
        next[w] = candidates[w] & row[w];
      }
      // Restrict to vertices not yet tried at this level (those before i).
      for (std::size_t j = i; j < verts.size(); ++j) {
        next[verts[j] / 64] &= ~(uint64_t{1} << (verts[j] % 64));
      }
      current.push_back(v);
      bool leaf = true;
      for (const uint64_t word : next) {
        if (word) {
          leaf = false;
          break;
        }
      }
      if (leaf) {
        if (current.size() > best_.size()) best_ = current;
      } else {
        expand(next, current);
      }
      current.pop_back();
      if (aborted_) return;
    }
  }

  const BitGraph& graph_;
  uint64_t budget_;
  uint64_t work_ = 0;
  bool aborted_ = false;
  std::vector<uint32_t> best_;
};

}  // namespace

std::vector<uint32_t> max_clique(const std::vector<std::vector<bool>>& adjacency,
                                 const MaxCliqueOptions& options, bool* exact) {
  const std::size_t n = adjacency.size();
  BitGraph graph(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (adjacency[i][j]) graph.add_edge(i, j);
    }
  }
  CliqueSearch search(graph, options.node_budget);
  return search.run(exact);
}

MaxCliqueResult max_clique_prune(const CorrespondenceSet& pairs,
                                 const PointCloud& cloud_c,
                                 const PointCloud& cloud_q, double noise_bound,
                                 const MaxCliqueOptions& options) {
  if (pairs.empty()) {
    throw std::invalid_argument("max_clique_prune needs correspondences");
  }
  const std::size_t n = pairs.size();
  BitGraph graph(n);
  const double tolerance = 2.0 * noise_bound;
  // Pairwise distance consistency; O(n^2) with n capped by the matcher.
  std::vector<std::vector<uint32_t>> row_edges(n);
  parallel_for(0, n, [&](std::size_t i) {
    const Eigen::Vector3d& ai = cloud_c.points[pairs[i].a];
    const Eigen::Vector3d& bi = cloud_q.points[pairs[i].b];
    for (std::size_t j = i + 1; j < n; ++j) {
      const double da = (ai - cloud_c.points[pairs[j].a]).norm();
      const double db = (bi - cloud_q.points[pairs[j].b]).norm();
      if (std::abs(da - db) <= tolerance) {
        row_edges[i].push_back(static_cast<uint32_t>(j));
      }
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    for (const uint32_t j : row_edges[i]) graph.add_edge(i, j);
  }

  CliqueSearch search(graph, options.node_budget);
  MaxCliqueResult result;
  const std::vector<uint32_t> members = search.run(&result.exact);
  result.clique_size = members.size();
  result.pruned.reserve(members.size());
  for (const uint32_t m : members) result.pruned.push_back(pairs[m]);
  if (result.pruned.size() >= 2) {
    result.tims = build_tims(cloud_c, cloud_q, result.pruned);
  }
  return result;
}

}  // namespace mapmerge
