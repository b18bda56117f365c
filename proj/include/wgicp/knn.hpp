// wgicp - weighted generalized ICP registration and lidar odometry
// SPDX-License-Identifier: MIT
//
// Exact k-nearest-neighbor search (KD-tree with deterministic tie-breaking)
// and the soft correspondence weights used by the differentiable solver.

#ifndef WGICP_KNN_HPP
#define WGICP_KNN_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "wgicp/errors.hpp"
#include "wgicp/geometry.hpp"

namespace wgicp {

/// Floor applied to target weights before they rescale correspondence
/// distances, so a weight of exactly zero cannot divide by zero.
inline constexpr double kWeightFloor = 1e-3;

/// Balanced KD-tree over a snapshot of a point cloud.
///
/// query(k) returns exactly min(k, n) neighbors sorted by nondecreasing
/// distance, ties broken by lower point index; the result is always
/// identical to a brute-force scan under the same ordering.
class KdTree {
 public:
  struct Neighbor {
    int index;
    double distance;
  };

  explicit KdTree(const PointCloud& cloud, int leaf_size = 16)
      : KdTree(cloud.points, leaf_size) {}

  explicit KdTree(std::vector<Point3> points, int leaf_size = 16)
      : points_(std::move(points)), leaf_size_(std::max(1, leaf_size)) {
    if (points_.empty()) throw EmptyCloudError("KdTree: cannot index an empty cloud");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.size() / static_cast<std::size_t>(leaf_size_) + 2);
    root_ = build(0, static_cast<int>(points_.size()));
  }

  std::size_t size() const { return points_.size(); }
  const std::vector<Point3>& points() const { return points_; }

  void query(const Point3& q, int k, std::vector<Neighbor>& out) const {
    out.clear();
    if (k <= 0) return;
    const int want = std::min<int>(k, static_cast<int>(points_.size()));
    Candidates best;
    best.want = want;
    search(root_, q, best);
    out.resize(best.heap.size());
    for (int i = static_cast<int>(best.heap.size()) - 1; i >= 0; --i) {
      std::pop_heap(best.heap.begin(), best.heap.end(), worse_first);
      const auto [d2, idx] = best.heap.back();
      best.heap.pop_back();
      out[static_cast<std::size_t>(i)] = Neighbor{idx, std::sqrt(d2)};
    }
  }

  std::vector<Neighbor> query(const Point3& q, int k) const {
    std::vector<Neighbor> out;
    query(q, k, out);
    return out;
  }

  /// Index of the single nearest point (lowest index on distance ties).
  int nearest(const Point3& q) const {
    Candidates best;
    best.want = 1;
    search(root_, q, best);
    return best.heap.front().second;
  }

 private:
  struct Node {
    int axis = -1;         // -1 for leaves
    double split = 0.0;    // splitting coordinate
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
  };

  // Max-heap of (squared distance, index); the root is the current worst
  // candidate under the (distance, index) ordering.
  using Entry = std::pair<double, int>;
  static bool worse_first(const Entry& a, const Entry& b) { return a < b; }

  struct Candidates {
    std::vector<Entry> heap;
    int want = 0;

    bool full() const { return static_cast<int>(heap.size()) == want; }
    const Entry& worst() const { return heap.front(); }
    void offer(const Entry& e) {
      if (!full()) {
        heap.push_back(e);
        std::push_heap(heap.begin(), heap.end(), worse_first);
      } else if (e < heap.front()) {
        std::pop_heap(heap.begin(), heap.end(), worse_first);
        heap.back() = e;
        std::push_heap(heap.begin(), heap.end(), worse_first);
      }
    }
  };

  int build(int begin, int end) {
    Node node;
    if (end - begin <= leaf_size_) {
      node.begin = begin;
      node.end = end;
      nodes_.push_back(node);
      return static_cast<int>(nodes_.size()) - 1;
    }
    Vec3 lo = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(begin)])];
    Vec3 hi = lo;
    for (int i = begin + 1; i < end; ++i) {
      const auto& p = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(i)])];
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                       const double ca = points_[static_cast<std::size_t>(a)][axis];
                       const double cb = points_[static_cast<std::size_t>(b)][axis];
                       return ca < cb || (ca == cb && a < b);
                     });
    node.axis = axis;
    node.split = points_[static_cast<std::size_t>(order_[static_cast<std::size_t>(mid)])][axis];
    const int self = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[static_cast<std::size_t>(self)].left = left;
    nodes_[static_cast<std::size_t>(self)].right = right;
    return self;
  }

  void search(int node_id, const Point3& q, Candidates& best) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (node.axis < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int idx = order_[static_cast<std::size_t>(i)];
        const double d2 = (points_[static_cast<std::size_t>(idx)] - q).squaredNorm();
        best.offer({d2, idx});
      }
      return;
    }
    const double diff = q[node.axis] - node.split;
    const int near = diff < 0 ? node.left : node.right;
    const int far = diff < 0 ? node.right : node.left;
    search(near, q, best);
    // Descend into the far half unless its lower bound is strictly worse
    // than the current worst candidate (equal bounds may still hold a
    // lower-index tie).
    if (!best.full() || diff * diff <= best.worst().first) {
      search(far, q, best);
    }
  }

  std::vector<Point3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int leaf_size_;
  int root_ = 0;
};

/// Softmax-weighted neighborhood: indices of the k_d nearest points and
/// weights that sum to 1, each in (0, 1].
struct SoftNeighbors {
  std::vector<int> indices;
  std::vector<double> weights;
};

namespace detail {

inline SoftNeighbors soft_weights_from(const std::vector<KdTree::Neighbor>& nbrs,
                                       std::span<const double> scaled_distances,
                                       double temperature) {
  SoftNeighbors out;
  const std::size_t n = nbrs.size();
  out.indices.resize(n);
  out.weights.resize(n);
  // Max-subtracted stable softmax over logits -d/temperature.
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    best = std::max(best, -scaled_distances[j] / temperature);
  }
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out.indices[j] = nbrs[j].index;
    out.weights[j] = std::exp(-scaled_distances[j] / temperature - best);
    total += out.weights[j];
  }
  for (auto& w : out.weights) w /= total;
  return out;
}

}  // namespace detail

/// Soft k-nearest neighbors: weights exp(-d_j/tau) normalized over the k_d
/// nearest points, so the nearest point carries the largest weight.
inline SoftNeighbors soft_knn(const KdTree& index, const Point3& query, int k_d,
                              double temperature = 1.0) {
  if (k_d < 1) throw InvalidArgumentError("soft_knn: k_d must be >= 1");
  const auto nbrs = index.query(query, k_d);
  std::vector<double> dist(nbrs.size());
  for (std::size_t j = 0; j < nbrs.size(); ++j) dist[j] = nbrs[j].distance;
  return detail::soft_weights_from(nbrs, dist, temperature);
}

/// Soft KNN with per-target-point weights: distances are divided by
/// max(w_j, kWeightFloor) before the softmax, so down-weighted targets
/// receive an exponentially smaller share while weights still sum to 1.
inline SoftNeighbors soft_knn_weighted(const KdTree& index, const Point3& query, int k_d,
                                       std::span<const double> target_weights,
                                       double temperature = 1.0) {
  if (k_d < 1) throw InvalidArgumentError("soft_knn_weighted: k_d must be >= 1");
  const auto nbrs = index.query(query, k_d);
  std::vector<double> dist(nbrs.size());
  for (std::size_t j = 0; j < nbrs.size(); ++j) {
    const double w = target_weights.empty()
                         ? 1.0
                         : target_weights[static_cast<std::size_t>(nbrs[j].index)];
    dist[j] = nbrs[j].distance / std::max(w, kWeightFloor);
  }
  return detail::soft_weights_from(nbrs, dist, temperature);
}

}  // namespace wgicp

#endif  // WGICP_KNN_HPP
