#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "reart/cloud.hpp"
#include "reart/error.hpp"

namespace reart {

namespace {
constexpr int kLeafSize = 8;

inline bool closer(double da, int ia, double db, int ib) {
  return da < db || (da == db && ia < ib);
}
}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 2);
    build(0, static_cast<int>(points_.size()), 0);
  }
}

int KdTree::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({begin, end, -1, -1, 0, 0.0});
  if (end - begin <= kLeafSize) return id;

  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const int mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa < pb || (pa == pb && a < b);
                   });
  const double split = points_[order_[mid]][axis];
  (void)depth;
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  nodes_[id].left = left;
  nodes_[id].right = right;
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  return id;
}

int KdTree::knn_sq(const Vec3& query, int k, int* idx_out, double* dsq_out) const {
  if (points_.empty() || k <= 0) return 0;
  k = std::min<int>(k, static_cast<int>(points_.size()));
  int count = 0;
  // Insertion-sorted buffer of the best `count` candidates.
  auto offer = [&](int index, double dsq) {
    if (count == k && !closer(dsq, index, dsq_out[k - 1], idx_out[k - 1])) return;
    int pos = count < k ? count++ : k - 1;
    while (pos > 0 && closer(dsq, index, dsq_out[pos - 1], idx_out[pos - 1])) {
      dsq_out[pos] = dsq_out[pos - 1];
      idx_out[pos] = idx_out[pos - 1];
      --pos;
    }
    dsq_out[pos] = dsq;
    idx_out[pos] = index;
  };

  struct Pending {
    int node;
    double plane_dsq;
  };
  Pending stack[128];
  int top = 0;
  stack[top++] = {0, 0.0};
  while (top > 0) {
    const Pending item = stack[--top];
    if (count == k && item.plane_dsq > dsq_out[k - 1]) continue;
    const Node& node = nodes_[item.node];
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        const int p = order_[i];
        offer(p, (points_[p] - query).squaredNorm());
      }
      continue;
    }
    const double diff = query[node.axis] - node.split;
    const int near = diff < 0.0 ? node.left : node.right;
    const int far = diff < 0.0 ? node.right : node.left;
    // Far side first on the stack so the near side is popped next.
    stack[top++] = {far, std::max(item.plane_dsq, diff * diff)};
    stack[top++] = {near, item.plane_dsq};
  }
  return count;
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, int k) const {
  if (k < 1 || k > static_cast<int>(points_.size())) {
    throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " for a cloud of " +
                                          std::to_string(points_.size()) + " points");
  }
  std::vector<int> idx(static_cast<std::size_t>(k));
  std::vector<double> dsq(static_cast<std::size_t>(k));
  const int n = knn_sq(query, k, idx.data(), dsq.data());
  std::vector<Neighbor> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back({idx[i], std::sqrt(dsq[i])});
  return out;
}

int KdTree::nearest(const Vec3& query, double* dist_sq) const {
  int idx = -1;
  double dsq = std::numeric_limits<double>::infinity();
  knn_sq(query, 1, &idx, &dsq);
  if (dist_sq) *dist_sq = dsq;
  return idx;
}

std::vector<Neighbor> knn_query(const PointCloud& cloud, const Vec3& query, int k) {
  if (k > static_cast<int>(cloud.size()) || k < 1) {
    throw Error(ErrorCode::KTooLarge, "k=" + std::to_string(k) + " for a cloud of " +
                                          std::to_string(cloud.size()) + " points");
  }
  return KdTree(cloud.points).knn(query, k);
}

}  // namespace reart
