#include "reart/flow.hpp"

#include <algorithm>
#include <cmath>

#include "reart/error.hpp"

namespace reart {

FlowField::FlowField(std::vector<Vec3> anchors, std::vector<Vec3> vectors, std::vector<bool> valid)
    : anchors_(std::move(anchors)), vectors_(std::move(vectors)), valid_(std::move(valid)) {
  if (anchors_.size() != vectors_.size() || anchors_.size() != valid_.size()) {
    throw Error(ErrorCode::SizeMismatch, "flow anchors, vectors and mask differ in length");
  }
  std::vector<Vec3> valid_points;
  for (std::size_t i = 0; i < anchors_.size(); ++i) {
    if (valid_[i] && !vectors_[i].allFinite()) valid_[i] = false;
    if (valid_[i]) {
      valid_ids_.push_back(static_cast<int>(i));
      valid_points.push_back(anchors_[i]);
    }
  }
  tree_ = std::make_shared<const KdTree>(valid_points);
}

FlowField::Stencil FlowField::stencil(const Vec3& query, int k, bool with_gradient) const {
  if (valid_ids_.empty()) throw Error(ErrorCode::NoValidFlow, "flow field has no valid anchors");
  k = std::clamp(k, 1, 8);
  Stencil s;
  int idx[8];
  double dsq[8];
  const int n = tree_->knn_sq(query, k, idx, dsq);
  if (std::sqrt(dsq[0]) < kFlowSnapDistance) {
    s.count = 1;
    s.index[0] = valid_ids_[static_cast<std::size_t>(idx[0])];
    s.weight[0] = 1.0;
    s.weight_grad[0] = Vec3::Zero();
    return s;
  }
  s.count = n;
  double total = 0.0;
  double inv[8];
  Vec3 dinv[8];
  for (int i = 0; i < n; ++i) {
    const double dist = std::sqrt(dsq[i]);
    inv[i] = 1.0 / dist;
    total += inv[i];
    s.index[i] = valid_ids_[static_cast<std::size_t>(idx[i])];
    if (with_gradient) {
      dinv[i] = -(query - anchors_[static_cast<std::size_t>(s.index[i])]) / (dsq[i] * dist);
    }
  }
  Vec3 dtotal = Vec3::Zero();
  if (with_gradient) {
    for (int i = 0; i < n; ++i) dtotal += dinv[i];
  }
  for (int i = 0; i < n; ++i) {
    s.weight[i] = inv[i] / total;
    s.weight_grad[i] = with_gradient ? Vec3((dinv[i] - s.weight[i] * dtotal) / total) : Vec3::Zero();
  }
  return s;
}

FlowField flow_from_cloud(const PointCloud& cloud) {
  std::vector<Vec3> vectors = cloud.flow ? *cloud.flow : std::vector<Vec3>(cloud.size(), Vec3::Zero());
  return FlowField(cloud.points, std::move(vectors), std::vector<bool>(cloud.size(), true));
}

FlowField mnn_flow(const PointCloud& current, const PointCloud& previous) {
  if (current.points.empty() || previous.points.empty()) {
    throw Error(ErrorCode::EmptyCloud, "mnn_flow needs two nonempty clouds");
  }
  const KdTree prev_tree(previous.points);
  const KdTree cur_tree(current.points);
  const std::size_t n = current.size();
  std::vector<Vec3> vectors(n, Vec3::Zero());
  std::vector<bool> valid(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const int j = prev_tree.nearest(current.points[i]);
    const int back = cur_tree.nearest(previous.points[static_cast<std::size_t>(j)]);
    if (back == static_cast<int>(i)) {
      valid[i] = true;
      vectors[i] = current.points[i] - previous.points[static_cast<std::size_t>(j)];
    }
  }
  return FlowField(current.points, std::move(vectors), std::move(valid));
}

Vec3 interp_flow(const Vec3& query, const FlowField& field, int k) {
  const FlowField::Stencil s = field.stencil(query, k);
  if (s.count == 1 && s.weight[0] == 1.0) return field.vectors()[static_cast<std::size_t>(s.index[0])];
  Vec3 out = Vec3::Zero();
  for (int i = 0; i < s.count; ++i) out += s.weight[i] * field.vectors()[static_cast<std::size_t>(s.index[i])];
  return out;
}

Vec3 interp_flow_jacobian(const Vec3& query, const FlowField& field, int k, Mat3* jacobian) {
  const FlowField::Stencil s = field.stencil(query, k, true);
  Vec3 out = Vec3::Zero();
  Mat3 jac = Mat3::Zero();
  for (int i = 0; i < s.count; ++i) {
    const Vec3& f = field.vectors()[static_cast<std::size_t>(s.index[i])];
    out += s.weight[i] * f;
    jac += f * s.weight_grad[i].transpose();
  }
  if (s.count == 1) out = field.vectors()[static_cast<std::size_t>(s.index[0])];
  if (jacobian) *jacobian = jac;
  return out;
}

}  // namespace reart
