#pragma once

#include <memory>
#include <vector>

#include "reart/cloud.hpp"

namespace reart {

inline constexpr int kFlowNeighbors = 3;
inline constexpr double kFlowSnapDistance = 1e-9;

// Observed scene flow anchored at the points of frame t, pointing from the
// matched point in frame t-1 to the anchor (F(x^t) = x^t - x^{t-1}).
class FlowField {
 public:
  FlowField() = default;
  FlowField(std::vector<Vec3> anchors, std::vector<Vec3> vectors, std::vector<bool> valid);

  const std::vector<Vec3>& anchors() const { return anchors_; }
  const std::vector<Vec3>& vectors() const { return vectors_; }
  const std::vector<bool>& valid() const { return valid_; }
  int valid_count() const { return static_cast<int>(valid_ids_.size()); }

  // Neighbour weights used by the interpolation at `query`. Indices refer to
  // anchors(). Weights sum to one; a single weight of one means the query
  // snapped onto an anchor.
  struct Stencil {
    int count = 0;
    int index[8];
    double weight[8];
    // d(weight_k)/d(query), so the interpolant's Jacobian can be formed.
    Vec3 weight_grad[8];
  };
  Stencil stencil(const Vec3& query, int k, bool with_gradient = false) const;

 private:
  std::vector<Vec3> anchors_;
  std::vector<Vec3> vectors_;
  std::vector<bool> valid_;
  std::vector<int> valid_ids_;
  std::shared_ptr<const KdTree> tree_;  // over the valid anchors only
};

// Flow taken from the per-point `flow` attribute of a cloud (ground truth).
// Frames without flow yield an all-zero, all-valid field.
FlowField flow_from_cloud(const PointCloud& cloud);

// Mutual nearest neighbours in coordinate space.
FlowField mnn_flow(const PointCloud& current, const PointCloud& previous);

// Inverse-distance-weighted mean of the k nearest valid anchors' vectors.
// Throws NoValidFlow when the field has no valid entry.
Vec3 interp_flow(const Vec3& query, const FlowField& field, int k = kFlowNeighbors);

// Interpolant and its 3x3 Jacobian with respect to the query (neighbour set
// held fixed).
Vec3 interp_flow_jacobian(const Vec3& query, const FlowField& field, int k, Mat3* jacobian);

}  // namespace reart
