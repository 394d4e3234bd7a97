#include "reart/energy.hpp"

#include "reart/error.hpp"

namespace reart {

namespace {

double scale_for(std::size_t n, Reduction r) {
  return r == Reduction::Mean ? 1.0 / static_cast<double>(n) : 1.0;
}

}  // namespace

double chamfer(std::span<const Vec3> x, std::span<const Vec3> y, Reduction r) {
  if (x.empty() || y.empty()) throw Error(ErrorCode::EmptyCloud, "chamfer needs two nonempty sets");
  const KdTree tx(x);
  const KdTree ty(y);
  double sx = 0.0, sy = 0.0;
  for (const Vec3& p : x) {
    double d = 0.0;
    ty.nearest(p, &d);
    sx += d;
  }
  for (const Vec3& q : y) {
    double d = 0.0;
    tx.nearest(q, &d);
    sy += d;
  }
  return sx * scale_for(x.size(), r) + sy * scale_for(y.size(), r);
}

double chamfer_grad(std::span<const Vec3> pred, std::span<const Vec3> obs, const KdTree& obs_tree,
                    std::vector<Vec3>& grad, Reduction r) {
  if (pred.empty() || obs.empty()) throw Error(ErrorCode::EmptyCloud, "chamfer needs two nonempty sets");
  grad.assign(pred.size(), Vec3::Zero());
  const double wx = scale_for(pred.size(), r);
  const double wy = scale_for(obs.size(), r);
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int j = obs_tree.nearest(pred[i]);
    const Vec3 diff = pred[i] - obs[static_cast<std::size_t>(j)];
    sx += diff.squaredNorm();
    grad[i] += 2.0 * wx * diff;
  }
  const KdTree pred_tree(pred);
  for (const Vec3& q : obs) {
    const int i = pred_tree.nearest(q);
    const Vec3 diff = pred[static_cast<std::size_t>(i)] - q;
    sy += diff.squaredNorm();
    grad[static_cast<std::size_t>(i)] += 2.0 * wy * diff;
  }
  return sx * wx + sy * wy;
}

CostMatrix squared_distance_costs(std::span<const Vec3> x, std::span<const Vec3> y) {
  CostMatrix c(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < y.size(); ++j) {
      c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (x[i] - y[j]).squaredNorm();
    }
  }
  return c;
}

EmdResult emd(std::span<const Vec3> x, std::span<const Vec3> y, const Assignment* stale, Reduction r) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::SizeMismatch, "EMD needs equally sized sets (" + std::to_string(x.size()) +
                                             " vs " + std::to_string(y.size()) + ")");
  }
  if (x.empty()) throw Error(ErrorCode::EmptyCloud, "EMD of empty sets");
  EmdResult out;
  if (stale) {
    if (stale->permutation.size() != x.size()) {
      throw Error(ErrorCode::SizeMismatch, "stale assignment does not match the set size");
    }
    out.assignment = *stale;
  } else {
    out.assignment = lap_solve(squared_distance_costs(x, y));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s += (x[i] - y[static_cast<std::size_t>(out.assignment.permutation[i])]).squaredNorm();
  }
  out.assignment.cost = s;
  out.value = s * scale_for(x.size(), r);
  return out;
}

double emd_grad(std::span<const Vec3> x, std::span<const Vec3> y, const Assignment& assignment,
                std::vector<Vec3>& grad, Reduction r) {
  if (x.size() != y.size() || assignment.permutation.size() != x.size()) {
    throw Error(ErrorCode::SizeMismatch, "EMD sets and assignment differ in size");
  }
  const double w = scale_for(x.size(), r);
  grad.assign(x.size(), Vec3::Zero());
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Vec3 diff = x[i] - y[static_cast<std::size_t>(assignment.permutation[i])];
    s += diff.squaredNorm();
    grad[i] = 2.0 * w * diff;
  }
  return s * w;
}

double flow_energy(std::span<const Vec3> pred_t, std::span<const Vec3> pred_prev,
                   const FlowField& field, int k, Reduction r) {
  if (pred_t.size() != pred_prev.size()) {
    throw Error(ErrorCode::SizeMismatch, "flow energy needs index-aligned predictions");
  }
  if (pred_t.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pred_t.size(); ++i) {
    s += (pred_t[i] - pred_prev[i] - interp_flow(pred_t[i], field, k)).squaredNorm();
  }
  return s * scale_for(pred_t.size(), r);
}

double flow_energy_grad(std::span<const Vec3> pred_t, std::span<const Vec3> pred_prev,
                        const FlowField& field, int k, std::vector<Vec3>& grad_t,
                        std::vector<Vec3>& grad_prev, Reduction r) {
  if (pred_t.size() != pred_prev.size()) {
    throw Error(ErrorCode::SizeMismatch, "flow energy needs index-aligned predictions");
  }
  grad_t.assign(pred_t.size(), Vec3::Zero());
  grad_prev.assign(pred_t.size(), Vec3::Zero());
  if (pred_t.empty()) return 0.0;
  const double w = scale_for(pred_t.size(), r);
  double s = 0.0;
  for (std::size_t i = 0; i < pred_t.size(); ++i) {
    Mat3 jac;
    const Vec3 g = interp_flow_jacobian(pred_t[i], field, k, &jac);
    const Vec3 res = pred_t[i] - pred_prev[i] - g;
    s += res.squaredNorm();
    grad_t[i] = 2.0 * w * (res - jac.transpose() * res);
    grad_prev[i] = -2.0 * w * res;
  }
  return s * w;
}

EnergyBreakdown recons_energy(const std::vector<std::vector<Vec3>>& posed, const Sequence& observed,
                              const std::vector<FlowField>& flows, const EnergyWeights& weights,
                              Reduction r) {
  if (posed.size() != observed.frames.size()) {
    throw Error(ErrorCode::SizeMismatch, "posed and observed frame counts differ");
  }
  EnergyBreakdown e;
  for (std::size_t t = 0; t < posed.size(); ++t) {
    const auto& obs = observed.frames[t].points;
    if (weights.cd != 0.0) e.cd += chamfer(posed[t], obs, r);
    if (weights.emd != 0.0) e.emd += emd(posed[t], obs, nullptr, r).value;
    if (weights.flow != 0.0 && t > 0) {
      if (flows.size() != posed.size()) {
        throw Error(ErrorCode::SizeMismatch, "one flow field per frame is required");
      }
      e.flow += flow_energy(posed[t], posed[t - 1], flows[t], kFlowNeighbors, r);
    }
  }
  e.total = weights.cd * e.cd + weights.emd * e.emd + weights.flow * e.flow;
  return e;
}

}  // namespace reart
