#pragma once

// Reconstruction energy: Chamfer, earth mover (exact linear assignment) and
// flow terms. Every term is reported as a per-point mean by default; the Sum
// reduction restores raw sums.

#include <Eigen/Core>

#include <span>
#include <vector>

#include "reart/cloud.hpp"
#include "reart/flow.hpp"

namespace reart {

struct EnergyWeights {
  double cd = 1.0;
  double emd = 0.3;
  double flow = 1.0;
};

enum class Reduction { Mean, Sum };

using CostMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Assignment {
  std::vector<int> permutation;  // source row -> target column
  double cost = 0.0;
};

// Exact minimum-cost bijection (Jonker-Volgenant). Throws NonFiniteCost.
Assignment lap_solve(const CostMatrix& cost);
// Warm-started variant: `prices` holds column duals from a previous solve on
// a similar matrix (resized and zero-filled if empty) and is updated.
Assignment lap_solve(const CostMatrix& cost, std::vector<double>& prices);

double chamfer(std::span<const Vec3> x, std::span<const Vec3> y, Reduction r = Reduction::Mean);

// Chamfer value and its gradient with respect to `pred`, nearest neighbours
// frozen at the current positions. `obs_tree` indexes `obs`.
double chamfer_grad(std::span<const Vec3> pred, std::span<const Vec3> obs, const KdTree& obs_tree,
                    std::vector<Vec3>& grad, Reduction r = Reduction::Mean);

struct EmdResult {
  double value = 0.0;
  Assignment assignment;
};

CostMatrix squared_distance_costs(std::span<const Vec3> x, std::span<const Vec3> y);

// Mean squared residual under an assignment. With `stale` given the
// assignment is reused instead of re-solved. Throws SizeMismatch.
EmdResult emd(std::span<const Vec3> x, std::span<const Vec3> y, const Assignment* stale = nullptr,
              Reduction r = Reduction::Mean);

// EMD value under a fixed assignment plus the gradient with respect to x.
double emd_grad(std::span<const Vec3> x, std::span<const Vec3> y, const Assignment& assignment,
                std::vector<Vec3>& grad, Reduction r = Reduction::Mean);

// mean |(x^t - x^{t-1}) - g(x^t)|^2 over index-aligned predictions.
double flow_energy(std::span<const Vec3> pred_t, std::span<const Vec3> pred_prev,
                   const FlowField& field, int k = kFlowNeighbors, Reduction r = Reduction::Mean);

// Flow energy and gradients with respect to both frames' predictions
// (neighbour sets frozen, interpolation weights differentiated).
double flow_energy_grad(std::span<const Vec3> pred_t, std::span<const Vec3> pred_prev,
                        const FlowField& field, int k, std::vector<Vec3>& grad_t,
                        std::vector<Vec3>& grad_prev, Reduction r = Reduction::Mean);

struct EnergyBreakdown {
  double cd = 0.0;
  double emd = 0.0;
  double flow = 0.0;
  double total = 0.0;
};

// Sum over frames of the weighted terms. `flows[t]` is the field between
// frames t and t-1 (flows[0] is ignored). A zero weight skips its term.
EnergyBreakdown recons_energy(const std::vector<std::vector<Vec3>>& posed, const Sequence& observed,
                              const std::vector<FlowField>& flows, const EnergyWeights& weights,
                              Reduction r = Reduction::Mean);

}  // namespace reart
