#pragma once

// Coordinate-based part segmentation field: a one-hidden-layer MLP mapping a
// (normalized) canonical-frame position to n_max part logits.

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "reart/geom.hpp"

namespace reart {

inline constexpr int kDefaultMaxParts = 20;
inline constexpr int kDefaultHidden = 128;

// Maps canonical points into a zero-mean box of unit maximum extent.
struct Normalization {
  Vec3 center = Vec3::Zero();
  double scale = 1.0;

  Vec3 apply(const Vec3& x) const { return (x - center) / scale; }
  Vec3 invert(const Vec3& u) const { return u * scale + center; }
  static Normalization fit(std::span<const Vec3> points);
};

struct SegFieldParams {
  Eigen::MatrixXd w1;  // hidden x 3
  Eigen::VectorXd b1;  // hidden
  Eigen::MatrixXd w2;  // n_max x hidden
  Eigen::VectorXd b2;  // n_max
  Normalization normalization;

  int n_max() const { return static_cast<int>(w2.rows()); }
  int hidden() const { return static_cast<int>(w1.rows()); }

  // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  static SegFieldParams init(int n_max, int hidden, std::uint64_t seed);
  static SegFieldParams zeros(int n_max, int hidden);

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);
};

Eigen::VectorXd field_logits(const SegFieldParams& params, const Vec3& x);
int hard_label(const SegFieldParams& params, const Vec3& x);
std::vector<int> hard_labels(const SegFieldParams& params, std::span<const Vec3> points);

// Batched forward pass that keeps what the backward pass needs.
struct FieldBatch {
  Eigen::MatrixXd input;   // 3 x N normalized coordinates
  Eigen::MatrixXd hidden;  // hidden x N, after ReLU
  Eigen::MatrixXd logits;  // n_max x N
};

FieldBatch field_forward(const SegFieldParams& params, std::span<const Vec3> points);
// Gradient of a scalar loss with respect to the flattened parameters, given
// dL/dlogits (n_max x N). Layout matches SegFieldParams::flatten().
std::vector<double> field_backward(const SegFieldParams& params, const FieldBatch& batch,
                                   const Eigen::MatrixXd& dlogits);

struct GumbelSample {
  int hard = 0;             // index of the one-hot entry
  Eigen::VectorXd soft;     // softmax((logits + g) / temperature)
  double temperature = 1.0;

  Eigen::VectorXd one_hot() const;
};

// Gumbel-softmax draw: hard = argmax(soft), soft is what gradients use
// (straight-through).
GumbelSample gumbel_hard_assign(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature,
                                std::mt19937_64& rng);
GumbelSample gumbel_hard_assign(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature,
                                std::uint64_t seed);

// dL/dlogits for the straight-through estimator given dL/dsoft.
Eigen::VectorXd gumbel_backward(const GumbelSample& sample, const Eigen::Ref<const Eigen::VectorXd>& dsoft);

// Cosine annealing from `start` (step 0) to `end` (last step).
double cosine_temperature(int step, int total_steps, double start = 5.0, double end = 1.0);

}  // namespace reart
