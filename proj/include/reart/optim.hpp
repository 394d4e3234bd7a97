#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace reart {

inline constexpr double kFieldLearningRate = 1e-3;
inline constexpr double kTransformLearningRate = 1e-2;

struct ParamGroup {
  std::string name;
  std::vector<double> values;
  double lr = 1e-3;
};

// Named flat parameter vectors, each with its own learning rate.
class ParamSet {
 public:
  ParamGroup& add(std::string name, std::vector<double> values, double lr);
  ParamGroup& group(const std::string& name);
  const ParamGroup& group(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  std::size_t total_size() const;

  // Same names and shapes, zero values.
  ParamSet zeros_like() const;

 private:
  std::vector<ParamGroup> groups_;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam moments for one flat vector.
struct AdamMoments {
  std::vector<double> m, v;
  long long step = 0;
};

// Standard bias-corrected Adam update, in place. Throws NonFiniteGradient.
void adam_step(AdamMoments& state, std::span<double> params, std::span<const double> grad, double lr,
               const AdamOptions& opt = {});

class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamOptions opt = {}) : opt_(opt) {}
  // Applies one update to every group using the group's learning rate.
  void step(ParamSet& params, const ParamSet& grad);

 private:
  AdamOptions opt_;
  std::vector<AdamMoments> moments_;
};

// Objective contract: returns the value and, when `grad` is non-null, fills
// a gradient shaped like the parameters.
using Objective = std::function<double(const ParamSet& params, ParamSet* grad)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  int checked = 0;
};

// Compares analytic gradients with central differences on `samples` randomly
// chosen coordinates (all coordinates when samples <= 0 or >= size).
// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult grad_check(const Objective& objective, const ParamSet& params, int samples = 0,
                           double h = 1e-5, std::uint64_t seed = 0, double floor = 1e-8);

}  // namespace reart
