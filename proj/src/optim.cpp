#include "reart/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "reart/error.hpp"

namespace reart {

ParamGroup& ParamSet::add(std::string name, std::vector<double> values, double lr) {
  if (has(name)) throw Error(ErrorCode::Format, "duplicate parameter group '" + name + "'");
  groups_.push_back({std::move(name), std::move(values), lr});
  return groups_.back();
}

ParamGroup& ParamSet::group(const std::string& name) {
  for (auto& g : groups_) {
    if (g.name == name) return g;
  }
  throw Error(ErrorCode::Format, "no parameter group '" + name + "'");
}

const ParamGroup& ParamSet::group(const std::string& name) const {
  return const_cast<ParamSet*>(this)->group(name);
}

bool ParamSet::has(const std::string& name) const {
  return std::any_of(groups_.begin(), groups_.end(), [&](const ParamGroup& g) { return g.name == name; });
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.values.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& g : groups_) out.add(g.name, std::vector<double>(g.values.size(), 0.0), g.lr);
  return out;
}

void adam_step(AdamMoments& state, std::span<double> params, std::span<const double> grad, double lr,
               const AdamOptions& opt) {
  if (params.size() != grad.size()) throw Error(ErrorCode::SizeMismatch, "parameter/gradient size mismatch");
  for (double g : grad) {
    if (!std::isfinite(g)) throw Error(ErrorCode::NonFiniteGradient, "gradient has non-finite entries");
  }
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * grad[i];
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

void AdamOptimizer::step(ParamSet& params, const ParamSet& grad) {
  auto& groups = params.groups();
  if (moments_.size() != groups.size()) moments_.resize(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const ParamGroup& g = grad.group(groups[i].name);
    adam_step(moments_[i], groups[i].values, g.values, groups[i].lr, opt_);
  }
}

GradCheckResult grad_check(const Objective& objective, const ParamSet& params, int samples, double h,
                           std::uint64_t seed, double floor) {
  ParamSet analytic = params.zeros_like();
  objective(params, &analytic);

  struct Coord {
    std::size_t group, index;
  };
  std::vector<Coord> coords;
  for (std::size_t g = 0; g < params.groups().size(); ++g) {
    for (std::size_t i = 0; i < params.groups()[g].values.size(); ++i) coords.push_back({g, i});
  }
  if (samples > 0 && static_cast<std::size_t>(samples) < coords.size()) {
    std::mt19937_64 gen(seed);
    std::shuffle(coords.begin(), coords.end(), gen);
    coords.resize(static_cast<std::size_t>(samples));
  }

  GradCheckResult out;
  ParamSet probe = params;
  for (const Coord& c : coords) {
    double& x = probe.groups()[c.group].values[c.index];
    const double x0 = x;
    x = x0 + h;
    const double fp = objective(probe, nullptr);
    x = x0 - h;
    const double fm = objective(probe, nullptr);
    x = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic.groups()[c.group].values[c.index];
    const double abs_err = std::abs(a - numeric);
    const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), floor});
    out.max_absolute_error = std::max(out.max_absolute_error, abs_err);
    out.max_relative_error = std::max(out.max_relative_error, rel);
    ++out.checked;
  }
  return out;
}

}  // namespace reart
