#include "reart/segfield.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "reart/error.hpp"

namespace reart {

Normalization Normalization::fit(std::span<const Vec3> points) {
  Normalization n;
  if (points.empty()) return n;
  Vec3 sum = Vec3::Zero();
  Vec3 lo = points[0], hi = points[0];
  for (const Vec3& p : points) {
    sum += p;
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  n.center = sum / static_cast<double>(points.size());
  const double extent = (hi - lo).maxCoeff();
  n.scale = extent > 0.0 ? extent : 1.0;
  return n;
}

SegFieldParams SegFieldParams::init(int n_max, int hidden, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  SegFieldParams p = zeros(n_max, hidden);
  auto fill = [&](auto& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(gen);
  };
  fill(p.w1, 1.0 / std::sqrt(3.0));
  fill(p.b1, 1.0 / std::sqrt(3.0));
  fill(p.w2, 1.0 / std::sqrt(static_cast<double>(hidden)));
  fill(p.b2, 1.0 / std::sqrt(static_cast<double>(hidden)));
  return p;
}

SegFieldParams SegFieldParams::zeros(int n_max, int hidden) {
  SegFieldParams p;
  p.w1 = Eigen::MatrixXd::Zero(hidden, 3);
  p.b1 = Eigen::VectorXd::Zero(hidden);
  p.w2 = Eigen::MatrixXd::Zero(n_max, hidden);
  p.b2 = Eigen::VectorXd::Zero(n_max);
  return p;
}

std::size_t SegFieldParams::parameter_count() const {
  return static_cast<std::size_t>(w1.size() + b1.size() + w2.size() + b2.size());
}

std::vector<double> SegFieldParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto* m : {&w1, &w2}) out.insert(out.end(), m->data(), m->data() + m->size());
  out.insert(out.end(), b1.data(), b1.data() + b1.size());
  out.insert(out.end(), b2.data(), b2.data() + b2.size());
  return out;
}

void SegFieldParams::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) {
    throw Error(ErrorCode::SizeMismatch, "segmentation field parameter count mismatch");
  }
  std::size_t at = 0;
  auto take = [&](double* dst, Eigen::Index n) {
    std::copy(values.begin() + static_cast<std::ptrdiff_t>(at),
              values.begin() + static_cast<std::ptrdiff_t>(at + static_cast<std::size_t>(n)), dst);
    at += static_cast<std::size_t>(n);
  };
  take(w1.data(), w1.size());
  take(w2.data(), w2.size());
  take(b1.data(), b1.size());
  take(b2.data(), b2.size());
}

Eigen::VectorXd field_logits(const SegFieldParams& params, const Vec3& x) {
  const Vec3 u = params.normalization.apply(x);
  const Eigen::VectorXd h = (params.w1 * u + params.b1).cwiseMax(0.0);
  return params.w2 * h + params.b2;
}

namespace {
int argmax_lowest(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}
}  // namespace

int hard_label(const SegFieldParams& params, const Vec3& x) {
  return argmax_lowest(field_logits(params, x));
}

std::vector<int> hard_labels(const SegFieldParams& params, std::span<const Vec3> points) {
  const FieldBatch batch = field_forward(params, points);
  std::vector<int> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    out[i] = argmax_lowest(batch.logits.col(static_cast<Eigen::Index>(i)));
  }
  return out;
}

FieldBatch field_forward(const SegFieldParams& params, std::span<const Vec3> points) {
  FieldBatch b;
  const auto n = static_cast<Eigen::Index>(points.size());
  b.input.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    b.input.col(i) = params.normalization.apply(points[static_cast<std::size_t>(i)]);
  }
  b.hidden = ((params.w1 * b.input).colwise() + params.b1).cwiseMax(0.0);
  b.logits = (params.w2 * b.hidden).colwise() + params.b2;
  return b;
}

std::vector<double> field_backward(const SegFieldParams& params, const FieldBatch& batch,
                                   const Eigen::MatrixXd& dlogits) {
  const Eigen::MatrixXd dw2 = dlogits * batch.hidden.transpose();
  const Eigen::VectorXd db2 = dlogits.rowwise().sum();
  Eigen::MatrixXd dh = params.w2.transpose() * dlogits;
  dh = dh.cwiseProduct((batch.hidden.array() > 0.0).cast<double>().matrix());
  const Eigen::MatrixXd dw1 = dh * batch.input.transpose();
  const Eigen::VectorXd db1 = dh.rowwise().sum();
  std::vector<double> out;
  out.reserve(params.parameter_count());
  out.insert(out.end(), dw1.data(), dw1.data() + dw1.size());
  out.insert(out.end(), dw2.data(), dw2.data() + dw2.size());
  out.insert(out.end(), db1.data(), db1.data() + db1.size());
  out.insert(out.end(), db2.data(), db2.data() + db2.size());
  return out;
}

Eigen::VectorXd GumbelSample::one_hot() const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(soft.size());
  v[hard] = 1.0;
  return v;
}

GumbelSample gumbel_hard_assign(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature,
                                std::mt19937_64& rng) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::Format, "Gumbel temperature must be positive");
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  GumbelSample s;
  s.temperature = temperature;
  s.soft.resize(logits.size());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    double u = uniform(rng);
    if (u <= 0.0) u = std::numeric_limits<double>::min();
    s.soft[i] = (logits[i] - std::log(-std::log(u))) / temperature;
  }
  const double m = s.soft.maxCoeff();
  s.soft = (s.soft.array() - m).exp();
  s.soft /= s.soft.sum();
  s.hard = argmax_lowest(s.soft);
  return s;
}

GumbelSample gumbel_hard_assign(const Eigen::Ref<const Eigen::VectorXd>& logits, double temperature,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return gumbel_hard_assign(logits, temperature, rng);
}

Eigen::VectorXd gumbel_backward(const GumbelSample& sample, const Eigen::Ref<const Eigen::VectorXd>& dsoft) {
  const double inner = sample.soft.dot(dsoft);
  return (sample.soft.array() * (dsoft.array() - inner)).matrix() / sample.temperature;
}

double cosine_temperature(int step, int total_steps, double start, double end) {
  if (total_steps <= 1) return end;
  const double frac = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  return end + 0.5 * (start - end) * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace reart
