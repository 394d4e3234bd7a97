#include "reart/fitting.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "reart/error.hpp"
#include "reart/optim.hpp"
#include "reart/parallel.hpp"
#include "reart/project.hpp"

namespace reart {

void FitConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw Error(ErrorCode::Format, std::string(name) + " must be at least 1");
  };
  positive(max_parts, "max_parts");
  positive(hidden, "hidden");
  positive(iters_stage1, "iters_stage1");
  positive(iters_final, "iters_final");
  positive(emd_downsample_stage1, "emd_downsample_stage1");
  positive(emd_refresh_stage1, "emd_refresh_stage1");
  positive(emd_downsample_final, "emd_downsample_final");
  positive(emd_refresh_final, "emd_refresh_final");
  positive(ik_iters, "ik_iters");
  positive(spatial_fps, "spatial_fps");
  if (refine_rounds < 0 || refine_iters < 0 || distill_iters < 0) {
    throw Error(ErrorCode::Format, "refinement counts must be nonnegative");
  }
  for (double v : {cd_fraction, temp_start, temp_end, lr_field, lr_transform, lr_final_fraction, lr_refine, prune_cost, ik_lr, eps_merge, lambda_spatial,
                   lambda_1dof, weights.cd, weights.emd, weights.flow}) {
    if (!std::isfinite(v)) throw Error(ErrorCode::Format, "fit configuration has a non-finite value");
  }
  if (cd_fraction < 0.0 || cd_fraction > 1.0) throw Error(ErrorCode::Format, "cd_fraction must lie in [0, 1]");
  if (temp_start <= 0.0 || temp_end <= 0.0) throw Error(ErrorCode::Format, "temperatures must be positive");
  if (lr_final_fraction <= 0.0 || lr_final_fraction > 1.0) {
    throw Error(ErrorCode::Format, "lr_final_fraction must lie in (0, 1]");
  }
}

RigidTransform RelaxedModel::transform(int part, int frame) const {
  return exp_twist(twists[static_cast<std::size_t>(part)][static_cast<std::size_t>(frame)]);
}

std::vector<int> RelaxedModel::part_sizes() const {
  std::vector<int> sizes(static_cast<std::size_t>(num_parts()), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  return sizes;
}

std::vector<FlowField> build_flows(const Sequence& sequence, FlowSource source) {
  std::vector<FlowField> flows(sequence.frames.size());
  parallel_for(sequence.num_frames(), [&](int t) {
    if (t == 0) return;
    const auto ut = static_cast<std::size_t>(t);
    flows[ut] = source == FlowSource::GroundTruth ? flow_from_cloud(sequence.frames[ut])
                                                  : mnn_flow(sequence.frames[ut], sequence.frames[ut - 1]);
  });
  return flows;
}

std::vector<Vec3> pose_relaxed(const RelaxedModel& model, int frame) {
  std::vector<RigidTransform> transforms(static_cast<std::size_t>(model.num_parts()));
  for (int i = 0; i < model.num_parts(); ++i) transforms[static_cast<std::size_t>(i)] = model.transform(i, frame);
  return pose_points(model.canonical_points, model.labels, transforms);
}

namespace {

// Reconstruction energy of posed canonical clouds against the observed
// sequence, with per-point gradients. The canonical frame is skipped for
// Chamfer and EMD: it is pinned to the observation and contributes zero.
class ReconsEvaluator {
 public:
  ReconsEvaluator(const Sequence& seq, const std::vector<FlowField>& flows, int canonical, Reduction reduction)
      : seq_(seq), flows_(flows), canonical_(canonical), reduction_(reduction) {
    const int T = seq.num_frames();
    trees_.resize(static_cast<std::size_t>(T));
    parallel_for(T, [&](int t) {
      trees_[static_cast<std::size_t>(t)] = KdTree(seq.frames[static_cast<std::size_t>(t)].points);
    });
  }

  void set_emd(int factor, int refresh) {
    const int T = seq_.num_frames();
    const auto& canon = seq_.frames[static_cast<std::size_t>(canonical_)].points;
    int m = static_cast<int>((canon.size() + static_cast<std::size_t>(factor) - 1) / static_cast<std::size_t>(factor));
    for (const auto& f : seq_.frames) {
      m = std::min(m, static_cast<int>((f.points.size() + static_cast<std::size_t>(factor) - 1) /
                                       static_cast<std::size_t>(factor)));
    }
    pred_idx_ = farthest_point_sample(canon, m, 0);
    obs_sub_.assign(static_cast<std::size_t>(T), {});
    parallel_for(T, [&](int t) {
      const auto& pts = seq_.frames[static_cast<std::size_t>(t)].points;
      const auto idx = farthest_point_sample(pts, m, 0);
      auto& sub = obs_sub_[static_cast<std::size_t>(t)];
      sub.reserve(idx.size());
      for (int i : idx) sub.push_back(pts[static_cast<std::size_t>(i)]);
    });
    assignments_.assign(static_cast<std::size_t>(T), Assignment{});
    prices_.assign(static_cast<std::size_t>(T), {});
    refresh_ = refresh;
    calls_ = 0;
  }

  EnergyBreakdown evaluate(const std::vector<std::vector<Vec3>>& posed, const EnergyWeights& w,
                           std::vector<std::vector<Vec3>>& grads) {
    const int T = seq_.num_frames();
    const bool refresh = refresh_ > 0 && calls_ % refresh_ == 0;
    ++calls_;
    grads.resize(static_cast<std::size_t>(T));
    std::vector<std::vector<Vec3>> prev_grads(static_cast<std::size_t>(T));
    std::vector<EnergyBreakdown> per(static_cast<std::size_t>(T));
    parallel_for(T, [&](int t) {
      const auto ut = static_cast<std::size_t>(t);
      auto& g = grads[ut];
      g.assign(posed[ut].size(), Vec3::Zero());
      std::vector<Vec3> tmp, tmp_prev;
      if (w.cd != 0.0 && t != canonical_) {
        per[ut].cd = chamfer_grad(posed[ut], seq_.frames[ut].points, trees_[ut], tmp, reduction_);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += w.cd * tmp[k];
      }
      if (w.emd != 0.0 && t != canonical_) {
        if (pred_idx_.empty()) throw Error(ErrorCode::Format, "EMD subsampling was not configured");
        std::vector<Vec3> sub(pred_idx_.size());
        for (std::size_t i = 0; i < pred_idx_.size(); ++i) sub[i] = posed[ut][static_cast<std::size_t>(pred_idx_[i])];
        if (refresh || assignments_[ut].permutation.empty()) {
          assignments_[ut] = lap_solve(squared_distance_costs(sub, obs_sub_[ut]), prices_[ut]);
        }
        per[ut].emd = emd_grad(sub, obs_sub_[ut], assignments_[ut], tmp, reduction_);
        for (std::size_t i = 0; i < pred_idx_.size(); ++i) g[static_cast<std::size_t>(pred_idx_[i])] += w.emd * tmp[i];
      }
      if (w.flow != 0.0 && t > 0) {
        per[ut].flow = flow_energy_grad(posed[ut], posed[ut - 1], flows_[ut], kFlowNeighbors, tmp, tmp_prev, reduction_);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += w.flow * tmp[k];
        for (auto& v : tmp_prev) v *= w.flow;
        prev_grads[ut] = std::move(tmp_prev);
      }
    });
    EnergyBreakdown e;
    for (int t = 0; t < T; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      e.cd += per[ut].cd;
      e.emd += per[ut].emd;
      e.flow += per[ut].flow;
      if (t > 0 && !prev_grads[ut].empty()) {
        auto& g = grads[ut - 1];
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += prev_grads[ut][k];
      }
    }
    e.total = w.cd * e.cd + w.emd * e.emd + w.flow * e.flow;
    return e;
  }

 private:
  const Sequence& seq_;
  const std::vector<FlowField>& flows_;
  int canonical_;
  Reduction reduction_;
  std::vector<KdTree> trees_;
  std::vector<int> pred_idx_;
  std::vector<std::vector<Vec3>> obs_sub_;
  std::vector<Assignment> assignments_;
  std::vector<std::vector<double>> prices_;
  int refresh_ = 1;
  long long calls_ = 0;
};

using Deriv6 = Eigen::Matrix<double, 6, 1>;
using AD6 = Eigen::AutoDiffScalar<Deriv6>;

// d/dxi of a scalar given its gradient with respect to Exp(xi).
Deriv6 twist_gradient(const double* xi, const TransformGrad& g) {
  Eigen::Matrix<AD6, 3, 1> omega, v;
  for (int k = 0; k < 3; ++k) {
    omega[k] = AD6(xi[k], 6, k);
    v[k] = AD6(xi[3 + k], 6, 3 + k);
  }
  Eigen::Matrix<AD6, 3, 3> R;
  Eigen::Matrix<AD6, 3, 1> t;
  exp_twist<AD6>(omega, v, R, t);
  Deriv6 out = Deriv6::Zero();
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) out += g.rotation(a, b) * R(a, b).derivatives();
    out += g.translation[a] * t[a].derivatives();
  }
  return out;
}

void log_header(const FitConfig& config) {
  if (config.log && config.log_every > 0) *config.log << "iter,E_total,E_CD,E_EMD,E_flow,temp\n";
}

void log_line(const FitConfig& config, int iter, const EnergyBreakdown& e, double temp) {
  if (!config.log || config.log_every <= 0 || iter % config.log_every != 0) return;
  *config.log << iter << ',' << e.total << ',' << e.cd << ',' << e.emd << ',' << e.flow << ',' << temp << '\n';
}

void check_frames(const Sequence& sequence, const std::vector<FlowField>& flows, int canonical, int min_points) {
  sequence.validate();
  if (canonical < 0 || canonical >= sequence.num_frames()) {
    throw Error(ErrorCode::DegenerateInput, "canonical frame index out of range");
  }
  if (flows.size() != sequence.frames.size()) {
    throw Error(ErrorCode::SizeMismatch, "one flow field per frame is required");
  }
  for (const auto& f : sequence.frames) {
    if (static_cast<int>(f.points.size()) < min_points) {
      throw Error(ErrorCode::DegenerateInput, "frame " + std::to_string(f.frame_index) + " has fewer than " +
                                                  std::to_string(min_points) + " points");
    }
  }
}

}  // namespace

RelaxedModel fit_relaxed(const Sequence& sequence, const std::vector<FlowField>& flows, int canonical,
                         const FitConfig& config) {
  config.validate();
  check_frames(sequence, flows, canonical, config.max_parts);
  const int T = sequence.num_frames();
  const int S = config.max_parts;
  const auto uS = static_cast<std::size_t>(S);
  const auto uT = static_cast<std::size_t>(T);
  const std::vector<Vec3>& X = sequence.frames[static_cast<std::size_t>(canonical)].points;
  const int N = static_cast<int>(X.size());
  const auto uN = static_cast<std::size_t>(N);

  SegFieldParams field = SegFieldParams::init(S, config.hidden, config.seed);
  field.normalization = Normalization::fit(X);
  std::vector<double> field_flat = field.flatten();
  std::vector<double> xi(uS * uT * 6, 0.0);  // [slot][frame][6]
  AdamMoments field_moments, xi_moments;
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  ReconsEvaluator eval(sequence, flows, canonical, config.reduction);
  const int iters = config.iters_stage1;
  const int cd_iters = static_cast<int>(std::lround(config.cd_fraction * iters));
  const EnergyWeights cd_weights{config.weights.cd, 0.0, config.weights.flow};
  const EnergyWeights emd_weights{0.0, config.weights.emd, config.weights.flow};
  bool emd_ready = false;

  std::vector<int> hard(uN);
  Eigen::MatrixXd soft(S, N);
  std::vector<std::vector<Vec3>> posed(uT, std::vector<Vec3>(uN)), grads;
  std::vector<RigidTransform> transforms(uS * uT);
  const int feat = 12 * (T - 1);
  Eigen::MatrixXd P(S, feat);   // per slot: [vec(R), t] for each non-canonical frame
  Eigen::MatrixXd F(feat, N);   // per point: [vec(g x^T), g]
  std::vector<double> xi_grad(xi.size());
  EnergyBreakdown last;

  log_header(config);
  for (int it = 0; it < iters; ++it) {
    const double temp = cosine_temperature(it, iters, config.temp_start, config.temp_end);
    const bool cd_phase = it < cd_iters;
    if (!cd_phase && !emd_ready) {
      eval.set_emd(config.emd_downsample_stage1, config.emd_refresh_stage1);
      emd_ready = true;
    }

    field.unflatten(field_flat);
    const FieldBatch batch = field_forward(field, X);
    for (int k = 0; k < N; ++k) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = 0;
      for (int s = 0; s < S; ++s) {
        double u = uniform(rng);
        if (u <= 0.0) u = std::numeric_limits<double>::min();
        const double z = (batch.logits(s, k) - std::log(-std::log(u))) / temp;
        soft(s, k) = z;
        if (z > best) {
          best = z;
          arg = s;
        }
      }
      double sum = 0.0;
      for (int s = 0; s < S; ++s) {
        soft(s, k) = std::exp(soft(s, k) - best);
        sum += soft(s, k);
      }
      soft.col(k) /= sum;
      hard[static_cast<std::size_t>(k)] = arg;
    }

    for (std::size_t s = 0; s < uS; ++s) {
      for (std::size_t t = 0; t < uT; ++t) {
        const double* p = &xi[(s * uT + t) * 6];
        transforms[s * uT + t] =
            static_cast<int>(t) == canonical ? RigidTransform{} : exp_twist(Twist{Vec3(p[0], p[1], p[2]), Vec3(p[3], p[4], p[5])});
      }
    }
    for (std::size_t t = 0; t < uT; ++t) {
      if (static_cast<int>(t) == canonical) {
        posed[t] = X;
        continue;
      }
      for (std::size_t k = 0; k < uN; ++k) posed[t][k] = transforms[static_cast<std::size_t>(hard[k]) * uT + t].apply(X[k]);
    }

    last = eval.evaluate(posed, cd_phase ? cd_weights : emd_weights, grads);
    log_line(config, it, last, temp);

    // Transform gradients through the hard assignment.
    std::vector<TransformGrad> tg(uS * uT);
    for (std::size_t t = 0; t < uT; ++t) {
      if (static_cast<int>(t) == canonical) continue;
      for (std::size_t k = 0; k < uN; ++k) tg[static_cast<std::size_t>(hard[k]) * uT + t].add_point(X[k], grads[t][k]);
    }
    std::fill(xi_grad.begin(), xi_grad.end(), 0.0);
    for (std::size_t s = 0; s < uS; ++s) {
      for (std::size_t t = 0; t < uT; ++t) {
        if (static_cast<int>(t) == canonical) continue;
        const TransformGrad& g = tg[s * uT + t];
        if (g.translation.isZero(0.0) && g.rotation.isZero(0.0)) continue;
        const Deriv6 d = twist_gradient(&xi[(s * uT + t) * 6], g);
        for (int q = 0; q < 6; ++q) xi_grad[(s * uT + t) * 6 + static_cast<std::size_t>(q)] = d[q];
      }
    }

    // Soft path: dE/dsoft[s][k] = sum_t <g_k^t, T_s^t x_k>.
    int col = 0;
    for (std::size_t t = 0; t < uT; ++t) {
      if (static_cast<int>(t) == canonical) continue;
      for (std::size_t s = 0; s < uS; ++s) {
        const RigidTransform& Tr = transforms[s * uT + t];
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) P(static_cast<Eigen::Index>(s), col + 3 * a + b) = Tr.rotation(a, b);
          P(static_cast<Eigen::Index>(s), col + 9 + a) = Tr.translation[a];
        }
      }
      for (std::size_t k = 0; k < uN; ++k) {
        const Vec3& g = grads[t][k];
        const Vec3& x = X[k];
        auto c = F.col(static_cast<Eigen::Index>(k));
        for (int a = 0; a < 3; ++a) {
          for (int b = 0; b < 3; ++b) c[col + 3 * a + b] = g[a] * x[b];
          c[col + 9 + a] = g[a];
        }
      }
      col += 12;
    }
    Eigen::MatrixXd dlogits = P * F;  // dsoft, S x N
    for (int k = 0; k < N; ++k) {
      auto ds = dlogits.col(k);
      const double inner = soft.col(k).dot(ds);
      ds = (soft.col(k).array() * (ds.array() - inner)).matrix() / temp;
    }
    const std::vector<double> field_grad = field_backward(field, batch, dlogits);

    const double lr_scale = cosine_temperature(it, iters, 1.0, config.lr_final_fraction);
    adam_step(field_moments, field_flat, field_grad, config.lr_field * lr_scale);
    adam_step(xi_moments, xi, xi_grad, config.lr_transform * lr_scale);
  }

  field.unflatten(field_flat);
  const std::vector<int> labels = hard_labels(field, X);
  std::vector<int> counts(uS, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];

  RelaxedModel out;
  out.canonical_index = canonical;
  out.segfield = field;
  out.slot_to_part.assign(uS, -1);
  out.canonical_points = X;
  for (std::size_t s = 0; s < uS; ++s) {
    if (counts[s] == 0) continue;
    out.slot_to_part[s] = out.num_parts();
    std::vector<Twist> traj(uT);
    for (std::size_t t = 0; t < uT; ++t) {
      const double* p = &xi[(s * uT + t) * 6];
      traj[t] = static_cast<int>(t) == canonical ? Twist{} : Twist{Vec3(p[0], p[1], p[2]), Vec3(p[3], p[4], p[5])};
    }
    out.twists.push_back(std::move(traj));
  }
  out.labels.resize(uN);
  for (std::size_t k = 0; k < uN; ++k) out.labels[k] = out.slot_to_part[static_cast<std::size_t>(labels[k])];
  out.energy = last;
  return out;
}

namespace {

// Drops parts that own no point and renumbers the rest in order.
void compact_parts(RelaxedModel& model) {
  const std::vector<int> sizes = model.part_sizes();
  std::vector<int> remap(sizes.size(), -1);
  std::vector<std::vector<Twist>> twists;
  for (std::size_t p = 0; p < sizes.size(); ++p) {
    if (sizes[p] == 0) continue;
    remap[p] = static_cast<int>(twists.size());
    twists.push_back(std::move(model.twists[p]));
  }
  model.twists = std::move(twists);
  for (int& l : model.labels) l = remap[static_cast<std::size_t>(l)];
  for (int& s : model.slot_to_part) {
    if (s >= 0) s = remap[static_cast<std::size_t>(s)];
  }
}

void polish_transforms(RelaxedModel& model, ReconsEvaluator& eval, const FitConfig& config) {
  const int P = model.num_parts();
  const int T = model.num_frames();
  const auto uT = static_cast<std::size_t>(T);
  const auto& X = model.canonical_points;
  const auto uN = X.size();
  const int canonical = model.canonical_index;
  const EnergyWeights weights{config.weights.cd, 0.0, config.weights.flow};
  std::vector<double> xi(static_cast<std::size_t>(P) * uT * 6);
  for (int p = 0; p < P; ++p) {
    for (std::size_t t = 0; t < uT; ++t) {
      const Twist& tw = model.twists[static_cast<std::size_t>(p)][t];
      double* d = &xi[(static_cast<std::size_t>(p) * uT + t) * 6];
      for (int a = 0; a < 3; ++a) {
        d[a] = tw.omega[a];
        d[3 + a] = tw.v[a];
      }
    }
  }
  std::vector<double> grad(xi.size());
  std::vector<std::vector<Vec3>> posed(uT, std::vector<Vec3>(uN)), grads;
  std::vector<RigidTransform> transforms(xi.size() / 6);
  AdamMoments moments;
  for (int it = 0; it < config.refine_iters; ++it) {
    for (std::size_t i = 0; i < transforms.size(); ++i) {
      const double* d = &xi[i * 6];
      transforms[i] = static_cast<int>(i % uT) == canonical ? RigidTransform{}
                                                            : exp_twist(Twist{Vec3(d[0], d[1], d[2]), Vec3(d[3], d[4], d[5])});
    }
    for (std::size_t t = 0; t < uT; ++t) {
      for (std::size_t k = 0; k < uN; ++k) {
        posed[t][k] = transforms[static_cast<std::size_t>(model.labels[k]) * uT + t].apply(X[k]);
      }
    }
    eval.evaluate(posed, weights, grads);
    std::vector<TransformGrad> tg(transforms.size());
    for (std::size_t t = 0; t < uT; ++t) {
      if (static_cast<int>(t) == canonical) continue;
      for (std::size_t k = 0; k < uN; ++k) tg[static_cast<std::size_t>(model.labels[k]) * uT + t].add_point(X[k], grads[t][k]);
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < transforms.size(); ++i) {
      if (static_cast<int>(i % uT) == canonical) continue;
      const Deriv6 d = twist_gradient(&xi[i * 6], tg[i]);
      for (int q = 0; q < 6; ++q) grad[i * 6 + static_cast<std::size_t>(q)] = d[q];
    }
    adam_step(moments, xi, grad, config.lr_refine);
  }
  for (int p = 0; p < P; ++p) {
    for (std::size_t t = 0; t < uT; ++t) {
      if (static_cast<int>(t) == canonical) continue;
      const double* d = &xi[(static_cast<std::size_t>(p) * uT + t) * 6];
      model.twists[static_cast<std::size_t>(p)][t] = Twist{Vec3(d[0], d[1], d[2]), Vec3(d[3], d[4], d[5])};
    }
  }
}

// Each point goes to the part whose motion best explains it: squared distance
// to the nearest observation plus squared flow residual, summed over frames.
// Parts whose points' flow the others explain nearly as well are then removed
// one at a time. Chamfer is left out of that test: surfaces seen in the
// canonical frame but hidden later let a spurious part lower it.
void relabel_by_cost(RelaxedModel& model, const std::vector<KdTree>& trees, const std::vector<FlowField>& flows,
                     const FitConfig& config) {
  const int P = model.num_parts();
  const int T = model.num_frames();
  const int canonical = model.canonical_index;
  std::vector<RigidTransform> transforms(static_cast<std::size_t>(P * T));
  for (int p = 0; p < P; ++p) {
    for (int t = 0; t < T; ++t) transforms[static_cast<std::size_t>(p * T + t)] = model.transform(p, t);
  }
  const auto& X = model.canonical_points;
  const auto uP = static_cast<std::size_t>(P);
  const bool use_flow = config.weights.flow != 0.0;
  std::vector<double> cost(X.size() * uP, 0.0), flow_cost(X.size() * uP, 0.0);
  parallel_for(static_cast<int>(X.size()), [&](int k) {
    const Vec3& x = X[static_cast<std::size_t>(k)];
    for (int p = 0; p < P; ++p) {
      double c = 0.0, f = 0.0;
      Vec3 prev = Vec3::Zero();
      for (int t = 0; t < T; ++t) {
        const Vec3 y = transforms[static_cast<std::size_t>(p * T + t)].apply(x);
        if (t != canonical) {
          double d2 = 0.0;
          trees[static_cast<std::size_t>(t)].nearest(y, &d2);
          c += config.weights.cd * d2;
        }
        if (use_flow && t > 0) {
          f += config.weights.flow * ((y - prev) - interp_flow(y, flows[static_cast<std::size_t>(t)])).squaredNorm();
        }
        prev = y;
      }
      cost[static_cast<std::size_t>(k) * uP + static_cast<std::size_t>(p)] = c + f;
      flow_cost[static_cast<std::size_t>(k) * uP + static_cast<std::size_t>(p)] = f;
    }
  });

  const std::vector<double>& evidence = use_flow ? flow_cost : cost;
  std::vector<bool> alive(uP, true);
  int n_alive = P;
  for (;;) {
    std::vector<double> gain(uP, 0.0);
    std::vector<int> count(uP, 0);
    for (std::size_t k = 0; k < X.size(); ++k) {
      const double* c = &cost[k * uP];
      const double* e = &evidence[k * uP];
      int first = -1;
      for (int p = 0; p < P; ++p) {
        if (alive[static_cast<std::size_t>(p)] && (first < 0 || c[p] < c[first])) first = p;
      }
      double alt = std::numeric_limits<double>::infinity();
      for (int p = 0; p < P; ++p) {
        if (alive[static_cast<std::size_t>(p)] && p != first) alt = std::min(alt, e[p]);
      }
      model.labels[k] = first;
      const auto uf = static_cast<std::size_t>(first);
      ++count[uf];
      if (std::isfinite(alt)) gain[uf] += alt - e[first];
    }
    if (n_alive <= 1) break;
    int weakest = -1;
    for (std::size_t p = 0; p < uP; ++p) {
      if (!alive[p] || count[p] == 0) continue;
      gain[p] /= count[p];
      if (weakest < 0 || gain[p] < gain[static_cast<std::size_t>(weakest)]) weakest = static_cast<int>(p);
    }
    if (weakest < 0 || gain[static_cast<std::size_t>(weakest)] >= config.prune_cost) break;
    alive[static_cast<std::size_t>(weakest)] = false;
    --n_alive;
  }
}

// Fits the field to the current labels (softmax cross-entropy) and takes its
// argmax as the final labelling, so labels and field agree.
void distill_field(RelaxedModel& model, const FitConfig& config) {
  const auto& X = model.canonical_points;
  const int N = static_cast<int>(X.size());
  const int S = model.segfield.n_max();
  std::vector<int> part_to_slot(static_cast<std::size_t>(model.num_parts()), -1);
  std::vector<int> free_slots;
  for (int s = 0; s < S; ++s) {
    const int p = model.slot_to_part[static_cast<std::size_t>(s)];
    if (p >= 0) {
      part_to_slot[static_cast<std::size_t>(p)] = s;
    } else {
      free_slots.push_back(s);
    }
  }
  for (auto& s : part_to_slot) {
    if (s >= 0) continue;
    s = free_slots.back();
    free_slots.pop_back();
  }
  model.slot_to_part.assign(static_cast<std::size_t>(S), -1);
  for (std::size_t p = 0; p < part_to_slot.size(); ++p) model.slot_to_part[static_cast<std::size_t>(part_to_slot[p])] = static_cast<int>(p);

  std::vector<double> flat = model.segfield.flatten();
  AdamMoments moments;
  for (int it = 0; it < config.distill_iters; ++it) {
    model.segfield.unflatten(flat);
    const FieldBatch batch = field_forward(model.segfield, X);
    Eigen::MatrixXd dlogits(S, N);
    for (int k = 0; k < N; ++k) {
      const auto z = batch.logits.col(k);
      const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp().matrix();
      dlogits.col(k) = e / e.sum();
      dlogits(part_to_slot[static_cast<std::size_t>(model.labels[static_cast<std::size_t>(k)])], k) -= 1.0;
    }
    dlogits /= N;
    adam_step(moments, flat, field_backward(model.segfield, batch, dlogits), config.lr_field * 10.0);
  }
  model.segfield.unflatten(flat);
  const std::vector<int> slots = hard_labels(model.segfield, X);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const int p = model.slot_to_part[static_cast<std::size_t>(slots[k])];
    if (p >= 0) model.labels[k] = p;
  }
}

}  // namespace

void refine_relaxed(RelaxedModel& model, const Sequence& sequence, const std::vector<FlowField>& flows,
                    const FitConfig& config) {
  config.validate();
  if (config.refine_rounds == 0 || model.num_parts() == 0) return;
  check_frames(sequence, flows, model.canonical_index, 1);
  ReconsEvaluator eval(sequence, flows, model.canonical_index, config.reduction);
  std::vector<KdTree> trees;
  trees.reserve(sequence.frames.size());
  for (const auto& f : sequence.frames) trees.emplace_back(f.points);
  for (int round = 0; round < config.refine_rounds; ++round) {
    polish_transforms(model, eval, config);
    relabel_by_cost(model, trees, flows, config);
    compact_parts(model);
  }
  if (config.distill_iters > 0) {
    distill_field(model, config);
    compact_parts(model);
  }
}

namespace {

constexpr int kStateStride = 5;  // tau, d, rotation vector

struct FinalLayout {
  std::vector<int> joints;  // non-root parts in index order
  int frames = 0;
  int canonical = 0;

  std::size_t screw_offset(std::size_t j) const { return j * 6; }
  std::size_t state_offset(std::size_t j, int t) const {
    return (static_cast<std::size_t>(t) * joints.size() + j) * kStateStride;
  }
};

}  // namespace

ArticulatedModel final_fit(const ArticulatedModel& input, const Sequence& sequence,
                           const std::vector<FlowField>& flows, const FitConfig& config) {
  config.validate();
  input.validate();
  const int canonical = input.canonical_index;
  check_frames(sequence, flows, canonical, 1);
  const int T = sequence.num_frames();
  if (input.num_frames() != T) throw Error(ErrorCode::SizeMismatch, "model and sequence frame counts differ");
  const auto uT = static_cast<std::size_t>(T);
  const int n = input.num_parts();
  const auto& X = input.canonical_points;
  const auto& labels = input.canonical_labels;

  FinalLayout lay;
  lay.frames = T;
  lay.canonical = canonical;
  for (int i = 0; i < n; ++i) {
    if (i != input.tree.root) lay.joints.push_back(i);
  }
  const std::size_t J = lay.joints.size();
  if (J == 0) return input;

  std::vector<double> screws(J * 6), states(J * uT * kStateStride, 0.0);
  for (std::size_t j = 0; j < J; ++j) {
    const Joint& jt = input.joints[static_cast<std::size_t>(lay.joints[j])];
    for (int k = 0; k < 3; ++k) {
      screws[lay.screw_offset(j) + static_cast<std::size_t>(k)] = jt.screw.axis[k];
      screws[lay.screw_offset(j) + 3 + static_cast<std::size_t>(k)] = jt.screw.moment[k];
    }
    for (int t = 0; t < T; ++t) {
      if (t == canonical) continue;
      const JointState& s = input.states[static_cast<std::size_t>(t)][static_cast<std::size_t>(lay.joints[j])];
      double* p = &states[lay.state_offset(j, t)];
      p[0] = s.tau;
      p[1] = s.d;
      for (int k = 0; k < 3; ++k) p[2 + k] = s.rotation[k];
    }
  }

  auto unpack = [&](const std::vector<double>& sc, const std::vector<double>& st, ArticulatedModel& m) {
    for (std::size_t j = 0; j < J; ++j) {
      const auto part = static_cast<std::size_t>(lay.joints[j]);
      Joint& jt = m.joints[part];
      jt.screw.axis = Vec3(sc[j * 6], sc[j * 6 + 1], sc[j * 6 + 2]);
      jt.screw.moment = Vec3(sc[j * 6 + 3], sc[j * 6 + 4], sc[j * 6 + 5]);
      for (int t = 0; t < T; ++t) {
        JointState& s = m.states[static_cast<std::size_t>(t)][part];
        if (t == canonical) {
          s = JointState{};
          continue;
        }
        const double* p = &st[lay.state_offset(j, t)];
        s.tau = p[0];
        s.d = p[1];
        s.rotation = Vec3(p[2], p[3], p[4]);
      }
    }
  };

  // Zero out state entries the joint type does not use.
  auto mask_states = [&](std::vector<double>& st) {
    for (std::size_t j = 0; j < J; ++j) {
      const JointType type = input.joints[static_cast<std::size_t>(lay.joints[j])].type;
      for (int t = 0; t < T; ++t) {
        double* p = &st[lay.state_offset(j, t)];
        if (t == canonical) {
          std::fill(p, p + kStateStride, 0.0);
          continue;
        }
        if (type == JointType::Prismatic) p[0] = 0.0;
        if (type == JointType::Revolute) p[1] = 0.0;
        if (type == JointType::Spherical) {
          p[0] = 0.0;
          p[1] = 0.0;
        } else {
          p[2] = p[3] = p[4] = 0.0;
        }
      }
    }
  };
  auto normalize_axes = [&](std::vector<double>& sc) {
    for (std::size_t j = 0; j < J; ++j) {
      if (input.joints[static_cast<std::size_t>(lay.joints[j])].type == JointType::Spherical) continue;
      Vec3 l(sc[j * 6], sc[j * 6 + 1], sc[j * 6 + 2]);
      const double norm = l.norm();
      if (!(norm > 0.0)) continue;
      l /= norm;
      for (int k = 0; k < 3; ++k) sc[j * 6 + static_cast<std::size_t>(k)] = l[k];
    }
  };
  auto constrain = [&](std::vector<double>& sc, std::vector<double>& st) {
    normalize_axes(sc);
    mask_states(st);
  };
  constrain(screws, states);

  ReconsEvaluator eval(sequence, flows, canonical, config.reduction);
  eval.set_emd(config.emd_downsample_final, config.emd_refresh_final);
  ArticulatedModel work = input;
  std::vector<std::vector<Vec3>> posed(uT), grads;
  AdamMoments screw_moments, state_moments;
  std::vector<double> screw_grad(screws.size()), state_grad(states.size());
  std::vector<double> best_screws = screws, best_states = states;
  double best_energy = std::numeric_limits<double>::infinity();

  auto evaluate = [&](bool with_grad) {
    unpack(screws, states, work);
    std::vector<std::vector<RigidTransform>> world(uT);
    for (int t = 0; t < T; ++t) {
      const auto ut = static_cast<std::size_t>(t);
      if (t == canonical) {
        posed[ut] = X;
        world[ut].assign(static_cast<std::size_t>(n), RigidTransform{});
        continue;
      }
      world[ut] = forward_kinematics(work, work.states[ut]);
      posed[ut] = pose_points(X, labels, world[ut]);
    }
    const EnergyBreakdown e = eval.evaluate(posed, config.weights, grads);
    if (!with_grad) return e;
    std::fill(screw_grad.begin(), screw_grad.end(), 0.0);
    std::fill(state_grad.begin(), state_grad.end(), 0.0);
    for (int t = 0; t < T; ++t) {
      if (t == canonical) continue;
      const auto ut = static_cast<std::size_t>(t);
      std::vector<TransformGrad> wg(static_cast<std::size_t>(n));
      for (std::size_t k = 0; k < X.size(); ++k) wg[static_cast<std::size_t>(labels[k])].add_point(X[k], grads[ut][k]);
      const auto jg = chain_gradient(work.tree, work.joints, work.states[ut], wg);
      for (std::size_t j = 0; j < J; ++j) {
        const JointGrad& g = jg[static_cast<std::size_t>(lay.joints[j])];
        for (int k = 0; k < 3; ++k) {
          screw_grad[j * 6 + static_cast<std::size_t>(k)] += g.axis[k];
          screw_grad[j * 6 + 3 + static_cast<std::size_t>(k)] += g.moment[k];
        }
        double* p = &state_grad[lay.state_offset(j, t)];
        p[0] = g.tau;
        p[1] = g.d;
        for (int k = 0; k < 3; ++k) p[2 + k] = g.rotation[k];
      }
    }
    // Spherical joints keep their centre in `moment`; the chain gradient
    // reports it under `axis`.
    for (std::size_t j = 0; j < J; ++j) {
      if (input.joints[static_cast<std::size_t>(lay.joints[j])].type != JointType::Spherical) continue;
      for (int k = 0; k < 3; ++k) {
        screw_grad[j * 6 + 3 + static_cast<std::size_t>(k)] = screw_grad[j * 6 + static_cast<std::size_t>(k)];
        screw_grad[j * 6 + static_cast<std::size_t>(k)] = 0.0;
      }
    }
    mask_states(state_grad);
    return e;
  };

  log_header(config);
  for (int it = 0; it < config.iters_final; ++it) {
    const EnergyBreakdown e = evaluate(true);
    log_line(config, it, e, 0.0);
    if (e.total < best_energy) {
      best_energy = e.total;
      best_screws = screws;
      best_states = states;
    }
    adam_step(screw_moments, screws, screw_grad, config.lr_transform);
    adam_step(state_moments, states, state_grad, config.lr_transform);
    constrain(screws, states);
  }
  const EnergyBreakdown e = evaluate(false);
  if (e.total < best_energy) {
    best_screws = screws;
    best_states = states;
  }
  ArticulatedModel out = input;
  unpack(best_screws, best_states, out);
  return out;
}

double group_energy(std::span<const Vec3> points, std::span<const int> labels, int num_parts) {
  if (points.size() != labels.size()) throw Error(ErrorCode::SizeMismatch, "points and labels differ in length");
  const auto n = static_cast<std::size_t>(num_parts);
  std::vector<Vec3> centroid(n, Vec3::Zero());
  std::vector<int> count(n, 0);
  for (std::size_t k = 0; k < points.size(); ++k) {
    centroid[static_cast<std::size_t>(labels[k])] += points[k];
    ++count[static_cast<std::size_t>(labels[k])];
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i] == 0) throw Error(ErrorCode::EmptyPart, "part " + std::to_string(i) + " has no points");
    centroid[i] /= count[i];
  }
  std::vector<double> spread(n, 0.0);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const auto l = static_cast<std::size_t>(labels[k]);
    spread[l] += (points[k] - centroid[l]).squaredNorm();
  }
  double e = 0.0;
  for (std::size_t i = 0; i < n; ++i) e += spread[i] / count[i];
  return e / static_cast<double>(n);
}

double group_energy(const ArticulatedModel& model) {
  return group_energy(model.canonical_points, model.canonical_labels, model.num_parts());
}

CanonicalChoice select_canonical(const Sequence& sequence, const std::vector<FlowField>& flows,
                                 const std::vector<int>& candidates, const FitConfig& config) {
  if (candidates.empty()) throw Error(ErrorCode::DegenerateInput, "no canonical frame candidates");
  for (int c : candidates) {
    if (c < 0 || c >= sequence.num_frames()) throw Error(ErrorCode::DegenerateInput, "candidate frame out of range");
  }
  std::vector<ArticulatedModel> models(candidates.size());
  std::vector<double> scores(candidates.size());
  parallel_for(static_cast<int>(candidates.size()), [&](int i) {
    const auto ui = static_cast<std::size_t>(i);
    RelaxedModel relaxed = fit_relaxed(sequence, flows, candidates[ui], config);
    refine_relaxed(relaxed, sequence, flows, config);
    models[ui] = project(relaxed, config);
    scores[ui] = models[ui].e_project + (config.use_group_energy ? group_energy(models[ui]) : 0.0);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    if (scores[i] < scores[best]) best = i;
  }
  CanonicalChoice out;
  out.canonical = candidates[best];
  out.model = std::move(models[best]);
  out.candidates = candidates;
  out.scores = scores;
  return out;
}

ArticulatedModel fit_sequence(const Sequence& sequence, const std::vector<FlowField>& flows,
                              const std::vector<int>& candidates, const FitConfig& config) {
  CanonicalChoice choice = select_canonical(sequence, flows, candidates, config);
  return final_fit(choice.model, sequence, flows, config);
}

}  // namespace reart
