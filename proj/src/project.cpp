#include "reart/project.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "reart/cloud.hpp"
#include "reart/error.hpp"
#include "reart/parallel.hpp"

namespace reart {

namespace {

constexpr double kIdentityTolerance = 1e-9;
constexpr double kPrismaticFallback = 1e-4;

bool near_identity(const RigidTransform& T) {
  return (T.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() < kIdentityTolerance &&
         T.translation.cwiseAbs().maxCoeff() < kIdentityTolerance;
}

Vec3 principal_direction(const std::vector<Vec3>& vs) {
  Mat3 s = Mat3::Zero();
  for (const Vec3& v : vs) s += v * v.transpose();
  Eigen::SelfAdjointEigenSolver<Mat3> eig(s);
  return eig.eigenvectors().col(2).normalized();
}

using Deriv8 = Eigen::Matrix<double, 8, 1>;
using AD = Eigen::AutoDiffScalar<Deriv8>;
using Vec3AD = Eigen::Matrix<AD, 3, 1>;
using Mat3AD = Eigen::Matrix<AD, 3, 3>;

// Residual vector whose squared norm is the per-frame trace residual.
template <typename T>
Eigen::Matrix<T, 12, 1> frame_residual(const RigidTransform& observed, const Eigen::Matrix<T, 3, 1>& a,
                                       const Eigen::Matrix<T, 3, 1>& m, const T& tau, const T& d) {
  using std::sqrt;
  const Eigen::Matrix<T, 3, 1> l = a / sqrt(a.squaredNorm());
  const Eigen::Matrix<T, 3, 1> omega = l * tau;
  const Eigen::Matrix<T, 3, 1> v = m.cross(l) * tau + l * d;
  Eigen::Matrix<T, 3, 3> R;
  Eigen::Matrix<T, 3, 1> t;
  exp_twist<T>(omega, v, R, t);
  const Eigen::Matrix<T, 3, 3> r_err = R.transpose() * observed.rotation.cast<T>();
  const Eigen::Matrix<T, 3, 1> t_err = R.transpose() * (observed.translation.cast<T>() - t);
  Eigen::Matrix<T, 12, 1> out;
  const T inv_sqrt2 = T(1.0 / std::sqrt(2.0));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out[3 * i + j] = (r_err(i, j) - (i == j ? T(1) : T(0))) * inv_sqrt2;
  }
  out.template tail<3>() = t_err;
  return out;
}

struct ScrewProblem {
  std::span<const RigidTransform> obs;
  int frames() const { return static_cast<int>(obs.size()); }
  int size() const { return 6 + 2 * frames(); }

  double cost(const Eigen::VectorXd& p) const {
    double c = 0.0;
    const Vec3 a = p.segment<3>(0), m = p.segment<3>(3);
    for (int t = 0; t < frames(); ++t) {
      c += frame_residual<double>(obs[static_cast<std::size_t>(t)], a, m, p[6 + t], p[6 + frames() + t]).squaredNorm();
    }
    return c;
  }

  // Gauss-Newton normal equations.
  void normal_equations(const Eigen::VectorXd& p, Eigen::MatrixXd& H, Eigen::VectorXd& g) const {
    const int n = size();
    const int T = frames();
    H = Eigen::MatrixXd::Zero(n, n);
    g = Eigen::VectorXd::Zero(n);
    Vec3AD a, m;
    for (int k = 0; k < 3; ++k) {
      a[k] = AD(p[k], 8, k);
      m[k] = AD(p[3 + k], 8, 3 + k);
    }
    for (int t = 0; t < T; ++t) {
      const AD tau(p[6 + t], 8, 6);
      const AD d(p[6 + T + t], 8, 7);
      const auto r = frame_residual<AD>(obs[static_cast<std::size_t>(t)], a, m, tau, d);
      Eigen::Matrix<double, 12, 8> J;
      Eigen::Matrix<double, 12, 1> rv;
      for (int i = 0; i < 12; ++i) {
        rv[i] = r[i].value();
        J.row(i) = r[i].derivatives().transpose();
      }
      const Eigen::Matrix<double, 8, 8> h = J.transpose() * J;
      const Eigen::Matrix<double, 8, 1> gl = J.transpose() * rv;
      const int idx[8] = {0, 1, 2, 3, 4, 5, 6 + t, 6 + T + t};
      for (int i = 0; i < 8; ++i) {
        g[idx[i]] += gl[i];
        for (int j = 0; j < 8; ++j) H(idx[i], idx[j]) += h(i, j);
      }
    }
  }
};

// Levenberg-Marquardt on the stacked per-frame residuals.
Eigen::VectorXd refine_screw(const ScrewProblem& prob, Eigen::VectorXd p) {
  double mu = 1e-6;
  double cost = prob.cost(p);
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  for (int it = 0; it < 100 && cost > 1e-30; ++it) {
    prob.normal_equations(p, H, g);
    bool accepted = false;
    for (int tries = 0; tries < 20; ++tries) {
      Eigen::MatrixXd A = H;
      A.diagonal().array() += mu * (1.0 + H.diagonal().array());
      const Eigen::VectorXd step = A.ldlt().solve(-g);
      if (!step.allFinite()) {
        mu *= 10.0;
        continue;
      }
      Eigen::VectorXd cand = p + step;
      const double norm = cand.segment<3>(0).norm();
      if (!(norm > 1e-12)) {
        mu *= 10.0;
        continue;
      }
      cand.segment<3>(0) /= norm;
      const double c = prob.cost(cand);
      if (c < cost) {
        const double gain = cost - c;
        p = cand;
        cost = c;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
        if (gain < 1e-16 * std::max(1.0, cost)) it = 100;
        break;
      }
      mu *= 4.0;
    }
    if (!accepted) break;
  }
  return p;
}

}  // namespace

double screw_residual(std::span<const RigidTransform> relative_transforms, const ScrewParams& screw,
                      std::span<const JointState> states) {
  if (states.size() != relative_transforms.size()) {
    throw Error(ErrorCode::SizeMismatch, "one joint state per transform expected");
  }
  double r = 0.0;
  for (std::size_t t = 0; t < states.size(); ++t) {
    r += trace_residual(relative(relative_transforms[t], screw_transform(screw, states[t])));
  }
  return r;
}

ScrewFit fit_screw_pair(std::span<const RigidTransform> rel) {
  if (rel.size() < 2) throw Error(ErrorCode::DegenerateInput, "screw fitting needs at least two frames");
  if (std::all_of(rel.begin(), rel.end(), near_identity)) {
    throw Error(ErrorCode::InsufficientMotion, "relative motion is the identity in every frame");
  }
  const int T = static_cast<int>(rel.size());
  std::vector<Vec3> omegas(rel.size());
  double mean_angle = 0.0;
  for (std::size_t t = 0; t < rel.size(); ++t) {
    omegas[t] = rotation_log(rel[t].rotation);
    mean_angle += omegas[t].norm() / T;
  }

  Eigen::VectorXd p = Eigen::VectorXd::Zero(6 + 2 * T);
  if (mean_angle < kPrismaticFallback) {
    std::vector<Vec3> trans(rel.size());
    for (std::size_t t = 0; t < rel.size(); ++t) trans[t] = rel[t].translation;
    const Vec3 l = canonical_axis_sign(principal_direction(trans));
    p.segment<3>(0) = l;
    for (int t = 0; t < T; ++t) p[6 + T + t] = l.dot(trans[static_cast<std::size_t>(t)]);
  } else {
    const Vec3 l = canonical_axis_sign(principal_direction(omegas));
    p.segment<3>(0) = l;
    for (int t = 0; t < T; ++t) p[6 + t] = l.dot(omegas[static_cast<std::size_t>(t)]);
    // t = (I - R) m + d l, solved jointly for m and every d.
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(3 * T, 3 + T);
    Eigen::VectorXd b(3 * T);
    for (int t = 0; t < T; ++t) {
      const Mat3 R = screw_transform({l, Vec3::Zero()}, {p[6 + t], 0.0}).rotation;
      A.block<3, 3>(3 * t, 0) = Mat3::Identity() - R;
      A.block<3, 1>(3 * t, 3 + t) = l;
      b.segment<3>(3 * t) = rel[static_cast<std::size_t>(t)].translation;
    }
    const Eigen::VectorXd x = A.completeOrthogonalDecomposition().solve(b);
    p.segment<3>(3) = x.head<3>();
    p.segment(6 + T, T) = x.tail(T);
  }

  const ScrewProblem prob{rel};
  p = refine_screw(prob, p);

  ScrewFit out;
  Vec3 l = p.segment<3>(0).normalized();
  // (l, tau, d) and (-l, -tau, -d) describe the same motion.
  const double sign = canonical_axis_sign(l) == l ? 1.0 : -1.0;
  l *= sign;
  Vec3 m = p.segment<3>(3);
  m -= l * l.dot(m);  // closest point to the origin on the axis line
  out.screw = {l, m};
  out.states.resize(rel.size());
  for (int t = 0; t < T; ++t) {
    out.states[static_cast<std::size_t>(t)].tau = sign * p[6 + t];
    out.states[static_cast<std::size_t>(t)].d = sign * p[6 + T + t];
  }
  out.residual = screw_residual(rel, out.screw, out.states);
  return out;
}

SphericalFit fit_spherical_pair(std::span<const RigidTransform> rel, const Vec3& fallback_center) {
  if (rel.size() < 2) throw Error(ErrorCode::DegenerateInput, "spherical fitting needs at least two frames");
  const int T = static_cast<int>(rel.size());
  SphericalFit out;
  bool any_rotation = false;
  Eigen::MatrixXd A(3 * T, 3);
  Eigen::VectorXd b(3 * T);
  for (int t = 0; t < T; ++t) {
    const RigidTransform& X = rel[static_cast<std::size_t>(t)];
    A.block<3, 3>(3 * t, 0) = X.rotation - Mat3::Identity();
    b.segment<3>(3 * t) = -X.translation;
    if ((X.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() >= kIdentityTolerance) any_rotation = true;
  }
  out.center = any_rotation ? Vec3(A.completeOrthogonalDecomposition().solve(b)) : fallback_center;
  out.rotations.resize(rel.size());
  for (int t = 0; t < T; ++t) {
    const RigidTransform& X = rel[static_cast<std::size_t>(t)];
    out.rotations[static_cast<std::size_t>(t)] = rotation_log(X.rotation);
    out.residual += (X.apply(out.center) - out.center).squaredNorm();
  }
  return out;
}

double spatial_energy(std::span<const Vec3> a, std::span<const Vec3> b, int fps_count, std::uint64_t seed) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyPart, "spatial energy of an empty part");
  const auto ia = farthest_point_sample_seeded(a, std::min<int>(fps_count, static_cast<int>(a.size())), seed);
  const auto ib = farthest_point_sample_seeded(b, std::min<int>(fps_count, static_cast<int>(b.size())), seed);
  double best = std::numeric_limits<double>::infinity();
  for (int i : ia) {
    for (int j : ib) {
      best = std::min(best, (a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(j)]).squaredNorm());
    }
  }
  return best;
}

std::vector<RigidTransform> relative_trajectory(const RelaxedModel& model, int child, int parent) {
  std::vector<RigidTransform> out(static_cast<std::size_t>(model.num_frames()));
  for (int t = 0; t < model.num_frames(); ++t) {
    out[static_cast<std::size_t>(t)] = relative(model.transform(child, t), model.transform(parent, t));
  }
  return out;
}

double merge_energy(const RelaxedModel& model, int i, int j) {
  double e = 0.0;
  for (const auto& T : relative_trajectory(model, i, j)) e += trace_residual(T);
  return e;
}

namespace {

std::vector<std::vector<Vec3>> part_points(std::span<const Vec3> points, std::span<const int> labels, int n) {
  std::vector<std::vector<Vec3>> out(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < points.size(); ++k) out[static_cast<std::size_t>(labels[k])].push_back(points[k]);
  return out;
}

}  // namespace

MergeResult merge_parts(const RelaxedModel& model, double eps_merge, int fps_count, std::uint64_t seed) {
  const int n = model.num_parts();
  // Each group: member parts, the part whose trajectory it keeps, its points.
  std::vector<std::vector<int>> members(static_cast<std::size_t>(n));
  std::vector<int> keeper(static_cast<std::size_t>(n));
  auto pts = part_points(model.canonical_points, model.labels, n);
  std::vector<bool> alive(static_cast<std::size_t>(n), true);
  for (int i = 0; i < n; ++i) {
    members[static_cast<std::size_t>(i)] = {i};
    keeper[static_cast<std::size_t>(i)] = i;
  }
  std::map<std::pair<int, int>, double> spatial;
  auto spatial_of = [&](int a, int b) {
    const auto key = std::make_pair(a, b);
    auto it = spatial.find(key);
    if (it != spatial.end()) return it->second;
    const double e = spatial_energy(pts[static_cast<std::size_t>(a)], pts[static_cast<std::size_t>(b)], fps_count, seed);
    spatial.emplace(key, e);
    return e;
  };

  for (;;) {
    struct Cand {
      double spatial;
      int a, b;
    };
    std::vector<Cand> cands;
    for (int a = 0; a < n; ++a) {
      if (!alive[static_cast<std::size_t>(a)] || pts[static_cast<std::size_t>(a)].empty()) continue;
      for (int b = a + 1; b < n; ++b) {
        if (!alive[static_cast<std::size_t>(b)] || pts[static_cast<std::size_t>(b)].empty()) continue;
        cands.push_back({spatial_of(a, b), a, b});
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
      if (x.spatial != y.spatial) return x.spatial < y.spatial;
      return std::tie(x.a, x.b) < std::tie(y.a, y.b);
    });
    bool merged = false;
    for (const Cand& c : cands) {
      const int ka = keeper[static_cast<std::size_t>(c.a)];
      const int kb = keeper[static_cast<std::size_t>(c.b)];
      if (merge_energy(model, ka, kb) >= eps_merge) continue;
      const auto ua = static_cast<std::size_t>(c.a), ub = static_cast<std::size_t>(c.b);
      if (pts[ub].size() > pts[ua].size()) keeper[ua] = kb;
      members[ua].insert(members[ua].end(), members[ub].begin(), members[ub].end());
      pts[ua].insert(pts[ua].end(), pts[ub].begin(), pts[ub].end());
      pts[ub].clear();
      members[ub].clear();
      alive[ub] = false;
      for (auto it = spatial.begin(); it != spatial.end();) {
        if (it->first.first == c.a || it->first.second == c.a || it->first.first == c.b || it->first.second == c.b) {
          it = spatial.erase(it);
        } else {
          ++it;
        }
      }
      merged = true;
      break;
    }
    if (!merged) break;
  }

  MergeResult out;
  out.remap.assign(static_cast<std::size_t>(n), -1);
  RelaxedModel& m = out.model;
  m.canonical_index = model.canonical_index;
  m.segfield = model.segfield;
  m.canonical_points = model.canonical_points;
  m.energy = model.energy;
  for (int g = 0; g < n; ++g) {
    if (!alive[static_cast<std::size_t>(g)]) continue;
    const int id = m.num_parts();
    for (int old : members[static_cast<std::size_t>(g)]) out.remap[static_cast<std::size_t>(old)] = id;
    m.twists.push_back(model.twists[static_cast<std::size_t>(keeper[static_cast<std::size_t>(g)])]);
  }
  m.labels.resize(model.labels.size());
  for (std::size_t k = 0; k < model.labels.size(); ++k) {
    m.labels[k] = out.remap[static_cast<std::size_t>(model.labels[k])];
  }
  m.slot_to_part.resize(model.slot_to_part.size());
  for (std::size_t s = 0; s < model.slot_to_part.size(); ++s) {
    const int p = model.slot_to_part[s];
    m.slot_to_part[s] = p < 0 ? -1 : out.remap[static_cast<std::size_t>(p)];
  }
  return out;
}

KinematicTree build_tree(const Eigen::MatrixXd& weights, int root) {
  const int n = static_cast<int>(weights.rows());
  if (n == 0 || weights.cols() != n) throw Error(ErrorCode::SizeMismatch, "weight matrix must be square and nonempty");
  if (root < 0 || root >= n) throw Error(ErrorCode::Format, "root index out of range");
  KinematicTree tree;
  tree.root = root;
  tree.parent.assign(static_cast<std::size_t>(n), -1);
  std::vector<bool> in(static_cast<std::size_t>(n), false);
  in[static_cast<std::size_t>(root)] = true;
  for (int added = 1; added < n; ++added) {
    double best = std::numeric_limits<double>::infinity();
    int bu = -1, bv = -1;
    for (int u = 0; u < n; ++u) {
      if (!in[static_cast<std::size_t>(u)]) continue;
      for (int v = 0; v < n; ++v) {
        if (in[static_cast<std::size_t>(v)]) continue;
        const double w = weights(u, v);
        const auto key = std::minmax(u, v);
        const bool better = bu < 0 || w < best ||
                            (w == best && key < std::minmax(bu, bv));
        if (better) {
          best = w;
          bu = u;
          bv = v;
        }
      }
    }
    tree.parent[static_cast<std::size_t>(bv)] = bu;
    in[static_cast<std::size_t>(bv)] = true;
  }
  return tree;
}

KinematicTree build_tree(std::span<const PairFit> fits, int num_parts, int root, double lambda_spatial,
                         double lambda_1dof) {
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd spatial = Eigen::MatrixXd::Constant(num_parts, num_parts, inf);
  Eigen::MatrixXd one_dof = Eigen::MatrixXd::Constant(num_parts, num_parts, inf);
  for (const PairFit& f : fits) {
    spatial(f.child, f.parent) = spatial(f.parent, f.child) = f.e_spatial;
    const double e = std::min(one_dof(f.child, f.parent), f.e_1dof);
    one_dof(f.child, f.parent) = one_dof(f.parent, f.child) = e;
  }
  Eigen::MatrixXd w = lambda_spatial * spatial + lambda_1dof * one_dof;
  w.diagonal().setZero();
  return build_tree(w, root);
}

JointType infer_joint_type(std::span<const JointState> states) {
  double tau = 0.0, d = 0.0;
  for (const auto& s : states) {
    tau += std::abs(s.tau);
    d += std::abs(s.d);
  }
  return tau < d ? JointType::Prismatic : JointType::Revolute;
}

ArticulatedModel project(const RelaxedModel& relaxed, const FitConfig& config) {
  const MergeResult merged = merge_parts(relaxed, config.eps_merge, config.spatial_fps, config.seed);
  const RelaxedModel& rm = merged.model;
  const int n = rm.num_parts();
  const int T = rm.num_frames();
  const auto pts = part_points(rm.canonical_points, rm.labels, n);
  const auto sizes = rm.part_sizes();

  ArticulatedModel model;
  model.segfield = rm.segfield;
  model.slot_to_part = rm.slot_to_part;
  model.canonical_points = rm.canonical_points;
  model.canonical_labels = rm.labels;
  model.canonical_index = rm.canonical_index;
  model.joints.assign(static_cast<std::size_t>(n), Joint{});

  // Ordered pair fits.
  std::vector<PairFit> fits(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j) pairs.emplace_back(i, j);
    }
  }
  Eigen::MatrixXd spatial = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      spatial(i, j) = spatial(j, i) = spatial_energy(pts[static_cast<std::size_t>(i)], pts[static_cast<std::size_t>(j)],
                                                     config.spatial_fps, config.seed);
    }
  }
  parallel_for(static_cast<int>(pairs.size()), [&](int k) {
    const auto [i, j] = pairs[static_cast<std::size_t>(k)];
    PairFit& f = fits[static_cast<std::size_t>(i * n + j)];
    f.child = i;
    f.parent = j;
    f.e_spatial = spatial(i, j);
    const auto rel = relative_trajectory(rm, i, j);
    for (const auto& X : rel) f.e_merge += trace_residual(X);
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : pts[static_cast<std::size_t>(i)]) centroid += p;
    centroid /= static_cast<double>(std::max<std::size_t>(1, pts[static_cast<std::size_t>(i)].size()));
    if (config.joint_model == JointModel::Spherical) {
      const SphericalFit s = fit_spherical_pair(rel, centroid);
      f.type = JointType::Spherical;
      f.screw.moment = s.center;
      f.states.resize(rel.size());
      for (std::size_t t = 0; t < rel.size(); ++t) f.states[t].rotation = s.rotations[t];
      f.e_1dof = s.residual;
      return;
    }
    ScrewFit s;
    try {
      s = fit_screw_pair(rel);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientMotion) throw;
      s.screw = {Vec3::UnitZ(), Vec3::Zero()};
      s.states.assign(rel.size(), JointState{});
      s.residual = screw_residual(rel, s.screw, s.states);
    }
    f.type = infer_joint_type(s.states);
    f.screw = s.screw;
    f.states = s.states;
    f.e_1dof = s.residual;
    const Vec3 l = f.screw.axis;
    if (f.type == JointType::Prismatic) {
      f.screw.moment = centroid;
      for (auto& st : f.states) st.tau = 0.0;
    } else {
      f.screw.moment += l * l.dot(centroid - f.screw.moment);
      for (auto& st : f.states) st.d = 0.0;
    }
  });

  int root = 0;
  for (int i = 1; i < n; ++i) {
    if (sizes[static_cast<std::size_t>(i)] > sizes[static_cast<std::size_t>(root)]) root = i;
  }
  std::vector<PairFit> list;
  for (const auto& [i, j] : pairs) list.push_back(fits[static_cast<std::size_t>(i * n + j)]);
  model.tree = n == 1 ? KinematicTree::single() : build_tree(list, n, root, config.lambda_spatial, config.lambda_1dof);

  model.states.assign(static_cast<std::size_t>(T), model.zero_states());
  model.e_project = 0.0;
  for (int c = 0; c < n; ++c) {
    const int p = model.tree.parent[static_cast<std::size_t>(c)];
    if (p < 0) continue;
    const PairFit& f = fits[static_cast<std::size_t>(c * n + p)];
    model.joints[static_cast<std::size_t>(c)] = {f.type, f.screw};
    for (int t = 0; t < T; ++t) {
      model.states[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)] =
          t == rm.canonical_index ? JointState{} : f.states[static_cast<std::size_t>(t)];
    }
    model.e_project += config.lambda_spatial * f.e_spatial + config.lambda_1dof * f.e_1dof;
  }
  return model;
}

}  // namespace reart
