#include <gtest/gtest.h>

#include <random>
#include <set>

#include "oracles.hpp"
#include "reart/error.hpp"
#include "reart/project.hpp"

using namespace reart;

namespace {

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

double axis_angle_error(const Vec3& a, const Vec3& b) {
  return std::acos(std::min(1.0, std::abs(a.normalized().dot(b.normalized()))));
}

double line_distance(const ScrewParams& a, const ScrewParams& b) {
  return point_line_distance(a.moment, b.moment, b.axis.normalized());
}

std::vector<RigidTransform> trajectory(const ScrewParams& s, const std::vector<JointState>& states) {
  std::vector<RigidTransform> out;
  for (const auto& st : states) out.push_back(screw_transform(s, st));
  return out;
}

}  // namespace

TEST(ScrewFit, RecoversRevoluteAxis) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 50; ++trial) {
    ScrewParams s;
    s.axis = random_unit(rng);
    s.moment = Vec3(u(rng), u(rng), u(rng));
    std::vector<JointState> states;
    for (int t = 0; t < 10; ++t) states.push_back({0.08 * t * (1 + u(rng)), 0.0, Vec3::Zero()});
    const ScrewFit fit = fit_screw_pair(trajectory(s, states));
    EXPECT_LT(axis_angle_error(fit.screw.axis, s.axis), 1e-6);
    EXPECT_LT(line_distance(fit.screw, s), 1e-6);
    EXPECT_LT(fit.residual, 1e-12);
    EXPECT_EQ(infer_joint_type(fit.states), JointType::Revolute);
    for (int t = 0; t < 10; ++t) {
      const double sign = fit.screw.axis.dot(s.axis) > 0 ? 1.0 : -1.0;
      EXPECT_NEAR(sign * fit.states[static_cast<std::size_t>(t)].tau, states[static_cast<std::size_t>(t)].tau, 1e-6);
    }
  }
}

TEST(ScrewFit, RecoversPrismaticAxis) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    ScrewParams s;
    s.axis = random_unit(rng);
    std::vector<JointState> states;
    for (int t = 0; t < 10; ++t) states.push_back({0.0, 0.03 * t, Vec3::Zero()});
    const ScrewFit fit = fit_screw_pair(trajectory(s, states));
    EXPECT_LT(axis_angle_error(fit.screw.axis, s.axis), 1e-6);
    EXPECT_EQ(infer_joint_type(fit.states), JointType::Prismatic);
    EXPECT_LT(fit.residual, 1e-12);
  }
}

TEST(ScrewFit, AxisSignIsCanonical) {
  ScrewParams s;
  s.axis = Vec3(-0.6, 0.8, 0.0);
  s.moment = Vec3(0.1, 0.2, 0.3);
  std::vector<JointState> states;
  for (int t = 0; t < 5; ++t) states.push_back({0.1 * t, 0.0, Vec3::Zero()});
  const ScrewFit fit = fit_screw_pair(trajectory(s, states));
  EXPECT_GT(fit.screw.axis.x(), 0.0);
  EXPECT_NEAR(fit.states[4].tau, -0.4, 1e-8);
  // the stored point is the axis point closest to the origin
  EXPECT_NEAR(fit.screw.moment.dot(fit.screw.axis), 0.0, 1e-9);
}

TEST(ScrewFit, NoMotionThrows) {
  std::vector<RigidTransform> still(6);
  try {
    fit_screw_pair(still);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientMotion);
  }
}

TEST(ScrewFit, ResidualMeasuresMismatch) {
  ScrewParams s;
  s.axis = Vec3::UnitZ();
  std::vector<JointState> states{{0.0, 0.0, Vec3::Zero()}, {0.3, 0.0, Vec3::Zero()}};
  const auto traj = trajectory(s, states);
  EXPECT_LT(screw_residual(traj, s, states), 1e-15);
  std::vector<JointState> wrong{{0.0, 0.0, Vec3::Zero()}, {0.2, 0.0, Vec3::Zero()}};
  EXPECT_NEAR(screw_residual(traj, s, wrong), 2 * (1 - std::cos(0.1)), 1e-12);
}

TEST(SphericalFit, RecoversCenter) {
  std::mt19937_64 rng(3);
  const Vec3 c(0.2, -0.1, 0.4);
  std::vector<RigidTransform> rel;
  for (int t = 0; t < 8; ++t) rel.push_back(spherical_transform(c, random_unit(rng) * 0.1 * t));
  const SphericalFit fit = fit_spherical_pair(rel);
  EXPECT_LT((fit.center - c).norm(), 1e-9);
  EXPECT_LT(fit.residual, 1e-18);
  const SphericalFit still = fit_spherical_pair(std::vector<RigidTransform>(3), Vec3(1, 2, 3));
  EXPECT_EQ(still.center, Vec3(1, 2, 3));
}

TEST(SpatialEnergy, DistanceBetweenClosestRepresentatives) {
  std::vector<Vec3> a{{0, 0, 0}, {1, 0, 0}}, b{{3, 0, 0}, {1.5, 0, 0}};
  EXPECT_NEAR(spatial_energy(a, b, 20), 0.25, 1e-15);
  EXPECT_EQ(spatial_energy(a, a, 20), 0.0);
  std::vector<Vec3> empty;
  try {
    spatial_energy(a, empty);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyPart);
  }
}

TEST(BuildTree, MatchesSpanningTreeEnumeration) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + trial % 5;
    Eigen::MatrixXd w = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) w(i, j) = w(j, i) = u(rng);
    }
    const int root = trial % n;
    const KinematicTree t = build_tree(w, root);
    ASSERT_NO_THROW(t.validate());
    EXPECT_EQ(t.root, root);
    double got = 0.0;
    std::set<std::pair<int, int>> got_edges;
    for (int i = 0; i < n; ++i) {
      const int p = t.parent[static_cast<std::size_t>(i)];
      if (p < 0) continue;
      got += w(i, p);
      got_edges.insert({std::min(i, p), std::max(i, p)});
    }
    double best = 1e300;
    std::set<std::pair<int, int>> best_edges;
    for (const auto& tree : oracle::all_spanning_trees(n)) {
      double s = 0.0;
      std::set<std::pair<int, int>> e;
      for (const auto& edge : tree) {
        s += w(edge.a, edge.b);
        e.insert({std::min(edge.a, edge.b), std::max(edge.a, edge.b)});
      }
      if (s < best) {
        best = s;
        best_edges = e;
      }
    }
    EXPECT_NEAR(got, best, 1e-12);
    EXPECT_EQ(got_edges, best_edges);
  }
}

TEST(BuildTree, EnumerationCountIsCayley) {
  EXPECT_EQ(oracle::all_spanning_trees(4).size(), 16u);
  EXPECT_EQ(oracle::all_spanning_trees(6).size(), 1296u);
}

TEST(JointType, RatioDecides) {
  std::vector<JointState> rev{{0.5, 0.01, Vec3::Zero()}, {0.6, 0.0, Vec3::Zero()}};
  std::vector<JointState> pri{{0.01, 0.5, Vec3::Zero()}, {0.0, 0.4, Vec3::Zero()}};
  EXPECT_EQ(infer_joint_type(rev), JointType::Revolute);
  EXPECT_EQ(infer_joint_type(pri), JointType::Prismatic);
}

namespace {

// Three rigid slabs along x; part 1 hinges on part 0, part 2 slides on part 1.
RelaxedModel relaxed_chain(bool split_root) {
  RelaxedModel m;
  const int T = 6;
  const ScrewParams hinge{Vec3::UnitZ(), Vec3(0.5, 0, 0)};
  const ScrewParams slide{Vec3::UnitX(), Vec3(1.0, 0, 0)};
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 0.5);
  const int parts = split_root ? 4 : 3;
  for (int k = 0; k < 600; ++k) {
    const int slab = k % 3;
    m.canonical_points.push_back(Vec3(slab * 0.5 + u(rng), u(rng) * 0.4, u(rng) * 0.2));
    int label = slab;
    if (split_root && slab == 0 && k % 2 == 0) label = 3;
    m.labels.push_back(label);
  }
  m.twists.assign(static_cast<std::size_t>(parts), std::vector<Twist>(T));
  for (int t = 0; t < T; ++t) {
    const RigidTransform j1 = screw_transform(hinge, {0.1 * t, 0.0, Vec3::Zero()});
    const RigidTransform j2 = j1 * screw_transform(slide, {0.0, 0.04 * t, Vec3::Zero()});
    m.twists[1][static_cast<std::size_t>(t)] = log_transform(j1);
    m.twists[2][static_cast<std::size_t>(t)] = log_transform(j2);
  }
  m.slot_to_part.assign(static_cast<std::size_t>(parts), 0);
  for (int p = 0; p < parts; ++p) m.slot_to_part[static_cast<std::size_t>(p)] = p;
  m.segfield = SegFieldParams::zeros(parts, 4);
  return m;
}

}  // namespace

TEST(Project, RecoversChainFromExactRelaxedMotion) {
  FitConfig cfg;
  const ArticulatedModel a = project(relaxed_chain(false), cfg);
  ASSERT_EQ(a.num_parts(), 3);
  // parts are 0, 1, 2 in the output; find them by their labels' slabs
  int hinge_child = -1, slide_child = -1;
  for (int i = 0; i < 3; ++i) {
    if (i == a.tree.root) continue;
    if (a.joints[static_cast<std::size_t>(i)].type == JointType::Revolute) hinge_child = i;
    if (a.joints[static_cast<std::size_t>(i)].type == JointType::Prismatic) slide_child = i;
  }
  ASSERT_GE(hinge_child, 0);
  ASSERT_GE(slide_child, 0);
  EXPECT_LT(axis_angle_error(a.joints[static_cast<std::size_t>(hinge_child)].screw.axis, Vec3::UnitZ()), 1e-6);
  EXPECT_LT(axis_angle_error(a.joints[static_cast<std::size_t>(slide_child)].screw.axis, Vec3::UnitX()), 1e-6);
  EXPECT_EQ(a.tree.parent[static_cast<std::size_t>(slide_child)], hinge_child);
  EXPECT_NEAR(point_line_distance(Vec3(0.5, 0, 0), a.joints[static_cast<std::size_t>(hinge_child)].screw.moment,
                                  a.joints[static_cast<std::size_t>(hinge_child)].screw.axis),
              0.0, 1e-6);
}

TEST(Project, MergesStaticFragments) {
  FitConfig cfg;
  const MergeResult merged = merge_parts(relaxed_chain(true), cfg.eps_merge);
  EXPECT_EQ(merged.model.num_parts(), 3);
  EXPECT_EQ(merged.remap[3], merged.remap[0]);
  const ArticulatedModel a = project(relaxed_chain(true), cfg);
  EXPECT_EQ(a.num_parts(), 3);
}
