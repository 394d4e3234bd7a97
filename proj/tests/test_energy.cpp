#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"
#include "reart/energy.hpp"
#include "reart/error.hpp"

using namespace reart;

namespace {

std::vector<Vec3> random_points(int n, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<Vec3> p(static_cast<std::size_t>(n));
  for (auto& x : p) x = Vec3(u(rng), u(rng), u(rng));
  return p;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST(Lap, MatchesEnumeration) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  std::uniform_int_distribution<int> small(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 7;
    CostMatrix c(n, n);
    Eigen::MatrixXd plain(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        // every third instance uses small integers to force ties
        c(i, j) = plain(i, j) = trial % 3 == 0 ? small(rng) : u(rng);
      }
    }
    const Assignment a = lap_solve(c);
    std::vector<int> sorted = a.permutation;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < n; ++i) ASSERT_EQ(sorted[static_cast<std::size_t>(i)], i);
    EXPECT_NEAR(a.cost, oracle::lap_bruteforce(plain), 1e-9);
  }
}

TEST(Lap, WarmStartMatchesColdSolve) {
  auto x = random_points(150, 2);
  const auto y = random_points(150, 3);
  std::vector<double> prices;
  lap_solve(squared_distance_costs(x, y), prices);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.05);
  for (int round = 0; round < 5; ++round) {
    for (auto& p : x) p += Vec3(n(rng), n(rng), n(rng));
    const CostMatrix c = squared_distance_costs(x, y);
    EXPECT_NEAR(lap_solve(c, prices).cost, lap_solve(c).cost, 1e-9);
  }
}

TEST(Lap, RejectsBadInput) {
  CostMatrix c(2, 2);
  c << 1, 2, std::numeric_limits<double>::quiet_NaN(), 0;
  try {
    lap_solve(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteCost);
  }
  EXPECT_THROW(lap_solve(CostMatrix(2, 3)), Error);
}

TEST(Emd, PermutationIsZero) {
  const auto x = random_points(40, 5);
  std::vector<Vec3> y(x.rbegin(), x.rend());
  const EmdResult r = emd(x, y);
  EXPECT_EQ(r.value, 0.0);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(r.assignment.permutation[static_cast<std::size_t>(i)], 39 - i);
}

TEST(Emd, FreshNeverWorseThanStale) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 0.1);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_points(30, 100 + static_cast<std::uint64_t>(trial));
    const auto y = random_points(30, 200 + static_cast<std::uint64_t>(trial));
    const EmdResult before = emd(x, y);
    for (auto& p : x) p += Vec3(n(rng), n(rng), n(rng));
    const double stale = emd(x, y, &before.assignment).value;
    const double fresh = emd(x, y).value;
    EXPECT_LE(fresh, stale + 1e-12);
    EXPECT_GE(fresh, 0.0);
  }
  EXPECT_THROW(emd(random_points(3, 1), random_points(4, 2)), Error);
}

TEST(Chamfer, MatchesDefinition) {
  const auto x = random_points(30, 7), y = random_points(45, 8);
  double sx = 0.0, sy = 0.0;
  for (const Vec3& p : x) {
    double m = 1e300;
    for (const Vec3& q : y) m = std::min(m, (p - q).squaredNorm());
    sx += m;
  }
  for (const Vec3& q : y) {
    double m = 1e300;
    for (const Vec3& p : x) m = std::min(m, (p - q).squaredNorm());
    sy += m;
  }
  EXPECT_NEAR(chamfer(x, y), sx / 30 + sy / 45, 1e-12);
  EXPECT_NEAR(chamfer(x, y, Reduction::Sum), sx + sy, 1e-10);
  EXPECT_EQ(chamfer(x, x), 0.0);
}

// Central differences with the discrete selections (neighbours,
// assignment) frozen at the evaluation point.
TEST(Gradients, ChamferEmdFlowMatchFiniteDifferences) {
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 8 + trial * 2;
    const auto pred = random_points(n, 300 + static_cast<std::uint64_t>(trial));
    const auto obs = random_points(n, 400 + static_cast<std::uint64_t>(trial));
    const KdTree obs_tree(obs);
    std::vector<Vec3> g;
    chamfer_grad(pred, obs, obs_tree, g);
    const Assignment a = emd(pred, obs).assignment;
    std::vector<Vec3> ge;
    emd_grad(pred, obs, a, ge);
    const auto prev = random_points(n, 500 + static_cast<std::uint64_t>(trial), 0.9);
    const FlowField field(random_points(n + 5, 600 + static_cast<std::uint64_t>(trial)),
                          random_points(n + 5, 700 + static_cast<std::uint64_t>(trial), 0.1),
                          std::vector<bool>(static_cast<std::size_t>(n + 5), true));
    std::vector<Vec3> gt, gp;
    flow_energy_grad(pred, prev, field, 3, gt, gp);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        auto plus = pred, minus = pred;
        plus[static_cast<std::size_t>(i)][c] += h;
        minus[static_cast<std::size_t>(i)][c] -= h;
        const double fd_cd = (chamfer(plus, obs) - chamfer(minus, obs)) / (2 * h);
        EXPECT_LT(rel_err(g[static_cast<std::size_t>(i)][c], fd_cd), 1e-4);
        const double fd_emd = (emd(plus, obs, &a).value - emd(minus, obs, &a).value) / (2 * h);
        EXPECT_LT(rel_err(ge[static_cast<std::size_t>(i)][c], fd_emd), 1e-4);
        const double fd_flow = (flow_energy(plus, prev, field, 3) - flow_energy(minus, prev, field, 3)) / (2 * h);
        EXPECT_LT(rel_err(gt[static_cast<std::size_t>(i)][c], fd_flow), 1e-4);
        auto pp = prev, pm = prev;
        pp[static_cast<std::size_t>(i)][c] += h;
        pm[static_cast<std::size_t>(i)][c] -= h;
        const double fd_prev = (flow_energy(pred, pp, field, 3) - flow_energy(pred, pm, field, 3)) / (2 * h);
        EXPECT_LT(rel_err(gp[static_cast<std::size_t>(i)][c], fd_prev), 1e-4);
      }
    }
  }
}

TEST(Recons, ExactFlowAndGeometryIsZero) {
  Sequence seq;
  std::vector<std::vector<Vec3>> posed;
  const auto base = random_points(50, 9);
  std::vector<FlowField> flows(3);
  for (int t = 0; t < 3; ++t) {
    PointCloud c;
    c.frame_index = t;
    for (const Vec3& p : base) c.points.push_back(p + Vec3(0.01 * t, 0, 0));
    posed.push_back(c.points);
    if (t > 0) {
      flows[static_cast<std::size_t>(t)] =
          FlowField(c.points, std::vector<Vec3>(50, Vec3(0.01, 0, 0)), std::vector<bool>(50, true));
    }
    seq.frames.push_back(c);
  }
  const EnergyBreakdown e = recons_energy(posed, seq, flows, {1.0, 0.3, 1.0});
  EXPECT_EQ(e.cd, 0.0);
  EXPECT_EQ(e.emd, 0.0);
  EXPECT_LT(e.flow, 1e-28);
}

TEST(Recons, LinearInWeights) {
  Sequence seq;
  std::vector<std::vector<Vec3>> posed;
  std::vector<FlowField> flows(2);
  for (int t = 0; t < 2; ++t) {
    PointCloud c;
    c.frame_index = t;
    c.points = random_points(20, 10 + static_cast<std::uint64_t>(t));
    posed.push_back(random_points(20, 20 + static_cast<std::uint64_t>(t)));
    seq.frames.push_back(c);
  }
  flows[1] = FlowField(seq.frames[1].points, random_points(20, 30, 0.1), std::vector<bool>(20, true));
  const EnergyBreakdown one = recons_energy(posed, seq, flows, {1.0, 0.0, 0.0});
  const EnergyBreakdown two = recons_energy(posed, seq, flows, {2.0, 0.0, 0.0});
  EXPECT_NEAR(two.total, 2 * one.total, 1e-12);
  EXPECT_EQ(one.flow, 0.0);
  const EnergyBreakdown all = recons_energy(posed, seq, flows, {1.0, 0.3, 1.0});
  EXPECT_NEAR(all.total, all.cd + 0.3 * all.emd + all.flow, 1e-12);
}
