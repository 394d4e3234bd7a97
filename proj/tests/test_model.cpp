#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "reart/cloud.hpp"
#include "reart/error.hpp"
#include "reart/model.hpp"

using namespace reart;
namespace fs = std::filesystem;

namespace {

// root 0 -> 1 (revolute about z through (0.5,0,0)) -> 2 (prismatic along x),
// and 0 -> 3 (spherical about (0,0.5,0)).
ArticulatedModel small_model() {
  ArticulatedModel m;
  m.tree.parent = {-1, 0, 1, 0};
  m.tree.root = 0;
  m.joints.resize(4);
  m.joints[1] = {JointType::Revolute, {Vec3::UnitZ(), Vec3(0.5, 0, 0)}};
  m.joints[2] = {JointType::Prismatic, {Vec3::UnitX(), Vec3(1.0, 0, 0)}};
  m.joints[3].type = JointType::Spherical;
  m.joints[3].screw.moment = Vec3(0, 0.5, 0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 40; ++i) {
    m.canonical_points.push_back(Vec3(u(rng), u(rng), u(rng)));
    m.canonical_labels.push_back(i % 4);
  }
  m.states.assign(2, m.zero_states());
  m.states[1][1].tau = 0.4;
  m.states[1][2].d = 0.2;
  m.states[1][3].rotation = Vec3(0.1, 0.2, -0.3);
  return m;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("reart_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Tree, ValidateAndOrder) {
  KinematicTree t{{-1, 0, 1, 0}, 0};
  EXPECT_NO_THROW(t.validate());
  const auto order = t.topological_order();
  EXPECT_EQ(order.front(), 0);
  EXPECT_LT(std::find(order.begin(), order.end(), 1) - order.begin(),
            std::find(order.begin(), order.end(), 2) - order.begin());
  EXPECT_THROW((KinematicTree{{-1, 2, 1}, 0}).validate(), Error);
  EXPECT_THROW((KinematicTree{{-1, -1}, 0}).validate(), Error);
  EXPECT_THROW((KinematicTree{{0, 0}, 0}).validate(), Error);
  EXPECT_NO_THROW(KinematicTree::single().validate());
}

TEST(Kinematics, MatchesHandComposition) {
  const ArticulatedModel m = small_model();
  const auto& s = m.states[1];
  const auto T = forward_kinematics(m, s);
  const RigidTransform j1 = screw_transform(m.joints[1].screw, s[1]);
  const RigidTransform j2 = screw_transform(m.joints[2].screw, s[2]);
  const RigidTransform j3 = spherical_transform(Vec3(0, 0.5, 0), s[3].rotation);
  EXPECT_LT((T[0].matrix() - Mat4::Identity()).norm(), 1e-15);
  EXPECT_LT((T[1].matrix() - j1.matrix()).norm(), 1e-14);
  EXPECT_LT((T[2].matrix() - (j1.matrix() * j2.matrix())).norm(), 1e-14);
  EXPECT_LT((T[3].matrix() - j3.matrix()).norm(), 1e-14);
  // the prismatic child rides on the rotated parent
  const Vec3 x(1.0, 0.0, 0.0);
  const Vec3 expect = Eigen::AngleAxisd(0.4, Vec3::UnitZ()) * (x + Vec3(0.2, 0, 0) - Vec3(0.5, 0, 0)) + Vec3(0.5, 0, 0);
  EXPECT_LT((T[2].apply(x) - expect).norm(), 1e-14);
}

TEST(Kinematics, ZeroStatesAreIdentity) {
  const ArticulatedModel m = small_model();
  EXPECT_EQ(pose_cloud(m, m.zero_states()), m.canonical_points);
}

TEST(Kinematics, PosingIsRigidPerPart) {
  const ArticulatedModel m = small_model();
  const auto posed = pose_cloud(m, m.states[1]);
  for (std::size_t i = 0; i < posed.size(); ++i) {
    for (std::size_t j = i + 1; j < posed.size(); ++j) {
      if (m.canonical_labels[i] != m.canonical_labels[j]) continue;
      EXPECT_NEAR((posed[i] - posed[j]).norm(), (m.canonical_points[i] - m.canonical_points[j]).norm(), 1e-12);
    }
  }
}

TEST(Kinematics, ChainGradientMatchesFiniteDifferences) {
  ArticulatedModel m = small_model();
  m.joints[1].screw.axis = Vec3(0.2, 0.3, 0.9).normalized();
  m.joints[2].screw.axis = Vec3(0.8, -0.1, 0.2).normalized();
  std::vector<JointState> s = m.zero_states();
  s[1] = {0.7, 0.1, Vec3::Zero()};
  s[2] = {-0.3, 0.25, Vec3::Zero()};
  s[3].rotation = Vec3(0.3, -0.2, 0.5);
  // linear functional of world points: E = sum_k w_k . T_l(k) x_k
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> w(m.canonical_points.size());
  for (auto& v : w) v = Vec3(n(rng), n(rng), n(rng));
  auto energy = [&](const ArticulatedModel& mm, const std::vector<JointState>& ss) {
    const auto posed = pose_cloud(mm, ss);
    double e = 0.0;
    for (std::size_t k = 0; k < posed.size(); ++k) e += w[k].dot(posed[k]);
    return e;
  };
  std::vector<TransformGrad> world(4);
  for (std::size_t k = 0; k < w.size(); ++k) {
    world[static_cast<std::size_t>(m.canonical_labels[k])].add_point(m.canonical_points[k], w[k]);
  }
  const auto g = chain_gradient(m.tree, m.joints, s, world);
  const double h = 1e-6;
  auto check = [&](double analytic, auto&& perturb) {
    ArticulatedModel mp = m, mm = m;
    auto sp = s, sm = s;
    perturb(mp, sp, h);
    perturb(mm, sm, -h);
    const double fd = (energy(mp, sp) - energy(mm, sm)) / (2 * h);
    EXPECT_LT(std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8}), 1e-6);
  };
  for (int j : {1, 2}) {
    const auto ju = static_cast<std::size_t>(j);
    check(g[ju].tau, [&](ArticulatedModel&, std::vector<JointState>& ss, double e) { ss[ju].tau += e; });
    check(g[ju].d, [&](ArticulatedModel&, std::vector<JointState>& ss, double e) { ss[ju].d += e; });
    for (int c = 0; c < 3; ++c) {
      check(g[ju].axis[c], [&](ArticulatedModel& mm, std::vector<JointState>&, double e) { mm.joints[ju].screw.axis[c] += e; });
      check(g[ju].moment[c], [&](ArticulatedModel& mm, std::vector<JointState>&, double e) { mm.joints[ju].screw.moment[c] += e; });
    }
  }
  for (int c = 0; c < 3; ++c) {
    check(g[3].rotation[c], [&](ArticulatedModel&, std::vector<JointState>& ss, double e) { ss[3].rotation[c] += e; });
    check(g[3].axis[c], [&](ArticulatedModel& mm, std::vector<JointState>&, double e) { mm.joints[3].screw.moment[c] += e; });
  }
}

TEST(Ik, RecoversStatesFromDenseConstraints) {
  const ArticulatedModel m = small_model();
  const auto target = pose_cloud(m, m.states[1]);
  std::vector<PointConstraint> cons;
  for (int k = 0; k < 40; k += 3) cons.push_back({k, target[static_cast<std::size_t>(k)]});
  IkConfig cfg;
  cfg.iters = 400;
  cfg.lr = 0.05;
  const IkResult r = retarget_ik(m, cons, cfg);
  EXPECT_LT(r.mse, 1e-6);
  EXPECT_NEAR(r.states[1].tau, 0.4, 1e-3);
  EXPECT_NEAR(r.states[2].d, 0.2, 1e-3);
  // revolute and prismatic states stay on their single degree of freedom
  EXPECT_EQ(r.states[1].d, 0.0);
  EXPECT_EQ(r.states[2].tau, 0.0);
}

TEST(Ik, RestConstraintsKeepRestPose) {
  const ArticulatedModel m = small_model();
  std::vector<PointConstraint> cons;
  for (int k = 0; k < 4; ++k) cons.push_back({k, m.canonical_points[static_cast<std::size_t>(k)]});
  const IkResult r = retarget_ik(m, cons);
  EXPECT_LT(r.mse, 1e-12);
}

TEST(Ik, Errors) {
  const ArticulatedModel m = small_model();
  try {
    retarget_ik(m, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConstraints);
  }
  const std::vector<PointConstraint> bad{{1000, Vec3::Zero()}};
  EXPECT_THROW(retarget_ik(m, bad), Error);
}

TEST(Serialization, RoundTrip) {
  ArticulatedModel m = small_model();
  m.segfield = SegFieldParams::init(6, 8, 2);
  m.segfield->normalization = Normalization::fit(m.canonical_points);
  m.slot_to_part = {0, 1, -1, 2, 3, -1};
  m.canonical_index = 1;
  m.e_project = 0.125;
  for (auto& p : m.canonical_points) p = p.cast<float>().cast<double>();
  const fs::path dir = temp_dir("model");
  save_model(dir / "m.json", m);
  EXPECT_TRUE(fs::exists(dir / "m.canonical.ply"));
  const ArticulatedModel back = load_model(dir / "m.json");
  EXPECT_EQ(back.tree.parent, m.tree.parent);
  EXPECT_EQ(back.canonical_index, 1);
  EXPECT_EQ(back.slot_to_part, m.slot_to_part);
  EXPECT_EQ(back.canonical_points, m.canonical_points);
  EXPECT_EQ(back.canonical_labels, m.canonical_labels);
  EXPECT_EQ(back.joints[3].type, JointType::Spherical);
  EXPECT_EQ(back.states[1][3].rotation, m.states[1][3].rotation);
  EXPECT_EQ(back.joints[1].screw.moment, m.joints[1].screw.moment);
  ASSERT_TRUE(back.segfield.has_value());
  // field weights are stored as float32
  EXPECT_LT((back.segfield->w1 - m.segfield->w1).cwiseAbs().maxCoeff(), 1e-6);
  // and a second save is byte-identical
  save_model(dir / "m2.json", back, "m.canonical.ply");
  save_model(dir / "m3.json", load_model(dir / "m2.json"), "m.canonical.ply");
  EXPECT_EQ(read_file_bytes(dir / "m2.json"), read_file_bytes(dir / "m3.json"));
}

TEST(Serialization, RejectsMalformed) {
  try {
    model_from_json("{\"format\": \"something-else\"}", ".");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
  }
  EXPECT_THROW(model_from_json("not json", "."), Error);
}

TEST(Constraints, ParseBothShapes) {
  const auto a = parse_constraints(R"([{"point_index": 3, "target": [1, 2, 3]}])");
  const auto b = parse_constraints(R"({"constraints": [{"point_index": 3, "target": [1, 2, 3]}]})");
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].point_index, 3);
  EXPECT_EQ(b[0].target, Vec3(1, 2, 3));
  EXPECT_THROW(parse_constraints(R"([{"point_index": 3}])"), Error);
  EXPECT_THROW(parse_constraints("{"), Error);
}

TEST(Base64, RoundTrip) {
  for (int n = 0; n < 20; ++n) {
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(i * 37 + 11);
    EXPECT_EQ(base64_decode(base64_encode(bytes)), bytes);
  }
  const std::string man = "Man";
  EXPECT_EQ(base64_encode(std::vector<unsigned char>(man.begin(), man.end())), "TWFu");
}
