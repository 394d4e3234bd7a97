#include <gtest/gtest.h>

#include <filesystem>

#include "reart/error.hpp"
#include "reart/synth.hpp"

using namespace reart;
namespace fs = std::filesystem;

namespace {

SynthSpec spec_of(int parts, Topology topo, std::uint64_t seed) {
  SynthSpec s;
  s.n_parts = parts;
  s.topology = topo;
  s.frames = 5;
  s.points = 800;
  s.seed = seed;
  return s;
}

bool inside(const Box& b, const Vec3& p, double margin) {
  return ((p - b.center).cwiseAbs() - b.half).maxCoeff() < -margin;
}

}  // namespace

TEST(Synth, FlowPointsBackToPreviousPose) {
  const SynthResult r = generate(spec_of(3, Topology::Chain, 1));
  for (int t = 1; t < 5; ++t) {
    const auto& cur = r.sequence.frames[static_cast<std::size_t>(t)];
    const auto world = forward_kinematics(r.truth, r.truth.states[static_cast<std::size_t>(t)]);
    const auto prev = forward_kinematics(r.truth, r.truth.states[static_cast<std::size_t>(t - 1)]);
    for (std::size_t k = 0; k < cur.points.size(); ++k) {
      const int l = (*cur.labels)[k];
      const Vec3 expected = prev[static_cast<std::size_t>(l)].apply(world[static_cast<std::size_t>(l)].inverse().apply(cur.points[k]));
      EXPECT_LT((cur.points[k] - (*cur.flow)[k] - expected).norm(), 1e-5);
    }
  }
}

TEST(Synth, JointTypesAndTopology) {
  const SynthResult chain = generate(spec_of(3, Topology::Chain, 2));
  EXPECT_EQ(chain.truth.tree.parent, (std::vector<int>{-1, 0, 1}));
  EXPECT_EQ(chain.truth.joints[1].type, JointType::Revolute);
  EXPECT_EQ(chain.truth.joints[2].type, JointType::Prismatic);
  const SynthResult star = generate(spec_of(4, Topology::Star, 3));
  EXPECT_EQ(star.truth.tree.parent, (std::vector<int>{-1, 0, 0, 0}));
  const SynthResult rnd = generate(spec_of(5, Topology::Random, 4));
  EXPECT_NO_THROW(rnd.truth.tree.validate());
  EXPECT_EQ(rnd.truth.num_parts(), 5);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(rnd.sequence.frames[0].points.size(), 800u);
}

TEST(Synth, CanonicalFrameIsRest) {
  const SynthResult r = generate(spec_of(3, Topology::Chain, 5));
  for (const auto& s : r.truth.states[0]) {
    EXPECT_EQ(s.tau, 0.0);
    EXPECT_EQ(s.d, 0.0);
  }
  EXPECT_EQ(r.truth.canonical_points, r.sequence.frames[0].points);
  // every labelled point lies on the surface of its own box and not inside another
  for (std::size_t k = 0; k < r.truth.canonical_points.size(); ++k) {
    const Vec3& p = r.truth.canonical_points[k];
    const int l = r.truth.canonical_labels[k];
    const Box& own = r.boxes[static_cast<std::size_t>(l)];
    EXPECT_LT(std::abs(((p - own.center).cwiseAbs() - own.half).maxCoeff()), 1e-6);
    for (std::size_t b = 0; b < r.boxes.size(); ++b) {
      if (static_cast<int>(b) != l) EXPECT_FALSE(inside(r.boxes[b], p, 0.0));
    }
  }
}

TEST(Synth, BoxesDoNotOverlap) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SynthResult r = generate(spec_of(5, Topology::Random, seed));
    for (std::size_t a = 0; a < r.boxes.size(); ++a) {
      for (std::size_t b = a + 1; b < r.boxes.size(); ++b) {
        const Vec3 gap = (r.boxes[a].center - r.boxes[b].center).cwiseAbs() - r.boxes[a].half - r.boxes[b].half;
        EXPECT_GT(gap.maxCoeff(), 0.0) << "seed " << seed;
      }
    }
  }
}

TEST(Synth, DeterministicForSeed) {
  const SynthResult a = generate(spec_of(3, Topology::Chain, 9));
  const SynthResult b = generate(spec_of(3, Topology::Chain, 9));
  const SynthResult c = generate(spec_of(3, Topology::Chain, 10));
  EXPECT_EQ(a.sequence.frames[3].points, b.sequence.frames[3].points);
  EXPECT_NE(a.sequence.frames[3].points, c.sequence.frames[3].points);
}

TEST(Synth, RejectsInfeasibleSpecs) {
  auto expect_infeasible = [](SynthSpec s) {
    try {
      generate(s);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::SpecInfeasible);
    }
  };
  SynthSpec s = spec_of(3, Topology::Chain, 1);
  s.n_parts = 0;
  expect_infeasible(s);
  s = spec_of(3, Topology::Chain, 1);
  s.frames = 1;
  expect_infeasible(s);
  s = spec_of(3, Topology::Chain, 1);
  s.joint_types = {JointType::Revolute};
  expect_infeasible(s);
  s = spec_of(3, Topology::Chain, 1);
  s.noise = -1.0;
  expect_infeasible(s);
  EXPECT_THROW(topology_from_string("ring"), Error);
}

TEST(Synth, DatasetRoundTrip) {
  const fs::path dir = fs::temp_directory_path() / "reart_synth_roundtrip";
  fs::remove_all(dir);
  const SynthResult r = generate(spec_of(3, Topology::Chain, 11));
  write_dataset(dir, r);
  const Sequence seq = read_sequence(dir);
  ASSERT_EQ(seq.num_frames(), 5);
  EXPECT_EQ(seq.frames[2].points, r.sequence.frames[2].points);
  EXPECT_EQ(*seq.frames[2].labels, *r.sequence.frames[2].labels);
  const GroundTruth gt = load_ground_truth(dir);
  EXPECT_EQ(gt.model.tree.parent, r.truth.tree.parent);
  ASSERT_TRUE(gt.novel_states.has_value());
  EXPECT_NEAR((*gt.novel_states)[1].tau, r.novel_states[1].tau, 1e-12);
  EXPECT_TRUE(fs::exists(dir / "novel_truth.ply"));
  fs::remove(dir / "ground_truth.json");
  try {
    load_ground_truth(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingGroundTruth);
  }
  fs::remove_all(dir);
}
