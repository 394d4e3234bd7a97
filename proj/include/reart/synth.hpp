#pragma once

// Synthetic articulated objects built from boxes, with exact ground truth:
// labels, per-point flow, the generating model and a held-out novel pose.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "reart/cloud.hpp"
#include "reart/model.hpp"

namespace reart {

enum class Topology { Chain, Star, Random };
enum class Motion { Monotone, Sinusoidal };

Topology topology_from_string(const std::string& name);
const char* to_string(Topology topology);

struct SynthSpec {
  int n_parts = 3;
  Topology topology = Topology::Chain;
  // Joint type per non-root part in index order; cycles revolute/prismatic
  // when empty.
  std::vector<JointType> joint_types;
  int frames = 10;
  int points = 4096;
  double amplitude = 1.0;
  Motion motion = Motion::Monotone;
  double noise = 0.0;
  double clearance = 0.02;
  std::uint64_t seed = 1;

  // Throws SpecInfeasible on out-of-range values.
  void validate() const;
};

struct Box {
  Vec3 center = Vec3::Zero();
  Vec3 half = Vec3::Constant(0.5);
};

struct SynthResult {
  Sequence sequence;                        // labelled frames with flow
  ArticulatedModel truth;                   // canonical frame 0, no field
  std::vector<JointState> novel_states;     // held-out pose
  std::vector<Box> boxes;                   // rest geometry, per part
};

// Throws SpecInfeasible when boxes cannot be placed without overlap.
SynthResult generate(const SynthSpec& spec);

// Writes frames, manifest, ground_truth.json and novel_truth.ply.
void write_dataset(const std::filesystem::path& dir, const SynthResult& data);

struct GroundTruth {
  ArticulatedModel model;
  std::optional<std::vector<JointState>> novel_states;
};

// Reads `ground_truth.json` from a dataset directory. Throws
// MissingGroundTruth when absent.
GroundTruth load_ground_truth(const std::filesystem::path& dir);

}  // namespace reart
