#pragma once

// The rearticulable model: kinematic tree, per-joint screw (or spherical)
// parameters, per-frame joint states, the segmentation field and the
// labelled canonical cloud.
//
// Joint axes are expressed in the parent's canonical frame, which coincides
// with the canonical (rest) frame of every part. World transforms compose
// root to leaf: T_i = T_pa(i) * J_i, with the root fixed at identity.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reart/geom.hpp"
#include "reart/segfield.hpp"

namespace reart {

struct KinematicTree {
  std::vector<int> parent;  // -1 for the root
  int root = 0;

  int size() const { return static_cast<int>(parent.size()); }
  std::vector<std::vector<int>> children() const;
  // Parents before children, starting at the root.
  std::vector<int> topological_order() const;
  // Throws Format unless the parent array is a single-rooted acyclic tree.
  void validate() const;
  static KinematicTree single();
};

struct Joint {
  JointType type = JointType::Revolute;
  // Screw joints: axis l and a point m on the axis. Spherical joints: the
  // rotation centre is stored in screw.moment.
  ScrewParams screw;
};

struct ArticulatedModel {
  KinematicTree tree;
  std::vector<Joint> joints;                     // indexed by part; root entry unused
  std::vector<std::vector<JointState>> states;   // [frame][part]
  std::optional<SegFieldParams> segfield;
  // Field output slot -> part index (-1 for slots without canonical points).
  std::vector<int> slot_to_part;
  std::vector<Vec3> canonical_points;
  std::vector<int> canonical_labels;
  int canonical_index = 0;
  double e_project = 0.0;

  int num_parts() const { return tree.size(); }
  int num_frames() const { return static_cast<int>(states.size()); }
  std::vector<JointState> zero_states() const;
  // Part label of an arbitrary canonical-frame position via the field.
  int label_of(const Vec3& x) const;
  // Throws Format when invariants are violated.
  void validate() const;
};

RigidTransform joint_transform(const Joint& joint, const JointState& state);

// World transform of every part for one set of joint states.
std::vector<RigidTransform> forward_kinematics(const ArticulatedModel& model,
                                               std::span<const JointState> states);
std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree, std::span<const Joint> joints,
                                               std::span<const JointState> states);

// Each canonical point moved by its part's world transform.
std::vector<Vec3> pose_cloud(const ArticulatedModel& model, std::span<const JointState> states);
std::vector<Vec3> pose_points(std::span<const Vec3> points, std::span<const int> labels,
                              std::span<const RigidTransform> transforms);

// Gradient of a scalar with respect to an affine transform: dE/dR and dE/dt.
struct TransformGrad {
  Mat3 rotation = Mat3::Zero();
  Vec3 translation = Vec3::Zero();

  void add_point(const Vec3& x, const Vec3& g) {
    rotation.noalias() += g * x.transpose();
    translation += g;
  }
};

// Per-joint gradients for one frame.
struct JointGrad {
  Vec3 axis = Vec3::Zero();      // d/dl (screw) or d/dcenter (spherical)
  Vec3 moment = Vec3::Zero();    // d/dm (screw only)
  double tau = 0.0;
  double d = 0.0;
  Vec3 rotation = Vec3::Zero();  // spherical rotation vector
};

// Pulls per-part world-transform gradients back to joint parameters through
// the kinematic chain.
std::vector<JointGrad> chain_gradient(const KinematicTree& tree, std::span<const Joint> joints,
                                      std::span<const JointState> states,
                                      std::span<const TransformGrad> world_grads);

struct PointConstraint {
  int point_index = 0;
  Vec3 target = Vec3::Zero();
};

struct IkConfig {
  double lr = 0.1;
  int iters = 200;
  // Optional pull towards the initial states; off by default.
  double prior_weight = 0.0;
};

struct IkResult {
  std::vector<JointState> states;
  double mse = 0.0;
};

// Adam over joint states only, minimizing the mean squared distance between
// posed constrained points and their targets. Returns the best iterate.
// Throws NoConstraints.
IkResult retarget_ik(const ArticulatedModel& model, std::span<const PointConstraint> constraints,
                     const IkConfig& config = {},
                     std::optional<std::vector<JointState>> initial = std::nullopt);

double constraint_mse(const ArticulatedModel& model, std::span<const PointConstraint> constraints,
                      std::span<const JointState> states);

// JSON model file. The canonical cloud (with part_id labels) is written as a
// PLY next to the JSON and referenced by relative path.
void save_model(const std::filesystem::path& path, const ArticulatedModel& model,
                const std::string& canonical_ply_name = "");
ArticulatedModel load_model(const std::filesystem::path& path);
std::string model_to_json(const ArticulatedModel& model, const std::string& canonical_ply_name);
// The canonical cloud is resolved relative to `base_dir`.
ArticulatedModel model_from_json(const std::string& text, const std::filesystem::path& base_dir);

std::vector<PointConstraint> load_constraints(const std::filesystem::path& path);
std::vector<PointConstraint> parse_constraints(const std::string& text);

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace reart
