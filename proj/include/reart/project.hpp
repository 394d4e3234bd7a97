#pragma once

// Projection of a relaxed model onto a kinematic tree of 1-DOF joints:
// screw fitting, part merging, minimum spanning tree and joint typing.

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

#include "reart/fitting.hpp"
#include "reart/geom.hpp"
#include "reart/model.hpp"

namespace reart {

struct ScrewFit {
  ScrewParams screw;
  std::vector<JointState> states;
  double residual = 0.0;  // sum over frames of trace_residual(error)
};

// Fits a 1-DOF screw joint to relative transforms. Throws InsufficientMotion
// when every transform is within 1e-9 of the identity.
ScrewFit fit_screw_pair(std::span<const RigidTransform> relative_transforms);

// Per-frame residual r = trace(I - R_err) + |t_err|^2 with
// Err = relative(observed, screw_transform(s, theta)).
double screw_residual(std::span<const RigidTransform> relative_transforms, const ScrewParams& screw,
                      std::span<const JointState> states);

struct SphericalFit {
  Vec3 center = Vec3::Zero();
  std::vector<Vec3> rotations;
  double residual = 0.0;  // sum over frames of |T(center) - center|^2
};

// Least-squares fixed point of the relative transforms. With no rotation at
// all, the center is undetermined and `fallback_center` is returned.
SphericalFit fit_spherical_pair(std::span<const RigidTransform> relative_transforms,
                                const Vec3& fallback_center = Vec3::Zero());

// Minimum squared distance between FPS representatives of two parts.
// Throws EmptyPart.
double spatial_energy(std::span<const Vec3> points_i, std::span<const Vec3> points_j, int fps_count = 20,
                      std::uint64_t seed = 0);

// Sum over frames of the trace residual of the relative motion of two parts.
double merge_energy(const RelaxedModel& model, int i, int j);

struct MergeResult {
  RelaxedModel model;
  std::vector<int> remap;  // old part -> new part
};

MergeResult merge_parts(const RelaxedModel& model, double eps_merge, int fps_count = 20,
                        std::uint64_t seed = 0);

// Minimum spanning tree of a symmetric weight matrix, oriented away from
// `root`. Ties prefer the lexicographically smaller edge.
KinematicTree build_tree(const Eigen::MatrixXd& weights, int root);

struct PairFit {
  int child = 0;
  int parent = 0;
  JointType type = JointType::Revolute;
  ScrewParams screw;
  std::vector<JointState> states;
  double e_1dof = 0.0;
  double e_spatial = 0.0;
  double e_merge = 0.0;
};

// Undirected MST over pair fits: w_ij = lambda_spatial * e_spatial +
// lambda_1dof * min(e_1dof(i|j), e_1dof(j|i)).
KinematicTree build_tree(std::span<const PairFit> fits, int num_parts, int root, double lambda_spatial,
                         double lambda_1dof);

// Prismatic when mean |tau| < mean |d|, revolute otherwise.
JointType infer_joint_type(std::span<const JointState> states);

// Child part `child` moving relative to `parent` in every frame.
std::vector<RigidTransform> relative_trajectory(const RelaxedModel& model, int child, int parent);

ArticulatedModel project(const RelaxedModel& relaxed, const FitConfig& config);

}  // namespace reart
