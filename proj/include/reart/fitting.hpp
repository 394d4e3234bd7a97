#pragma once

// Relaxed (per-part 6-DOF) fitting, the constrained final fit and canonical
// frame selection.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "reart/cloud.hpp"
#include "reart/energy.hpp"
#include "reart/flow.hpp"
#include "reart/model.hpp"
#include "reart/segfield.hpp"

namespace reart {

enum class JointModel { Screw, Spherical };

struct FitConfig {
  int max_parts = kDefaultMaxParts;
  int hidden = kDefaultHidden;
  int iters_stage1 = 15000;
  // Leading share of stage 1 that uses Chamfer instead of EMD.
  double cd_fraction = 1.0 / 3.0;
  int iters_final = 200;
  int emd_downsample_stage1 = 4;
  int emd_refresh_stage1 = 5;
  int emd_downsample_final = 2;
  int emd_refresh_final = 1;
  double temp_start = 5.0;
  double temp_end = 1.0;
  double lr_field = 1e-3;
  double lr_transform = 1e-2;
  // Stage-1 learning rates follow a cosine decay down to this fraction.
  double lr_final_fraction = 0.01;
  // Refinement after stage 1: rounds of transform polishing with labels held
  // fixed followed by per-point relabelling; 0 rounds disables it.
  int refine_rounds = 3;
  int refine_iters = 100;
  double lr_refine = 1e-3;
  int distill_iters = 1000;
  // A part is dropped when moving its points to their next best part raises
  // the per-point data cost by less than this on average.
  double prune_cost = 1e-4;
  double ik_lr = 0.1;
  int ik_iters = 200;
  double eps_merge = 3e-2;
  double lambda_spatial = 100.0;
  double lambda_1dof = 1.0;
  int spatial_fps = 20;
  EnergyWeights weights{1.0, 0.3, 1.0};
  Reduction reduction = Reduction::Mean;
  bool use_group_energy = true;
  JointModel joint_model = JointModel::Screw;
  std::uint64_t seed = 0;

  // CSV progress to `log` every `log_every` iterations (0 disables).
  int log_every = 0;
  std::ostream* log = nullptr;

  // Throws Format on nonpositive counts or non-finite reals.
  void validate() const;
};

struct RelaxedModel {
  int canonical_index = 0;
  SegFieldParams segfield;
  // Field output slot -> part index, -1 for slots that own no canonical point.
  std::vector<int> slot_to_part;
  std::vector<std::vector<Twist>> twists;  // [part][frame]; the canonical frame is zero
  std::vector<Vec3> canonical_points;
  std::vector<int> labels;  // per canonical point
  EnergyBreakdown energy;

  int num_parts() const { return static_cast<int>(twists.size()); }
  int num_frames() const { return twists.empty() ? 0 : static_cast<int>(twists[0].size()); }
  RigidTransform transform(int part, int frame) const;
  std::vector<int> part_sizes() const;
};

// One flow field per frame: entry t links frame t to t-1; entry 0 is empty.
enum class FlowSource { GroundTruth, Mnn };
std::vector<FlowField> build_flows(const Sequence& sequence, FlowSource source);

// Posed canonical cloud of the relaxed model at `frame`.
std::vector<Vec3> pose_relaxed(const RelaxedModel& model, int frame);

RelaxedModel fit_relaxed(const Sequence& sequence, const std::vector<FlowField>& flows, int canonical,
                         const FitConfig& config);

// Alternates transform polishing and data-cost relabelling, drops parts
// left empty and retrains the segmentation field on the new labels.
void refine_relaxed(RelaxedModel& model, const Sequence& sequence, const std::vector<FlowField>& flows,
                    const FitConfig& config);

ArticulatedModel final_fit(const ArticulatedModel& model, const Sequence& sequence,
                           const std::vector<FlowField>& flows, const FitConfig& config);

// Mean over parts of the mean squared distance to the part centroid.
double group_energy(const ArticulatedModel& model);
double group_energy(std::span<const Vec3> points, std::span<const int> labels, int num_parts);

struct CanonicalChoice {
  int canonical = 0;
  ArticulatedModel model;  // projected, before the final fit
  std::vector<int> candidates;
  std::vector<double> scores;  // E_project (+ E_group) per candidate
};

CanonicalChoice select_canonical(const Sequence& sequence, const std::vector<FlowField>& flows,
                                 const std::vector<int>& candidates, const FitConfig& config);

// Full pipeline: canonical selection, projection and the final fit.
ArticulatedModel fit_sequence(const Sequence& sequence, const std::vector<FlowField>& flows,
                              const std::vector<int>& candidates, const FitConfig& config);

}  // namespace reart
