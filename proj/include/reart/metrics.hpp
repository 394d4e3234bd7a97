#pragma once

// Evaluation against synthetic ground truth.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reart/cloud.hpp"
#include "reart/model.hpp"
#include "reart/synth.hpp"

namespace reart {

inline constexpr double kFlowAccuracyDelta = 0.005;

// Pair-counting Rand index. Throws LengthMismatch. Sets of fewer than two
// points score 1.
double rand_index(std::span<const int> pred, std::span<const int> truth);

// Minimum over roots of the (undirected) predicted tree and over child
// orderings of both trees of the ordered tree edit distance, with unit
// insert/delete cost and free relabelling. Throws TooLarge when the number of
// distinct ordered shapes exceeds `budget`.
int tree_edit_distance(const KinematicTree& pred, const KinematicTree& truth, long long budget = 200000);

// Ordered edit distance between two rooted trees whose children are taken
// in index order (no root or order search).
int ordered_tree_edit_distance(const KinematicTree& a, const KinematicTree& b);

// Ground-truth position of every predicted canonical point in every frame:
// T_l^t * inv(T_l^c) applied by ground-truth label l, where c is the model's
// canonical frame. Throws MissingGroundTruth when the frame lacks labels.
std::vector<std::vector<Vec3>> truth_trajectories(const ArticulatedModel& model, const Sequence& sequence,
                                                  const ArticulatedModel& truth);

// Mean |posed - true| over frames and points.
double recon_error(const ArticulatedModel& model, const std::vector<std::vector<Vec3>>& truth);

struct FlowScore {
  double error = 0.0;
  double accuracy = 0.0;
};

// End-point error of the frame-to-frame motion implied by the model, and the
// fraction of points with error strictly below delta.
FlowScore flow_error_and_acc(const ArticulatedModel& model, const std::vector<std::vector<Vec3>>& truth,
                             double delta = kFlowAccuracyDelta);

struct RandScores {
  double per_scan = 0.0;
  double multi_scan = 0.0;
};

// Observed points take the label of the nearest posed canonical point.
RandScores rand_index_scans(const ArticulatedModel& model, const Sequence& sequence);

// One constraint per part: the canonical point closest to the part centroid.
std::vector<int> reanimation_anchor_points(const ArticulatedModel& model);

// IK from one correspondence per part towards `novel_truth` (the true novel
// position of every canonical point), then mean per-point error.
double reanimation_error(const ArticulatedModel& model, const std::vector<Vec3>& novel_truth,
                         const IkConfig& ik = {});

// Novel-pose truth for the model's canonical points.
std::vector<Vec3> novel_truth_positions(const ArticulatedModel& model, const Sequence& sequence,
                                        const ArticulatedModel& truth, std::span<const JointState> novel_states);

// Fraction of ground-truth joints whose predicted counterpart (matched by
// label overlap) is an edge of the predicted tree with the same type.
double joint_type_accuracy(const ArticulatedModel& model, const Sequence& sequence, const ArticulatedModel& truth);

struct EvalOptions {
  double delta = kFlowAccuracyDelta;
  std::uint64_t seed = 0;
  IkConfig ik;
};

struct EvalReport {
  double recon_error = 0.0;
  double flow_error = 0.0;
  double flow_acc = 0.0;
  double rand_index_per_scan = 0.0;
  double rand_index_multi_scan = 0.0;
  int tree_edit_distance = 0;
  std::optional<double> reanimation_error;
  double joint_type_accuracy = 0.0;
  int num_parts = 0;
  int canonical_index = 0;
  double runtime_seconds = 0.0;
};

EvalReport evaluate(const ArticulatedModel& model, const Sequence& sequence, const GroundTruth& truth,
                    const EvalOptions& options = {});
std::string report_to_json(const EvalReport& report);

}  // namespace reart
