#include "reart/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <unordered_map>

#include <json.hpp>

#include "reart/error.hpp"

namespace reart {

double rand_index(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) throw Error(ErrorCode::LengthMismatch, "label sequences differ in length");
  const auto n = static_cast<double>(pred.size());
  if (pred.size() < 2) return 1.0;
  std::unordered_map<long long, long long> joint;
  std::unordered_map<int, long long> a, b;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const long long key = (static_cast<long long>(pred[i]) << 32) ^ static_cast<unsigned>(truth[i]);
    ++joint[key];
    ++a[pred[i]];
    ++b[truth[i]];
  }
  auto pairs = [](long long c) { return static_cast<double>(c) * static_cast<double>(c - 1) / 2.0; };
  double same_both = 0.0, same_a = 0.0, same_b = 0.0;
  for (const auto& [k, c] : joint) same_both += pairs(c);
  for (const auto& [k, c] : a) same_a += pairs(c);
  for (const auto& [k, c] : b) same_b += pairs(c);
  const double total = n * (n - 1.0) / 2.0;
  const double diff_both = total - same_a - same_b + same_both;
  return (same_both + diff_both) / total;
}

namespace {

// Ordered unlabelled tree in postorder with leftmost-leaf descendants.
struct PostorderTree {
  std::vector<int> lml;       // 1-based postorder indices
  std::vector<int> keyroots;  // ascending

  int size() const { return static_cast<int>(lml.size()) - 1; }
};

// Shapes are balanced-parenthesis strings.
PostorderTree from_shape(const std::string& shape) {
  PostorderTree t;
  t.lml.push_back(0);
  std::vector<int> first_leaf;  // per open node: leftmost leaf seen so far (-1 = none)
  for (char ch : shape) {
    if (ch == '(') {
      first_leaf.push_back(-1);
    } else {
      const int id = static_cast<int>(t.lml.size());
      const int l = first_leaf.back() < 0 ? id : first_leaf.back();
      t.lml.push_back(l);
      first_leaf.pop_back();
      if (!first_leaf.empty() && first_leaf.back() < 0) first_leaf.back() = l;
    }
  }
  const int n = t.size();
  for (int i = 1; i <= n; ++i) {
    bool key = true;
    for (int j = i + 1; j <= n; ++j) {
      if (t.lml[static_cast<std::size_t>(j)] == t.lml[static_cast<std::size_t>(i)]) {
        key = false;
        break;
      }
    }
    if (key) t.keyroots.push_back(i);
  }
  return t;
}

int zhang_shasha(const PostorderTree& A, const PostorderTree& B) {
  const int na = A.size(), nb = B.size();
  std::vector<std::vector<int>> td(static_cast<std::size_t>(na + 1), std::vector<int>(static_cast<std::size_t>(nb + 1), 0));
  std::vector<std::vector<int>> fd(static_cast<std::size_t>(na + 2), std::vector<int>(static_cast<std::size_t>(nb + 2), 0));
  auto la = [&](int i) { return A.lml[static_cast<std::size_t>(i)]; };
  auto lb = [&](int j) { return B.lml[static_cast<std::size_t>(j)]; };
  for (int i : A.keyroots) {
    for (int j : B.keyroots) {
      const int li = la(i), lj = lb(j);
      // fd indices shifted: row x - li + 1, column y - lj + 1; row/col 0 = empty forest.
      auto F = [&](int x, int y) -> int& {
        return fd[static_cast<std::size_t>(x - li + 1)][static_cast<std::size_t>(y - lj + 1)];
      };
      F(li - 1, lj - 1) = 0;
      for (int x = li; x <= i; ++x) F(x, lj - 1) = F(x - 1, lj - 1) + 1;
      for (int y = lj; y <= j; ++y) F(li - 1, y) = F(li - 1, y - 1) + 1;
      for (int x = li; x <= i; ++x) {
        for (int y = lj; y <= j; ++y) {
          const int del = F(x - 1, y) + 1;
          const int ins = F(x, y - 1) + 1;
          if (la(x) == li && lb(y) == lj) {
            F(x, y) = std::min({del, ins, F(x - 1, y - 1)});
            td[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)] = F(x, y);
          } else {
            const int sub = F(la(x) - 1, lb(y) - 1) + td[static_cast<std::size_t>(x)][static_cast<std::size_t>(y)];
            F(x, y) = std::min({del, ins, sub});
          }
        }
      }
    }
  }
  return td[static_cast<std::size_t>(na)][static_cast<std::size_t>(nb)];
}

std::vector<std::vector<int>> undirected_adjacency(const KinematicTree& t) {
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(t.size()));
  for (int i = 0; i < t.size(); ++i) {
    const int p = t.parent[static_cast<std::size_t>(i)];
    if (p >= 0) {
      adj[static_cast<std::size_t>(i)].push_back(p);
      adj[static_cast<std::size_t>(p)].push_back(i);
    }
  }
  return adj;
}

class ShapeEnumerator {
 public:
  ShapeEnumerator(const std::vector<std::vector<int>>& adj, long long budget) : adj_(adj), budget_(budget) {}

  // Every distinct ordered shape of the subtree at `node` (away from `from`).
  std::set<std::string> shapes(int node, int from) {
    std::vector<std::vector<std::string>> child_sets;
    for (int c : adj_[static_cast<std::size_t>(node)]) {
      if (c == from) continue;
      const auto s = shapes(c, node);
      child_sets.emplace_back(s.begin(), s.end());
    }
    std::set<std::string> out;
    std::vector<std::string> pick(child_sets.size());
    std::function<void(std::size_t)> choose = [&](std::size_t k) {
      if (k == child_sets.size()) {
        std::vector<std::string> order = pick;
        std::sort(order.begin(), order.end());
        do {
          if (++work_ > budget_) throw Error(ErrorCode::TooLarge, "tree edit distance ordering budget exceeded");
          std::string s = "(";
          for (const auto& o : order) s += o;
          s += ")";
          out.insert(std::move(s));
        } while (std::next_permutation(order.begin(), order.end()));
        return;
      }
      for (const auto& s : child_sets[k]) {
        pick[k] = s;
        choose(k + 1);
      }
    };
    choose(0);
    return out;
  }

  long long work() const { return work_; }

 private:
  const std::vector<std::vector<int>>& adj_;
  long long budget_;
  long long work_ = 0;
};

std::string index_order_shape(const KinematicTree& t, int node, const std::vector<std::vector<int>>& kids) {
  std::string s = "(";
  for (int c : kids[static_cast<std::size_t>(node)]) s += index_order_shape(t, c, kids);
  return s + ")";
}

}  // namespace

int ordered_tree_edit_distance(const KinematicTree& a, const KinematicTree& b) {
  a.validate();
  b.validate();
  const auto ka = a.children(), kb = b.children();
  return zhang_shasha(from_shape(index_order_shape(a, a.root, ka)), from_shape(index_order_shape(b, b.root, kb)));
}

int tree_edit_distance(const KinematicTree& pred, const KinematicTree& truth, long long budget) {
  pred.validate();
  truth.validate();
  const auto pa = undirected_adjacency(pred);
  const auto ta = undirected_adjacency(truth);
  ShapeEnumerator pe(pa, budget);
  std::set<std::string> pred_shapes;
  for (int r = 0; r < pred.size(); ++r) {
    const auto s = pe.shapes(r, -1);
    pred_shapes.insert(s.begin(), s.end());
  }
  ShapeEnumerator te(ta, budget);
  const auto truth_shapes = te.shapes(truth.root, -1);
  if (static_cast<long long>(pred_shapes.size()) * static_cast<long long>(truth_shapes.size()) > budget) {
    throw Error(ErrorCode::TooLarge, "tree edit distance pair budget exceeded");
  }
  std::vector<PostorderTree> tp;
  for (const auto& s : truth_shapes) tp.push_back(from_shape(s));
  int best = std::numeric_limits<int>::max();
  for (const auto& s : pred_shapes) {
    const PostorderTree p = from_shape(s);
    for (const auto& t : tp) {
      best = std::min(best, zhang_shasha(p, t));
      if (best == 0) return 0;
    }
  }
  return best;
}

std::vector<std::vector<Vec3>> truth_trajectories(const ArticulatedModel& model, const Sequence& sequence,
                                                  const ArticulatedModel& truth) {
  const int c = model.canonical_index;
  if (c < 0 || c >= sequence.num_frames()) throw Error(ErrorCode::Format, "model canonical frame out of range");
  const PointCloud& frame = sequence.frames[static_cast<std::size_t>(c)];
  if (!frame.labels) throw Error(ErrorCode::MissingGroundTruth, "canonical frame has no ground-truth labels");
  if (frame.points.size() != model.canonical_points.size()) {
    throw Error(ErrorCode::Format, "model canonical cloud does not match the sequence frame");
  }
  if (truth.num_frames() != sequence.num_frames()) {
    throw Error(ErrorCode::MissingGroundTruth, "ground truth does not cover every frame");
  }
  std::vector<std::vector<RigidTransform>> world(static_cast<std::size_t>(sequence.num_frames()));
  for (int t = 0; t < sequence.num_frames(); ++t) {
    world[static_cast<std::size_t>(t)] = forward_kinematics(truth, truth.states[static_cast<std::size_t>(t)]);
  }
  const auto& wc = world[static_cast<std::size_t>(c)];
  std::vector<std::vector<Vec3>> out(world.size(), std::vector<Vec3>(frame.points.size()));
  for (std::size_t k = 0; k < frame.points.size(); ++k) {
    const auto l = static_cast<std::size_t>((*frame.labels)[k]);
    if (l >= wc.size()) throw Error(ErrorCode::Format, "ground-truth label out of range");
    const Vec3 rest = wc[l].inverse().apply(model.canonical_points[k]);
    for (std::size_t t = 0; t < world.size(); ++t) out[t][k] = world[t][l].apply(rest);
  }
  return out;
}

double recon_error(const ArticulatedModel& model, const std::vector<std::vector<Vec3>>& truth) {
  if (truth.size() != static_cast<std::size_t>(model.num_frames())) {
    throw Error(ErrorCode::MissingGroundTruth, "ground truth does not cover every frame");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const auto posed = pose_cloud(model, model.states[t]);
    for (std::size_t k = 0; k < posed.size(); ++k) sum += (posed[k] - truth[t][k]).norm();
    count += posed.size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

FlowScore flow_error_and_acc(const ArticulatedModel& model, const std::vector<std::vector<Vec3>>& truth,
                             double delta) {
  if (truth.size() != static_cast<std::size_t>(model.num_frames())) {
    throw Error(ErrorCode::MissingGroundTruth, "ground truth does not cover every frame");
  }
  FlowScore out;
  std::size_t count = 0, hits = 0;
  std::vector<Vec3> prev = pose_cloud(model, model.states[0]);
  for (std::size_t t = 1; t < truth.size(); ++t) {
    const auto posed = pose_cloud(model, model.states[t]);
    for (std::size_t k = 0; k < posed.size(); ++k) {
      const double epe = ((posed[k] - prev[k]) - (truth[t][k] - truth[t - 1][k])).norm();
      out.error += epe;
      if (epe < delta) ++hits;
      ++count;
    }
    prev = posed;
  }
  if (count) {
    out.error /= static_cast<double>(count);
    out.accuracy = static_cast<double>(hits) / static_cast<double>(count);
  } else {
    out.accuracy = 1.0;
  }
  return out;
}

RandScores rand_index_scans(const ArticulatedModel& model, const Sequence& sequence) {
  RandScores out;
  std::vector<int> all_pred, all_truth;
  for (int t = 0; t < sequence.num_frames(); ++t) {
    const PointCloud& frame = sequence.frames[static_cast<std::size_t>(t)];
    if (!frame.labels) throw Error(ErrorCode::MissingGroundTruth, "frame has no ground-truth labels");
    const auto posed = pose_cloud(model, model.states[static_cast<std::size_t>(t)]);
    const KdTree tree(posed);
    std::vector<int> pred(frame.points.size());
    for (std::size_t k = 0; k < frame.points.size(); ++k) {
      pred[k] = model.canonical_labels[static_cast<std::size_t>(tree.nearest(frame.points[k]))];
    }
    out.per_scan += rand_index(pred, *frame.labels);
    all_pred.insert(all_pred.end(), pred.begin(), pred.end());
    all_truth.insert(all_truth.end(), frame.labels->begin(), frame.labels->end());
  }
  out.per_scan /= std::max(1, sequence.num_frames());
  out.multi_scan = rand_index(all_pred, all_truth);
  return out;
}

std::vector<int> reanimation_anchor_points(const ArticulatedModel& model) {
  const auto n = static_cast<std::size_t>(model.num_parts());
  std::vector<Vec3> centroid(n, Vec3::Zero());
  std::vector<int> count(n, 0);
  for (std::size_t k = 0; k < model.canonical_points.size(); ++k) {
    const auto l = static_cast<std::size_t>(model.canonical_labels[k]);
    centroid[l] += model.canonical_points[k];
    ++count[l];
  }
  std::vector<int> anchor(n, -1);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    if (count[i]) centroid[i] /= count[i];
  }
  for (std::size_t k = 0; k < model.canonical_points.size(); ++k) {
    const auto l = static_cast<std::size_t>(model.canonical_labels[k]);
    const double d = (model.canonical_points[k] - centroid[l]).squaredNorm();
    if (d < best[l]) {
      best[l] = d;
      anchor[l] = static_cast<int>(k);
    }
  }
  std::vector<int> out;
  for (int a : anchor) {
    if (a >= 0) out.push_back(a);
  }
  return out;
}

double reanimation_error(const ArticulatedModel& model, const std::vector<Vec3>& novel_truth, const IkConfig& ik) {
  if (novel_truth.size() != model.canonical_points.size()) {
    throw Error(ErrorCode::LengthMismatch, "novel truth does not cover every canonical point");
  }
  std::vector<PointConstraint> constraints;
  for (int k : reanimation_anchor_points(model)) constraints.push_back({k, novel_truth[static_cast<std::size_t>(k)]});
  const IkResult res = retarget_ik(model, constraints, ik);
  const auto posed = pose_cloud(model, res.states);
  double sum = 0.0;
  for (std::size_t k = 0; k < posed.size(); ++k) sum += (posed[k] - novel_truth[k]).norm();
  return posed.empty() ? 0.0 : sum / static_cast<double>(posed.size());
}

std::vector<Vec3> novel_truth_positions(const ArticulatedModel& model, const Sequence& sequence,
                                        const ArticulatedModel& truth, std::span<const JointState> novel_states) {
  const int c = model.canonical_index;
  const PointCloud& frame = sequence.frames.at(static_cast<std::size_t>(c));
  if (!frame.labels) throw Error(ErrorCode::MissingGroundTruth, "canonical frame has no ground-truth labels");
  if (frame.points.size() != model.canonical_points.size()) {
    throw Error(ErrorCode::Format, "model canonical cloud does not match the sequence frame");
  }
  const auto wc = forward_kinematics(truth, truth.states.at(static_cast<std::size_t>(c)));
  const auto wn = forward_kinematics(truth, novel_states);
  std::vector<Vec3> out(frame.points.size());
  for (std::size_t k = 0; k < out.size(); ++k) {
    const auto l = static_cast<std::size_t>((*frame.labels)[k]);
    out[k] = wn[l].apply(wc[l].inverse().apply(model.canonical_points[k]));
  }
  return out;
}

double joint_type_accuracy(const ArticulatedModel& model, const Sequence& sequence, const ArticulatedModel& truth) {
  const PointCloud& frame = sequence.frames.at(static_cast<std::size_t>(model.canonical_index));
  if (!frame.labels) throw Error(ErrorCode::MissingGroundTruth, "canonical frame has no ground-truth labels");
  const int ng = truth.num_parts(), np = model.num_parts();
  std::vector<std::vector<int>> overlap(static_cast<std::size_t>(ng), std::vector<int>(static_cast<std::size_t>(np), 0));
  for (std::size_t k = 0; k < frame.points.size(); ++k) {
    ++overlap[static_cast<std::size_t>((*frame.labels)[k])][static_cast<std::size_t>(model.canonical_labels[k])];
  }
  std::vector<int> match(static_cast<std::size_t>(ng));
  for (int g = 0; g < ng; ++g) {
    const auto& row = overlap[static_cast<std::size_t>(g)];
    match[static_cast<std::size_t>(g)] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  int joints = 0, correct = 0;
  for (int c = 0; c < ng; ++c) {
    const int p = truth.tree.parent[static_cast<std::size_t>(c)];
    if (p < 0) continue;
    ++joints;
    const int qc = match[static_cast<std::size_t>(c)], qp = match[static_cast<std::size_t>(p)];
    if (qc == qp) continue;
    int child = -1;
    if (model.tree.parent[static_cast<std::size_t>(qc)] == qp) child = qc;
    if (model.tree.parent[static_cast<std::size_t>(qp)] == qc) child = qp;
    if (child >= 0 && model.joints[static_cast<std::size_t>(child)].type == truth.joints[static_cast<std::size_t>(c)].type) {
      ++correct;
    }
  }
  return joints ? static_cast<double>(correct) / joints : 1.0;
}

EvalReport evaluate(const ArticulatedModel& model, const Sequence& sequence, const GroundTruth& truth,
                    const EvalOptions& options) {
  EvalReport r;
  const auto traj = truth_trajectories(model, sequence, truth.model);
  r.recon_error = recon_error(model, traj);
  const FlowScore flow = flow_error_and_acc(model, traj, options.delta);
  r.flow_error = flow.error;
  r.flow_acc = flow.accuracy;
  const RandScores ri = rand_index_scans(model, sequence);
  r.rand_index_per_scan = ri.per_scan;
  r.rand_index_multi_scan = ri.multi_scan;
  r.tree_edit_distance = tree_edit_distance(model.tree, truth.model.tree);
  if (truth.novel_states) {
    const auto novel = novel_truth_positions(model, sequence, truth.model, *truth.novel_states);
    r.reanimation_error = reanimation_error(model, novel, options.ik);
  }
  r.joint_type_accuracy = joint_type_accuracy(model, sequence, truth.model);
  r.num_parts = model.num_parts();
  r.canonical_index = model.canonical_index;
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["recon_error"] = r.recon_error;
  j["flow_error"] = r.flow_error;
  j["flow_acc"] = r.flow_acc;
  j["rand_index_per_scan"] = r.rand_index_per_scan;
  j["rand_index_multi_scan"] = r.rand_index_multi_scan;
  j["tree_edit_distance"] = r.tree_edit_distance;
  j["reanimation_error"] = r.reanimation_error ? nlohmann::json(*r.reanimation_error) : nlohmann::json(nullptr);
  j["runtime_seconds"] = r.runtime_seconds;
  j["joint_type_accuracy"] = r.joint_type_accuracy;
  j["num_parts"] = r.num_parts;
  j["canonical_index"] = r.canonical_index;
  return j.dump(2) + "\n";
}

}  // namespace reart
