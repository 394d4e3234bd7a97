#include "reart/model.hpp"

#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <queue>

#include <json.hpp>

#include "reart/cloud.hpp"
#include "reart/error.hpp"
#include "reart/optim.hpp"

namespace reart {

using json = nlohmann::json;

std::vector<std::vector<int>> KinematicTree::children() const {
  std::vector<std::vector<int>> out(parent.size());
  for (int i = 0; i < size(); ++i) {
    if (parent[static_cast<std::size_t>(i)] >= 0) out[static_cast<std::size_t>(parent[static_cast<std::size_t>(i)])].push_back(i);
  }
  return out;
}

std::vector<int> KinematicTree::topological_order() const {
  const auto kids = children();
  std::vector<int> order;
  order.reserve(parent.size());
  std::queue<int> q;
  if (!parent.empty()) q.push(root);
  while (!q.empty()) {
    const int i = q.front();
    q.pop();
    order.push_back(i);
    for (int c : kids[static_cast<std::size_t>(i)]) q.push(c);
  }
  return order;
}

void KinematicTree::validate() const {
  const int n = size();
  if (n == 0) throw Error(ErrorCode::Format, "kinematic tree is empty");
  if (root < 0 || root >= n || parent[static_cast<std::size_t>(root)] != -1) {
    throw Error(ErrorCode::Format, "kinematic tree root is invalid");
  }
  for (int i = 0; i < n; ++i) {
    const int p = parent[static_cast<std::size_t>(i)];
    if (i != root && (p < 0 || p >= n || p == i)) {
      throw Error(ErrorCode::Format, "kinematic tree parent index out of range");
    }
  }
  if (static_cast<int>(topological_order().size()) != n) {
    throw Error(ErrorCode::Format, "kinematic tree is not connected or has a cycle");
  }
}

KinematicTree KinematicTree::single() { return KinematicTree{{-1}, 0}; }

std::vector<JointState> ArticulatedModel::zero_states() const {
  return std::vector<JointState>(static_cast<std::size_t>(num_parts()));
}

int ArticulatedModel::label_of(const Vec3& x) const {
  if (segfield && !slot_to_part.empty()) {
    const Eigen::VectorXd logits = field_logits(*segfield, x);
    int best = -1;
    for (int s = 0; s < logits.size(); ++s) {
      if (s >= static_cast<int>(slot_to_part.size()) || slot_to_part[static_cast<std::size_t>(s)] < 0) continue;
      if (best < 0 || logits[s] > logits[best]) best = s;
    }
    if (best >= 0) return slot_to_part[static_cast<std::size_t>(best)];
  }
  if (canonical_points.empty()) return 0;
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < canonical_points.size(); ++i) {
    const double d = (canonical_points[i] - x).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return canonical_labels.empty() ? 0 : canonical_labels[static_cast<std::size_t>(best)];
}

void ArticulatedModel::validate() const {
  tree.validate();
  const auto n = static_cast<std::size_t>(num_parts());
  if (joints.size() != n) throw Error(ErrorCode::Format, "joint count does not match part count");
  for (const auto& frame : states) {
    if (frame.size() != n) throw Error(ErrorCode::Format, "state count does not match part count");
    for (std::size_t i = 0; i < n; ++i) {
      if (static_cast<int>(i) == tree.root) continue;
      const JointType type = joints[i].type;
      if (type == JointType::Revolute && frame[i].d != 0.0) {
        throw Error(ErrorCode::Format, "revolute joint with nonzero translation state");
      }
      if (type == JointType::Prismatic && frame[i].tau != 0.0) {
        throw Error(ErrorCode::Format, "prismatic joint with nonzero rotation state");
      }
    }
  }
  if (canonical_labels.size() != canonical_points.size()) {
    throw Error(ErrorCode::Format, "canonical label count does not match point count");
  }
  for (int l : canonical_labels) {
    if (l < 0 || l >= num_parts()) throw Error(ErrorCode::Format, "canonical label out of range");
  }
}

RigidTransform joint_transform(const Joint& joint, const JointState& state) {
  if (joint.type == JointType::Spherical) return spherical_transform(joint.screw.moment, state.rotation);
  return screw_transform(joint.screw, state);
}

std::vector<RigidTransform> forward_kinematics(const KinematicTree& tree, std::span<const Joint> joints,
                                               std::span<const JointState> states) {
  const auto n = static_cast<std::size_t>(tree.size());
  if (joints.size() != n || states.size() != n) {
    throw Error(ErrorCode::SizeMismatch, "forward kinematics needs one joint and state per part");
  }
  std::vector<RigidTransform> world(n);
  for (int i : tree.topological_order()) {
    const int p = tree.parent[static_cast<std::size_t>(i)];
    if (p < 0) continue;
    const auto ui = static_cast<std::size_t>(i);
    world[ui] = world[static_cast<std::size_t>(p)] * joint_transform(joints[ui], states[ui]);
  }
  return world;
}

std::vector<RigidTransform> forward_kinematics(const ArticulatedModel& model,
                                               std::span<const JointState> states) {
  return forward_kinematics(model.tree, model.joints, states);
}

std::vector<Vec3> pose_points(std::span<const Vec3> points, std::span<const int> labels,
                              std::span<const RigidTransform> transforms) {
  if (points.size() != labels.size()) throw Error(ErrorCode::SizeMismatch, "points and labels differ in length");
  std::vector<Vec3> out(points.size());
  for (std::size_t k = 0; k < points.size(); ++k) {
    out[k] = transforms[static_cast<std::size_t>(labels[k])].apply(points[k]);
  }
  return out;
}

std::vector<Vec3> pose_cloud(const ArticulatedModel& model, std::span<const JointState> states) {
  const auto world = forward_kinematics(model, states);
  return pose_points(model.canonical_points, model.canonical_labels, world);
}

namespace {

using Deriv8 = Eigen::Matrix<double, 8, 1>;
using AD = Eigen::AutoDiffScalar<Deriv8>;
using Vec3AD = Eigen::Matrix<AD, 3, 1>;
using Mat3AD = Eigen::Matrix<AD, 3, 3>;

AD active(double value, int index) { return AD(value, 8, index); }

// Joint gradient from dE/dR_J and dE/dt_J.
JointGrad joint_param_grad(const Joint& joint, const JointState& state, const Mat3& g_rot,
                           const Vec3& g_trans) {
  Vec3AD omega, v;
  if (joint.type == JointType::Spherical) {
    Vec3AD c, r;
    for (int k = 0; k < 3; ++k) {
      c[k] = active(joint.screw.moment[k], k);
      r[k] = active(state.rotation[k], 3 + k);
    }
    omega = r;
    v = c.cross(r);
  } else {
    Vec3AD l, m;
    for (int k = 0; k < 3; ++k) {
      l[k] = active(joint.screw.axis[k], k);
      m[k] = active(joint.screw.moment[k], 3 + k);
    }
    const AD tau = active(state.tau, 6);
    const AD d = active(state.d, 7);
    omega = l * tau;
    v = m.cross(l) * tau + l * d;
  }
  Mat3AD rot;
  Vec3AD trans;
  exp_twist<AD>(omega, v, rot, trans);
  Deriv8 acc = Deriv8::Zero();
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      if (rot(a, b).derivatives().size() == 8) acc += g_rot(a, b) * rot(a, b).derivatives();
    }
    if (trans[a].derivatives().size() == 8) acc += g_trans[a] * trans[a].derivatives();
  }
  JointGrad out;
  if (joint.type == JointType::Spherical) {
    out.axis = acc.segment<3>(0);
    out.rotation = acc.segment<3>(3);
  } else {
    out.axis = acc.segment<3>(0);
    out.moment = acc.segment<3>(3);
    out.tau = acc[6];
    out.d = acc[7];
  }
  return out;
}

}  // namespace

std::vector<JointGrad> chain_gradient(const KinematicTree& tree, std::span<const Joint> joints,
                                      std::span<const JointState> states,
                                      std::span<const TransformGrad> world_grads) {
  const auto n = static_cast<std::size_t>(tree.size());
  if (world_grads.size() != n) throw Error(ErrorCode::SizeMismatch, "one transform gradient per part expected");
  const auto world = forward_kinematics(tree, joints, states);
  std::vector<TransformGrad> acc(world_grads.begin(), world_grads.end());
  std::vector<JointGrad> out(n);
  const auto order = tree.topological_order();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const auto i = static_cast<std::size_t>(*it);
    const int p = tree.parent[i];
    if (p < 0) continue;
    const auto up = static_cast<std::size_t>(p);
    const Mat3& rp = world[up].rotation;
    const RigidTransform local = joint_transform(joints[i], states[i]);
    // M_i = M_p * J_i
    const Mat3 g_rot_local = rp.transpose() * acc[i].rotation;
    const Vec3 g_trans_local = rp.transpose() * acc[i].translation;
    out[i] = joint_param_grad(joints[i], states[i], g_rot_local, g_trans_local);
    acc[up].rotation += acc[i].rotation * local.rotation.transpose() +
                        acc[i].translation * local.translation.transpose();
    acc[up].translation += acc[i].translation;
  }
  return out;
}

double constraint_mse(const ArticulatedModel& model, std::span<const PointConstraint> constraints,
                      std::span<const JointState> states) {
  if (constraints.empty()) throw Error(ErrorCode::NoConstraints, "no constraints given");
  const auto world = forward_kinematics(model, states);
  double sum = 0.0;
  for (const auto& c : constraints) {
    const auto k = static_cast<std::size_t>(c.point_index);
    sum += (world[static_cast<std::size_t>(model.canonical_labels[k])].apply(model.canonical_points[k]) - c.target)
               .squaredNorm();
  }
  return sum / static_cast<double>(constraints.size());
}

namespace {

// Flat IK parameter layout: per non-root part, tau (revolute), d (prismatic)
// or a rotation vector (spherical).
struct IkLayout {
  std::vector<int> offset;  // per part, -1 for the root
  int size = 0;

  explicit IkLayout(const ArticulatedModel& model) : offset(static_cast<std::size_t>(model.num_parts()), -1) {
    for (int i = 0; i < model.num_parts(); ++i) {
      if (i == model.tree.root) continue;
      offset[static_cast<std::size_t>(i)] = size;
      size += model.joints[static_cast<std::size_t>(i)].type == JointType::Spherical ? 3 : 1;
    }
  }

  std::vector<double> pack(const ArticulatedModel& model, std::span<const JointState> states) const {
    std::vector<double> p(static_cast<std::size_t>(size));
    for (std::size_t i = 0; i < offset.size(); ++i) {
      if (offset[i] < 0) continue;
      const auto o = static_cast<std::size_t>(offset[i]);
      switch (model.joints[i].type) {
        case JointType::Revolute: p[o] = states[i].tau; break;
        case JointType::Prismatic: p[o] = states[i].d; break;
        case JointType::Spherical:
          for (std::size_t k = 0; k < 3; ++k) p[o + k] = states[i].rotation[static_cast<Eigen::Index>(k)];
          break;
      }
    }
    return p;
  }

  std::vector<JointState> unpack(const ArticulatedModel& model, std::span<const double> p) const {
    std::vector<JointState> s(offset.size());
    for (std::size_t i = 0; i < offset.size(); ++i) {
      if (offset[i] < 0) continue;
      const auto o = static_cast<std::size_t>(offset[i]);
      switch (model.joints[i].type) {
        case JointType::Revolute: s[i].tau = p[o]; break;
        case JointType::Prismatic: s[i].d = p[o]; break;
        case JointType::Spherical: s[i].rotation = Vec3(p[o], p[o + 1], p[o + 2]); break;
      }
    }
    return s;
  }
};

}  // namespace

IkResult retarget_ik(const ArticulatedModel& model, std::span<const PointConstraint> constraints,
                     const IkConfig& config, std::optional<std::vector<JointState>> initial) {
  if (constraints.empty()) throw Error(ErrorCode::NoConstraints, "no constraints given");
  for (const auto& c : constraints) {
    if (c.point_index < 0 || static_cast<std::size_t>(c.point_index) >= model.canonical_points.size()) {
      throw Error(ErrorCode::Format, "constraint point index out of range");
    }
    if (!c.target.allFinite()) throw Error(ErrorCode::Format, "constraint target is not finite");
  }
  const IkLayout layout(model);
  const std::vector<JointState> start = initial ? *initial : model.zero_states();
  if (start.size() != static_cast<std::size_t>(model.num_parts())) {
    throw Error(ErrorCode::SizeMismatch, "initial states do not cover all parts");
  }
  const std::vector<double> prior = layout.pack(model, start);
  std::vector<double> params = prior;
  const double inv_n = 1.0 / static_cast<double>(constraints.size());

  auto evaluate = [&](const std::vector<double>& p, std::vector<double>* grad) {
    const auto states = layout.unpack(model, p);
    const auto world = forward_kinematics(model, states);
    std::vector<TransformGrad> wg(static_cast<std::size_t>(model.num_parts()));
    double loss = 0.0;
    for (const auto& c : constraints) {
      const auto k = static_cast<std::size_t>(c.point_index);
      const auto part = static_cast<std::size_t>(model.canonical_labels[k]);
      const Vec3& x = model.canonical_points[k];
      const Vec3 r = world[part].apply(x) - c.target;
      loss += r.squaredNorm() * inv_n;
      if (grad) wg[part].add_point(x, 2.0 * inv_n * r);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double dp = p[i] - prior[i];
      loss += config.prior_weight * dp * dp;
    }
    if (grad) {
      grad->assign(p.size(), 0.0);
      const auto jg = chain_gradient(model.tree, model.joints, states, wg);
      for (std::size_t i = 0; i < layout.offset.size(); ++i) {
        if (layout.offset[i] < 0) continue;
        const auto o = static_cast<std::size_t>(layout.offset[i]);
        switch (model.joints[i].type) {
          case JointType::Revolute: (*grad)[o] = jg[i].tau; break;
          case JointType::Prismatic: (*grad)[o] = jg[i].d; break;
          case JointType::Spherical:
            for (std::size_t k = 0; k < 3; ++k) (*grad)[o + k] = jg[i].rotation[static_cast<Eigen::Index>(k)];
            break;
        }
      }
      for (std::size_t i = 0; i < p.size(); ++i) (*grad)[i] += 2.0 * config.prior_weight * (p[i] - prior[i]);
    }
    return loss;
  };

  AdamMoments moments;
  std::vector<double> grad;
  std::vector<double> best = params;
  double best_loss = std::numeric_limits<double>::infinity();
  for (int it = 0; it < config.iters; ++it) {
    const double loss = evaluate(params, &grad);
    if (loss < best_loss) {
      best_loss = loss;
      best = params;
    }
    if (params.empty()) break;
    adam_step(moments, params, grad, config.lr);
  }
  const double last = evaluate(params, nullptr);
  if (last < best_loss) {
    best_loss = last;
    best = params;
  }
  IkResult out;
  out.states = layout.unpack(model, best);
  out.mse = constraint_mse(model, constraints, out.states);
  return out;
}

// ---- serialization ----

std::string base64_encode(std::span<const unsigned char> bytes) {
  static const char* table = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += table[(v >> 6) & 63];
    out += table[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += table[(v >> 18) & 63];
    out += table[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? table[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<unsigned char> out;
  unsigned buf = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    if (c == '\n' || c == '\r' || c == ' ') continue;
    const int v = value(c);
    if (v < 0) throw Error(ErrorCode::Format, "invalid base64 character");
    buf = (buf << 6) | static_cast<unsigned>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xFF));
    }
  }
  return out;
}

namespace {

std::string encode_floats(const double* data, Eigen::Index n) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(n) * 4);
  for (Eigen::Index i = 0; i < n; ++i) {
    const float f = static_cast<float>(data[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int b = 0; b < 4; ++b) bytes[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)] = static_cast<unsigned char>(u >> (8 * b));
  }
  return base64_encode(bytes);
}

void decode_floats(const std::string& text, double* data, Eigen::Index n) {
  const auto bytes = base64_decode(text);
  if (bytes.size() != static_cast<std::size_t>(n) * 4) {
    throw Error(ErrorCode::Format, "segmentation field weight blob has the wrong length");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)]) << (8 * b);
    float f;
    std::memcpy(&f, &u, 4);
    data[i] = f;
  }
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 json_vec(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::Format, "expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::string model_to_json(const ArticulatedModel& model, const std::string& canonical_ply_name) {
  json j;
  j["format"] = "reart-model";
  j["version"] = 1;
  j["parts"] = model.num_parts();
  j["tree"] = {{"parent", model.tree.parent}, {"root", model.tree.root}};
  json joints = json::array();
  for (int i = 0; i < model.num_parts(); ++i) {
    if (i == model.tree.root) continue;
    const Joint& jt = model.joints[static_cast<std::size_t>(i)];
    joints.push_back({{"part", i},
                      {"parent", model.tree.parent[static_cast<std::size_t>(i)]},
                      {"type", to_string(jt.type)},
                      {"axis", vec_json(jt.screw.axis)},
                      {"moment", vec_json(jt.screw.moment)}});
  }
  j["joints"] = joints;
  json states = json::array();
  for (const auto& frame : model.states) {
    json f = json::array();
    for (std::size_t i = 0; i < frame.size(); ++i) {
      json s = {{"tau", frame[i].tau}, {"d", frame[i].d}};
      if (model.joints[i].type == JointType::Spherical) s["rotation"] = vec_json(frame[i].rotation);
      f.push_back(s);
    }
    states.push_back(f);
  }
  j["states"] = states;
  j["canonical_index"] = model.canonical_index;
  if (model.segfield) {
    const SegFieldParams& p = *model.segfield;
    j["normalization"] = {{"center", vec_json(p.normalization.center)}, {"scale", p.normalization.scale}};
    j["segfield"] = {{"n_max", p.n_max()},
                     {"hidden", p.hidden()},
                     {"activation", "relu"},
                     {"w1", encode_floats(p.w1.data(), p.w1.size())},
                     {"b1", encode_floats(p.b1.data(), p.b1.size())},
                     {"w2", encode_floats(p.w2.data(), p.w2.size())},
                     {"b2", encode_floats(p.b2.data(), p.b2.size())}};
    j["slot_to_part"] = model.slot_to_part;
  } else {
    j["normalization"] = nullptr;
    j["segfield"] = nullptr;
  }
  j["canonical_cloud"] = canonical_ply_name;
  j["num_points"] = model.canonical_points.size();
  j["e_project"] = model.e_project;
  return j.dump(2) + "\n";
}

ArticulatedModel model_from_json(const std::string& text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    ArticulatedModel m;
    const int parts = j.at("parts").get<int>();
    m.tree.parent = j.at("tree").at("parent").get<std::vector<int>>();
    m.tree.root = j.at("tree").at("root").get<int>();
    if (m.tree.size() != parts) throw Error(ErrorCode::Format, "tree size does not match part count");
    m.tree.validate();
    m.joints.assign(static_cast<std::size_t>(parts), Joint{});
    for (const auto& jj : j.at("joints")) {
      const int i = jj.at("part").get<int>();
      if (i < 0 || i >= parts) throw Error(ErrorCode::Format, "joint part index out of range");
      Joint& jt = m.joints[static_cast<std::size_t>(i)];
      jt.type = joint_type_from_string(jj.at("type").get<std::string>());
      jt.screw.axis = json_vec(jj.at("axis"));
      jt.screw.moment = json_vec(jj.at("moment"));
    }
    for (const auto& f : j.at("states")) {
      if (static_cast<int>(f.size()) != parts) throw Error(ErrorCode::Format, "state frame has the wrong length");
      std::vector<JointState> frame;
      for (const auto& s : f) {
        JointState st;
        st.tau = s.at("tau").get<double>();
        st.d = s.at("d").get<double>();
        if (s.contains("rotation")) st.rotation = json_vec(s.at("rotation"));
        frame.push_back(st);
      }
      m.states.push_back(std::move(frame));
    }
    m.canonical_index = j.value("canonical_index", 0);
    m.e_project = j.value("e_project", 0.0);
    if (j.contains("segfield") && !j["segfield"].is_null()) {
      const json& s = j["segfield"];
      SegFieldParams p = SegFieldParams::zeros(s.at("n_max").get<int>(), s.at("hidden").get<int>());
      decode_floats(s.at("w1").get<std::string>(), p.w1.data(), p.w1.size());
      decode_floats(s.at("b1").get<std::string>(), p.b1.data(), p.b1.size());
      decode_floats(s.at("w2").get<std::string>(), p.w2.data(), p.w2.size());
      decode_floats(s.at("b2").get<std::string>(), p.b2.data(), p.b2.size());
      const json& nrm = j.at("normalization");
      p.normalization.center = json_vec(nrm.at("center"));
      p.normalization.scale = nrm.at("scale").get<double>();
      m.segfield = std::move(p);
      m.slot_to_part = j.at("slot_to_part").get<std::vector<int>>();
    }
    const std::string cloud = j.value("canonical_cloud", std::string());
    if (!cloud.empty()) {
      const PointCloud pc = read_ply(base_dir / cloud);
      m.canonical_points = pc.points;
      if (pc.labels) {
        m.canonical_labels = *pc.labels;
      } else {
        m.canonical_labels.assign(pc.points.size(), 0);
      }
    }
    m.validate();
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("malformed model file: ") + e.what());
  }
}

void save_model(const std::filesystem::path& path, const ArticulatedModel& model,
                const std::string& canonical_ply_name) {
  std::string ply = canonical_ply_name;
  if (ply.empty()) ply = path.stem().string() + ".canonical.ply";
  PointCloud pc;
  pc.points = model.canonical_points;
  pc.labels = model.canonical_labels;
  pc.frame_index = model.canonical_index;
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  write_ply(dir / ply, pc);
  write_file_bytes(path, model_to_json(model, ply));
}

ArticulatedModel load_model(const std::filesystem::path& path) {
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return model_from_json(read_file_bytes(path), dir);
}

std::vector<PointConstraint> parse_constraints(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("constraints are not valid JSON: ") + e.what());
  }
  const json* list = &j;
  if (j.is_object() && j.contains("constraints")) list = &j["constraints"];
  if (!list->is_array()) throw Error(ErrorCode::Format, "constraints must be a JSON list");
  std::vector<PointConstraint> out;
  try {
    for (const auto& c : *list) {
      PointConstraint pc;
      pc.point_index = c.at("point_index").get<int>();
      pc.target = json_vec(c.at("target"));
      out.push_back(pc);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("malformed constraint: ") + e.what());
  }
  return out;
}

std::vector<PointConstraint> load_constraints(const std::filesystem::path& path) {
  return parse_constraints(read_file_bytes(path));
}

}  // namespace reart
