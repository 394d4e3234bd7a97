#include "reart/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <json.hpp>

#include "reart/error.hpp"

namespace reart {

using json = nlohmann::json;

Topology topology_from_string(const std::string& name) {
  if (name == "chain") return Topology::Chain;
  if (name == "star") return Topology::Star;
  if (name == "random") return Topology::Random;
  throw Error(ErrorCode::SpecInfeasible, "unknown topology '" + name + "'");
}

const char* to_string(Topology topology) {
  switch (topology) {
    case Topology::Chain: return "chain";
    case Topology::Star: return "star";
    case Topology::Random: return "random";
  }
  return "chain";
}

void SynthSpec::validate() const {
  if (n_parts < 1 || n_parts > 8) throw Error(ErrorCode::SpecInfeasible, "part count must be between 1 and 8");
  if (frames < 2) throw Error(ErrorCode::SpecInfeasible, "at least two frames are required");
  if (points < n_parts) throw Error(ErrorCode::SpecInfeasible, "need at least one point per part");
  if (!(amplitude >= 0.0) || !(noise >= 0.0) || !(clearance > 0.0)) {
    throw Error(ErrorCode::SpecInfeasible, "amplitude, noise and clearance must be nonnegative and finite");
  }
  if (!joint_types.empty() && static_cast<int>(joint_types.size()) != n_parts - 1) {
    throw Error(ErrorCode::SpecInfeasible, "joint type list must have one entry per non-root part");
  }
  for (JointType t : joint_types) {
    if (t == JointType::Spherical) throw Error(ErrorCode::SpecInfeasible, "the generator only emits screw joints");
  }
}

namespace {

constexpr int kPlacementAttempts = 100;

bool boxes_overlap(const Box& a, const Box& b, double clearance) {
  for (int k = 0; k < 3; ++k) {
    if (std::abs(a.center[k] - b.center[k]) >= a.half[k] + b.half[k] + clearance - 1e-9) return false;
  }
  return true;
}

struct Layout {
  std::vector<int> parent;
  std::vector<Box> boxes;
  std::vector<Joint> joints;
  std::vector<double> range;  // max |theta| per part
};

// One attempt at placing every part; returns false on overlap.
bool try_layout(const SynthSpec& spec, std::mt19937_64& rng, Layout& out) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const int n = spec.n_parts;
  out = Layout{};
  out.parent.assign(static_cast<std::size_t>(n), -1);
  for (int i = 1; i < n; ++i) {
    switch (spec.topology) {
      case Topology::Chain: out.parent[static_cast<std::size_t>(i)] = i - 1; break;
      case Topology::Star: out.parent[static_cast<std::size_t>(i)] = 0; break;
      case Topology::Random:
        out.parent[static_cast<std::size_t>(i)] = std::uniform_int_distribution<int>(0, i - 1)(rng);
        break;
    }
  }
  out.boxes.resize(static_cast<std::size_t>(n));
  out.joints.assign(static_cast<std::size_t>(n), Joint{});
  out.range.assign(static_cast<std::size_t>(n), 0.0);
  out.boxes[0].half = Vec3(uniform(0.15, 0.3), uniform(0.15, 0.3), uniform(0.15, 0.3));
  // Faces in use per part: index 2 * axis + (sign > 0).
  std::vector<std::array<bool, 6>> used(static_cast<std::size_t>(n));
  for (auto& u : used) u.fill(false);

  for (int i = 1; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const int p = out.parent[ui];
    const Box& pb = out.boxes[static_cast<std::size_t>(p)];
    std::vector<int> faces;
    for (int f = 0; f < 6; ++f) {
      if (!used[static_cast<std::size_t>(p)][static_cast<std::size_t>(f)]) faces.push_back(f);
    }
    if (faces.empty()) return false;
    const int face = faces[std::uniform_int_distribution<std::size_t>(0, faces.size() - 1)(rng)];
    const int a = face / 2;
    const double s = face % 2 ? 1.0 : -1.0;
    const int b = (a + 1 + std::uniform_int_distribution<int>(0, 1)(rng)) % 3;
    const int c = 3 - a - b;
    Vec3 n_vec = Vec3::Zero();
    n_vec[a] = s;

    Box cb;
    cb.half = Vec3(uniform(0.08, 0.2), uniform(0.08, 0.2), uniform(0.08, 0.2));
    cb.center = pb.center + n_vec * (pb.half[a] + spec.clearance + cb.half[a]);
    for (int k : {b, c}) cb.center[k] += uniform(-0.5, 0.5) * std::abs(pb.half[k] - cb.half[k]);
    for (int j = 0; j < i; ++j) {
      if (boxes_overlap(cb, out.boxes[static_cast<std::size_t>(j)], spec.clearance)) return false;
    }
    out.boxes[ui] = cb;
    used[static_cast<std::size_t>(p)][static_cast<std::size_t>(face)] = true;
    used[ui][static_cast<std::size_t>(2 * a + (s > 0 ? 0 : 1))] = true;  // face pointing back at the parent

    const JointType type = spec.joint_types.empty() ? (i % 2 == 1 ? JointType::Revolute : JointType::Prismatic)
                                                    : spec.joint_types[ui - 1];
    Joint& jt = out.joints[ui];
    jt.type = type;
    if (type == JointType::Prismatic) {
      jt.screw.axis = n_vec;
      jt.screw.moment = cb.center;
      out.range[ui] = spec.amplitude * uniform(0.15, 0.3);
    } else {
      // Hinge on the child's edge next to the parent face.
      const double edge = std::uniform_int_distribution<int>(0, 1)(rng) ? 1.0 : -1.0;
      Vec3 l = Vec3::Zero();
      l[b] = 1.0;
      Vec3 e_c = Vec3::Zero();
      e_c[c] = 1.0;
      const Vec3 m = cb.center - n_vec * (cb.half[a] + 0.5 * spec.clearance) + e_c * (edge * cb.half[c]);
      if (l.cross(cb.center - m).dot(n_vec) < 0.0) l = -l;  // positive angles swing away from the parent
      jt.screw.axis = l;
      jt.screw.moment = m;
      out.range[ui] = spec.amplitude * uniform(0.6, 1.0);
    }
  }
  return true;
}

JointState state_for(JointType type, double value) {
  JointState s;
  if (type == JointType::Prismatic) {
    s.d = value;
  } else {
    s.tau = value;
  }
  return s;
}

float round_float(double v) { return static_cast<float>(v); }

Vec3 to_float(const Vec3& v) { return Vec3(round_float(v.x()), round_float(v.y()), round_float(v.z())); }

}  // namespace

SynthResult generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  Layout layout;
  bool placed = false;
  for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) placed = try_layout(spec, rng, layout);
  if (!placed) throw Error(ErrorCode::SpecInfeasible, "could not place the parts without overlap");

  const int n = spec.n_parts;
  const auto un = static_cast<std::size_t>(n);
  // Normalize the rest geometry to unit maximum extent around the origin.
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Box& b : layout.boxes) {
    lo = lo.cwiseMin(b.center - b.half);
    hi = hi.cwiseMax(b.center + b.half);
  }
  const Vec3 mid = 0.5 * (lo + hi);
  const double scale = 1.0 / (hi - lo).maxCoeff();
  for (Box& b : layout.boxes) {
    b.center = (b.center - mid) * scale;
    b.half *= scale;
  }
  for (std::size_t i = 1; i < un; ++i) {
    layout.joints[i].screw.moment = (layout.joints[i].screw.moment - mid) * scale;
    // Prismatic ranges were drawn in normalized units already.
  }

  SynthResult out;
  out.boxes = layout.boxes;
  ArticulatedModel& truth = out.truth;
  truth.tree.parent = layout.parent;
  truth.tree.root = 0;
  truth.joints = layout.joints;
  truth.canonical_index = 0;

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int t = 0; t < spec.frames; ++t) {
    const double phase = static_cast<double>(t) / static_cast<double>(spec.frames - 1);
    const double shape = spec.motion == Motion::Monotone ? phase : std::sin(std::numbers::pi * phase);
    std::vector<JointState> states(un);
    for (std::size_t i = 1; i < un; ++i) states[i] = state_for(layout.joints[i].type, layout.range[i] * shape);
    truth.states.push_back(states);
  }
  out.novel_states.assign(un, JointState{});
  for (std::size_t i = 1; i < un; ++i) {
    const double frac = 0.2 + 0.6 * u01(rng);
    out.novel_states[i] = state_for(layout.joints[i].type, layout.range[i] * frac);
  }

  // Surface sampling, area weighted over every box face.
  struct Face {
    int part;
    Vec3 origin, du, dv;
  };
  std::vector<Face> faces;
  std::vector<double> areas;
  for (int i = 0; i < n; ++i) {
    const Box& b = layout.boxes[static_cast<std::size_t>(i)];
    for (int a = 0; a < 3; ++a) {
      const int p = (a + 1) % 3, q = (a + 2) % 3;
      for (double s : {-1.0, 1.0}) {
        Face f;
        f.part = i;
        f.origin = b.center;
        f.origin[a] += s * b.half[a];
        f.origin[p] -= b.half[p];
        f.origin[q] -= b.half[q];
        f.du = Vec3::Zero();
        f.dv = Vec3::Zero();
        f.du[p] = 2.0 * b.half[p];
        f.dv[q] = 2.0 * b.half[q];
        faces.push_back(f);
        areas.push_back(4.0 * b.half[p] * b.half[q]);
      }
    }
  }
  std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (int t = 0; t < spec.frames; ++t) {
    const auto ut = static_cast<std::size_t>(t);
    const auto world = forward_kinematics(truth.tree, truth.joints, truth.states[ut]);
    const auto prev = t > 0 ? forward_kinematics(truth.tree, truth.joints, truth.states[ut - 1]) : world;
    PointCloud cloud;
    cloud.frame_index = t;
    cloud.labels.emplace();
    cloud.flow.emplace();
    cloud.points.reserve(static_cast<std::size_t>(spec.points));
    for (int k = 0; k < spec.points; ++k) {
      const Face& f = faces[pick(rng)];
      const Vec3 rest = f.origin + u01(rng) * f.du + u01(rng) * f.dv;
      const auto part = static_cast<std::size_t>(f.part);
      Vec3 x = world[part].apply(rest);
      const Vec3 flow = t > 0 ? Vec3(x - prev[part].apply(rest)) : Vec3::Zero();
      if (spec.noise > 0.0) x += spec.noise * Vec3(gauss(rng), gauss(rng), gauss(rng));
      cloud.points.push_back(to_float(x));
      cloud.labels->push_back(f.part);
      cloud.flow->push_back(to_float(flow));
    }
    out.sequence.frames.push_back(std::move(cloud));
  }
  out.sequence.canonical_index = 0;
  truth.canonical_points = out.sequence.frames[0].points;
  truth.canonical_labels = *out.sequence.frames[0].labels;
  truth.validate();
  return out;
}

void write_dataset(const std::filesystem::path& dir, const SynthResult& data) {
  write_sequence(dir, data.sequence, std::string("ground_truth.json"));
  json j = json::parse(model_to_json(data.truth, "frame_000.ply"));
  json novel = json::array();
  for (std::size_t i = 0; i < data.novel_states.size(); ++i) {
    novel.push_back({{"tau", data.novel_states[i].tau}, {"d", data.novel_states[i].d}});
  }
  j["novel_states"] = novel;
  j["novel_truth"] = "novel_truth.ply";
  write_file_bytes(dir / "ground_truth.json", j.dump(2) + "\n");

  PointCloud posed;
  posed.points = pose_cloud(data.truth, data.novel_states);
  for (auto& p : posed.points) p = to_float(p);
  posed.labels = data.truth.canonical_labels;
  write_ply(dir / "novel_truth.ply", posed);
}

GroundTruth load_ground_truth(const std::filesystem::path& dir) {
  const auto path = dir / "ground_truth.json";
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorCode::MissingGroundTruth, "no ground_truth.json in " + dir.string());
  }
  const std::string text = read_file_bytes(path);
  GroundTruth gt;
  gt.model = model_from_json(text, dir);
  const json j = json::parse(text);
  if (j.contains("novel_states")) {
    std::vector<JointState> states;
    for (const auto& s : j["novel_states"]) {
      JointState st;
      st.tau = s.at("tau").get<double>();
      st.d = s.at("d").get<double>();
      states.push_back(st);
    }
    if (states.size() != static_cast<std::size_t>(gt.model.num_parts())) {
      throw Error(ErrorCode::Format, "novel pose does not cover every part");
    }
    gt.novel_states = std::move(states);
  }
  return gt;
}

}  // namespace reart
