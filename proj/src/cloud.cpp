#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "reart/cloud.hpp"
#include "reart/error.hpp"

namespace reart {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "PLY I/O assumes a little-endian host");

void Sequence::validate() const {
  if (frames.size() < 2) {
    throw Error(ErrorCode::DegenerateInput, "a sequence needs at least two frames");
  }
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].points.empty()) {
      throw Error(ErrorCode::DegenerateInput, "frame " + std::to_string(t) + " is empty");
    }
    if (t > 0 && frames[t].frame_index <= frames[t - 1].frame_index) {
      throw Error(ErrorCode::DegenerateInput, "frame indices must be strictly increasing");
    }
  }
  if (canonical_index && (*canonical_index < 0 || *canonical_index >= num_frames())) {
    throw Error(ErrorCode::DegenerateInput, "canonical index out of range");
  }
}

std::vector<int> farthest_point_sample(std::span<const Vec3> points, int k, int start_index) {
  const int n = static_cast<int>(points.size());
  if (k > n) {
    throw Error(ErrorCode::KTooLarge,
                "cannot sample " + std::to_string(k) + " of " + std::to_string(n) + " points");
  }
  std::vector<int> out;
  if (k <= 0) return out;
  out.reserve(static_cast<std::size_t>(k));
  std::vector<double> min_dsq(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  int current = start_index;
  for (int s = 0; s < k; ++s) {
    out.push_back(current);
    min_dsq[static_cast<std::size_t>(current)] = -1.0;
    int best = -1;
    double best_d = -1.0;
    const Vec3& c = points[static_cast<std::size_t>(current)];
    for (int i = 0; i < n; ++i) {
      double& m = min_dsq[static_cast<std::size_t>(i)];
      if (m < 0.0) continue;
      m = std::min(m, (points[static_cast<std::size_t>(i)] - c).squaredNorm());
      if (m > best_d) {
        best_d = m;
        best = i;
      }
    }
    current = best;
  }
  return out;
}

std::vector<int> farthest_point_sample_seeded(std::span<const Vec3> points, int k,
                                              std::uint64_t seed) {
  if (points.empty()) return {};
  std::mt19937_64 gen(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(points.size()) - 1);
  return farthest_point_sample(points, k, pick(gen));
}

Downsampled downsample(const PointCloud& cloud, int factor, std::uint64_t seed) {
  factor = std::max(factor, 1);
  Downsampled out;
  const int n = static_cast<int>(cloud.size());
  const int k = (n + factor - 1) / factor;
  if (factor == 1) {
    out.cloud = cloud;
    out.source_indices.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.source_indices[static_cast<std::size_t>(i)] = i;
    return out;
  }
  out.source_indices = farthest_point_sample_seeded(cloud.points, k, seed);
  out.cloud.frame_index = cloud.frame_index;
  for (int i : out.source_indices) out.cloud.points.push_back(cloud.points[static_cast<std::size_t>(i)]);
  if (cloud.labels) {
    out.cloud.labels.emplace();
    for (int i : out.source_indices) out.cloud.labels->push_back((*cloud.labels)[static_cast<std::size_t>(i)]);
  }
  if (cloud.flow) {
    out.cloud.flow.emplace();
    for (int i : out.source_indices) out.cloud.flow->push_back((*cloud.flow)[static_cast<std::size_t>(i)]);
  }
  return out;
}

// ---------------------------------------------------------------- PLY

namespace {

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

PlyType parse_ply_type(const std::string& name) {
  if (name == "char" || name == "int8") return PlyType::Int8;
  if (name == "uchar" || name == "uint8") return PlyType::UInt8;
  if (name == "short" || name == "int16") return PlyType::Int16;
  if (name == "ushort" || name == "uint16") return PlyType::UInt16;
  if (name == "int" || name == "int32") return PlyType::Int32;
  if (name == "uint" || name == "uint32") return PlyType::UInt32;
  if (name == "float" || name == "float32") return PlyType::Float32;
  if (name == "double" || name == "float64") return PlyType::Float64;
  throw Error(ErrorCode::Format, "unsupported PLY property type '" + name + "'");
}

int ply_type_size(PlyType t) {
  switch (t) {
    case PlyType::Int8:
    case PlyType::UInt8: return 1;
    case PlyType::Int16:
    case PlyType::UInt16: return 2;
    case PlyType::Int32:
    case PlyType::UInt32:
    case PlyType::Float32: return 4;
    case PlyType::Float64: return 8;
  }
  return 0;
}

double read_ply_value(const char* p, PlyType t) {
  switch (t) {
    case PlyType::Int8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::UInt8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::Int16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::UInt16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::Int32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::UInt32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::Float32: { float v; std::memcpy(&v, p, 4); return v; }
    case PlyType::Float64: { double v; std::memcpy(&v, p, 8); return v; }
  }
  return 0.0;
}

struct PlyProperty {
  std::string name;
  PlyType type;
  int offset;
};

template <typename T>
void append_raw(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

}  // namespace

std::string encode_ply(const PointCloud& cloud) {
  const bool has_labels = cloud.labels.has_value();
  const bool has_flow = cloud.flow.has_value();
  if (has_labels && cloud.labels->size() != cloud.size()) {
    throw Error(ErrorCode::SizeMismatch, "labels and points differ in length");
  }
  if (has_flow && cloud.flow->size() != cloud.size()) {
    throw Error(ErrorCode::SizeMismatch, "flow and points differ in length");
  }
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << cloud.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n";
  if (has_labels) header << "property uchar part_id\n";
  if (has_flow) header << "property float fx\nproperty float fy\nproperty float fz\n";
  header << "end_header\n";
  std::string out = header.str();
  out.reserve(out.size() + cloud.size() * (12 + (has_labels ? 1 : 0) + (has_flow ? 12 : 0)));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int c = 0; c < 3; ++c) append_raw(out, static_cast<float>(cloud.points[i][c]));
    if (has_labels) {
      const int label = (*cloud.labels)[i];
      if (label < 0 || label > 255) throw Error(ErrorCode::Format, "part_id must fit in a uchar");
      append_raw(out, static_cast<std::uint8_t>(label));
    }
    if (has_flow) {
      for (int c = 0; c < 3; ++c) append_raw(out, static_cast<float>((*cloud.flow)[i][c]));
    }
  }
  return out;
}

PointCloud decode_ply(const std::string& bytes) {
  const std::string marker = "end_header\n";
  const std::size_t header_end = bytes.find(marker);
  if (bytes.rfind("ply\n", 0) != 0 || header_end == std::string::npos) {
    throw Error(ErrorCode::Format, "not a PLY file");
  }
  std::istringstream header(bytes.substr(0, header_end));
  std::string line;
  std::size_t vertex_count = 0;
  bool in_vertex = false, seen_vertex = false, binary_le = false;
  std::vector<PlyProperty> props;
  int stride = 0;
  while (std::getline(header, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (word == "element") {
      std::string name;
      std::size_t count = 0;
      ls >> name >> count;
      if (seen_vertex && name != "vertex") break;  // trailing elements are ignored
      if (name != "vertex") throw Error(ErrorCode::Format, "unsupported PLY element before vertex");
      in_vertex = seen_vertex = true;
      vertex_count = count;
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ls >> type;
      if (type == "list") throw Error(ErrorCode::Format, "list properties are not supported");
      ls >> name;
      const PlyType t = parse_ply_type(type);
      props.push_back({name, t, stride});
      stride += ply_type_size(t);
    }
  }
  if (!binary_le) throw Error(ErrorCode::Format, "only binary_little_endian PLY is supported");
  auto find = [&](const std::string& name) -> const PlyProperty* {
    for (const auto& p : props) {
      if (p.name == name) return &p;
    }
    return nullptr;
  };
  const PlyProperty* px = find("x");
  const PlyProperty* py = find("y");
  const PlyProperty* pz = find("z");
  if (!px || !py || !pz) throw Error(ErrorCode::Format, "PLY lacks x/y/z");
  const PlyProperty* plabel = find("part_id");
  const PlyProperty* fx = find("fx");
  const PlyProperty* fy = find("fy");
  const PlyProperty* fz = find("fz");
  const bool has_flow = fx && fy && fz;

  const std::size_t data_begin = header_end + marker.size();
  if (bytes.size() < data_begin + vertex_count * static_cast<std::size_t>(stride)) {
    throw Error(ErrorCode::Format, "PLY body is truncated");
  }
  PointCloud cloud;
  cloud.points.resize(vertex_count);
  if (plabel) cloud.labels.emplace(vertex_count);
  if (has_flow) cloud.flow.emplace(vertex_count);
  for (std::size_t i = 0; i < vertex_count; ++i) {
    const char* rec = bytes.data() + data_begin + i * static_cast<std::size_t>(stride);
    cloud.points[i] = {read_ply_value(rec + px->offset, px->type),
                       read_ply_value(rec + py->offset, py->type),
                       read_ply_value(rec + pz->offset, pz->type)};
    if (plabel) (*cloud.labels)[i] = static_cast<int>(read_ply_value(rec + plabel->offset, plabel->type));
    if (has_flow) {
      (*cloud.flow)[i] = {read_ply_value(rec + fx->offset, fx->type),
                          read_ply_value(rec + fy->offset, fy->type),
                          read_ply_value(rec + fz->offset, fz->type)};
    }
  }
  return cloud;
}

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
  write_file_bytes(path, encode_ply(cloud));
}

PointCloud read_ply(const fs::path& path) { return decode_ply(read_file_bytes(path)); }

// ---------------------------------------------------------------- sequences

Manifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  json j;
  try {
    j = json::parse(read_file_bytes(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
  Manifest m;
  try {
    m.num_frames = j.at("num_frames").get<int>();
    m.points_per_frame = j.at("points_per_frame").get<int>();
    m.frame_files = j.at("frame_files").get<std::vector<std::string>>();
    if (j.contains("ground_truth") && !j["ground_truth"].is_null()) {
      m.ground_truth = j["ground_truth"].get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, path.string() + ": " + e.what());
  }
  if (static_cast<int>(m.frame_files.size()) != m.num_frames) {
    throw Error(ErrorCode::Format, "manifest frame count does not match frame_files");
  }
  return m;
}

void write_sequence(const fs::path& dir, const Sequence& seq,
                    const std::optional<std::string>& ground_truth) {
  fs::create_directories(dir);
  json j;
  j["num_frames"] = seq.num_frames();
  j["points_per_frame"] = seq.frames.empty() ? 0 : static_cast<int>(seq.frames[0].size());
  std::vector<std::string> files;
  for (int t = 0; t < seq.num_frames(); ++t) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03d.ply", t);
    files.emplace_back(name);
    write_ply(dir / name, seq.frames[static_cast<std::size_t>(t)]);
  }
  j["frame_files"] = files;
  if (ground_truth) j["ground_truth"] = *ground_truth;
  write_file_bytes(dir / "manifest.json", j.dump(2) + "\n");
}

Sequence read_sequence(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  Sequence seq;
  for (int t = 0; t < m.num_frames; ++t) {
    PointCloud frame = read_ply(dir / m.frame_files[static_cast<std::size_t>(t)]);
    frame.frame_index = t;
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

}  // namespace reart
