#include "reart/serve.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include <httplib.h>
#include <json.hpp>

#include "reart/error.hpp"

namespace reart {

using json = nlohmann::json;

namespace {

std::string fnv1a_etag(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "\"%016llx\"", static_cast<unsigned long long>(h));
  return buf;
}

Response error_response(int status, const std::string& message) {
  Response r;
  r.status = status;
  r.body = json{{"error", message}}.dump() + "\n";
  return r;
}

json vec_json(const Vec3& v) { return json::array({round_sig9(v.x()), round_sig9(v.y()), round_sig9(v.z())}); }

std::vector<JointState> parse_states(const json& j, const ArticulatedModel& model) {
  const json* list = &j;
  if (j.is_object() && j.contains("states")) list = &j["states"];
  if (!list->is_array()) throw Error(ErrorCode::Format, "states must be a list");
  if (list->size() != static_cast<std::size_t>(model.num_parts())) {
    throw Error(ErrorCode::SizeMismatch, "expected " + std::to_string(model.num_parts()) + " joint states, got " +
                                             std::to_string(list->size()));
  }
  std::vector<JointState> out(list->size());
  try {
    for (std::size_t i = 0; i < out.size(); ++i) {
      const json& s = (*list)[i];
      out[i].tau = s.value("tau", 0.0);
      out[i].d = s.value("d", 0.0);
      if (s.contains("rotation")) {
        const auto r = s.at("rotation").get<std::vector<double>>();
        if (r.size() != 3) throw Error(ErrorCode::Format, "rotation must have three components");
        out[i].rotation = Vec3(r[0], r[1], r[2]);
      }
      if (!std::isfinite(out[i].tau) || !std::isfinite(out[i].d) || !out[i].rotation.allFinite()) {
        throw Error(ErrorCode::Format, "non-finite joint state");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, std::string("malformed joint state: ") + e.what());
  }
  return out;
}

}  // namespace

double round_sig9(double v) {
  if (!std::isfinite(v) || v == 0.0) return v;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::strtod(buf, nullptr);
}

ModelService::ModelService(const ServeOptions& options) : ik_iters_(options.ik_iters) {
  model_bytes_ = read_file_bytes(options.model_path);
  const auto dir = options.model_path.has_parent_path() ? options.model_path.parent_path()
                                                        : std::filesystem::path(".");
  model_ = model_from_json(model_bytes_, dir);
  etag_ = fnv1a_etag(model_bytes_);
  const json j = json::parse(model_bytes_);
  const std::string cloud = j.value("canonical_cloud", std::string());
  if (!cloud.empty()) canonical_path_ = dir / cloud;
  if (!options.data_dir.empty()) {
    const Manifest m = read_manifest(options.data_dir);
    for (const auto& f : m.frame_files) frame_paths_.push_back(options.data_dir / f);
  }
}

Response ModelService::get_model(const std::string& if_none_match) const {
  Response r;
  r.headers["ETag"] = etag_;
  if (!if_none_match.empty() && if_none_match == etag_) {
    r.status = 304;
    return r;
  }
  r.body = model_bytes_;
  return r;
}

Response ModelService::get_cloud(const std::optional<std::string>& frame) const {
  std::filesystem::path path;
  if (!frame || frame->empty()) {
    if (canonical_path_.empty()) return error_response(404, "model has no canonical cloud file");
    path = canonical_path_;
  } else {
    char* end = nullptr;
    const long t = std::strtol(frame->c_str(), &end, 10);
    if (end == frame->c_str() || *end != '\0') return error_response(400, "frame must be an integer");
    if (t < 0 || t >= static_cast<long>(frame_paths_.size())) return error_response(404, "frame out of range");
    path = frame_paths_[static_cast<std::size_t>(t)];
  }
  Response r;
  r.content_type = "application/octet-stream";
  try {
    r.body = read_file_bytes(path);
  } catch (const Error& e) {
    return error_response(500, e.what());
  }
  return r;
}

std::string ModelService::states_and_points(const std::vector<JointState>& states, bool with_states) const {
  json out;
  if (with_states) {
    json s = json::array();
    for (std::size_t i = 0; i < states.size(); ++i) {
      json e = {{"tau", states[i].tau}, {"d", states[i].d}};
      if (model_.joints[i].type == JointType::Spherical) e["rotation"] = vec_json(states[i].rotation);
      s.push_back(e);
    }
    out["states"] = s;
  }
  json pts = json::array();
  for (const Vec3& p : pose_cloud(model_, states)) pts.push_back(vec_json(p));
  out["posed_points"] = pts;
  return out.dump() + "\n";
}

Response ModelService::post_retarget(const std::string& body) const {
  std::vector<PointConstraint> constraints;
  try {
    constraints = parse_constraints(body);
  } catch (const Error& e) {
    return error_response(400, e.what());
  }
  if (constraints.empty()) return error_response(400, "no constraints");
  for (const auto& c : constraints) {
    if (c.point_index < 0 || static_cast<std::size_t>(c.point_index) >= model_.canonical_points.size()) {
      return error_response(400, "point_index " + std::to_string(c.point_index) + " out of range");
    }
    if (!c.target.allFinite()) return error_response(400, "non-finite target");
  }
  IkConfig ik;
  ik.iters = ik_iters_;
  IkResult res;
  try {
    res = retarget_ik(model_, constraints, ik);
  } catch (const Error& e) {
    return error_response(400, e.what());
  }
  // Round first so /fk on the returned states reproduces posed_points exactly.
  for (auto& s : res.states) {
    s.tau = round_sig9(s.tau);
    s.d = round_sig9(s.d);
    for (int k = 0; k < 3; ++k) s.rotation[k] = round_sig9(s.rotation[k]);
  }
  Response r;
  r.body = states_and_points(res.states, true);
  return r;
}

Response ModelService::post_fk(const std::string& body) const {
  std::vector<JointState> states;
  try {
    states = parse_states(json::parse(body), model_);
  } catch (const json::exception& e) {
    return error_response(400, std::string("invalid JSON: ") + e.what());
  } catch (const Error& e) {
    return error_response(400, e.what());
  }
  Response r;
  r.body = states_and_points(states, false);
  return r;
}

int run_server(const ServeOptions& options) {
  const ModelService service(options);
  httplib::Server server;

  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    for (const auto& [k, v] : r.headers) res.set_header(k, v);
    if (!r.body.empty()) res.set_content(r.body, r.content_type);
  };

  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type, If-None-Match"},
                              {"Access-Control-Expose-Headers", "ETag"}});
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  server.Get("/model", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, service.get_model(req.get_header_value("If-None-Match")));
  });
  server.Get("/cloud", [&](const httplib::Request& req, httplib::Response& res) {
    std::optional<std::string> frame;
    if (req.has_param("frame")) frame = req.get_param_value("frame");
    send(res, service.get_cloud(frame));
  });
  server.Post("/retarget", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, service.post_retarget(req.body));
  });
  server.Post("/fk", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, service.post_fk(req.body));
  });
  if (!options.static_dir.empty() && !server.set_mount_point("/", options.static_dir.string())) {
    std::cerr << "error: cannot serve static directory " << options.static_dir << "\n";
    return 1;
  }
  std::cerr << "serving " << options.model_path.string() << " on http://" << options.host << ":" << options.port
            << "\n";
  if (!server.listen(options.host, options.port)) {
    std::cerr << "error: cannot listen on " << options.host << ":" << options.port << "\n";
    return 1;
  }
  return 0;
}

}  // namespace reart
