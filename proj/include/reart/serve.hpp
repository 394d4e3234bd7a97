#pragma once

// Local HTTP service for a fitted model. The handlers are plain functions of
// the request so they can be exercised without a socket.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "reart/cloud.hpp"
#include "reart/model.hpp"

namespace reart {

struct ServeOptions {
  std::filesystem::path model_path;
  std::filesystem::path data_dir;  // optional; enables /cloud?frame=t
  int port = 7700;
  std::string host = "127.0.0.1";
  int ik_iters = 100;
  std::filesystem::path static_dir;  // optional bundle served at /
};

struct Response {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

// Numbers in responses carry 9 significant digits.
double round_sig9(double v);

class ModelService {
 public:
  // Throws when the model (or the data manifest, if given) cannot be read.
  explicit ModelService(const ServeOptions& options);

  Response get_model(const std::string& if_none_match = "") const;
  // `frame` empty -> canonical cloud.
  Response get_cloud(const std::optional<std::string>& frame) const;
  Response post_retarget(const std::string& body) const;
  Response post_fk(const std::string& body) const;

  const ArticulatedModel& model() const { return model_; }
  const std::string& etag() const { return etag_; }

 private:
  std::string states_and_points(const std::vector<JointState>& states, bool with_states) const;

  ArticulatedModel model_;
  std::string model_bytes_;
  std::string etag_;
  std::filesystem::path canonical_path_;
  std::vector<std::filesystem::path> frame_paths_;
  int ik_iters_ = 100;
};

// Blocks until the server stops. Returns a process exit code.
int run_server(const ServeOptions& options);

}  // namespace reart
