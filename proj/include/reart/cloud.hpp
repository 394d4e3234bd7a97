#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reart/geom.hpp"

namespace reart {

struct PointCloud {
  std::vector<Vec3> points;
  std::optional<std::vector<int>> labels;
  std::optional<std::vector<Vec3>> flow;  // motion to the previous frame
  int frame_index = 0;

  std::size_t size() const { return points.size(); }
};

struct Sequence {
  std::vector<PointCloud> frames;
  std::optional<int> canonical_index;

  int num_frames() const { return static_cast<int>(frames.size()); }
  // Throws DegenerateInput on T < 2, empty frames or non-increasing indices.
  void validate() const;
};

struct Neighbor {
  int index;
  double distance;
};

// Exact k-d tree over a fixed point set. Results are ordered by (distance,
// index), so ties resolve to the lower index exactly like a linear scan.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

  // k nearest neighbours; distances are Euclidean. Throws KTooLarge if k > N.
  std::vector<Neighbor> knn(const Vec3& query, int k) const;
  // Fast path for k = 1; returns index and writes the squared distance.
  int nearest(const Vec3& query, double* dist_sq = nullptr) const;
  // Fills up to k (index, squared distance) pairs into `out`; returns count.
  int knn_sq(const Vec3& query, int k, int* idx_out, double* dsq_out) const;

  const Vec3& point(int i) const { return points_[static_cast<std::size_t>(i)]; }

 private:
  struct Node {
    int begin, end;     // range into order_ (leaves)
    int left, right;    // child nodes, -1 for leaf
    int axis;
    double split;
  };
  int build(int begin, int end, int depth);

  std::vector<Vec3> points_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

std::vector<Neighbor> knn_query(const PointCloud& cloud, const Vec3& query, int k);

// Greedy farthest point sampling from a given start index. Ties go to the
// lower index.
std::vector<int> farthest_point_sample(std::span<const Vec3> points, int k, int start_index);
// Same, with the start index drawn from a generator seeded with `seed`.
std::vector<int> farthest_point_sample_seeded(std::span<const Vec3> points, int k,
                                              std::uint64_t seed);

struct Downsampled {
  PointCloud cloud;
  std::vector<int> source_indices;
};

// FPS subset of ceil(N / factor) points.
Downsampled downsample(const PointCloud& cloud, int factor, std::uint64_t seed);

// Binary little-endian PLY with float x,y,z, optional uchar part_id and
// optional float fx,fy,fz.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
std::string encode_ply(const PointCloud& cloud);
PointCloud read_ply(const std::filesystem::path& path);
PointCloud decode_ply(const std::string& bytes);

// Sequence directory: manifest.json + one PLY per frame.
struct Manifest {
  int num_frames = 0;
  int points_per_frame = 0;
  std::vector<std::string> frame_files;
  std::optional<std::string> ground_truth;
};

Manifest read_manifest(const std::filesystem::path& dir);
void write_sequence(const std::filesystem::path& dir, const Sequence& seq,
                    const std::optional<std::string>& ground_truth = std::nullopt);
Sequence read_sequence(const std::filesystem::path& dir);

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace reart
