#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "reart/cloud.hpp"
#include "reart/error.hpp"

using namespace reart;
namespace fs = std::filesystem;

namespace {

std::vector<Vec3> random_points(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> p(static_cast<std::size_t>(n));
  for (auto& x : p) x = Vec3(u(rng), u(rng), u(rng));
  return p;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("reart_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(KdTree, MatchesLinearScan) {
  const auto pts = random_points(500, 1);
  const KdTree tree(pts);
  const auto queries = random_points(200, 2);
  for (const Vec3& q : queries) {
    std::vector<std::pair<double, int>> brute;
    for (int i = 0; i < 500; ++i) brute.push_back({(pts[static_cast<std::size_t>(i)] - q).norm(), i});
    std::sort(brute.begin(), brute.end());
    const auto nn = tree.knn(q, 7);
    ASSERT_EQ(nn.size(), 7u);
    for (int k = 0; k < 7; ++k) {
      EXPECT_EQ(nn[static_cast<std::size_t>(k)].index, brute[static_cast<std::size_t>(k)].second);
      EXPECT_NEAR(nn[static_cast<std::size_t>(k)].distance, brute[static_cast<std::size_t>(k)].first, 1e-12);
    }
    double d2 = 0.0;
    EXPECT_EQ(tree.nearest(q, &d2), brute[0].second);
    EXPECT_NEAR(d2, brute[0].first * brute[0].first, 1e-12);
  }
}

TEST(KdTree, TiesGoToLowerIndex) {
  std::vector<Vec3> pts(20, Vec3(1, 1, 1));
  const KdTree tree(pts);
  const auto nn = tree.knn(Vec3::Zero(), 3);
  EXPECT_EQ(nn[0].index, 0);
  EXPECT_EQ(nn[1].index, 1);
  EXPECT_EQ(nn[2].index, 2);
}

TEST(KdTree, KTooLarge) {
  const auto pts = random_points(5, 3);
  PointCloud c;
  c.points = pts;
  try {
    knn_query(c, Vec3::Zero(), 6);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::KTooLarge);
  }
}

TEST(Fps, SpreadsOutAndIsDeterministic) {
  const auto pts = random_points(400, 4);
  const auto a = farthest_point_sample(pts, 30, 0);
  const auto b = farthest_point_sample(pts, 30, 0);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a[0], 0);
  std::set<int> unique(a.begin(), a.end());
  EXPECT_EQ(unique.size(), 30u);
  // each pick is the farthest point from those already chosen
  for (std::size_t k = 1; k < a.size(); ++k) {
    auto dist = [&](int i) {
      double m = 1e300;
      for (std::size_t j = 0; j < k; ++j) {
        m = std::min(m, (pts[static_cast<std::size_t>(i)] - pts[static_cast<std::size_t>(a[j])]).squaredNorm());
      }
      return m;
    };
    const double chosen = dist(a[k]);
    for (int i = 0; i < 400; ++i) EXPECT_LE(dist(i), chosen);
  }
  EXPECT_EQ(farthest_point_sample_seeded(pts, 10, 9), farthest_point_sample_seeded(pts, 10, 9));
}

TEST(Fps, DownsampleSize) {
  PointCloud c;
  c.points = random_points(101, 5);
  const Downsampled d = downsample(c, 4, 0);
  EXPECT_EQ(d.cloud.size(), 26u);
  EXPECT_EQ(d.source_indices.size(), 26u);
  for (std::size_t i = 0; i < d.cloud.size(); ++i) {
    EXPECT_EQ(d.cloud.points[i], c.points[static_cast<std::size_t>(d.source_indices[i])]);
  }
}

TEST(Ply, RoundTripIsFloatExact) {
  PointCloud c;
  c.points = random_points(50, 6);
  c.labels = std::vector<int>(50);
  c.flow = random_points(50, 7);
  for (int i = 0; i < 50; ++i) (*c.labels)[static_cast<std::size_t>(i)] = i % 4;
  const PointCloud back = decode_ply(encode_ply(c));
  ASSERT_EQ(back.size(), 50u);
  for (std::size_t i = 0; i < 50; ++i) {
    EXPECT_EQ(back.points[i].x(), static_cast<double>(static_cast<float>(c.points[i].x())));
    EXPECT_EQ((*back.flow)[i].z(), static_cast<double>(static_cast<float>((*c.flow)[i].z())));
  }
  EXPECT_EQ(*back.labels, *c.labels);
  // a second round trip is bit-identical
  EXPECT_EQ(encode_ply(back), encode_ply(c));
}

TEST(Ply, RejectsGarbage) {
  EXPECT_THROW(decode_ply("hello"), Error);
  PointCloud c;
  c.points = random_points(3, 8);
  std::string bytes = encode_ply(c);
  bytes.resize(bytes.size() - 4);
  try {
    decode_ply(bytes);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Format);
  }
}

TEST(Sequence, WriteReadRoundTrip) {
  Sequence seq;
  for (int t = 0; t < 3; ++t) {
    PointCloud c;
    c.points = random_points(10, 10 + t);
    c.frame_index = t;
    seq.frames.push_back(c);
  }
  const fs::path dir = temp_dir("seq");
  write_sequence(dir, seq);
  const Manifest m = read_manifest(dir);
  EXPECT_EQ(m.num_frames, 3);
  EXPECT_EQ(m.frame_files[1], "frame_001.ply");
  const Sequence back = read_sequence(dir);
  ASSERT_EQ(back.num_frames(), 3);
  EXPECT_EQ(back.frames[2].frame_index, 2);
  EXPECT_NEAR(back.frames[1].points[4].y(), seq.frames[1].points[4].y(), 1e-7);
}

TEST(Sequence, ValidateRejectsDegenerate) {
  Sequence seq;
  PointCloud c;
  c.points = random_points(4, 1);
  seq.frames.push_back(c);
  EXPECT_THROW(seq.validate(), Error);
  c.frame_index = 0;
  seq.frames.push_back(c);
  try {
    seq.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
  }
}

TEST(Files, MissingFileIsIo) {
  try {
    read_file_bytes("/nonexistent/reart/file");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Io);
  }
}
