#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <thread>

#include "reart/cloud.hpp"
#include "reart/serve.hpp"
#include "reart/synth.hpp"

// after Eigen: resolv.h defines a `_res` macro
#include <httplib.h>

using namespace reart;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir;
  ServeOptions options;
  SynthResult data;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.dir = fs::temp_directory_path() / "reart_serve_test";
    fs::remove_all(x.dir);
    SynthSpec spec;
    spec.n_parts = 3;
    spec.frames = 3;
    spec.points = 300;
    spec.seed = 4;
    x.data = generate(spec);
    write_dataset(x.dir / "data", x.data);
    save_model(x.dir / "model" / "model.json", x.data.truth, "canonical.ply");
    fs::create_directories(x.dir / "static");
    std::ofstream(x.dir / "static" / "index.html") << "<html>viewer</html>\n";
    x.options.model_path = x.dir / "model" / "model.json";
    x.options.data_dir = x.dir / "data";
    x.options.static_dir = x.dir / "static";
    return x;
  }();
  return f;
}

std::vector<Vec3> points_of(const json& j) {
  std::vector<Vec3> out;
  for (const auto& p : j["posed_points"]) out.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
  return out;
}

}  // namespace

TEST(Serve, RoundsToNineSignificantDigits) {
  EXPECT_EQ(round_sig9(0.123456789123), 0.123456789);
  EXPECT_EQ(round_sig9(-1234567891.0), -1234567890.0);
  EXPECT_EQ(round_sig9(0.0), 0.0);
  EXPECT_EQ(round_sig9(round_sig9(3.14159265358979)), round_sig9(3.14159265358979));
}

TEST(Serve, ModelAndEtag) {
  const ModelService s(fixture().options);
  const Response r = s.get_model();
  EXPECT_EQ(r.status, 200);
  EXPECT_EQ(r.headers.at("ETag"), s.etag());
  EXPECT_NO_THROW(json::parse(r.body));
  const Response cached = s.get_model(s.etag());
  EXPECT_EQ(cached.status, 304);
  EXPECT_TRUE(cached.body.empty());
  EXPECT_EQ(s.get_model("\"other\"").status, 200);
}

TEST(Serve, Clouds) {
  const ModelService s(fixture().options);
  const Response canon = s.get_cloud(std::nullopt);
  EXPECT_EQ(canon.status, 200);
  EXPECT_EQ(canon.content_type, "application/octet-stream");
  EXPECT_EQ(decode_ply(canon.body).points.size(), 300u);
  const Response f2 = s.get_cloud(std::string("2"));
  ASSERT_EQ(f2.status, 200);
  EXPECT_EQ(decode_ply(f2.body).points, fixture().data.sequence.frames[2].points);
  EXPECT_EQ(s.get_cloud(std::string("3")).status, 404);
  EXPECT_EQ(s.get_cloud(std::string("-1")).status, 404);
  EXPECT_EQ(s.get_cloud(std::string("x")).status, 400);
}

TEST(Serve, FkReproducesRetarget) {
  const ModelService s(fixture().options);
  const auto& truth = fixture().data.truth;
  const auto target = pose_cloud(truth, fixture().data.novel_states);
  json req = json::array();
  for (int k : {0, 100, 200, 299}) {
    req.push_back({{"point_index", k}, {"target", {target[static_cast<std::size_t>(k)].x(), target[static_cast<std::size_t>(k)].y(), target[static_cast<std::size_t>(k)].z()}}});
  }
  const Response rt = s.post_retarget(req.dump());
  ASSERT_EQ(rt.status, 200) << rt.body;
  const json out = json::parse(rt.body);
  ASSERT_EQ(out["states"].size(), 3u);
  const Response fk = s.post_fk(json{{"states", out["states"]}}.dump());
  ASSERT_EQ(fk.status, 200);
  EXPECT_EQ(points_of(json::parse(fk.body)), points_of(out));
  // bare list form
  EXPECT_EQ(s.post_fk(out["states"].dump()).body, fk.body);
}

TEST(Serve, BadRequests) {
  const ModelService s(fixture().options);
  EXPECT_EQ(s.post_retarget("not json").status, 400);
  EXPECT_EQ(s.post_retarget("[]").status, 400);
  EXPECT_EQ(s.post_retarget(R"([{"point_index": 5000, "target": [0,0,0]}])").status, 400);
  EXPECT_EQ(s.post_retarget(R"([{"point_index": 1}])").status, 400);
  EXPECT_EQ(s.post_fk(R"([{"tau": 0}])").status, 400);
  EXPECT_EQ(s.post_fk("{").status, 400);
  const Response e = s.post_fk(R"({"states": 3})");
  EXPECT_EQ(e.status, 400);
  EXPECT_TRUE(json::parse(e.body).contains("error"));
}

TEST(Serve, ConcurrentRequestsAgree) {
  const ModelService s(fixture().options);
  const std::string body = R"([{"tau": 0.1}, {"tau": 0.2, "d": 0.05}, {"d": 0.03}])";
  const std::string expected = s.post_fk(body).body;
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      for (int k = 0; k < 20; ++k) {
        if (s.post_fk(body).body != expected) ++mismatches;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(mismatches.load(), 0);
}

TEST(Serve, HttpEndToEnd) {
  ServeOptions opt = fixture().options;
  opt.port = 17791;
  std::thread([opt] { run_server(opt); }).detach();
  httplib::Client cli("127.0.0.1", opt.port);
  httplib::Result res;
  for (int i = 0; i < 100 && !res; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    res = cli.Get("/model");
  }
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  const std::string etag = res->get_header_value("ETag");
  auto cached = cli.Get("/model", {{"If-None-Match", etag}});
  ASSERT_TRUE(cached);
  EXPECT_EQ(cached->status, 304);
  auto frame = cli.Get("/cloud?frame=9");
  ASSERT_TRUE(frame);
  EXPECT_EQ(frame->status, 404);
  auto index = cli.Get("/");
  ASSERT_TRUE(index);
  EXPECT_EQ(index->status, 200);
  EXPECT_NE(index->body.find("viewer"), std::string::npos);
  auto fk = cli.Post("/fk", R"([{}, {}, {}])", "application/json");
  ASSERT_TRUE(fk);
  EXPECT_EQ(fk->status, 200);
  auto pre = cli.Options("/fk");
  ASSERT_TRUE(pre);
  EXPECT_EQ(pre->status, 204);
}
