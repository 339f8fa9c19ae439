#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "evgraph/cli.hpp"
#include "evgraph/error.hpp"

using namespace evg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "evgraph");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("evgraph_test_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("params prints the count table") {
  const auto r = run({"params"});
  CHECK(r.code == 0);
  CHECK(r.out.find("fully_connected,204900") != std::string::npos);
  CHECK(r.out.rfind("fully_connected,204900\n") + 23 == r.out.size());
  CHECK(r.out.find("feature_extraction,24680") != std::string::npos);
  const auto det = run({"params", "--model", "det"});
  CHECK(det.code == 0);
  CHECK(det.out.find("feature_extraction,40912") != std::string::npos);
  CHECK(run({"params", "--conv", "gat"}).code == 2);
}

TEST_CASE("synth output is deterministic") {
  const auto a = fresh_dir("synth_a"), b = fresh_dir("synth_b");
  const std::vector<std::string> common = {"synth", "--classes", "2", "--per-class", "2",
                                           "--width", "64", "--height", "48", "--seed", "3",
                                           "--out"};
  auto args_a = common, args_b = common;
  args_a.push_back(a.string());
  args_b.push_back(b.string());
  REQUIRE(run(args_a).code == 0);
  REQUIRE(run(args_b).code == 0);
  const auto ma = load_manifest(a / "manifest.json");
  const auto mb = load_manifest(b / "manifest.json");
  REQUIRE(ma.samples.size() == 4);
  CHECK(ma.samples == mb.samples);
  for (const auto& s : ma.samples) {
    CHECK(slurp(ma.resolve(s)) == slurp(mb.resolve(s)));
  }
}

TEST_CASE("graph build, profile, train, eval and bench end to end") {
  const auto dir = fresh_dir("e2e");
  const auto ds = (dir / "ds").string(), cache = (dir / "cache").string();
  REQUIRE(run({"synth", "--classes", "2", "--per-class", "3", "--width", "64", "--height", "48",
               "--out", ds})
              .code == 0);
  REQUIRE(run({"graph", "build", "--dataset", ds, "--cache", cache, "--max-events", "150"}).code ==
          0);
  int cached = 0;
  for (const auto& e : fs::directory_iterator(cache)) cached += e.path().extension() == ".evgr";
  CHECK(cached == 6);
  CHECK(fs::exists(fs::path(cache) / "index.json"));

  const auto prof = (dir / "profile.json").string();
  REQUIRE(run({"graph", "profile", "--cache", cache, "--report", prof}).code == 0);
  const auto p = read_json(prof);
  CHECK(p["graphs"] == 6);
  CHECK(p["profiles"].size() == 2);
  const double attr = p["profiles"][0]["mean_bytes"], lean = p["profiles"][1]["mean_bytes"];
  CHECK(p["ratio"].get<double>() == doctest::Approx(attr / lean));
  CHECK(p["dense_frame_mb"]["240x180x1"].get<double>() == doctest::Approx(0.0432));

  const auto ckpt = (dir / "run" / "m.ckpt").string(), hist = (dir / "h.csv").string();
  const auto rep = (dir / "train.json").string();
  const auto tr = run({"train", "cls", "--dataset", ds, "--cache", cache, "--max-events", "150",
                       "--epochs", "2", "--train-fraction", "0.5", "--checkpoint", ckpt,
                       "--history", hist, "--report", rep});
  REQUIRE(tr.code == 0);
  CHECK(fs::exists(ckpt));
  CHECK(slurp(hist).rfind("epoch,loss,metric,seconds\n", 0) == 0);
  const auto t = read_json(rep);
  CHECK(t["train_samples"] == 4);
  CHECK(t["test_samples"] == 2);

  const auto ev = (dir / "eval.json").string();
  REQUIRE(run({"eval", "--dataset", ds, "--cache", cache, "--max-events", "150", "--checkpoint",
               ckpt, "--report", ev})
              .code == 0);
  CHECK(read_json(ev)["samples"] == 2);

  const auto bj = (dir / "bench.json").string();
  REQUIRE(run({"bench", "--dataset", ds, "--cache", cache, "--max-events", "150", "--warmup", "1",
               "--limit", "3", "--report", bj})
              .code == 0);
  const auto b = read_json(bj);
  CHECK(b["samples"] == 3);
  CHECK(b["graphs_per_second"].get<double>() > 0.0);
}

TEST_CASE("exit codes") {
  CHECK(run({}).code == 2);
  CHECK(run({"bogus"}).code == 2);
  CHECK(run({"train", "cls", "--epochs", "0"}).code == 2);
  CHECK(run({"train", "cls", "--dataset", "/nonexistent/evgraph"}).code == 2);
  CHECK(run({"params", "--classes", "abc"}).code == 2);

  // A truncated sample file is a runtime failure, not a usage error.
  const auto dir = fresh_dir("corrupt");
  const auto ds = dir / "ds";
  REQUIRE(run({"synth", "--classes", "2", "--per-class", "2", "--width", "64", "--height", "48",
               "--out", ds.string()})
              .code == 0);
  const auto m = load_manifest(ds / "manifest.json");
  std::ofstream(m.resolve(m.samples[0]), std::ios::binary | std::ios::trunc) << "junk";
  const auto r = run({"graph", "build", "--dataset", ds.string(), "--max-events", "100", "--cache",
                     (dir / "cache").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("config file precedence") {
  const auto dir = fresh_dir("config");
  const auto ds = dir / "ds";
  REQUIRE(run({"synth", "--classes", "2", "--per-class", "2", "--width", "64", "--height", "48",
               "--out", ds.string()})
              .code == 0);
  const auto cfg = dir / "run.json";
  std::ofstream(cfg) << R"({"graph": {"radius": 4.0, "max_events": 120},
                          "train": {"epochs": 7}})";
  const auto rep = dir / "build.json";
  REQUIRE(run({"graph", "build", "--config", cfg.string(), "--dataset", ds.string(), "--radius",
               "3", "--cache", (dir / "cache").string(), "--report", rep.string()})
              .code == 0);
  const auto c = read_json(rep)["config"];
  CHECK(c["graph"]["radius"] == 3.0);      // flag beats file
  CHECK(c["graph"]["max_events"] == 120);  // file beats default
  CHECK(c["train"]["epochs"] == 7);
  CHECK(c["graph"]["max_neighbors"] == 32);  // default

  const auto loaded = cli::load_run_config(cfg);
  CHECK(loaded.graph.radius == 4.0);
  CHECK(loaded.train.epochs == 7);

  std::ofstream(dir / "bad.json") << R"({"graph": {"radios": 4.0}})";
  CHECK(run({"graph", "build", "--config", (dir / "bad.json").string(), "--dataset",
             ds.string(), "--cache", (dir / "cache").string()})
            .code == 2);
  std::ofstream(dir / "broken.json") << "{not json";
  CHECK(run({"graph", "build", "--config", (dir / "broken.json").string(), "--dataset",
             ds.string(), "--cache", (dir / "cache").string()})
            .code == 2);
  CHECK(run({"graph", "build", "--dataset", ds.string()}).code == 2);
  CHECK(cli::manifest_path(ds) == ds / "manifest.json");
}
