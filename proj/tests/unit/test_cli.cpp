#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "caad/cli.hpp"

#include "../support/tiny.hpp"

using nlohmann::json;

namespace {

const std::vector<std::string> kTiny{
    "--set", "data.size=16",         "--set", "data.train=8",
    "--set", "data.val=4",           "--set", "data.test=6",
    "--set", "train.epochs=1",       "--set", "train.batch_size=4",
    "--set", "train.critic.base_channels=2",    "--set", "train.critic.max_channels=4",
    "--set", "train.critic.embedding_dim=8",    "--set", "train.generator.base_channels=2",
    "--set", "train.generator.max_channels=4",  "--set", "inference.mc_samples=3"};

struct Result {
  int code;
  std::string out, err;
};

Result caad_run(const std::filesystem::path& dir, std::vector<std::string> verb, bool tiny_settings = true) {
  std::vector<std::string> args{"--run-dir", dir.string(), "--seed", "5", "--deterministic"};
  if (tiny_settings) args.insert(args.end(), kTiny.begin(), kTiny.end());
  args.insert(args.end(), verb.begin(), verb.end());
  std::ostringstream out, err;
  const int code = caad::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void pipeline(const std::filesystem::path& dir) {
  for (auto verb : std::vector<std::vector<std::string>>{{"data", "synth"}, {"train"}, {"calibrate"}, {"infer"}, {"eval"}}) {
    const auto r = caad_run(dir, verb);
    INFO(verb[0] << ": " << r.err);
    REQUIRE(r.code == 0);
  }
}

}  // namespace

TEST_CASE("cli pipeline writes a metrics report and manifests") {
  const auto dir = tiny::temp_dir("cli");
  pipeline(dir);
  const auto metrics = json::parse(slurp(dir / "metrics.json"));
  CHECK(metrics.at("ablation") == "full");
  CHECK(metrics.at("metrics").contains("weighted_f1"));
  for (const char* m : {"manifest-data.json", "manifest-train.json", "manifest-calibrate.json", "manifest-infer.json",
                        "manifest-eval.json"}) {
    const auto j = json::parse(slurp(dir / m));
    CHECK(j.at("seed") == 5);
    CHECK(j.at("config").at("train").at("epochs") == 1);
    CHECK(!j.at("artifacts").empty());
  }

  SUBCASE("feedback, retrain, eval gives a before/after report") {
    REQUIRE(caad_run(dir, {"feedback", "--oracle", "--h", "30"}).code == 0);
    REQUIRE(caad_run(dir, {"retrain", "--epochs", "1"}).code == 0);
    const auto r = caad_run(dir, {"eval"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("CAAD-EF") != std::string::npos);
    const auto report = json::parse(slurp(dir / "report.json"));
    CHECK(report.at("before").at("checkpoint") != report.at("after").at("checkpoint"));
    CHECK(report.at("hil_ids").size() == 3);
  }
  SUBCASE("ablate labels the report") {
    REQUIRE(caad_run(dir, {"ablate", "--no-cl"}).code == 0);
    REQUIRE(caad_run(dir, {"calibrate"}).code == 0);
    REQUIRE(caad_run(dir, {"infer"}).code == 0);
    REQUIRE(caad_run(dir, {"eval"}).code == 0);
    CHECK(json::parse(slurp(dir / "metrics.json")).at("ablation") == "no_cl");
  }
  SUBCASE("stale calibration is refused") {
    REQUIRE(caad_run(dir, {"train"}).code == 0);
    CHECK(caad_run(dir, {"infer"}).code == 1);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("identical argv and seed give identical artifacts") {
  const auto a = tiny::temp_dir("cli-a"), b = tiny::temp_dir("cli-b");
  pipeline(a);
  pipeline(b);
  CHECK(slurp(a / "metrics.json") == slurp(b / "metrics.json"));
  CHECK(slurp(a / "records.jsonl") == slurp(b / "records.jsonl"));
  const auto ma = json::parse(slurp(a / "manifest-train.json")), mb = json::parse(slurp(b / "manifest-train.json"));
  CHECK(ma.at("artifacts") == mb.at("artifacts"));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("cli errors") {
  const auto dir = tiny::temp_dir("cli-err");
  CHECK(caad_run(dir, {"frobnicate"}).code == 2);
  CHECK(caad_run(dir, {}).code == 2);
  CHECK(caad_run(dir, {"--set", "train.lr=0", "train"}).code == 2);
  CHECK(caad_run(dir, {"--set", "train.nope=1", "train"}).code == 2);
  const auto bad = caad_run(dir, {"--set", "train.loss.tau=cold", "train"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("loss.tau") != std::string::npos);
  CHECK(caad_run(dir, {"--set", "noequals", "train"}).code == 2);
  CHECK(caad_run(dir, {"--config", (dir / "missing.json").string(), "train"}).code == 2);
  const auto missing = caad_run(dir, {"train"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("data synth") != std::string::npos);
  CHECK(caad_run(dir, {"--help"}).code == 0);
  std::filesystem::remove_all(dir);
}
