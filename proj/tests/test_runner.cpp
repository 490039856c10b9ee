#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "isdsm/experiments.hpp"

using namespace isdsm;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / "isdsm_runner" / name;
  fs::remove_all(p);
  return p;
}

RunRequest request(const std::string& experiment, const nlohmann::json& cfg, const fs::path& out, unsigned threads) {
  RunRequest r;
  r.experiment = experiment;
  r.config = parse_config(cfg);
  r.seed = 17;
  r.replicates = 12;
  r.out = out;
  r.threads = threads;
  return r;
}

void expect_same_outputs(const fs::path& a, const fs::path& b) {
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto name = e.path().filename();
    if (name == "manifest.json") continue;
    ASSERT_TRUE(fs::exists(b / name)) << name;
    EXPECT_EQ(slurp(e.path()), slurp(b / name)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 2u);
  auto ma = nlohmann::json::parse(slurp(a / "manifest.json"));
  auto mb = nlohmann::json::parse(slurp(b / "manifest.json"));
  ma.erase("wall_time_seconds");
  mb.erase("wall_time_seconds");
  EXPECT_EQ(ma, mb);
}

const nlohmann::json kInteractive = {
    {"horizon", 0.5},
    {"dt", 0.01},
    {"mu", {{0.0, 1.0}}},
    {"m", {{"type", "atoms"}, {"atoms", {{-0.5, 1.0}, {0.5, 1.0}}}}},
    {"q", {{"type", "mass_sigmoid"}, {"low", 0.5}, {"high", 1.5}, {"center", 1.0}, {"scale", 1.0}}},
    {"verify", {{"times", {0.25, 0.5}}}}};

}  // namespace

TEST(Runner, RerunIsByteIdentical) {
  const auto a = scratch("rerun_a"), b = scratch("rerun_b");
  run(request("verify", kInteractive, a, 1));
  run(request("verify", kInteractive, b, 1));
  expect_same_outputs(a, b);
}

TEST(Runner, ThreadCountDoesNotChangeOutputs) {
  const auto a = scratch("threads_1"), b = scratch("threads_4");
  run(request("simulate", kInteractive, a, 1));
  run(request("simulate", kInteractive, b, 4));
  expect_same_outputs(a, b);
}

TEST(Runner, ManifestRecordsRun) {
  const auto a = scratch("manifest");
  const auto outcome = run(request("simulate", kInteractive, a, 2));
  const auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
  EXPECT_EQ(m.at("experiment"), "simulate");
  EXPECT_EQ(m.at("seed"), 17);
  EXPECT_EQ(m.at("replicates"), 12);
  EXPECT_TRUE(m.contains("config_hash"));
  EXPECT_TRUE(m.contains("stream_rule"));
  for (const auto& f : m.at("files")) EXPECT_TRUE(fs::exists(a / f.get<std::string>())) << f;
  EXPECT_FALSE(outcome.reports.empty());
}

TEST(Runner, DifferentSeedsDiffer) {
  const auto a = scratch("seed_a"), b = scratch("seed_b");
  auto ra = request("simulate", kInteractive, a, 1);
  auto rb = request("simulate", kInteractive, b, 1);
  rb.seed = 18;
  run(ra);
  run(rb);
  EXPECT_NE(slurp(a / "mass.csv"), slurp(b / "mass.csv"));
}

TEST(Runner, UnknownExperiment) {
  EXPECT_THROW(run(request("nonsense", kInteractive, scratch("bad"), 1)), ConfigError);
}
