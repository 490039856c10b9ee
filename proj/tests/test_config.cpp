#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "isdsm/config.hpp"

using namespace isdsm;
using nlohmann::json;

namespace {

std::string error_of(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(Config, DefaultsParse) {
  const RunConfig c = parse_config(json::object());
  EXPECT_EQ(c.sigma, 1.0);
  EXPECT_EQ(c.flow_backend, "auto");
  EXPECT_EQ(c.backend(), FlowBackend::kGram);
  const RunConfig i = parse_config({{"q", {{"type", "mass_sigmoid"}, {"low", 0.5}, {"high", 1.5}}}});
  EXPECT_EQ(i.backend(), FlowBackend::kLattice);
}

TEST(Config, UnknownKeysAreNamed) {
  EXPECT_NE(error_of({{"sigmaa", 2.0}}).find("sigmaa"), std::string::npos);
  EXPECT_NE(error_of({{"kernel", {{"type", "gaussian"}, {"widht", 1.0}}}}).find("kernel.widht"), std::string::npos);
  EXPECT_NE(error_of({{"localtime", {{"bogus", 1}}}}).find("localtime.bogus"), std::string::npos);
}

TEST(Config, BadValues) {
  EXPECT_NE(error_of({{"sigma", -1.0}}).find("sigma"), std::string::npos);
  EXPECT_NE(error_of({{"dt", "x"}}).find("dt"), std::string::npos);
  EXPECT_NE(error_of({{"dt", 0.01}, {"grid_dt", 0.015}}).find("grid_dt"), std::string::npos);
  EXPECT_NE(error_of({{"flow_backend", "magic"}}).find("flow_backend"), std::string::npos);
  EXPECT_NE(error_of({{"kernel", {{"type", "table"}}}}).find("kernel.file"), std::string::npos);
  EXPECT_NE(error_of({{"q", {{"type", "constant"}, {"value", 3.0}}}, {"q_max", 1.0}}).find("q_max"), std::string::npos);
  EXPECT_NE(error_of({{"scaling", {{"k", {0.5}}}}}).find("scaling.k"), std::string::npos);
  EXPECT_NE(error_of({{"write_paths", 1}}).find("write_paths"), std::string::npos);
}

TEST(Config, TableKernelUsesFileKey) {
  const auto path = std::filesystem::temp_directory_path() / "isdsm_config_kernel.csv";
  {
    std::ofstream out(path);
    out << "-1,0\n0,1\n1,0\n";
  }
  const RunConfig c = parse_config({{"kernel", {{"type", "table"}, {"file", path.string()}}}});
  EXPECT_EQ(c.kernel.path, path.string());
  EXPECT_EQ(c.to_json().at("kernel").at("file"), path.string());
  std::filesystem::remove(path);
}

TEST(Config, RoundTrip) {
  const json j = {{"sigma", 2.0},
                  {"horizon", 1.5},
                  {"dt", 0.005},
                  {"grid_dt", 0.05},
                  {"mu", {{0.0, 1.0}, {1.0, 0.5}}},
                  {"m", {{"type", "gaussian"}, {"mass", 2.0}, {"sd", 0.5}}},
                  {"q", {{"type", "mass_sigmoid"}, {"low", 0.5}, {"high", 1.5}, {"center", 1.0}, {"scale", 1.0}}}};
  const RunConfig a = parse_config(j);
  const RunConfig b = parse_config(a.to_json());
  EXPECT_EQ(a.to_json(), b.to_json());
  EXPECT_EQ(b.sigma, 2.0);
  EXPECT_EQ(b.mu.size(), 2u);
}

TEST(Config, LoadErrors) {
  EXPECT_THROW(load_config("/nonexistent/isdsm.json"), ConfigError);
  const auto path = std::filesystem::temp_directory_path() / "isdsm_bad.json";
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  EXPECT_THROW(load_config(path.string()), ConfigError);
  std::filesystem::remove(path);
}
