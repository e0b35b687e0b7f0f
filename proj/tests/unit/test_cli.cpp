#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "certiguard/cli.hpp"

namespace fs = std::filesystem;
using certiguard::cli::run;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("certiguard_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int call(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  std::ostringstream o, e;
  const int rc = run(args, o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("unknown flag exits nonzero with usage") {
  std::string out, err;
  CHECK(call({"--definitely-not-a-flag", "gen-data"}, &out, &err) != 0);
  CHECK(err.find("Usage") != std::string::npos);
  CHECK(call({}, &out, &err) != 0);
}

TEST_CASE("help succeeds") {
  std::string out;
  CHECK(call({"--help"}, &out) == 0);
  CHECK(out.find("montecarlo") != std::string::npos);
}

TEST_CASE("config errors are one json line") {
  TempDir dir("config");
  std::string err;
  CHECK(call({"--out", dir.path.string(), "--set", "conformal.alpha=2", "gen-data"}, nullptr,
             &err) != 0);
  const auto j = nlohmann::json::parse(err.substr(0, err.find('\n')));
  CHECK(j.at("error") == "config");
  CHECK(j.at("violations").size() >= 1);
}

TEST_CASE("missing prerequisites are reported") {
  TempDir dir("missing");
  std::string err;
  CHECK(call({"--out", dir.path.string(), "fit"}, nullptr, &err) != 0);
  CHECK(nlohmann::json::parse(err).at("error") == "missing-artifact");
}

TEST_CASE("noise-free identity-quality calibration reports the covering term") {
  TempDir dir("noisefree");
  const std::vector<std::string> common = {
      "--out", dir.path.string(), "--set", "noise.lambda=1e12",
      "--set", "data.count=50", "--set", "perception.matcher.training_subset=20",
      "--set", "lipschitz.num_pairs=50", "--set", "conformal.epsilon=0.3",
      "--set", "conformal.samples_per_point=4", "--set", "conformal.validation_samples=0",
      "--set", "conformal.region=[0.4, 1.1, 0.8, 2.0]", "--set", "conformal.heading=1.5707963267948966"};
  for (const char* cmd : {"gen-data", "fit", "lipschitz", "calibrate"}) {
    auto args = common;
    args.push_back(cmd);
    std::string err;
    REQUIRE_MESSAGE(call(args, nullptr, &err) == 0, err);
  }
  std::ifstream is(dir.path / "calibration.json");
  const auto cal = nlohmann::json::parse(is);
  const double eps = cal.at("epsilon").get<double>();
  const double lp = cal.at("lipschitz_product").get<double>();
  const double sup = cal.at("sup_bound").get<double>();
  CHECK(sup < 0.15);
  CHECK(cal.at("combined_bound").get<double>() == doctest::Approx(sup + (lp + 1) * eps));
}

}
