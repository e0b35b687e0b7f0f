#include <doctest.h>

#include "certiguard/config.hpp"

using namespace certiguard;
using namespace certiguard::config;

TEST_SUITE("config") {

TEST_CASE("defaults parse") {
  const auto cfg = parse(default_config());
  CHECK(cfg.alpha == 0.25);
  CHECK(cfg.rollout.delta == 0.35);
  CHECK(cfg.noise.mean() == doctest::Approx(1.5));
  CHECK(cfg.model == "matcher");
  CHECK(cfg.lipschitz_source == pipeline::LipschitzSource::Quantile);
}

TEST_CASE("overrides are typed") {
  auto doc = default_config();
  apply_override(doc, "conformal.alpha=0.1");
  apply_override(doc, "experiment.mode=vanilla");
  apply_override(doc, "control.linearize_socp=true");
  const auto cfg = parse(doc);
  CHECK(cfg.alpha == 0.1);
  CHECK(cfg.rollout.mode == runtime::Mode::Vanilla);
  CHECK(cfg.rollout.linearize_socp);
}

TEST_CASE("unknown keys and malformed assignments") {
  auto doc = default_config();
  CHECK_THROWS_AS(apply_override(doc, "conformal.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(doc, "no_equals_sign"), ConfigError);
}

TEST_CASE("every violation is reported") {
  auto doc = default_config();
  apply_override(doc, "conformal.alpha=1.5");
  apply_override(doc, "control.delta=-1");
  apply_override(doc, "experiment.mode=sideways");
  try {
    parse(doc);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.violations().size() >= 3);
  }
}

TEST_CASE("missing referenced files are violations") {
  auto doc = default_config();
  apply_override(doc, "artifacts.model=\"/nonexistent/model.json\"");
  CHECK_THROWS_AS(parse(doc), ConfigError);
}

TEST_CASE("delta must exceed the calibrated bound") {
  const auto cfg = parse(default_config());
  CHECK_NOTHROW(check_against_calibration(cfg, 0.3));
  CHECK_THROWS_AS(check_against_calibration(cfg, 0.35), ConfigError);
}

TEST_CASE("explicit regions") {
  auto doc = default_config();
  apply_override(doc, "conformal.region=[0, 1.5, 0, 0.6]");
  apply_override(doc, "conformal.heading=1.0");
  const auto cfg = parse(doc);
  const auto box = cfg.region_box(cfg.calibration_region, cfg.environment());
  CHECK(box.hi[1] == doctest::Approx(0.6));
  CHECK(*cfg.calibration_region.heading == doctest::Approx(1.0));
}

}
