#include <doctest.h>

#include <sstream>

#include "certiguard/runtime.hpp"

using namespace certiguard;
using namespace certiguard::runtime;

namespace {

struct Fixture {
  world::Environment env = world::Environment::hallway_corner();
  perception::ScanMatcher matcher{env, perception::default_clamp_box(env)};

  RolloutContext context(double lambda = 1e12) const {
    RolloutContext ctx;
    ctx.env = &env;
    ctx.noise = world::NoiseModel(lambda);
    ctx.perception = &matcher;
    return ctx;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

}  // namespace

TEST_SUITE("runtime") {

TEST_CASE("trigger schedule examples") {
  CHECK(TriggerSchedule::make(0.35, 0.34, std::sqrt(2.0)).interval ==
        doctest::Approx(0.007071).epsilon(1e-4));
  CHECK(TriggerSchedule::make(0.35, 0.34, 1.0).interval == doctest::Approx(0.01));
  CHECK_THROWS_AS(TriggerSchedule::make(0.3, 0.34, 1.0), InvalidSchedule);
  CHECK_THROWS_AS(TriggerSchedule::make(0.34, 0.34, 1.0), InvalidSchedule);
  CHECK_THROWS_AS(TriggerSchedule::make(0.35, 0.1, 0.0), InvalidSchedule);
  const auto s = TriggerSchedule::make(0.35, 0.15, 1.0);
  CHECK(next_trigger(1.0, s) == doctest::Approx(1.2));
}

TEST_CASE("risk budget per interval") {
  CHECK(alpha_for_horizon(0.75, 1) == doctest::Approx(0.25));
  CHECK(alpha_for_horizon(0.9, 10) == doctest::Approx(0.0104807).epsilon(1e-6));
  CHECK(std::pow(1.0 - alpha_for_horizon(0.8, 20), 20) == doctest::Approx(0.8));
  CHECK_THROWS_AS(alpha_for_horizon(0.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(alpha_for_horizon(1.5, 10), std::invalid_argument);
  CHECK_THROWS_AS(alpha_for_horizon(0.5, 0), std::invalid_argument);
}

TEST_CASE("nominal controller") {
  NominalController ctl;
  ctl.waypoints = {{0.75, 1.0}, {0.75, 4.0}};
  std::size_t idx = 0;
  const auto u = nominal_control({0.75, 1.0}, ctl, idx);
  CHECK(idx == 1);
  CHECK(u.ux == doctest::Approx(0.0));
  CHECK(u.uy == doctest::Approx(1.0));
  std::size_t last = 1;
  const auto z = nominal_control({0.75, 4.0}, ctl, last);
  CHECK(z.ux == doctest::Approx(0.0));
  CHECK(z.uy == doctest::Approx(0.0));
  std::size_t far = 0;
  const auto sat = nominal_control({-5.0, -5.0}, ctl, far);
  CHECK(std::abs(sat.ux) <= ctl.u_max);
  CHECK(std::abs(sat.uy) <= ctl.u_max);
}

TEST_CASE("mode names") {
  for (auto m : {Mode::Robust, Mode::Vanilla, Mode::Discrete}) {
    CHECK(mode_from_string(to_string(m)) == m);
  }
  CHECK_THROWS(mode_from_string("bogus"));
}

TEST_CASE("margins by mode") {
  RolloutConfig cfg;
  const auto set = barrier::BarrierSet::hallway();
  cfg.mode = Mode::Robust;
  CHECK(margins_for(cfg, set).a == doctest::Approx(0.35));
  cfg.mode = Mode::Vanilla;
  CHECK(margins_for(cfg, set).a == 0.0);
  cfg.mode = Mode::Discrete;
  cfg.eps_prime = 0.34;
  cfg.eta = 0.5;
  CHECK(margins_for(cfg, set).a == doctest::Approx(0.51));
  cfg.margins_override = barrier::Margins{0.1, 0.2};
  CHECK(margins_for(cfg, set).b == 0.2);
}

TEST_CASE("unbinding filter follows the nominal law") {
  const auto& f = fixture();
  RolloutConfig cfg;
  cfg.mode = Mode::Vanilla;
  cfg.duration = 1.5;
  cfg.eps_prime = 0.0;
  cfg.initial_state = world::VehicleState{0.75, 0.5, M_PI / 2};
  cfg.nominal.waypoints = {{0.75, 3.0}};
  const auto rec = run_continuous(f.context(), cfg, 1);
  REQUIRE_FALSE(rec.failed);
  CHECK(rec.num_infeasible == 0);
  CHECK(rec.interval == doctest::Approx(0.35 / std::sqrt(2.0)));
  for (const auto& r : rec.rows) {
    if (!r.triggered) continue;
    std::size_t idx = 0;
    const auto u = nominal_control(r.xhat, cfg.nominal, idx);
    CHECK(r.u.ux == doctest::Approx(u.ux));
    CHECK(r.u.uy == doctest::Approx(u.uy));
  }
  CHECK(rec.safe);
}

TEST_CASE("drift within a window respects the speed bound") {
  const auto& f = fixture();
  RolloutConfig cfg;
  cfg.mode = Mode::Robust;
  cfg.duration = 3.0;
  cfg.eps_prime = 0.2;
  cfg.nominal.waypoints = f.env.waypoints;
  const auto rec = run_continuous(f.context(2.0 / 3.0), cfg, 4);
  REQUIRE(!rec.windows.empty());
  CHECK(rec.num_triggers == rec.windows.size());
  for (const auto& w : rec.windows) CHECK(w.max_displacement_excess <= 1e-9);
  CHECK_THROWS_AS(
      [&] {
        auto bad = cfg;
        bad.eps_prime = 0.4;
        run_continuous(f.context(), bad, 1);
      }(),
      InvalidSchedule);
}

TEST_CASE("rollouts are reproducible from the seed") {
  const auto& f = fixture();
  RolloutConfig cfg;
  cfg.duration = 2.0;
  cfg.eps_prime = 0.2;
  cfg.nominal.waypoints = f.env.waypoints;
  const auto a = run_rollout(f.context(2.0 / 3.0), cfg, 9);
  const auto b = run_rollout(f.context(2.0 / 3.0), cfg, 9);
  std::ostringstream sa, sb;
  write_trajectory_csv(sa, a);
  write_trajectory_csv(sb, b);
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().rfind("t,x,y,heading,xhat_x,xhat_y,u_x,u_y,h,triggered,infeasible_flag\n", 0) ==
        0);
  // The start state is drawn on the start line.
  CHECK(a.rows.front().x.py == doctest::Approx(f.env.start_line.a.y()));
  const auto c = run_rollout(f.context(2.0 / 3.0), cfg, 10);
  CHECK(c.rows.front().x.px != a.rows.front().x.px);
  const auto j = summary_json(a);
  CHECK(j.at("safe").get<bool>() == a.safe);
}

TEST_CASE("discrete rollout with zero margins keeps the estimate's successor safe") {
  const auto& f = fixture();
  RolloutConfig cfg;
  cfg.mode = Mode::Discrete;
  cfg.steps = 40;
  cfg.dt = 0.25;
  cfg.eta = 1.0;
  cfg.eps_prime = 0.0;
  cfg.initial_state = world::VehicleState{0.75, 0.5, M_PI / 2};
  cfg.nominal.waypoints = {{3.0, 0.5}};
  const auto rec = run_discrete(f.context(), cfg, 1);
  REQUIRE_FALSE(rec.failed);
  CHECK(rec.margins.a == 0.0);
  const auto set = barrier::BarrierSet::hallway();
  for (const auto& r : rec.rows) {
    if (!r.triggered || r.infeasible) continue;
    const Eigen::Vector2d next = r.xhat + cfg.dt * r.u.vec();
    CHECK(set.eval(next) >= -1e-6);
  }
}

}
