#include "certiguard/runtime.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "certiguard/rng.hpp"

namespace certiguard::runtime {

TriggerSchedule TriggerSchedule::make(double delta, double error_bound, double f_bar) {
  if (!(f_bar > 0.0)) throw InvalidSchedule("trigger schedule: f_bar must be > 0");
  if (!(delta > error_bound)) {
    throw InvalidSchedule("trigger schedule: delta (" + std::to_string(delta) +
                          ") must exceed the error bound (" + std::to_string(error_bound) + ")");
  }
  return {delta, error_bound, f_bar, (delta - error_bound) / f_bar};
}

double next_trigger(double t_i, const TriggerSchedule& schedule) {
  if (!(schedule.interval > 0.0)) throw InvalidSchedule("trigger schedule: interval must be > 0");
  return t_i + schedule.interval;
}

double alpha_for_horizon(double target_prob, std::size_t m) {
  if (!(target_prob > 0.0 && target_prob < 1.0)) {
    throw std::invalid_argument("alpha_for_horizon: target probability must lie in (0, 1)");
  }
  if (m == 0) throw std::invalid_argument("alpha_for_horizon: horizon must be >= 1");
  return -std::expm1(std::log(target_prob) / static_cast<double>(m));
}

world::ControlInput nominal_control(const Eigen::Vector2d& estimate, const NominalController& ctl,
                                    std::size_t& index) {
  if (ctl.waypoints.empty()) throw std::invalid_argument("nominal_control: empty waypoint path");
  index = std::min(index, ctl.waypoints.size() - 1);
  while (index + 1 < ctl.waypoints.size() &&
         (ctl.waypoints[index] - estimate).norm() <= ctl.capture_radius) {
    ++index;
  }
  Eigen::Vector2d u = ctl.gain * (ctl.waypoints[index] - estimate);
  u = u.cwiseMax(-ctl.u_max).cwiseMin(ctl.u_max);
  return world::ControlInput::from(u);
}

Mode mode_from_string(const std::string& s) {
  if (s == "robust") return Mode::Robust;
  if (s == "vanilla") return Mode::Vanilla;
  if (s == "discrete") return Mode::Discrete;
  throw std::invalid_argument("unknown mode '" + s + "' (expected robust, vanilla or discrete)");
}

std::string to_string(Mode m) {
  switch (m) {
    case Mode::Robust: return "robust";
    case Mode::Vanilla: return "vanilla";
    case Mode::Discrete: return "discrete";
  }
  return "unknown";
}

barrier::Margins margins_for(const RolloutConfig& cfg, const barrier::BarrierSet& set) {
  if (cfg.margins_override) return *cfg.margins_override;
  switch (cfg.mode) {
    case Mode::Robust:
      return barrier::continuous_margins(cfg.delta,
                                         barrier::vehicle_continuous_lipschitz(set, cfg.gamma));
    case Mode::Vanilla:
      return {0.0, 0.0};
    case Mode::Discrete:
      return barrier::discrete_margins(cfg.eps_prime, cfg.eta,
                                       barrier::vehicle_discrete_lipschitz(set));
  }
  return {};
}

namespace {

void check_context(const RolloutContext& ctx) {
  if (ctx.env == nullptr) throw std::invalid_argument("rollout: missing environment");
  if (ctx.perception == nullptr) throw std::invalid_argument("rollout: missing perception map");
}

world::VehicleState initial_state(const RolloutContext& ctx, const RolloutConfig& cfg, Rng& rng) {
  if (cfg.initial_state) return *cfg.initial_state;
  const auto& line = ctx.env->start_line;
  const double s = rng.uniform();
  return world::VehicleState::at(line.a + s * (line.b - line.a), M_PI / 2.0);
}

NominalController controller_for(const RolloutContext& ctx, const RolloutConfig& cfg) {
  NominalController ctl = cfg.nominal;
  if (ctl.waypoints.empty()) ctl.waypoints = ctx.env->waypoints;
  ctl.u_max = cfg.u_max;
  return ctl;
}

struct FilterOutcome {
  world::ControlInput u;
  double slack = 0.0;
  bool infeasible = false;
};

FilterOutcome apply_filter(const world::ControlInput& u_nom,
                           std::vector<barrier::SocConstraint> constraints,
                           const RolloutConfig& cfg) {
  barrier::FilterProblem problem;
  problem.u_nom = u_nom.vec();
  problem.constraints = std::move(constraints);
  problem.u_max = cfg.u_max;
  problem.beta_offset = cfg.beta_offset;
  problem.linearize_socp = cfg.linearize_socp;
  FilterOutcome out;
  try {
    const auto sol = barrier::safety_filter(problem);
    out.u = world::ControlInput::from(sol.u);
    out.slack = sol.min_slack;
  } catch (const barrier::InfeasibleError& e) {
    out.u = world::ControlInput::from(e.safest_input());
    out.slack = e.best_min_slack();
    out.infeasible = true;
  }
  return out;
}

double barrier_value(const RolloutContext& ctx, const world::VehicleState& x) {
  return ctx.barriers.eval(x.position());
}

void finish(TrajectoryRecord& rec) {
  rec.min_h = std::numeric_limits<double>::infinity();
  for (const auto& r : rec.rows) rec.min_h = std::min(rec.min_h, r.h);
  if (rec.rows.empty()) rec.min_h = 0.0;
  rec.safe = !rec.failed && rec.min_h >= 0.0;
}

}  // namespace

TrajectoryRecord run_continuous(const RolloutContext& ctx, const RolloutConfig& cfg,
                                std::uint64_t seed) {
  check_context(ctx);
  if (cfg.mode == Mode::Discrete) throw std::invalid_argument("run_continuous: discrete mode");
  if (!(cfg.duration > 0.0)) throw std::invalid_argument("run_continuous: duration must be > 0");
  if (cfg.plant_substeps < 4) {
    throw std::invalid_argument("run_continuous: plant dt must be at most interval / 4");
  }
  const auto dyn = world::Dynamics::vehicle(cfg.u_max);
  const auto schedule = TriggerSchedule::make(cfg.delta, cfg.eps_prime, dyn.f_bar);
  const auto ctl = controller_for(ctx, cfg);

  TrajectoryRecord rec;
  rec.seed = seed;
  rec.mode = cfg.mode;
  rec.margins = margins_for(cfg, ctx.barriers);
  rec.interval = schedule.interval;

  Rng rng(derive_seed(seed, streams::kRollout));
  world::VehicleState x = initial_state(ctx, cfg, rng);
  std::size_t waypoint = 0;
  const double sub_dt = schedule.interval / static_cast<double>(cfg.plant_substeps);

  double t_i = 0.0;
  try {
    while (t_i < cfg.duration) {
      const world::Scan scan = world::sense(x, *ctx.env, ctx.noise, rng);
      const Eigen::Vector2d xhat = ctx.perception->estimate(scan).position();
      const auto u_nom = nominal_control(xhat, ctl, waypoint);
      const auto fo = apply_filter(
          u_nom, barrier::continuous_constraints(ctx.barriers, dyn, xhat, rec.margins, cfg.gamma),
          cfg);

      Window w;
      w.t_start = t_i;
      w.t_end = next_trigger(t_i, schedule);
      w.estimate_error = (x.position() - xhat).norm();
      w.max_drift = w.estimate_error;
      w.max_displacement_excess = 0.0;
      w.filter_slack = fo.slack;
      w.infeasible = fo.infeasible;
      ++rec.num_triggers;
      if (fo.infeasible) ++rec.num_infeasible;

      rec.rows.push_back({t_i, x, xhat, fo.u, barrier_value(ctx, x), true, fo.infeasible});
      const Eigen::Vector2d x_i = x.position();
      for (std::size_t k = 1; k <= cfg.plant_substeps; ++k) {
        const double t = t_i + static_cast<double>(k) * sub_dt;
        x = world::step_continuous(x, fo.u, sub_dt);
        if (k == cfg.plant_substeps) break;  // the next trigger row logs this state
        w.max_drift = std::max(w.max_drift, (x.position() - xhat).norm());
        w.max_displacement_excess = std::max(
            w.max_displacement_excess, (x.position() - x_i).norm() - dyn.f_bar * (t - t_i));
        rec.rows.push_back({t, x, xhat, fo.u, barrier_value(ctx, x), false, fo.infeasible});
      }
      // Window closes at t_{i+1}; the supremum over [t_i, t_{i+1}) is approached there.
      w.max_drift = std::max(w.max_drift, (x.position() - xhat).norm());
      w.max_displacement_excess =
          std::max(w.max_displacement_excess,
                   (x.position() - x_i).norm() - dyn.f_bar * (w.t_end - t_i));
      rec.windows.push_back(w);
      t_i = w.t_end;
    }
    rec.rows.push_back({t_i, x, rec.rows.back().xhat, rec.rows.back().u, barrier_value(ctx, x),
                        false, false});
  } catch (const world::GeometryError& e) {
    rec.failed = true;
    rec.failure = e.what();
  }
  finish(rec);
  return rec;
}

TrajectoryRecord run_discrete(const RolloutContext& ctx, const RolloutConfig& cfg,
                              std::uint64_t seed) {
  check_context(ctx);
  if (!(cfg.dt > 0.0)) throw std::invalid_argument("run_discrete: dt must be > 0");
  const std::size_t steps =
      cfg.steps > 0 ? cfg.steps : static_cast<std::size_t>(std::llround(cfg.duration / cfg.dt));
  if (steps == 0) throw std::invalid_argument("run_discrete: horizon must be >= 1 step");
  const auto dyn = world::Dynamics::vehicle(cfg.u_max);
  const auto ctl = controller_for(ctx, cfg);

  TrajectoryRecord rec;
  rec.seed = seed;
  rec.mode = Mode::Discrete;
  rec.margins = margins_for(cfg, ctx.barriers);
  rec.interval = cfg.dt;

  Rng rng(derive_seed(seed, streams::kRollout));
  world::VehicleState x = initial_state(ctx, cfg, rng);
  std::size_t waypoint = 0;
  try {
    for (std::size_t k = 0; k < steps; ++k) {
      const double t = static_cast<double>(k) * cfg.dt;
      const world::Scan scan = world::sense(x, *ctx.env, ctx.noise, rng);
      const Eigen::Vector2d xhat = ctx.perception->estimate(scan).position();
      const auto u_nom = nominal_control(xhat, ctl, waypoint);
      const auto fo = apply_filter(u_nom,
                                   barrier::discrete_constraints(ctx.barriers, dyn, xhat, cfg.dt,
                                                                 rec.margins, cfg.eta),
                                   cfg);
      Window w;
      w.t_start = t;
      w.t_end = t + cfg.dt;
      w.estimate_error = (x.position() - xhat).norm();
      w.filter_slack = fo.slack;
      w.infeasible = fo.infeasible;
      const Eigen::Vector2d x_k = x.position();
      rec.rows.push_back({t, x, xhat, fo.u, barrier_value(ctx, x), true, fo.infeasible});
      ++rec.num_triggers;
      if (fo.infeasible) ++rec.num_infeasible;
      x = world::step_discrete(x, fo.u, cfg.dt);
      w.max_drift = std::max(w.estimate_error, (x.position() - xhat).norm());
      w.max_displacement_excess = (x.position() - x_k).norm() - dyn.f_bar * cfg.dt;
      rec.windows.push_back(w);
    }
    rec.rows.push_back({static_cast<double>(steps) * cfg.dt, x, rec.rows.back().xhat,
                        rec.rows.back().u, barrier_value(ctx, x), false, false});
  } catch (const world::GeometryError& e) {
    rec.failed = true;
    rec.failure = e.what();
  }
  finish(rec);
  return rec;
}

TrajectoryRecord run_rollout(const RolloutContext& ctx, const RolloutConfig& cfg,
                             std::uint64_t seed) {
  return cfg.mode == Mode::Discrete ? run_discrete(ctx, cfg, seed)
                                    : run_continuous(ctx, cfg, seed);
}

void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& rec) {
  const auto old_precision = os.precision(17);
  os << "t,x,y,heading,xhat_x,xhat_y,u_x,u_y,h,triggered,infeasible_flag\n";
  for (const auto& r : rec.rows) {
    os << r.t << ',' << r.x.px << ',' << r.x.py << ',' << r.x.heading << ',' << r.xhat.x() << ','
       << r.xhat.y() << ',' << r.u.ux << ',' << r.u.uy << ',' << r.h << ',' << (r.triggered ? 1 : 0)
       << ',' << (r.infeasible ? 1 : 0) << '\n';
  }
  os.precision(old_precision);
}

nlohmann::json summary_json(const TrajectoryRecord& rec) {
  nlohmann::json j = {{"safe", rec.safe},
                      {"min_h", rec.min_h},
                      {"num_triggers", rec.num_triggers},
                      {"num_infeasible", rec.num_infeasible},
                      {"seed", rec.seed},
                      {"mode", to_string(rec.mode)},
                      {"interval", rec.interval},
                      {"margins", {{"a", rec.margins.a}, {"b", rec.margins.b}}}};
  if (rec.failed) j["failure"] = rec.failure;
  return j;
}

}  // namespace certiguard::runtime
