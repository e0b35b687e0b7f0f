#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/iostream.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <limits>
#include <sstream>

#include "certiguard/barrier.hpp"
#include "certiguard/cli.hpp"
#include "certiguard/conformal.hpp"
#include "certiguard/montecarlo.hpp"
#include "certiguard/perception.hpp"
#include "certiguard/pipeline.hpp"
#include "certiguard/runtime.hpp"
#include "certiguard/safety_filter.hpp"
#include "certiguard/world.hpp"

namespace py = pybind11;
using namespace certiguard;

namespace {

double bound_to_float(const conformal::Bound& b) { return b.as_double(); }

conformal::Box make_box(const std::vector<double>& lo, const std::vector<double>& hi) {
  if (lo.size() != hi.size()) throw std::invalid_argument("box: lo and hi differ in size");
  return conformal::Box{lo, hi};
}

world::Scan scan_from(const std::vector<double>& ranges, double heading) {
  if (ranges.size() != world::kNumRays) {
    throw std::invalid_argument("scan: expected " + std::to_string(world::kNumRays) + " ranges");
  }
  world::Scan s;
  std::copy(ranges.begin(), ranges.end(), s.ranges.begin());
  s.heading = heading;
  return s;
}

py::dict record_to_dict(const runtime::TrajectoryRecord& rec) {
  const auto n = static_cast<Eigen::Index>(rec.rows.size());
  Eigen::MatrixXd rows(n, 10);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rec.rows[static_cast<std::size_t>(i)];
    rows.row(i) << r.t, r.x.px, r.x.py, r.xhat.x(), r.xhat.y(), r.u.ux, r.u.uy, r.h,
        r.triggered ? 1.0 : 0.0, r.infeasible ? 1.0 : 0.0;
  }
  py::dict d;
  d["seed"] = rec.seed;
  d["mode"] = runtime::to_string(rec.mode);
  d["safe"] = rec.safe;
  d["min_h"] = rec.min_h;
  d["num_triggers"] = rec.num_triggers;
  d["num_infeasible"] = rec.num_infeasible;
  d["interval"] = rec.interval;
  d["failed"] = rec.failed;
  d["failure"] = rec.failure;
  d["margins"] = py::make_tuple(rec.margins.a, rec.margins.b);
  d["columns"] = std::vector<std::string>{"t", "x", "y", "xhat_x", "xhat_y", "u_x", "u_y",
                                          "h", "triggered", "infeasible"};
  d["rows"] = rows;
  return d;
}

/// Holds an environment and a perception map so rollouts can reference them.
struct Scenario {
  world::Environment env;
  world::NoiseModel noise;
  std::shared_ptr<perception::PerceptionMap> map;

  runtime::RolloutContext context() const {
    runtime::RolloutContext ctx;
    ctx.env = &env;
    ctx.noise = noise;
    ctx.perception = map.get();
    return ctx;
  }
};

runtime::RolloutConfig rollout_config(const Scenario& s, const std::string& mode,
                                      double eps_prime, double duration, double delta,
                                      std::size_t steps, double dt, double eta) {
  runtime::RolloutConfig cfg;
  cfg.mode = runtime::mode_from_string(mode);
  cfg.eps_prime = eps_prime;
  cfg.duration = duration;
  cfg.delta = delta;
  cfg.steps = steps;
  cfg.dt = dt;
  cfg.eta = eta;
  cfg.nominal.waypoints = s.env.waypoints;
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_certiguard, m) {
  m.doc() = "certiguard core bindings";
  m.attr("__version__") = "0.1.0";
  m.attr("NUM_RAYS") = world::kNumRays;

  // conformal
  m.def(
      "quantile_index",
      [](std::size_t k, double alpha) {
        const auto r = conformal::quantile_index(k, alpha);
        return py::make_tuple(r.rank, r.overflow());
      },
      py::arg("k"), py::arg("alpha"), "(rank, overflow) for ceil((k+1)(1-alpha)).");
  m.def(
      "conformal_bound",
      [](std::vector<double> scores, double alpha) {
        return bound_to_float(conformal::conformal_bound(conformal::ScoreSet(std::move(scores), alpha)));
      },
      py::arg("scores"), py::arg("alpha"), "Conformal quantile; inf when unbounded.");
  m.def(
      "empirical_coverage",
      [](double bound, const std::vector<double>& errors) {
        const auto b = std::isfinite(bound) ? conformal::Bound::finite(bound)
                                            : conformal::Bound::unbounded();
        return conformal::empirical_coverage(b, errors);
      },
      py::arg("bound"), py::arg("errors"));
  m.def(
      "build_eps_net",
      [](const std::vector<double>& lo, const std::vector<double>& hi, double epsilon) {
        const auto net = conformal::build_eps_net(make_box(lo, hi), epsilon);
        Eigen::MatrixXd pts(static_cast<Eigen::Index>(net.points.size()),
                            static_cast<Eigen::Index>(lo.size()));
        for (std::size_t i = 0; i < net.points.size(); ++i) {
          pts.row(static_cast<Eigen::Index>(i)) = net.points[i].transpose();
        }
        return pts;
      },
      py::arg("lo"), py::arg("hi"), py::arg("epsilon"), "Net points, one per row.");
  m.def(
      "combined_error_bound",
      [](double sup, double lipschitz_product, double epsilon) {
        const auto b = std::isfinite(sup) ? conformal::Bound::finite(sup)
                                          : conformal::Bound::unbounded();
        return bound_to_float(conformal::combined_error_bound(b, lipschitz_product, epsilon));
      },
      py::arg("sup_bound"), py::arg("lipschitz_product"), py::arg("epsilon"));

  // world
  py::class_<world::Environment>(m, "Environment")
      .def_static("hallway_corner", &world::Environment::hallway_corner, py::arg("width") = 1.5,
                  py::arg("leg_length") = 3.0)
      .def_property_readonly("workspace",
                             [](const world::Environment& e) {
                               return py::make_tuple(e.workspace.lo, e.workspace.hi);
                             })
      .def_property_readonly("waypoints",
                             [](const world::Environment& e) { return e.waypoints; })
      .def_readonly("max_range", &world::Environment::max_range);

  m.def(
      "ray_cast",
      [](const world::Environment& env, double px, double py, double heading) {
        const auto s = world::ray_cast(world::VehicleState::at({px, py}, heading), env);
        return std::vector<double>(s.ranges.begin(), s.ranges.end());
      },
      py::arg("env"), py::arg("px"), py::arg("py"), py::arg("heading"));
  m.def(
      "sense",
      [](const world::Environment& env, double px, double py, double heading, double lambda,
         std::uint64_t seed) {
        Rng rng(seed);
        const auto s = world::sense(world::VehicleState::at({px, py}, heading), env,
                                    world::NoiseModel(lambda), rng);
        return std::vector<double>(s.ranges.begin(), s.ranges.end());
      },
      py::arg("env"), py::arg("px"), py::arg("py"), py::arg("heading"),
      py::arg("noise_lambda") = 2.0 / 3.0, py::arg("seed") = 0);
  m.def("scan_angles", [] {
    const auto& a = world::scan_angles();
    return std::vector<double>(a.begin(), a.end());
  });

  // perception
  py::class_<perception::PerceptionMap, std::shared_ptr<perception::PerceptionMap>>(
      m, "PerceptionMap")
      .def("kind", &perception::PerceptionMap::kind)
      .def(
          "estimate",
          [](const perception::PerceptionMap& p, const std::vector<double>& ranges,
             double heading) {
            const auto e = p.estimate(scan_from(ranges, heading));
            return py::make_tuple(e.px, e.py, e.heading);
          },
          py::arg("ranges"), py::arg("heading"))
      .def("to_json", [](const perception::PerceptionMap& p) { return p.to_json().dump(); });

  m.def(
      "generate_dataset",
      [](const world::Environment& env, std::size_t count, std::uint64_t seed, double lambda) {
        const auto d = perception::generate_dataset(env, world::NoiseModel(lambda),
                                                    perception::uniform_sampler(env.workspace),
                                                    count, seed);
        Eigen::MatrixXd states(static_cast<Eigen::Index>(count), 3);
        Eigen::MatrixXd scans(static_cast<Eigen::Index>(count), world::kNumRays);
        for (std::size_t i = 0; i < count; ++i) {
          const auto& p = d.pairs[i];
          const auto r = static_cast<Eigen::Index>(i);
          states.row(r) << p.state.px, p.state.py, p.state.heading;
          scans.row(r) = p.scan.vec().transpose();
        }
        return py::make_tuple(states, scans);
      },
      py::arg("env"), py::arg("count"), py::arg("seed") = 0, py::arg("noise_lambda") = 2.0 / 3.0,
      "(states[n,3], scans[n,64]) with uniform states in the workspace.");
  m.def(
      "fit_kernel_regressor",
      [](const world::Environment& env, std::size_t count, std::uint64_t seed, double lambda,
         double bandwidth) -> std::shared_ptr<perception::PerceptionMap> {
        const auto d = perception::generate_dataset(env, world::NoiseModel(lambda),
                                                    perception::uniform_sampler(env.workspace),
                                                    count, seed);
        return perception::fit_kernel_regressor(d, bandwidth, perception::default_clamp_box(env));
      },
      py::arg("env"), py::arg("count"), py::arg("seed") = 0, py::arg("noise_lambda") = 2.0 / 3.0,
      py::arg("bandwidth") = 2.5, "Generates a dataset and fits a kernel regressor to it.");
  m.def(
      "scan_matcher",
      [](const world::Environment& env) -> std::shared_ptr<perception::PerceptionMap> {
        return std::make_shared<perception::ScanMatcher>(env, perception::default_clamp_box(env));
      },
      py::arg("env"));
  m.def(
      "load_perception_map",
      [](const std::string& path) -> std::shared_ptr<perception::PerceptionMap> {
        return perception::load_perception_map(path);
      },
      py::arg("path"));
  m.def(
      "estimate_lipschitz",
      [](const std::function<std::vector<double>(std::vector<double>)>& f,
         const std::vector<double>& lo, const std::vector<double>& hi, std::size_t num_pairs,
         std::uint64_t seed, double radius, double safety_factor) {
        const auto est = perception::estimate_lipschitz(
            [&f](const Eigen::VectorXd& x) {
              const auto y = f(std::vector<double>(x.data(), x.data() + x.size()));
              return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(
                  y.data(), static_cast<Eigen::Index>(y.size())));
            },
            make_box(lo, hi), num_pairs, seed, radius, safety_factor);
        return perception::to_json(est).dump();
      },
      py::arg("f"), py::arg("lo"), py::arg("hi"), py::arg("num_pairs") = 1000,
      py::arg("seed") = 0, py::arg("radius") = 0.05, py::arg("safety_factor") = 1.2,
      "JSON summary of a sampled Lipschitz estimate of a Python callable.");

  // barrier and filter
  m.def(
      "continuous_margins",
      [](double delta, double gamma) {
        const auto mg = barrier::continuous_margins(
            delta, barrier::vehicle_continuous_lipschitz(barrier::BarrierSet::hallway(), gamma));
        return py::make_tuple(mg.a, mg.b);
      },
      py::arg("delta"), py::arg("gamma") = 1.0, "Hallway vehicle margins (a, b).");
  m.def(
      "discrete_margins",
      [](double eps_prime, double eta, double lh, double lf, double lg) {
        const auto mg = barrier::discrete_margins(eps_prime, eta, {lh, lf, lg});
        return py::make_tuple(mg.a, mg.b);
      },
      py::arg("eps_prime"), py::arg("eta"), py::arg("l_h") = 1.0, py::arg("l_f") = 1.0,
      py::arg("l_g") = 0.0);
  m.def("hallway_barrier",
        [](double px, double py, double width) {
          Eigen::VectorXd x(2);
          x << px, py;
          return barrier::BarrierSet::hallway(width).eval(x);
        },
        py::arg("px"), py::arg("py"), py::arg("width") = 1.5);

  py::register_exception<barrier::InfeasibleError>(m, "InfeasibleError");
  m.def(
      "safety_filter",
      [](const Eigen::VectorXd& u_nom, const std::vector<std::tuple<Eigen::VectorXd, double, double>>& cons,
         double u_max, bool linearize) {
        barrier::FilterProblem p;
        p.u_nom = u_nom;
        p.u_max = u_max;
        p.linearize_socp = linearize;
        for (std::size_t i = 0; i < cons.size(); ++i) {
          const auto& [c, k, b] = cons[i];
          p.constraints.push_back({c, k, b, i});
        }
        const auto s = barrier::safety_filter(p);
        return py::make_tuple(s.u, s.objective, s.min_slack);
      },
      py::arg("u_nom"), py::arg("constraints"), py::arg("u_max") = 1.0,
      py::arg("linearize_socp") = false,
      "Constraints are (coeff, constant, norm_weight) meaning coeff.u + constant - w|u| >= 0."
      " Returns (u, objective, min_slack).");

  // runtime
  py::register_exception<runtime::InvalidSchedule>(m, "InvalidSchedule");
  m.def(
      "trigger_interval",
      [](double delta, double eps_prime, double f_bar) {
        return runtime::TriggerSchedule::make(delta, eps_prime, f_bar).interval;
      },
      py::arg("delta"), py::arg("eps_prime"), py::arg("f_bar"));
  m.def("alpha_for_horizon", &runtime::alpha_for_horizon, py::arg("target_prob"), py::arg("m"));

  py::class_<Scenario>(m, "Scenario")
      .def(py::init([](const world::Environment& env, std::shared_ptr<perception::PerceptionMap> map,
                       double lambda) {
             return Scenario{env, world::NoiseModel(lambda), std::move(map)};
           }),
           py::arg("env"), py::arg("perception"), py::arg("noise_lambda") = 2.0 / 3.0)
      .def(
          "rollout",
          [](const Scenario& s, const std::string& mode, double eps_prime, std::uint64_t seed,
             double duration, double delta, std::size_t steps, double dt, double eta) {
            const auto cfg = rollout_config(s, mode, eps_prime, duration, delta, steps, dt, eta);
            return record_to_dict(runtime::run_rollout(s.context(), cfg, seed));
          },
          py::arg("mode"), py::arg("eps_prime"), py::arg("seed") = 0, py::arg("duration") = 30.0,
          py::arg("delta") = 0.35, py::arg("steps") = 0, py::arg("dt") = 0.05,
          py::arg("eta") = 1.0)
      .def(
          "batch",
          [](const Scenario& s, const std::string& mode, double eps_prime, std::size_t n,
             std::uint64_t base_seed, double duration, double delta) {
            const auto cfg = rollout_config(s, mode, eps_prime, duration, delta, 0, 0.05, 1.0);
            const auto b = montecarlo::run_batch(s.context(), cfg, n, base_seed);
            py::dict d;
            d["safety_rate"] = b.safety_rate;
            d["coverage_rate"] = b.coverage_rate;
            d["n_traces"] = b.traces.size();
            return d;
          },
          py::arg("mode"), py::arg("eps_prime"), py::arg("n_traces"), py::arg("base_seed") = 0,
          py::arg("duration") = 30.0, py::arg("delta") = 0.35);

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int rc = cli::run(args, out, err);
        return py::make_tuple(rc, out.str(), err.str());
      },
      py::arg("args"), "Runs one command line; returns (status, stdout, stderr).");
}
