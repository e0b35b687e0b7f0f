#include "certiguard/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "certiguard/config.hpp"
#include "certiguard/montecarlo.hpp"
#include "certiguard/pipeline.hpp"

namespace certiguard::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
  std::optional<std::string> config_path;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::optional<std::string> mode;
  std::optional<std::string> out_dir;
  bool linearize_socp = false;
  bool exclude_infeasible = false;
  std::vector<std::string> sets;

  std::optional<std::size_t> count;
  std::optional<double> noise_lambda;
  std::optional<std::string> model;
  std::optional<std::size_t> n_traces;
  std::vector<std::string> report_inputs;
};

/// Fails with a message that names the artifact the user must produce first.
class MissingArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Session {
  config::RunConfig cfg;
  fs::path out;
  std::size_t jobs = 1;
  std::ostream* log = nullptr;

  fs::path path_for(const std::optional<std::string>& configured, const std::string& name,
                    const std::string& producer) const {
    fs::path p = configured ? fs::path(*configured) : out / name;
    if (!fs::exists(p)) {
      throw MissingArtifact("missing " + p.string() + "; run '" + producer + "' first");
    }
    return p;
  }

  std::uint64_t stream(std::uint64_t s) const { return derive_seed(cfg.seed, s); }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
}

void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

json read_json(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  return json::parse(is);
}

std::unique_ptr<perception::PerceptionMap> load_model(const Session& s) {
  return perception::load_perception_map(
      s.path_for(s.cfg.model_path, "model.json", "fit").string());
}

conformal::CalibrationResult load_calibration(const Session& s) {
  return conformal::calibration_from_json(
      read_json(s.path_for(s.cfg.calibration_path, "calibration.json", "calibrate")));
}

double eps_prime_of(const conformal::CalibrationResult& cal) {
  if (!cal.combined_bound.is_finite()) {
    throw std::runtime_error("calibrated bound is unbounded; raise samples_per_point");
  }
  return cal.combined_bound.value();
}

// ---------------------------------------------------------------------------

void cmd_gen_data(const Session& s) {
  const auto env = s.cfg.environment();
  const auto sampler = perception::uniform_sampler(s.cfg.region_box(s.cfg.data_region, env),
                                                   s.cfg.data_region.heading);
  const auto data = perception::generate_dataset(env, s.cfg.noise, sampler, s.cfg.data_count,
                                                 s.stream(streams::kDataset), s.jobs);
  const fs::path p = s.out / "dataset.csv";
  std::ofstream os(p, std::ios::binary);
  perception::write_dataset_csv(os, data);
  *s.log << "gen-data: wrote " << data.pairs.size() << " pairs to " << p.string() << "\n";
}

void cmd_fit(const Session& s) {
  const auto env = s.cfg.environment();
  std::ifstream is(s.path_for(s.cfg.dataset_path, "dataset.csv", "gen-data"));
  const auto data = perception::read_dataset_csv(is);
  const auto box = perception::default_clamp_box(env);
  std::unique_ptr<perception::PerceptionMap> map;
  if (s.cfg.model == "kernel") {
    map = perception::fit_kernel_regressor(data, s.cfg.kernel_bandwidth, box);
  } else if (s.cfg.model == "mlp") {
    auto opts = s.cfg.mlp;
    opts.seed = s.stream(streams::kTraining);
    map = perception::fit_mlp(data, opts, box);
  } else {
    perception::DataSet subset = data;
    subset.pairs.resize(std::min(subset.pairs.size(), s.cfg.matcher.training_subset));
    map = perception::fit_scan_matcher(subset, env, box, s.cfg.matcher.options,
                                       s.cfg.matcher.temperatures, s.jobs);
  }
  const fs::path p = s.out / "model.json";
  write_text(p, map->to_json().dump() + "\n");
  *s.log << "fit: wrote " << map->kind() << " model to " << p.string() << "\n";
}

void cmd_lipschitz(const Session& s) {
  const auto env = s.cfg.environment();
  const auto map = load_model(s);
  const auto f = pipeline::composite_map(*map, env, s.cfg.noise, s.cfg.lipschitz_noise,
                                         s.cfg.lipschitz_region.heading);
  const auto est = perception::estimate_lipschitz(
      f, s.cfg.region_box(s.cfg.lipschitz_region, env), s.cfg.lipschitz_pairs,
      s.stream(streams::kLipschitz), s.cfg.lipschitz_radius, s.cfg.lipschitz_safety_factor, s.jobs,
      s.cfg.lipschitz_quantile);
  json j = perception::to_json(est);
  j["noise"] = s.cfg.lipschitz_noise == pipeline::CompositeNoise::Fixed ? "fixed" : "none";
  const fs::path p = s.out / "lipschitz.json";
  write_json(p, j);
  *s.log << "lipschitz: value " << est.value << ", q" << est.quantile_level << " ratio "
         << est.quantile_ratio << " -> " << p.string() << "\n";
}

void cmd_calibrate(const Session& s) {
  const auto env = s.cfg.environment();
  const auto map = load_model(s);
  const auto lip = perception::lipschitz_from_json(
      read_json(s.path_for(s.cfg.lipschitz_path, "lipschitz.json", "lipschitz")));
  const double product = pipeline::lipschitz_product(lip, s.cfg.lipschitz_source);

  pipeline::CalibrationSetup setup;
  setup.region = s.cfg.region_box(s.cfg.calibration_region, env);
  setup.heading = s.cfg.calibration_region.heading;
  setup.epsilon = s.cfg.epsilon;
  setup.samples_per_point = s.cfg.samples_per_point;
  setup.seed = s.stream(streams::kCalibration);
  setup.jobs = s.jobs;
  const auto scores = pipeline::calibration_scores(*map, env, s.cfg.noise, setup);
  const auto result = conformal::summarize(scores, s.cfg.alpha, product);

  json j = conformal::to_json(result);
  j["lipschitz_source"] =
      s.cfg.lipschitz_source == pipeline::LipschitzSource::Max ? "max" : "quantile";
  if (s.cfg.validation_samples > 0) {
    const auto v = pipeline::validate_bound(
        *map, env, s.cfg.noise, perception::uniform_sampler(setup.region, setup.heading),
        s.cfg.validation_samples, result.combined_bound, 1.0 - s.cfg.alpha,
        s.stream(streams::kValidation), s.jobs);
    j["validation"] = {{"samples", v.samples}, {"covered", v.covered}, {"rate", v.rate},
                       {"target", v.target}, {"sigma", v.sigma}};
    std::ofstream hs(s.out / "validation_histogram.csv", std::ios::binary);
    montecarlo::write_histogram_csv(
        hs, montecarlo::score_histogram(v.errors, s.cfg.histogram_bin_width, s.cfg.alpha));
  }
  write_json(s.out / "calibration.json", j);

  std::vector<double> all;
  for (const auto& z : scores.scores) all.insert(all.end(), z.begin(), z.end());
  std::ofstream cs(s.out / "calibration_scores.csv", std::ios::binary);
  conformal::write_score_histogram_csv(cs, all, s.cfg.histogram_bin_width);

  *s.log << "calibrate: " << result.per_point.size() << " points, sup " << result.sup_bound
         << ", eps' " << result.combined_bound << "\n";
}

runtime::RolloutConfig rollout_config(const Session& s, double eps_prime) {
  config::check_against_calibration(s.cfg, eps_prime);
  auto r = s.cfg.rollout;
  r.eps_prime = eps_prime;
  return r;
}

void cmd_simulate(const Session& s) {
  const auto env = s.cfg.environment();
  const auto map = load_model(s);
  const double eps = eps_prime_of(load_calibration(s));
  runtime::RolloutContext ctx;
  ctx.env = &env;
  ctx.noise = s.cfg.noise;
  ctx.perception = map.get();
  const auto rcfg = rollout_config(s, eps);
  const auto rec = runtime::run_rollout(ctx, rcfg, s.cfg.seed);
  const std::string mode = runtime::to_string(rcfg.mode);
  {
    std::ofstream os(s.out / ("trajectory_" + mode + ".csv"), std::ios::binary);
    runtime::write_trajectory_csv(os, rec);
  }
  json summary = runtime::summary_json(rec);
  summary["eps_prime"] = eps;
  write_json(s.out / ("summary_" + mode + ".json"), summary);
  *s.log << "simulate: " << mode << " safe=" << (rec.safe ? "true" : "false")
         << " min_h=" << rec.min_h << " triggers=" << rec.num_triggers << "\n";
}

void cmd_montecarlo(const Session& s) {
  const auto env = s.cfg.environment();
  const auto map = load_model(s);
  const double eps = eps_prime_of(load_calibration(s));
  runtime::RolloutContext ctx;
  ctx.env = &env;
  ctx.noise = s.cfg.noise;
  ctx.perception = map.get();
  const auto rcfg = rollout_config(s, eps);
  std::vector<runtime::TrajectoryRecord> records;
  auto batch = montecarlo::run_batch(ctx, rcfg, s.cfg.n_traces, s.cfg.seed, s.jobs,
                                     s.cfg.exclude_infeasible, &records);
  const std::string mode = runtime::to_string(rcfg.mode);

  std::vector<double> scores;
  for (const auto& t : batch.traces) {
    scores.insert(scores.end(), t.runtime_scores.begin(), t.runtime_scores.end());
  }
  const auto hist = montecarlo::score_histogram(scores, s.cfg.histogram_bin_width, s.cfg.alpha);
  if (records.empty()) throw std::runtime_error("montecarlo: n_traces must be >= 1");
  batch.config = {{"run", s.cfg.document},
                  {"eps_prime", eps},
                  {"delta", rcfg.delta},
                  {"mode", mode},
                  {"interval", records.front().interval},
                  {"margins", {{"a", records.front().margins.a}, {"b", records.front().margins.b}}}};
  json j = montecarlo::to_json(batch);
  for (auto& t : j["traces"]) t.erase("runtime_scores");
  j["runtime_score_quantile"] = hist.quantile;
  write_json(s.out / ("batch_" + mode + ".json"), j);
  {
    std::ofstream os(s.out / ("runtime_scores_" + mode + ".csv"), std::ios::binary);
    montecarlo::write_histogram_csv(os, hist);
  }
  {
    std::ofstream os(s.out / ("polylines_" + mode + ".csv"), std::ios::binary);
    montecarlo::write_polylines_csv(os, records);
  }
  const fs::path dir = s.out / ("traces_" + mode);
  fs::create_directories(dir);
  for (const auto& rec : records) {
    std::ofstream os(dir / ("trace_" + std::to_string(rec.seed) + ".csv"), std::ios::binary);
    runtime::write_trajectory_csv(os, rec);
  }
  *s.log << "montecarlo: " << mode << " safety_rate=" << batch.safety_rate
         << " coverage_rate=" << batch.coverage_rate << " (" << batch.traces.size()
         << " traces)\n";
}

void cmd_report(const Session& s, const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& i : inputs) files.emplace_back(i);
  if (files.empty()) {
    if (fs::exists(s.out)) {
      for (const auto& e : fs::directory_iterator(s.out)) {
        const auto name = e.path().filename().string();
        if (name.rfind("batch_", 0) == 0 && e.path().extension() == ".json") {
          files.push_back(e.path());
        }
      }
    }
    std::sort(files.begin(), files.end());
  }
  if (files.empty()) throw MissingArtifact("no batch_*.json in " + s.out.string() + "; run 'montecarlo' first");

  json rows = json::array();
  std::ostringstream table;
  table << "| mode | traces | safety_rate | drift_coverage | infeasible_traces | failed | eps_prime | "
           "runtime_q |\n|---|---|---|---|---|---|---|---|\n";
  for (const auto& f : files) {
    const json b = read_json(f);
    std::size_t infeasible = 0;
    std::size_t failed = 0;
    for (const auto& t : b.at("traces")) {
      infeasible += t.at("num_infeasible").get<std::size_t>() > 0 ? 1 : 0;
      failed += t.value("failed", false) ? 1 : 0;
    }
    const json& c = b.at("config");
    json row = {{"file", f.filename().string()},
                {"mode", c.value("mode", std::string("?"))},
                {"n_traces", b.at("n_traces")},
                {"safety_rate", b.at("safety_rate")},
                {"coverage_rate", b.at("coverage_rate")},
                {"infeasible_traces", infeasible},
                {"failed_traces", failed},
                {"eps_prime", c.value("eps_prime", 0.0)},
                {"runtime_score_quantile", b.value("runtime_score_quantile", 0.0)}};
    table << "| " << row["mode"].get<std::string>() << " | " << row["n_traces"] << " | "
          << std::fixed << std::setprecision(3) << row["safety_rate"].get<double>() << " | "
          << row["coverage_rate"].get<double>() << " | " << infeasible << " | " << failed << " | "
          << row["eps_prime"].get<double>() << " | " << row["runtime_score_quantile"].get<double>()
          << " |\n";
    table.unsetf(std::ios::fixed);
    rows.push_back(row);
  }
  write_json(s.out / "report.json", {{"rows", rows}});
  write_text(s.out / "report.md", table.str());
  *s.log << table.str();
}

// ---------------------------------------------------------------------------

std::string error_line(const std::string& kind, const std::string& message,
                       const std::vector<std::string>& details = {}) {
  json j = {{"error", kind}, {"message", message}};
  if (!details.empty()) j["violations"] = details;
  return j.dump();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"certiguard: perception-based safety filtering with calibrated error bounds",
               "certiguard"};
  app.require_subcommand(1, 1);
  Options o;
  app.add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "top-level seed (experiment.seed)");
  app.add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--mode", o.mode, "robust | vanilla | discrete")
      ->check(CLI::IsMember({"robust", "vanilla", "discrete"}));
  app.add_option("--out", o.out_dir, "output directory (default $CERTIGUARD_OUT or ./out)");
  app.add_flag("--linearize-socp", o.linearize_socp, "replace b|u| by b sqrt(m) u_max");
  app.add_flag("--exclude-infeasible", o.exclude_infeasible,
               "drop traces that needed the fallback from the safety rate");
  app.add_option("--set", o.sets, "override a config value: dotted.key=value")->take_all();

  auto* gen = app.add_subcommand("gen-data", "sample state/scan pairs");
  gen->add_option("--count", o.count, "number of pairs");
  gen->add_option("--noise-lambda", o.noise_lambda, "noise parameter lambda");
  auto* fit = app.add_subcommand("fit", "fit a perception map to the dataset");
  fit->add_option("--model", o.model, "kernel | mlp | matcher")
      ->check(CLI::IsMember({"kernel", "mlp", "matcher"}));
  app.add_subcommand("lipschitz", "estimate the composite Lipschitz constant");
  app.add_subcommand("calibrate", "conformal calibration over the eps-net");
  app.add_subcommand("simulate", "one closed-loop trace");
  auto* mc = app.add_subcommand("montecarlo", "a batch of seeded traces");
  mc->add_option("--n-traces", o.n_traces, "number of traces");
  auto* rep = app.add_subcommand("report", "tabulate batch summaries");
  rep->add_option("inputs", o.report_inputs, "batch JSON files (default: out/batch_*.json)");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << error_line("usage", e.what()) << "\n" << app.help();
    return 2;
  }

  try {
    std::vector<std::string> overrides = o.sets;
    if (o.seed) overrides.push_back("experiment.seed=" + std::to_string(*o.seed));
    if (o.mode) overrides.push_back("experiment.mode=\"" + *o.mode + "\"");
    if (o.linearize_socp) overrides.push_back("control.linearize_socp=true");
    if (o.exclude_infeasible) overrides.push_back("experiment.exclude_infeasible=true");
    if (o.count) overrides.push_back("data.count=" + std::to_string(*o.count));
    if (o.noise_lambda) {
      std::ostringstream ss;
      ss << std::setprecision(17) << *o.noise_lambda;
      overrides.push_back("noise.lambda=" + ss.str());
    }
    if (o.model) overrides.push_back("perception.model=\"" + *o.model + "\"");
    if (o.n_traces) overrides.push_back("experiment.n_traces=" + std::to_string(*o.n_traces));

    Session s;
    s.cfg = config::parse(config::load_document(o.config_path, overrides));
    if (o.out_dir) {
      s.out = *o.out_dir;
    } else if (const char* env = std::getenv("CERTIGUARD_OUT"); env && *env) {
      s.out = env;
    } else {
      s.out = "out";
    }
    fs::create_directories(s.out);
    s.jobs = o.jobs;
    s.log = &out;

    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    if (name == "gen-data") cmd_gen_data(s);
    else if (name == "fit") cmd_fit(s);
    else if (name == "lipschitz") cmd_lipschitz(s);
    else if (name == "calibrate") cmd_calibrate(s);
    else if (name == "simulate") cmd_simulate(s);
    else if (name == "montecarlo") cmd_montecarlo(s);
    else if (name == "report") cmd_report(s, o.report_inputs);
    return 0;
  } catch (const config::ConfigError& e) {
    err << error_line("config", "invalid configuration", e.violations()) << "\n";
    return 3;
  } catch (const MissingArtifact& e) {
    err << error_line("missing-artifact", e.what()) << "\n";
    return 4;
  } catch (const runtime::InvalidSchedule& e) {
    err << error_line("invalid-schedule", e.what()) << "\n";
    return 5;
  } catch (const std::exception& e) {
    err << error_line("runtime", e.what()) << "\n";
    return 1;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace certiguard::cli
