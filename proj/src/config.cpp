#include "certiguard/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

namespace certiguard::config {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += "; ";
    out += v[i];
  }
  return out;
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error("invalid configuration: " + join(violations)),
      violations_(std::move(violations)) {}

json default_config() {
  const perception::ScanMatcherOptions m;
  return {
      {"environment", {{"path", nullptr}, {"width", 1.5}, {"leg_length", 3.0}}},
      {"noise", {{"lambda", 2.0 / 3.0}, {"convention", "rate"}}},
      {"data", {{"count", 5000}, {"region", nullptr}, {"heading", nullptr}}},
      {"perception",
       {{"model", "matcher"},
        {"kernel", {{"bandwidth", 2.5}}},
        {"mlp",
         {{"widths", {64, 32, 16, 3}}, {"epochs", 200}, {"step_size", 1e-3}, {"batch_size", 64}}},
        {"matcher",
         {{"coarse_step", m.coarse_step},
          {"angle_bins", m.angle_bins},
          {"candidates", m.candidates},
          {"initial_step", m.initial_step},
          {"final_step", m.final_step},
          {"negative_weight", m.negative_weight},
          {"coarse_negative_weight", m.coarse_negative_weight},
          {"posterior_steps", m.posterior_steps},
          {"posterior_half_width", m.posterior_half_width},
          {"temperatures", {1.5}},
          {"training_subset", 500}}}}},
      {"lipschitz",
       {{"num_pairs", 2000},
        {"radius", 0.05},
        {"safety_factor", 1.2},
        {"quantile", 0.99},
        {"noise", "none"},
        {"region", nullptr},
        {"heading", nullptr}}},
      {"conformal",
       {{"alpha", 0.25},
        {"epsilon", 0.04},
        {"samples_per_point", 100},
        {"lipschitz_source", "quantile"},
        {"region", nullptr},
        {"heading", nullptr},
        {"validation_samples", 10000},
        {"histogram_bin_width", 0.02}}},
      {"control",
       {{"delta", 0.35},
        {"gamma", 1.0},
        {"u_max", 1.0},
        {"eta", 1.0},
        {"dt", 0.05},
        {"steps", 0},
        {"beta_offset", 0.0},
        {"plant_substeps", 10},
        {"linearize_socp", false},
        {"gain", 1.0},
        {"capture_radius", 0.3}}},
      {"experiment",
       {{"mode", "robust"},
        {"duration", 30.0},
        {"n_traces", 100},
        {"seed", 0},
        {"exclude_infeasible", false}}},
      {"artifacts",
       {{"dataset", nullptr}, {"model", nullptr}, {"lipschitz", nullptr}, {"calibration", nullptr}}},
  };
}

namespace {

/// Collects keys of `doc` that have no counterpart in `schema`. Leaves of
/// the schema that default to null accept any value.
void unknown_keys(const json& doc, const json& schema, const std::string& prefix,
                  std::vector<std::string>& out) {
  if (!doc.is_object()) return;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) {
      out.push_back("unknown key '" + key + "'");
      continue;
    }
    const json& s = schema.at(it.key());
    if (s.is_object()) {
      if (!it.value().is_object()) {
        out.push_back("'" + key + "' must be an object");
      } else {
        unknown_keys(it.value(), s, key, out);
      }
    }
  }
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError({"override '" + assignment + "' is not of the form key=value"});
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, /*allow_exceptions=*/false);
  if (value.is_discarded()) value = raw;

  const json schema = default_config();
  const json* s = &schema;
  json* node = &doc;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!s->is_object() || !s->contains(parts[i])) {
      throw ConfigError({"unknown key '" + key + "'"});
    }
    s = &s->at(parts[i]);
    if (!node->is_object()) *node = json::object();
    node = &(*node)[parts[i]];
  }
  if (s->is_object()) throw ConfigError({"'" + key + "' names a section, not a value"});
  *node = std::move(value);
}

json load_document(const std::optional<std::string>& path, const std::vector<std::string>& overrides) {
  json doc = default_config();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError({"config file '" + *path + "' cannot be opened"});
    json user;
    try {
      user = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError({"config file '" + *path + "' is not valid JSON: " + e.what()});
    }
    std::vector<std::string> bad;
    unknown_keys(user, doc, "", bad);
    if (!bad.empty()) throw ConfigError(bad);
    doc.merge_patch(user);
    // merge_patch deletes keys set to null; put the defaults back.
    json full = default_config();
    full.merge_patch(doc);
    doc = std::move(full);
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return doc;
}

namespace {

/// Typed reads that record a violation instead of throwing.
class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  const json& at(const std::string& dotted) const {
    static const json null_value;
    const json* node = &doc_;
    std::stringstream ss(dotted);
    std::string part;
    while (std::getline(ss, part, '.')) {
      if (!node->is_object() || !node->contains(part)) return null_value;
      node = &node->at(part);
    }
    return *node;
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    try {
      return at(key).get<T>();
    } catch (const std::exception&) {
      errors.push_back("'" + key + "' has the wrong type");
      return fallback;
    }
  }

  std::optional<std::string> path(const std::string& key, bool must_exist) {
    const json& v = at(key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_string()) {
      errors.push_back("'" + key + "' must be a string path");
      return std::nullopt;
    }
    const auto p = v.get<std::string>();
    if (must_exist && !std::filesystem::exists(p)) {
      errors.push_back("'" + key + "' refers to missing file '" + p + "'");
    }
    return p;
  }

  std::optional<conformal::Box> box(const std::string& key) {
    const json& v = at(key);
    if (v.is_null()) return std::nullopt;
    try {
      const auto b = v.get<std::vector<double>>();
      if (b.size() != 4 || !(b[0] < b[1]) || !(b[2] < b[3])) throw std::invalid_argument("");
      return conformal::Box{{b[0], b[2]}, {b[1], b[3]}};
    } catch (const std::exception&) {
      errors.push_back("'" + key + "' must be [xmin, xmax, ymin, ymax] with min < max");
      return std::nullopt;
    }
  }

  std::optional<double> maybe(const std::string& key) {
    const json& v = at(key);
    if (v.is_null()) return std::nullopt;
    if (!v.is_number()) {
      errors.push_back("'" + key + "' must be a number or null");
      return std::nullopt;
    }
    return v.get<double>();
  }

  void require(bool ok, const std::string& message) {
    if (!ok) errors.push_back(message);
  }

  std::vector<std::string> errors;

 private:
  const json& doc_;
};

}  // namespace

RunConfig parse(const json& doc) {
  {
    std::vector<std::string> bad;
    unknown_keys(doc, default_config(), "", bad);
    if (!bad.empty()) throw ConfigError(bad);
  }
  RunConfig c;
  c.document = doc;
  json full = default_config();
  full.merge_patch(doc);
  Reader r(full);

  c.environment_path = r.path("environment.path", true);
  c.hallway_width = r.get("environment.width", 1.5);
  c.leg_length = r.get("environment.leg_length", 3.0);
  r.require(c.hallway_width > 0.0, "environment.width must be > 0");
  r.require(c.leg_length > 0.0, "environment.leg_length must be > 0");

  const double lambda = r.get("noise.lambda", 2.0 / 3.0);
  const auto convention = r.get<std::string>("noise.convention", "rate");
  r.require(lambda > 0.0, "noise.lambda must be > 0");
  r.require(convention == "rate" || convention == "scale",
            "noise.convention must be 'rate' or 'scale'");
  if (lambda > 0.0) {
    c.noise = world::NoiseModel(lambda, convention == "scale" ? world::NoiseConvention::Scale
                                                             : world::NoiseConvention::Rate);
  }

  c.data_count = r.get<std::size_t>("data.count", 5000);
  r.require(c.data_count >= 1, "data.count must be >= 1");
  c.data_region = {r.box("data.region"), r.maybe("data.heading")};

  c.model = r.get<std::string>("perception.model", "matcher");
  r.require(c.model == "kernel" || c.model == "mlp" || c.model == "matcher",
            "perception.model must be kernel, mlp or matcher");
  c.kernel_bandwidth = r.get("perception.kernel.bandwidth", 2.5);
  r.require(c.kernel_bandwidth > 0.0, "perception.kernel.bandwidth must be > 0");
  c.mlp.widths = r.get<std::vector<std::size_t>>("perception.mlp.widths", {64, 32, 16, 3});
  c.mlp.epochs = r.get<std::size_t>("perception.mlp.epochs", 200);
  c.mlp.step_size = r.get("perception.mlp.step_size", 1e-3);
  c.mlp.batch_size = r.get<std::size_t>("perception.mlp.batch_size", 64);
  r.require(c.mlp.widths.size() >= 3 && c.mlp.widths.front() == world::kNumRays &&
                (c.mlp.widths.back() == 2 || c.mlp.widths.back() == 3),
            "perception.mlp.widths must start at 64, end at 2 or 3 and have a hidden layer");
  r.require(c.mlp.step_size > 0.0, "perception.mlp.step_size must be > 0");
  r.require(c.mlp.batch_size >= 1, "perception.mlp.batch_size must be >= 1");

  auto& mo = c.matcher.options;
  mo.coarse_step = r.get("perception.matcher.coarse_step", mo.coarse_step);
  mo.angle_bins = r.get("perception.matcher.angle_bins", mo.angle_bins);
  mo.candidates = r.get("perception.matcher.candidates", mo.candidates);
  mo.initial_step = r.get("perception.matcher.initial_step", mo.initial_step);
  mo.final_step = r.get("perception.matcher.final_step", mo.final_step);
  mo.negative_weight = r.get("perception.matcher.negative_weight", mo.negative_weight);
  mo.coarse_negative_weight =
      r.get("perception.matcher.coarse_negative_weight", mo.coarse_negative_weight);
  mo.posterior_steps = r.get("perception.matcher.posterior_steps", mo.posterior_steps);
  mo.posterior_half_width = r.get("perception.matcher.posterior_half_width", mo.posterior_half_width);
  c.matcher.temperatures = r.get<std::vector<double>>("perception.matcher.temperatures", {1.5});
  r.require(mo.coarse_step > 0.0 && mo.initial_step > 0.0 && mo.final_step > 0.0,
            "perception.matcher step sizes must be > 0");
  r.require(mo.angle_bins >= 8, "perception.matcher.angle_bins must be >= 8");
  r.require(mo.candidates >= 1, "perception.matcher.candidates must be >= 1");
  r.require(!c.matcher.temperatures.empty(), "perception.matcher.temperatures must be nonempty");
  for (double t : c.matcher.temperatures) {
    r.require(t > 0.0, "perception.matcher.temperatures must be > 0");
  }
  c.matcher.training_subset = r.get<std::size_t>("perception.matcher.training_subset", 500);
  if (!c.matcher.temperatures.empty()) mo.temperature = c.matcher.temperatures.front();

  c.lipschitz_pairs = r.get<std::size_t>("lipschitz.num_pairs", 2000);
  c.lipschitz_radius = r.get("lipschitz.radius", 0.05);
  c.lipschitz_safety_factor = r.get("lipschitz.safety_factor", 1.2);
  const auto lnoise = r.get<std::string>("lipschitz.noise", "none");
  r.require(c.lipschitz_pairs >= 1, "lipschitz.num_pairs must be >= 1");
  r.require(c.lipschitz_radius > 0.0, "lipschitz.radius must be > 0");
  r.require(c.lipschitz_safety_factor >= 1.0, "lipschitz.safety_factor must be >= 1");
  r.require(lnoise == "none" || lnoise == "fixed", "lipschitz.noise must be 'none' or 'fixed'");
  c.lipschitz_noise =
      lnoise == "fixed" ? pipeline::CompositeNoise::Fixed : pipeline::CompositeNoise::None;
  c.lipschitz_region = {r.box("lipschitz.region"), r.maybe("lipschitz.heading")};
  c.lipschitz_quantile = r.get("lipschitz.quantile", 0.99);
  r.require(c.lipschitz_quantile > 0.0 && c.lipschitz_quantile <= 1.0,
            "lipschitz.quantile must lie in (0, 1]");

  c.alpha = r.get("conformal.alpha", 0.25);
  c.epsilon = r.get("conformal.epsilon", 0.05);
  c.samples_per_point = r.get<std::size_t>("conformal.samples_per_point", 20);
  const auto source = r.get<std::string>("conformal.lipschitz_source", "quantile");
  r.require(source == "max" || source == "quantile",
            "conformal.lipschitz_source must be 'max' or 'quantile'");
  c.lipschitz_source =
      source == "max" ? pipeline::LipschitzSource::Max : pipeline::LipschitzSource::Quantile;
  c.calibration_region = {r.box("conformal.region"), r.maybe("conformal.heading")};
  c.validation_samples = r.get<std::size_t>("conformal.validation_samples", 10000);
  c.histogram_bin_width = r.get("conformal.histogram_bin_width", 0.02);
  const bool alpha_ok = c.alpha > 0.0 && c.alpha < 1.0;
  r.require(alpha_ok, "conformal.alpha must lie in (0, 1)");
  r.require(c.epsilon > 0.0, "conformal.epsilon must be > 0");
  if (alpha_ok) {
    r.require(c.samples_per_point >= conformal::min_samples_for(c.alpha),
              "conformal.samples_per_point must be >= " +
                  std::to_string(conformal::min_samples_for(c.alpha)) + " at this alpha");
  }
  r.require(c.histogram_bin_width > 0.0, "conformal.histogram_bin_width must be > 0");

  auto& ro = c.rollout;
  const auto mode = r.get<std::string>("experiment.mode", "robust");
  try {
    ro.mode = runtime::mode_from_string(mode);
  } catch (const std::invalid_argument& e) {
    r.errors.push_back(std::string("experiment.mode: ") + e.what());
  }
  ro.duration = r.get("experiment.duration", 30.0);
  ro.delta = r.get("control.delta", 0.35);
  ro.gamma = r.get("control.gamma", 1.0);
  ro.u_max = r.get("control.u_max", 1.0);
  ro.eta = r.get("control.eta", 1.0);
  ro.dt = r.get("control.dt", 0.05);
  ro.steps = r.get<std::size_t>("control.steps", 0);
  ro.beta_offset = r.get("control.beta_offset", 0.0);
  ro.plant_substeps = r.get<std::size_t>("control.plant_substeps", 10);
  ro.linearize_socp = r.get("control.linearize_socp", false);
  ro.nominal.gain = r.get("control.gain", 1.0);
  ro.nominal.capture_radius = r.get("control.capture_radius", 0.3);
  r.require(ro.duration > 0.0, "experiment.duration must be > 0");
  r.require(ro.delta > 0.0, "control.delta must be > 0");
  r.require(ro.gamma > 0.0, "control.gamma must be > 0");
  r.require(ro.u_max > 0.0, "control.u_max must be > 0");
  r.require(ro.eta > 0.0 && ro.eta <= 1.0, "control.eta must lie in (0, 1]");
  r.require(ro.dt > 0.0, "control.dt must be > 0");
  r.require(ro.beta_offset >= 0.0, "control.beta_offset must be >= 0");
  r.require(ro.plant_substeps >= 4, "control.plant_substeps must be >= 4 (plant dt <= interval / 4)");
  r.require(ro.nominal.gain > 0.0, "control.gain must be > 0");
  r.require(ro.nominal.capture_radius >= 0.0, "control.capture_radius must be >= 0");

  c.n_traces = r.get<std::size_t>("experiment.n_traces", 100);
  c.seed = r.get<std::uint64_t>("experiment.seed", 0);
  c.exclude_infeasible = r.get("experiment.exclude_infeasible", false);
  r.require(c.n_traces >= 1, "experiment.n_traces must be >= 1");

  c.dataset_path = r.path("artifacts.dataset", true);
  c.model_path = r.path("artifacts.model", true);
  c.lipschitz_path = r.path("artifacts.lipschitz", true);
  c.calibration_path = r.path("artifacts.calibration", true);

  if (!r.errors.empty()) throw ConfigError(r.errors);
  return c;
}

world::Environment RunConfig::environment() const {
  if (environment_path) return world::load_environment(*environment_path);
  return world::Environment::hallway_corner(hallway_width, leg_length);
}

void check_against_calibration(const RunConfig& cfg, double eps_prime) {
  std::vector<std::string> errors;
  if (cfg.rollout.mode != runtime::Mode::Discrete && !(cfg.rollout.delta > eps_prime)) {
    errors.push_back("control.delta (" + std::to_string(cfg.rollout.delta) +
                     ") must exceed the calibrated bound eps' (" + std::to_string(eps_prime) + ")");
  }
  if (!errors.empty()) throw ConfigError(errors);
}

}  // namespace certiguard::config
