#include <fstream>

#include "certiguard/perception.hpp"

namespace certiguard::perception {

namespace {

conformal::Box box_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw std::invalid_argument("model: clamp_box must be [xmin, xmax, ymin, ymax]");
  return {{v[0], v[2]}, {v[1], v[3]}};
}

Eigen::VectorXd vec_from(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::unique_ptr<PerceptionMap> load_kernel(const nlohmann::json& j) {
  const auto& scans = j.at("scans");
  const auto& positions = j.at("positions");
  const auto n = static_cast<Eigen::Index>(scans.size());
  KernelRegressor::RowMatrix y(n, static_cast<Eigen::Index>(world::kNumRays));
  Eigen::MatrixX2d x(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto row = scans[static_cast<std::size_t>(i)].get<std::vector<double>>();
    if (row.size() != world::kNumRays) throw std::invalid_argument("kernel model: scan rows must have 64 ranges");
    for (Eigen::Index k = 0; k < y.cols(); ++k) y(i, k) = row[static_cast<std::size_t>(k)];
    const auto p = positions.at(static_cast<std::size_t>(i)).get<std::vector<double>>();
    if (p.size() != 2) throw std::invalid_argument("kernel model: positions must be [x, y]");
    x(i, 0) = p[0];
    x(i, 1) = p[1];
  }
  return std::make_unique<KernelRegressor>(std::move(y), std::move(x), j.at("bandwidth").get<double>(),
                                           box_from(j.at("clamp_box")));
}

std::unique_ptr<PerceptionMap> load_mlp(const nlohmann::json& j) {
  Network net;
  for (const auto& lj : j.at("layers")) {
    const auto& rows = lj.at("weight");
    Layer l;
    l.bias = vec_from(lj.at("bias"));
    const auto out = static_cast<Eigen::Index>(rows.size());
    const auto in = out ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    l.weight.resize(out, in);
    for (Eigen::Index r = 0; r < out; ++r) {
      const auto row = rows[static_cast<std::size_t>(r)].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(row.size()) != in) throw std::invalid_argument("mlp model: ragged weight matrix");
      for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = row[static_cast<std::size_t>(c)];
    }
    if (l.bias.size() != out) throw std::invalid_argument("mlp model: bias length mismatch");
    if (!net.layers.empty() && net.layers.back().weight.rows() != in) {
      throw std::invalid_argument("mlp model: layer shapes do not chain");
    }
    net.layers.push_back(std::move(l));
  }
  Standardizer in{vec_from(j.at("input_mean")), vec_from(j.at("input_scale"))};
  Standardizer out{vec_from(j.at("output_mean")), vec_from(j.at("output_scale"))};
  return std::make_unique<Mlp>(std::move(net), std::move(in), std::move(out), box_from(j.at("clamp_box")),
                               j.value("loss_history", std::vector<double>{}));
}

std::unique_ptr<PerceptionMap> load_matcher(const nlohmann::json& j) {
  ScanMatcherOptions o;
  o.coarse_step = j.value("coarse_step", o.coarse_step);
  o.angle_bins = j.value("angle_bins", o.angle_bins);
  o.candidates = j.value("candidates", o.candidates);
  o.candidate_separation = j.value("candidate_separation", o.candidate_separation);
  o.initial_step = j.value("initial_step", o.initial_step);
  o.final_step = j.value("final_step", o.final_step);
  o.negative_weight = j.value("negative_weight", o.negative_weight);
  o.coarse_negative_weight = j.value("coarse_negative_weight", o.coarse_negative_weight);
  o.posterior_steps = j.value("posterior_steps", o.posterior_steps);
  o.posterior_half_width = j.value("posterior_half_width", o.posterior_half_width);
  o.temperature = j.value("temperature", o.temperature);
  return std::make_unique<ScanMatcher>(world::environment_from_json(j.at("environment")),
                                       box_from(j.at("clamp_box")), o);
}

}  // namespace

std::unique_ptr<PerceptionMap> load_perception_map(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "kernel") return load_kernel(j);
  if (kind == "mlp") return load_mlp(j);
  if (kind == "matcher") return load_matcher(j);
  throw std::invalid_argument("unknown perception model kind: " + kind);
}

std::unique_ptr<PerceptionMap> load_perception_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  return load_perception_map(nlohmann::json::parse(in));
}

}  // namespace certiguard::perception
