#include <cmath>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "certiguard/perception.hpp"

namespace certiguard::perception {

StateSampler uniform_sampler(const conformal::Box& region, std::optional<double> fixed_heading) {
  if (region.dim() != 2) throw std::invalid_argument("uniform_sampler: region must be 2-D");
  return [region, fixed_heading](Rng& rng) {
    const Eigen::VectorXd p = region.sample(rng);
    const double heading = fixed_heading ? *fixed_heading : rng.uniform(-M_PI, M_PI);
    return world::VehicleState::at(p, heading);
  };
}

DataSet generate_dataset(const world::Environment& env, const world::NoiseModel& noise,
                         const StateSampler& sampler, std::size_t count, std::uint64_t seed,
                         std::size_t jobs) {
  if (count == 0) throw std::invalid_argument("generate_dataset: count must be >= 1");
  constexpr int kMaxProposals = 100;
  DataSet out;
  out.seed = seed;
  out.noise = noise;
  out.pairs.resize(count);
  parallel_for(count, jobs, [&](std::size_t i) {
    Rng rng(derive_seed(seed, i));
    for (int attempt = 0; attempt < kMaxProposals; ++attempt) {
      const auto state = sampler(rng);
      if (!env.workspace.contains(state.position())) continue;
      out.pairs[i] = {state, world::sense(state, env, noise, rng)};
      return;
    }
    throw SamplerError("generate_dataset: sampler produced " + std::to_string(kMaxProposals) +
                       " consecutive states outside the workspace");
  });
  return out;
}

void write_dataset_csv(std::ostream& os, const DataSet& data) {
  os << "p_x,p_y,heading";
  for (std::size_t k = 0; k < world::kNumRays; ++k) os << ",r" << k;
  os << '\n' << std::setprecision(17);
  for (const auto& s : data.pairs) {
    os << s.state.px << ',' << s.state.py << ',' << s.state.heading;
    for (double r : s.scan.ranges) os << ',' << r;
    os << '\n';
  }
}

DataSet read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("p_x,p_y,heading", 0) != 0) {
    throw std::runtime_error("dataset csv: missing p_x,p_y,heading header");
  }
  DataSet data;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<double> v;
    v.reserve(3 + world::kNumRays);
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 3 + world::kNumRays) {
      throw std::runtime_error("dataset csv: row " + std::to_string(row) + " has " +
                               std::to_string(v.size()) + " fields");
    }
    Sample s;
    s.state = {v[0], v[1], v[2]};
    s.scan.heading = v[2];
    for (std::size_t k = 0; k < world::kNumRays; ++k) s.scan.ranges[k] = v[3 + k];
    data.pairs.push_back(s);
  }
  if (data.pairs.empty()) throw std::runtime_error("dataset csv: no rows");
  return data;
}

world::VehicleState PerceptionMap::estimate(const world::Scan& scan) const {
  auto s = raw_estimate(scan);
  const Eigen::VectorXd p = clamp_box_.clamp(s.position());
  return {p[0], p[1], world::normalize_angle(s.heading)};
}

conformal::Box default_clamp_box(const world::Environment& env) {
  return env.workspace.inflated(0.2);
}

}  // namespace certiguard::perception
