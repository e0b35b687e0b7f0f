#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "certiguard/conformal.hpp"
#include "certiguard/parallel.hpp"
#include "certiguard/rng.hpp"
#include "certiguard/world.hpp"

namespace certiguard::perception {

// ---------------------------------------------------------------------------
// Data

struct Sample {
  world::VehicleState state;
  world::Scan scan;
};

struct DataSet {
  std::vector<Sample> pairs;
  std::uint64_t seed = 0;
  world::NoiseModel noise;
};

/// Proposes a state, possibly outside the workspace.
using StateSampler = std::function<world::VehicleState(Rng&)>;

/// Uniform positions in `region`; heading fixed or uniform on (-pi, pi].
StateSampler uniform_sampler(const conformal::Box& region,
                             std::optional<double> fixed_heading = std::nullopt);

class SamplerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `count` pairs; pair i uses stream derive_seed(seed, i). Proposals outside
/// env.workspace are redrawn, and a SamplerError is thrown when one pair
/// needs more than 100 proposals.
DataSet generate_dataset(const world::Environment& env, const world::NoiseModel& noise,
                         const StateSampler& sampler, std::size_t count, std::uint64_t seed,
                         std::size_t jobs = 1);

/// CSV with header p_x,p_y,heading,r0..r63.
void write_dataset_csv(std::ostream& os, const DataSet& data);
DataSet read_dataset_csv(std::istream& is);

// ---------------------------------------------------------------------------
// Perception maps

/// q-hat: scan to state estimate. Estimates are clamped to a box.
class PerceptionMap {
 public:
  virtual ~PerceptionMap() = default;

  world::VehicleState estimate(const world::Scan& scan) const;
  Eigen::VectorXd estimate_position(const world::Scan& scan) const {
    return estimate(scan).position();
  }

  virtual std::string kind() const = 0;
  /// Model metadata; never includes the fitted parameters.
  virtual nlohmann::json descriptor() const = 0;
  /// Full persisted form, readable by load_perception_map.
  virtual nlohmann::json to_json() const = 0;

  const conformal::Box& clamp_box() const { return clamp_box_; }

 protected:
  explicit PerceptionMap(conformal::Box clamp_box) : clamp_box_(std::move(clamp_box)) {}
  virtual world::VehicleState raw_estimate(const world::Scan& scan) const = 0;

 private:
  conformal::Box clamp_box_;
};

/// Default clamp region: the workspace grown by 20%.
conformal::Box default_clamp_box(const world::Environment& env);

/// Nadaraya-Watson regression of position on the scan with a Gaussian kernel.
/// The heading of the estimate is the sensor heading carried by the scan.
class KernelRegressor final : public PerceptionMap {
 public:
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  KernelRegressor(RowMatrix scans, Eigen::MatrixX2d positions, double bandwidth,
                  conformal::Box clamp_box);

  std::string kind() const override { return "kernel"; }
  nlohmann::json descriptor() const override;
  nlohmann::json to_json() const override;

  double bandwidth() const { return bandwidth_; }
  std::size_t size() const { return static_cast<std::size_t>(scans_.rows()); }

 protected:
  world::VehicleState raw_estimate(const world::Scan& scan) const override;

 private:
  RowMatrix scans_;
  Eigen::VectorXd sq_norms_;
  Eigen::MatrixX2d positions_;
  double bandwidth_;
};

std::unique_ptr<KernelRegressor> fit_kernel_regressor(const DataSet& train, double bandwidth,
                                                      conformal::Box clamp_box);

// A plain fully connected network with tanh hidden units and a linear
// output layer.
struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct Network {
  std::vector<Layer> layers;

  static Network random(const std::vector<std::size_t>& widths, Rng& rng);

  std::vector<std::size_t> widths() const;
  std::size_t num_params() const;
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& p);

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  /// Mean over columns of |forward(x) - y|^2. Inputs are stored one per column.
  double loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const;
  /// Gradient of loss() with respect to params(), by backpropagation.
  Eigen::VectorXd loss_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MlpOptions {
  std::vector<std::size_t> widths{64, 32, 16, 3};
  std::size_t epochs = 200;
  double step_size = 1e-3;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
};

/// Affine standardization applied to network inputs and outputs.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  static Standardizer fit(const Eigen::MatrixXd& columns);
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
    return (v - mean).cwiseQuotient(scale);
  }
  Eigen::VectorXd invert(const Eigen::VectorXd& v) const {
    return v.cwiseProduct(scale) + mean;
  }
};

/// Regresses (p_x, p_y) and, when the output width is 3, the heading.
class Mlp final : public PerceptionMap {
 public:
  Mlp(Network net, Standardizer in, Standardizer out, conformal::Box clamp_box,
      std::vector<double> loss_history = {});

  std::string kind() const override { return "mlp"; }
  nlohmann::json descriptor() const override;
  nlohmann::json to_json() const override;

  const Network& network() const { return net_; }
  /// Training loss (standardized targets) after each epoch.
  const std::vector<double>& loss_history() const { return loss_history_; }

 protected:
  world::VehicleState raw_estimate(const world::Scan& scan) const override;

 private:
  Network net_;
  Standardizer in_;
  Standardizer out_;
  std::vector<double> loss_history_;
};

/// Mini-batch Adam on the squared error. Throws TrainingError when the loss
/// stops being finite.
std::unique_ptr<Mlp> fit_mlp(const DataSet& train, const MlpOptions& opts,
                             conformal::Box clamp_box);

struct ScanMatcherOptions {
  double coarse_step = 0.075;
  /// Angular resolution of the precomputed coarse range table.
  std::size_t angle_bins = 720;
  std::size_t candidates = 5;
  /// Minimum distance between coarse seeds.
  double candidate_separation = 0.3;
  double initial_step = 0.08;
  double final_step = 1e-3;
  /// Weight on residuals where the observed range is shorter than predicted.
  double negative_weight = 100.0;
  /// Softer weight for the coarse grid, which sits up to half a cell off.
  double coarse_negative_weight = 10.0;
  /// Softmin refinement: a (2K+1)^2 grid of half-width `posterior_half_width`
  /// around the best match, weighted by exp(-(cost - best) / temperature).
  /// K = 0 returns the best match itself.
  std::size_t posterior_steps = 6;
  double posterior_half_width = 0.45;
  double temperature = 1.5;
};

/// Model-based localization against the known walls.
///
/// The cost of a position p is sum_k rho(y_k - yhat_k(p)), where yhat is the
/// noise-free sweep at the scan heading, rho(r) = r for r >= 0 and
/// negative_weight * |r| otherwise. A coarse grid, scored from a table of
/// noise-free ranges binned by world angle, seeds compass searches; the
/// estimate is the softmin-weighted mean of a small grid around the best
/// match.
class ScanMatcher final : public PerceptionMap {
 public:
  ScanMatcher(world::Environment env, conformal::Box search_box, ScanMatcherOptions opts = {});

  std::string kind() const override { return "matcher"; }
  nlohmann::json descriptor() const override;
  nlohmann::json to_json() const override;

  double cost(const Eigen::Vector2d& p, const world::Scan& scan) const;
  const ScanMatcherOptions& options() const { return opts_; }

 protected:
  world::VehicleState raw_estimate(const world::Scan& scan) const override;

 private:
  double cost_on(const Eigen::Vector2d& p, const world::Scan& scan,
                 std::span<const Eigen::Vector2d> dirs, std::span<const std::size_t> rays,
                 double negative_weight) const;

  world::Environment env_;
  ScanMatcherOptions opts_;
  std::vector<Eigen::Vector2d> grid_;
  std::shared_ptr<const std::vector<float>> table_;  // grid point major, angle bin minor
  std::vector<std::size_t> all_rays_;
};

/// Picks the softmin temperature from `candidates` by least mean squared
/// position error on `train`.
std::unique_ptr<ScanMatcher> fit_scan_matcher(const DataSet& train, const world::Environment& env,
                                              conformal::Box search_box, ScanMatcherOptions opts,
                                              const std::vector<double>& candidates,
                                              std::size_t jobs = 1);

std::unique_ptr<PerceptionMap> load_perception_map(const nlohmann::json& j);
std::unique_ptr<PerceptionMap> load_perception_map(const std::string& path);

// ---------------------------------------------------------------------------
// Lipschitz estimation

struct LipschitzEstimate {
  double value = 0.0;       // max_ratio * safety_factor
  double max_ratio = 0.0;
  std::size_t samples_used = 0;  // non-degenerate pairs
  double radius = 0.0;
  double safety_factor = 1.2;
  /// Empirical `quantile_level` quantile of the sampled ratios. Not a valid
  /// Lipschitz constant; a robust summary for maps with rare jumps.
  double quantile_level = 0.99;
  double quantile_ratio = 0.0;
};

/// f(x, pair_seed): the map; both points of a pair get the same pair_seed,
/// so any internal randomness is held fixed across the pair.
using PairedMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&, std::uint64_t)>;

/// Max of |f(a) - f(b)| / |a - b| over sampled pairs, times `safety_factor`.
///
/// Even-indexed pairs are two independent uniform points; odd-indexed pairs
/// perturb a uniform point within `radius`, redrawing perturbations that
/// leave the domain (after 64 misses the point is clamped). Pair i is
/// drawn from its own stream, so a larger num_pairs only adds pairs.
LipschitzEstimate estimate_lipschitz(const PairedMap& f, const conformal::Box& domain,
                                     std::size_t num_pairs, std::uint64_t seed, double radius,
                                     double safety_factor = 1.2, std::size_t jobs = 1,
                                     double quantile_level = 0.99);

LipschitzEstimate estimate_lipschitz(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
    const conformal::Box& domain, std::size_t num_pairs, std::uint64_t seed, double radius,
    double safety_factor = 1.2);

nlohmann::json to_json(const LipschitzEstimate& e);
LipschitzEstimate lipschitz_from_json(const nlohmann::json& j);

}  // namespace certiguard::perception
