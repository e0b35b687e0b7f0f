#pragma once

// Closed-loop rollouts: the self-triggered sampled-data law, the per-step
// discrete-time law and the nominal waypoint controller.

#include <Eigen/Core>
#include <cstdint>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "certiguard/barrier.hpp"
#include "certiguard/perception.hpp"
#include "certiguard/safety_filter.hpp"
#include "certiguard/world.hpp"

namespace certiguard::runtime {

class InvalidSchedule : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Constant update interval (delta - error_bound) / f_bar.
struct TriggerSchedule {
  double delta = 0.0;
  double error_bound = 0.0;
  double f_bar = 0.0;
  double interval = 0.0;

  /// Throws InvalidSchedule unless delta > error_bound and f_bar > 0.
  static TriggerSchedule make(double delta, double error_bound, double f_bar);
};

double next_trigger(double t_i, const TriggerSchedule& schedule);

/// Per-interval failure probability 1 - target^(1/m).
double alpha_for_horizon(double target_prob, std::size_t m);

struct NominalController {
  std::vector<Eigen::Vector2d> waypoints;
  double gain = 1.0;
  double capture_radius = 0.3;
  double u_max = 1.0;
};

/// Proportional pursuit of waypoints[index], saturated to the input box.
/// `index` advances past every non-final waypoint within the capture radius.
world::ControlInput nominal_control(const Eigen::Vector2d& estimate, const NominalController& ctl,
                                    std::size_t& index);

enum class Mode { Robust, Vanilla, Discrete };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);

struct RolloutConfig {
  Mode mode = Mode::Robust;
  double duration = 30.0;          // continuous horizon T (s)
  std::size_t steps = 0;           // discrete horizon; 0 means duration / dt
  double delta = 0.35;             // Delta
  double eps_prime = 0.0;          // calibrated combined error bound
  double gamma = 1.0;              // class-K gain
  double u_max = 1.0;
  std::size_t plant_substeps = 10; // plant steps per trigger interval
  double dt = 0.05;                // discrete step
  double eta = 1.0;
  double beta_offset = 0.0;
  bool linearize_socp = false;
  /// Replaces the mode's own margins when set; used to test margin plumbing.
  std::optional<barrier::Margins> margins_override;
  NominalController nominal;
  /// Fixed initial state; otherwise uniform on the start line facing +y.
  std::optional<world::VehicleState> initial_state;
};

/// Read-only inputs shared by every rollout.
struct RolloutContext {
  const world::Environment* env = nullptr;
  world::NoiseModel noise;
  const perception::PerceptionMap* perception = nullptr;
  barrier::BarrierSet barriers = barrier::BarrierSet::hallway();
};

struct Row {
  double t = 0.0;
  world::VehicleState x;
  Eigen::Vector2d xhat = Eigen::Vector2d::Zero();
  world::ControlInput u;
  double h = 0.0;
  bool triggered = false;
  bool infeasible = false;
};

/// One hold interval [t_i, t_{i+1}).
struct Window {
  double t_start = 0.0;
  double t_end = 0.0;
  double estimate_error = 0.0;      // |x(t_i) - xhat(t_i)|
  double max_drift = 0.0;           // max_t |x(t) - xhat(t_i)|
  double max_displacement_excess = -1.0;  // max_t |x(t) - x(t_i)| - f_bar (t - t_i)
  double filter_slack = 0.0;        // constraint slack at the estimate
  bool infeasible = false;
};

struct TrajectoryRecord {
  std::uint64_t seed = 0;
  Mode mode = Mode::Robust;
  barrier::Margins margins;
  double interval = 0.0;
  std::vector<Row> rows;
  std::vector<Window> windows;
  bool safe = true;
  double min_h = 0.0;
  std::size_t num_triggers = 0;
  std::size_t num_infeasible = 0;
  bool failed = false;
  std::string failure;
};

/// Margins the given mode applies, before any override.
barrier::Margins margins_for(const RolloutConfig& cfg, const barrier::BarrierSet& set);

TrajectoryRecord run_continuous(const RolloutContext& ctx, const RolloutConfig& cfg,
                                std::uint64_t seed);
TrajectoryRecord run_discrete(const RolloutContext& ctx, const RolloutConfig& cfg,
                              std::uint64_t seed);
/// Dispatches on cfg.mode.
TrajectoryRecord run_rollout(const RolloutContext& ctx, const RolloutConfig& cfg,
                             std::uint64_t seed);

void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& rec);
nlohmann::json summary_json(const TrajectoryRecord& rec);

}  // namespace certiguard::runtime
