#pragma once

// Simulated plant: corridor geometry, single-integrator vehicle, planar
// LiDAR and its additive noise.

#include <Eigen/Core>
#include <array>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "certiguard/conformal.hpp"
#include "certiguard/rng.hpp"

namespace certiguard::world {

inline constexpr std::size_t kNumRays = 64;
inline constexpr double kFieldOfViewHalf = 3.0 * M_PI / 4.0;

/// Wraps an angle into (-pi, pi].
double normalize_angle(double a);

struct VehicleState {
  double px = 0.0;
  double py = 0.0;
  double heading = 0.0;

  Eigen::Vector2d position() const { return {px, py}; }
  static VehicleState at(const Eigen::Vector2d& p, double heading) {
    return {p.x(), p.y(), normalize_angle(heading)};
  }
};

struct ControlInput {
  double ux = 0.0;
  double uy = 0.0;

  Eigen::Vector2d vec() const { return {ux, uy}; }
  static ControlInput from(const Eigen::Vector2d& u) { return {u.x(), u.y()}; }
  double norm() const { return vec().norm(); }
};

struct Segment {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
};

/// Walls plus the operating region and the scenario used by rollouts.
struct Environment {
  std::vector<Segment> walls;
  conformal::Box workspace;  // 2-D box: [xmin, xmax] x [ymin, ymax]
  Segment start_line;
  std::vector<Eigen::Vector2d> waypoints;
  double max_range = 10.0;

  /// L-shaped corridor: a vertical leg of `leg_length` followed by a square
  /// corner and a horizontal leg of `leg_length` heading +x. The far end of
  /// the horizontal leg is open; the start end of the vertical leg is closed.
  static Environment hallway_corner(double width = 1.5, double leg_length = 3.0);

  /// Bounding box of all wall endpoints.
  conformal::Box wall_bounds() const;
};

nlohmann::json to_json(const Environment& env);
Environment environment_from_json(const nlohmann::json& j);
Environment load_environment(const std::string& path);

/// Fixed ray offsets, uniform on [-3pi/4, 3pi/4] relative to heading.
const std::array<double, kNumRays>& scan_angles();

/// One LiDAR sweep. `heading` is the sensor orientation the sweep was taken
/// at; the vehicle derives it from its own last command, so it is known to
/// the controller without measurement.
struct Scan {
  std::array<double, kNumRays> ranges{};
  double heading = 0.0;

  Eigen::Map<const Eigen::VectorXd> vec() const {
    return Eigen::Map<const Eigen::VectorXd>(ranges.data(), kNumRays);
  }
};

void write_scan_csv_row(std::ostream& os, const Scan& scan);

enum class NoiseConvention { Rate, Scale };

/// Additive per-ray exponential noise. Under the Rate convention lambda is
/// the rate (mean 1/lambda); under Scale it is the mean.
struct NoiseModel {
  double lambda = 2.0 / 3.0;
  NoiseConvention convention = NoiseConvention::Rate;

  NoiseModel() = default;
  explicit NoiseModel(double l, NoiseConvention c = NoiseConvention::Rate);

  double rate() const { return convention == NoiseConvention::Rate ? lambda : 1.0 / lambda; }
  double mean() const { return 1.0 / rate(); }
  double sample(Rng& rng) const { return rng.exponential(rate()); }
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ranges from `origin` along unit `directions`, capped at env.max_range.
void cast_ranges(const Environment& env, const Eigen::Vector2d& origin,
                 std::span<const Eigen::Vector2d> directions, std::span<double> out);

/// Unit ray directions for a sweep taken at `heading`.
std::array<Eigen::Vector2d, kNumRays> ray_directions(double heading);

/// Noise-free sweep. Throws GeometryError when the position lies outside the
/// bounding box of the walls.
Scan ray_cast(const VehicleState& state, const Environment& env);

/// Noise-free sweep plus independent per-ray noise, re-capped at max range.
Scan sense(const VehicleState& state, const Environment& env, const NoiseModel& noise,
           Rng& rng);

/// Adds noise to an existing noise-free sweep.
Scan corrupt(const Scan& truth, const Environment& env, const NoiseModel& noise, Rng& rng);

/// Control-affine dynamics xdot = f(x) + g(x) u with |F(x,u)| <= f_bar.
struct Dynamics {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> f;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> g;
  double f_bar = 0.0;
  std::size_t state_dim = 0;
  std::size_t input_dim = 0;

  Eigen::VectorXd flow(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
    return f(x) + g(x) * u;
  }

  /// The vehicle: f = 0, g = identity on position, f_bar = sqrt(2) * u_max.
  static Dynamics vehicle(double u_max = 1.0);
};

/// Exact flow of the single integrator over dt; heading follows the command
/// and is retained when the command is zero.
VehicleState step_continuous(const VehicleState& state, const ControlInput& u, double dt);

/// One step of x_{t+1} = x_t + dt * u_t. Same map as step_continuous; kept
/// separate so the discrete runtime's f_d(x) = x, g_d(x) = dt * I is explicit.
VehicleState step_discrete(const VehicleState& state, const ControlInput& u, double dt);

}  // namespace certiguard::world
