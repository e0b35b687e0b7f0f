#include "certiguard/world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>

namespace certiguard::world {

double normalize_angle(double a) {
  a = std::remainder(a, 2.0 * M_PI);  // [-pi, pi]
  if (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

Environment Environment::hallway_corner(double width, double leg_length) {
  if (!(width > 0.0) || !(leg_length > 0.0)) {
    throw std::invalid_argument("hallway_corner: width and leg length must be > 0");
  }
  const double top = leg_length + width;
  const double far = width + leg_length;
  Environment env;
  env.walls = {
      {{0.0, 0.0}, {width, 0.0}},          // closed start end
      {{0.0, 0.0}, {0.0, top}},            // left wall
      {{0.0, top}, {far, top}},            // outer wall of the corner
      {{width, 0.0}, {width, leg_length}}, // right wall of the vertical leg
      {{width, leg_length}, {far, leg_length}},  // inner wall of the horizontal leg
  };
  env.workspace = {{0.0, 0.0}, {width, top}};
  env.start_line = {{0.2 * width, 0.3}, {0.8 * width, 0.3}};
  env.waypoints = {{0.5 * width, 0.5 * leg_length}, {width + 0.5 * leg_length, leg_length + 0.5 * width}};
  return env;
}

conformal::Box Environment::wall_bounds() const {
  conformal::Box b{{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()},
                   {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()}};
  for (const auto& w : walls) {
    for (const auto& p : {w.a, w.b}) {
      b.lo[0] = std::min(b.lo[0], p.x());
      b.lo[1] = std::min(b.lo[1], p.y());
      b.hi[0] = std::max(b.hi[0], p.x());
      b.hi[1] = std::max(b.hi[1], p.y());
    }
  }
  return b;
}

namespace {

std::vector<double> pt(const Eigen::Vector2d& p) { return {p.x(), p.y()}; }

Eigen::Vector2d vec2(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 2) throw std::invalid_argument("environment: expected [x, y]");
  return {v[0], v[1]};
}

Segment seg(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 4) throw std::invalid_argument("environment: expected [x1, y1, x2, y2]");
  return {{v[0], v[1]}, {v[2], v[3]}};
}

}  // namespace

nlohmann::json to_json(const Environment& env) {
  nlohmann::json walls = nlohmann::json::array();
  for (const auto& w : env.walls) walls.push_back({w.a.x(), w.a.y(), w.b.x(), w.b.y()});
  nlohmann::json wps = nlohmann::json::array();
  for (const auto& w : env.waypoints) wps.push_back(pt(w));
  return {{"walls", walls},
          {"workspace", {env.workspace.lo[0], env.workspace.hi[0], env.workspace.lo[1], env.workspace.hi[1]}},
          {"start_line", {env.start_line.a.x(), env.start_line.a.y(), env.start_line.b.x(), env.start_line.b.y()}},
          {"waypoints", wps},
          {"max_range", env.max_range}};
}

Environment environment_from_json(const nlohmann::json& j) {
  Environment env;
  for (const auto& w : j.at("walls")) env.walls.push_back(seg(w));
  if (env.walls.empty()) throw std::invalid_argument("environment: no walls");
  const auto ws = j.at("workspace").get<std::vector<double>>();
  if (ws.size() != 4 || !(ws[1] > ws[0]) || !(ws[3] > ws[2])) {
    throw std::invalid_argument("environment: workspace must be [xmin, xmax, ymin, ymax]");
  }
  env.workspace = {{ws[0], ws[2]}, {ws[1], ws[3]}};
  env.start_line = seg(j.at("start_line"));
  for (const auto& w : j.at("waypoints")) env.waypoints.push_back(vec2(w));
  env.max_range = j.value("max_range", 10.0);
  if (!(env.max_range > 0.0)) throw std::invalid_argument("environment: max_range must be > 0");
  return env;
}

Environment load_environment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open environment file: " + path);
  return environment_from_json(nlohmann::json::parse(in));
}

const std::array<double, kNumRays>& scan_angles() {
  static const std::array<double, kNumRays> angles = [] {
    std::array<double, kNumRays> a{};
    for (std::size_t k = 0; k < kNumRays; ++k) {
      a[k] = -kFieldOfViewHalf + 2.0 * kFieldOfViewHalf * static_cast<double>(k) /
                                     static_cast<double>(kNumRays - 1);
    }
    return a;
  }();
  return angles;
}

void write_scan_csv_row(std::ostream& os, const Scan& scan) {
  os << std::setprecision(17);
  for (std::size_t k = 0; k < kNumRays; ++k) os << (k ? "," : "") << scan.ranges[k];
  os << '\n';
}

NoiseModel::NoiseModel(double l, NoiseConvention c) : lambda(l), convention(c) {
  if (!(l > 0.0)) throw std::invalid_argument("NoiseModel: lambda must be > 0");
}

void cast_ranges(const Environment& env, const Eigen::Vector2d& origin,
                 std::span<const Eigen::Vector2d> directions, std::span<double> out) {
  const double cap = env.max_range;
  std::fill(out.begin(), out.end(), cap);
  for (const auto& w : env.walls) {
    const double ex = w.b.x() - w.a.x();
    const double ey = w.b.y() - w.a.y();
    const double wx = w.a.x() - origin.x();
    const double wy = w.a.y() - origin.y();
    const double we = wx * ey - wy * ex;
    for (std::size_t k = 0; k < directions.size(); ++k) {
      const double dx = directions[k].x();
      const double dy = directions[k].y();
      // origin + t d = a + s e
      const double den = dx * ey - dy * ex;
      if (std::abs(den) < 1e-14) continue;
      const double inv = 1.0 / den;
      const double t = we * inv;
      if (t < 0.0 || t >= out[k]) continue;
      const double s = (wx * dy - wy * dx) * inv;
      if (s < 0.0 || s > 1.0) continue;
      out[k] = t;
    }
  }
}

std::array<Eigen::Vector2d, kNumRays> ray_directions(double heading) {
  std::array<Eigen::Vector2d, kNumRays> dirs;
  const auto& angles = scan_angles();
  for (std::size_t k = 0; k < kNumRays; ++k) {
    const double a = heading + angles[k];
    dirs[k] = {std::cos(a), std::sin(a)};
  }
  return dirs;
}

Scan ray_cast(const VehicleState& state, const Environment& env) {
  const auto bounds = env.wall_bounds();
  if (!bounds.contains(state.position(), 1e-9)) {
    throw GeometryError("ray_cast: position outside the wall bounds");
  }
  Scan scan;
  scan.heading = state.heading;
  const auto dirs = ray_directions(state.heading);
  cast_ranges(env, state.position(), dirs, scan.ranges);
  return scan;
}

Scan corrupt(const Scan& truth, const Environment& env, const NoiseModel& noise, Rng& rng) {
  Scan out = truth;
  for (auto& r : out.ranges) r = std::min(r + noise.sample(rng), env.max_range);
  return out;
}

Scan sense(const VehicleState& state, const Environment& env, const NoiseModel& noise,
           Rng& rng) {
  return corrupt(ray_cast(state, env), env, noise, rng);
}

Dynamics Dynamics::vehicle(double u_max) {
  Dynamics d;
  d.state_dim = 2;
  d.input_dim = 2;
  d.f = [](const Eigen::VectorXd& x) { return Eigen::VectorXd::Zero(x.size()); };
  d.g = [](const Eigen::VectorXd& x) { return Eigen::MatrixXd::Identity(x.size(), 2); };
  d.f_bar = std::sqrt(2.0) * u_max;
  return d;
}

VehicleState step_continuous(const VehicleState& state, const ControlInput& u, double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("step: dt must be > 0");
  VehicleState next = state;
  next.px += u.ux * dt;
  next.py += u.uy * dt;
  if (u.ux != 0.0 || u.uy != 0.0) next.heading = normalize_angle(std::atan2(u.uy, u.ux));
  return next;
}

VehicleState step_discrete(const VehicleState& state, const ControlInput& u, double dt) {
  return step_continuous(state, u, dt);
}

}  // namespace certiguard::world
