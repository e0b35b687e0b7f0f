#include "certiguard/safety_filter.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace certiguard::barrier {

InfeasibleError::InfeasibleError(std::size_t most_violated, Eigen::VectorXd safest,
                                 double best_slack)
    : std::runtime_error("safety filter infeasible: constraint " + std::to_string(most_violated) +
                         " has best achievable slack " + std::to_string(best_slack)),
      most_violated_(most_violated),
      safest_(std::move(safest)),
      best_slack_(best_slack) {}

namespace {

// Log-barrier interior point method over z = (u, [t], [s]).
//   linear:  a . z + c > 0
//   cone:    t^2 - |u|^2 > 0 (and t > 0)
// Objective is either 0.5 |u - u_nom|^2 or -s.
struct BarrierProgram {
  long m = 0;              // input dimension
  long dim = 0;            // total variables
  long t_index = -1;       // epigraph variable, -1 if absent
  long s_index = -1;       // phase-one slack variable, -1 if absent
  std::vector<Eigen::VectorXd> lin_a;
  std::vector<double> lin_c;
  Eigen::VectorXd u_nom;   // only for phase two

  std::size_t num_constraints() const { return lin_a.size() + (t_index >= 0 ? 1 : 0); }

  bool strictly_feasible(const Eigen::VectorXd& z) const {
    for (std::size_t j = 0; j < lin_a.size(); ++j) {
      if (!(lin_a[j].dot(z) + lin_c[j] > 0.0)) return false;
    }
    if (t_index >= 0) {
      const double t = z[t_index];
      if (!(t > 0.0) || !(t * t - z.head(m).squaredNorm() > 0.0)) return false;
    }
    return true;
  }

  double objective(const Eigen::VectorXd& z) const {
    if (s_index >= 0) return -z[s_index];
    return 0.5 * (z.head(m) - u_nom).squaredNorm();
  }

  double phi(const Eigen::VectorXd& z, double tau) const {
    double v = tau * objective(z);
    for (std::size_t j = 0; j < lin_a.size(); ++j) v -= std::log(lin_a[j].dot(z) + lin_c[j]);
    if (t_index >= 0) {
      const double t = z[t_index];
      v -= std::log(t * t - z.head(m).squaredNorm());
    }
    return v;
  }

  void derivatives(const Eigen::VectorXd& z, double tau, Eigen::VectorXd& grad,
                   Eigen::MatrixXd& hess) const {
    grad.setZero(dim);
    hess.setZero(dim, dim);
    if (s_index >= 0) {
      grad[s_index] = -tau;
    } else {
      grad.head(m) = tau * (z.head(m) - u_nom);
      hess.topLeftCorner(m, m).diagonal().array() += tau;
    }
    for (std::size_t j = 0; j < lin_a.size(); ++j) {
      const double g = lin_a[j].dot(z) + lin_c[j];
      grad -= lin_a[j] / g;
      hess += lin_a[j] * lin_a[j].transpose() / (g * g);
    }
    if (t_index >= 0) {
      const double t = z[t_index];
      const double g = t * t - z.head(m).squaredNorm();
      Eigen::VectorXd dg = Eigen::VectorXd::Zero(dim);
      dg.head(m) = -2.0 * z.head(m);
      dg[t_index] = 2.0 * t;
      grad -= dg / g;
      hess += dg * dg.transpose() / (g * g);
      hess.topLeftCorner(m, m).diagonal().array() += 2.0 / g;
      hess(t_index, t_index) -= 2.0 / g;
    }
  }

  // Centering step: Newton with backtracking line search.
  void center(Eigen::VectorXd& z, double tau) const {
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
    for (int it = 0; it < 100; ++it) {
      derivatives(z, tau, grad, hess);
      hess.diagonal().array() += 1e-14;
      const Eigen::VectorXd dz = -hess.ldlt().solve(grad);
      const double decrement = -grad.dot(dz);
      if (!(decrement > 2e-14)) return;
      double step = 1.0;
      while (step > 1e-16 && !strictly_feasible(z + step * dz)) step *= 0.5;
      const double base = phi(z, tau);
      while (step > 1e-16 && phi(z + step * dz, tau) > base - 0.25 * step * decrement) step *= 0.5;
      if (step <= 1e-16) return;
      z += step * dz;
    }
  }

  template <class Stop>
  void solve(Eigen::VectorXd& z, Stop&& stop) const {
    const double n = static_cast<double>(num_constraints());
    double tau = 1.0;
    for (int outer = 0; outer < 80; ++outer) {
      center(z, tau);
      if (stop(z)) return;
      if (n / tau < 1e-12) return;
      tau *= 8.0;
    }
  }
};

struct PhaseOneResult {
  Eigen::VectorXd u;
  Eigen::VectorXd z;  // (u, [t]) strictly feasible when slack > 0
  double slack = 0.0;
};

bool any_norm_term(const std::vector<SocConstraint>& cs) {
  return std::any_of(cs.begin(), cs.end(), [](const auto& c) { return c.norm_weight > 0.0; });
}

PhaseOneResult phase_one(const std::vector<SocConstraint>& cs, long m, double u_max,
                         double beta, bool stop_when_feasible) {
  const bool cone = any_norm_term(cs);
  const double t_max = std::sqrt(static_cast<double>(m)) * u_max + 1.0;
  BarrierProgram p;
  p.m = m;
  p.t_index = cone ? m : -1;
  p.s_index = cone ? m + 1 : m;
  p.dim = p.s_index + 1;
  const double t0 = 0.5 * t_max;
  double s0 = std::numeric_limits<double>::infinity();
  for (const auto& c : cs) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p.dim);
    a.head(m) = c.coeff;
    if (cone) a[p.t_index] = -c.norm_weight;
    a[p.s_index] = -1.0;
    p.lin_a.push_back(a);
    p.lin_c.push_back(c.constant - beta);
    s0 = std::min(s0, c.constant - beta - (cone ? c.norm_weight * t0 : 0.0));
  }
  for (long k = 0; k < m; ++k) {
    for (double sign : {1.0, -1.0}) {
      Eigen::VectorXd a = Eigen::VectorXd::Zero(p.dim);
      a[k] = -sign;
      p.lin_a.push_back(a);
      p.lin_c.push_back(u_max);
    }
  }
  if (cone) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p.dim);
    a[p.t_index] = -1.0;
    p.lin_a.push_back(a);
    p.lin_c.push_back(t_max);
  }
  Eigen::VectorXd z = Eigen::VectorXd::Zero(p.dim);
  if (cone) z[p.t_index] = t0;
  z[p.s_index] = s0 - 1.0;

  p.solve(z, [&](const Eigen::VectorXd& zz) { return stop_when_feasible && zz[p.s_index] > 0.0; });

  PhaseOneResult r;
  r.u = z.head(m);
  r.z = z.head(cone ? m + 1 : m);
  double s = std::numeric_limits<double>::infinity();
  for (const auto& c : cs) s = std::min(s, c.slack(r.u) - beta);
  r.slack = s;
  return r;
}

}  // namespace

std::vector<SocConstraint> effective_constraints(const FilterProblem& problem) {
  std::vector<SocConstraint> cs = problem.constraints;
  if (problem.linearize_socp) {
    const double scale = std::sqrt(static_cast<double>(problem.u_nom.size())) * problem.u_max;
    for (auto& c : cs) {
      c.constant -= c.norm_weight * scale;
      c.norm_weight = 0.0;
    }
  }
  return cs;
}

Eigen::VectorXd safest_input(const FilterProblem& problem, double* best_slack) {
  const auto cs = effective_constraints(problem);
  const long m = problem.u_nom.size();
  if (cs.empty()) {
    if (best_slack) *best_slack = std::numeric_limits<double>::infinity();
    return Eigen::VectorXd::Zero(m);
  }
  const auto r = phase_one(cs, m, problem.u_max, problem.beta_offset, false);
  if (best_slack) *best_slack = r.slack;
  return r.u;
}

FilterSolution safety_filter(const FilterProblem& problem) {
  const long m = problem.u_nom.size();
  if (m == 0) throw std::invalid_argument("safety_filter: empty nominal input");
  if (!(problem.u_max > 0.0)) throw std::invalid_argument("safety_filter: u_max must be > 0");
  const auto cs = effective_constraints(problem);
  const double beta = problem.beta_offset;

  auto slack_of = [&](const Eigen::VectorXd& u) {
    double s = std::numeric_limits<double>::infinity();
    for (const auto& c : cs) s = std::min(s, c.slack(u) - beta);
    return s;
  };

  FilterSolution sol;
  const bool in_box = (problem.u_nom.array().abs() <= problem.u_max).all();
  if (in_box && (cs.empty() || slack_of(problem.u_nom) >= 0.0)) {
    sol.u = problem.u_nom;
    sol.objective = 0.0;
    sol.min_slack = cs.empty() ? std::numeric_limits<double>::infinity() : slack_of(sol.u);
    sol.nominal_feasible = true;
    return sol;
  }
  if (cs.empty()) {
    sol.u = problem.u_nom.cwiseMax(-problem.u_max).cwiseMin(problem.u_max);
    sol.objective = (sol.u - problem.u_nom).squaredNorm();
    sol.min_slack = std::numeric_limits<double>::infinity();
    return sol;
  }

  const auto start = phase_one(cs, m, problem.u_max, beta, true);
  if (start.slack < 0.0) {
    // Run phase one to optimality for the safest input before giving up.
    const auto best = phase_one(cs, m, problem.u_max, beta, false);
    if (best.slack < -1e-9) {
      std::size_t worst = 0;
      double worst_slack = std::numeric_limits<double>::infinity();
      for (const auto& c : cs) {
        const double s = c.slack(best.u) - beta;
        if (s < worst_slack) {
          worst_slack = s;
          worst = c.member;
        }
      }
      throw InfeasibleError(worst, best.u, best.slack);
    }
    // Feasible set with (numerically) empty interior: the safest input is
    // the only candidate.
    sol.u = best.u;
    sol.objective = (sol.u - problem.u_nom).squaredNorm();
    sol.min_slack = best.slack;
    return sol;
  }

  const bool cone = any_norm_term(cs);
  const double t_max = std::sqrt(static_cast<double>(m)) * problem.u_max + 1.0;
  BarrierProgram p;
  p.m = m;
  p.t_index = cone ? m : -1;
  p.dim = cone ? m + 1 : m;
  p.u_nom = problem.u_nom;
  for (const auto& c : cs) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p.dim);
    a.head(m) = c.coeff;
    if (cone) a[p.t_index] = -c.norm_weight;
    p.lin_a.push_back(a);
    p.lin_c.push_back(c.constant - beta);
  }
  for (long k = 0; k < m; ++k) {
    for (double sign : {1.0, -1.0}) {
      Eigen::VectorXd a = Eigen::VectorXd::Zero(p.dim);
      a[k] = -sign;
      p.lin_a.push_back(a);
      p.lin_c.push_back(problem.u_max);
    }
  }
  if (cone) {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(p.dim);
    a[p.t_index] = -1.0;
    p.lin_a.push_back(a);
    p.lin_c.push_back(t_max);
  }
  Eigen::VectorXd z = start.z;
  p.solve(z, [](const Eigen::VectorXd&) { return false; });

  sol.u = z.head(m);
  sol.objective = (sol.u - problem.u_nom).squaredNorm();
  sol.min_slack = slack_of(sol.u);
  return sol;
}

nlohmann::json to_json(const FilterProblem& p) {
  nlohmann::json cs = nlohmann::json::array();
  for (const auto& c : p.constraints) {
    cs.push_back({{"coeff", std::vector<double>(c.coeff.data(), c.coeff.data() + c.coeff.size())},
                  {"constant", c.constant},
                  {"norm_weight", c.norm_weight},
                  {"member", c.member}});
  }
  return {{"u_nom", std::vector<double>(p.u_nom.data(), p.u_nom.data() + p.u_nom.size())},
          {"constraints", cs},
          {"u_max", p.u_max},
          {"beta_offset", p.beta_offset},
          {"linearize_socp", p.linearize_socp}};
}

nlohmann::json to_json(const FilterSolution& s) {
  return {{"u", std::vector<double>(s.u.data(), s.u.data() + s.u.size())},
          {"objective", s.objective},
          {"min_slack", s.min_slack},
          {"nominal_feasible", s.nominal_feasible}};
}

}  // namespace certiguard::barrier
