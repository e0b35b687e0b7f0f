#pragma once

// Minimum-deviation safety filter over a box of inputs subject to concave
// constraints of the form coeff . u + constant - b |u| >= beta_offset.

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <stdexcept>
#include <vector>

#include "certiguard/barrier.hpp"

namespace certiguard::barrier {

struct FilterProblem {
  Eigen::VectorXd u_nom;
  std::vector<SocConstraint> constraints;
  double u_max = 1.0;
  double beta_offset = 0.0;
  /// Replace b |u| by b sqrt(m) u_max, giving linear (stricter) constraints.
  bool linearize_socp = false;
};

struct FilterSolution {
  Eigen::VectorXd u;
  double objective = 0.0;   // |u - u_nom|^2
  double min_slack = 0.0;   // min_i slack_i(u) - beta_offset
  bool nominal_feasible = false;
};

/// Thrown when no input in the box satisfies every constraint.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(std::size_t most_violated, Eigen::VectorXd safest, double best_slack);

  /// Constraint with the least slack at the safest input.
  std::size_t most_violated() const { return most_violated_; }
  /// The input in the box with the largest minimum slack.
  const Eigen::VectorXd& safest_input() const { return safest_; }
  double best_min_slack() const { return best_slack_; }

 private:
  std::size_t most_violated_;
  Eigen::VectorXd safest_;
  double best_slack_;
};

/// argmin |u - u_nom|^2 over the feasible set.
///
/// Returns u_nom unchanged when it is feasible. Otherwise a phase-one barrier
/// method finds the input of largest minimum slack; if that slack is
/// negative the problem is infeasible, else a log-barrier Newton method on
/// the epigraph form (t >= |u|) solves the second-order-cone program.
FilterSolution safety_filter(const FilterProblem& problem);

/// The input in the box that maximizes the minimum constraint slack.
Eigen::VectorXd safest_input(const FilterProblem& problem, double* best_slack = nullptr);

/// Applies the linearization when requested; otherwise returns the
/// constraints unchanged.
std::vector<SocConstraint> effective_constraints(const FilterProblem& problem);

nlohmann::json to_json(const FilterProblem& p);
nlohmann::json to_json(const FilterSolution& s);

}  // namespace certiguard::barrier
