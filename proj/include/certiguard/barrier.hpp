#pragma once

// Affine barrier functions and the measurement-robust constraints built on
// them, for both the continuous and the discrete-time condition.

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "certiguard/world.hpp"

namespace certiguard::barrier {

/// h(x) = normal . x + offset
struct AffineBarrier {
  Eigen::VectorXd normal;
  double offset = 0.0;

  AffineBarrier() = default;
  AffineBarrier(Eigen::VectorXd n, double c);

  double eval(const Eigen::VectorXd& x) const { return normal.dot(x) + offset; }
  /// Lipschitz constant of h, i.e. |normal|.
  double lipschitz() const { return normal.norm(); }
};

/// h(x) = min_i h_i(x); the safe set is {h >= 0}.
class BarrierSet {
 public:
  explicit BarrierSet(std::vector<AffineBarrier> members);

  const std::vector<AffineBarrier>& members() const { return members_; }
  std::size_t dim() const { return static_cast<std::size_t>(members_.front().normal.size()); }

  double eval(const Eigen::VectorXd& x) const;
  bool safe(const Eigen::VectorXd& x) const { return eval(x) >= 0.0; }
  /// Largest member Lipschitz constant; a valid constant for the min.
  double lipschitz() const;

  /// The hallway pair h1 = p_x, h2 = width - p_x.
  static BarrierSet hallway(double width = 1.5);

 private:
  std::vector<AffineBarrier> members_;
};

double eval_barrier(const BarrierSet& set, const Eigen::VectorXd& x);

/// Every member offset lowered by beta_offset / eta. Throws for eta <= 0.
BarrierSet shifted_barrier(const BarrierSet& set, double beta_offset, double eta);

/// Robustness margin pair (a, b) for the term -(a + b |u|).
struct Margins {
  double a = 0.0;
  double b = 0.0;
};

/// Lipschitz constants of L_f h, L_g h and beta(h) with beta(s) = gamma * s.
struct ContinuousLipschitz {
  double lfh = 0.0;
  double lgh = 0.0;
  double beta_h = 0.0;
};

/// Lipschitz constants of h, the discrete drift f_d and input map g_d.
struct DiscreteLipschitz {
  double h = 1.0;
  double f = 1.0;
  double g = 0.0;
};

/// a = (L_lfh + L_beta_h) * delta, b = L_lgh * delta.
Margins continuous_margins(double delta, const ContinuousLipschitz& l);

/// a = eps' (L_h L_f + (1 - eta) L_h), b = eps' L_h L_g.
Margins discrete_margins(double eps_prime, double eta, const DiscreteLipschitz& l);

/// Analytic constants for affine members under the single integrator:
/// f = 0 and constant g make L_fh and L_gh vanish; L_beta_h = gamma |normal|.
ContinuousLipschitz vehicle_continuous_lipschitz(const BarrierSet& set, double gamma);

/// f_d(x) = x (L_f = 1), g_d = dt I (L_g = 0), L_h = max |normal|.
DiscreteLipschitz vehicle_discrete_lipschitz(const BarrierSet& set);

struct RobustParams {
  Margins margins;
  double delta = 0.0;
  double class_k_gain = 1.0;
  ContinuousLipschitz lipschitz;
};

struct DtRobustParams {
  double eta = 1.0;
  double eps_prime = 0.0;
  DiscreteLipschitz lipschitz;
  Margins margins;
  double beta_offset = 0.0;
};

RobustParams make_robust_params(double delta, double gamma, const ContinuousLipschitz& l);
DtRobustParams make_dt_robust_params(double eps_prime, double eta, const DiscreteLipschitz& l,
                                     double beta_offset = 0.0);

/// coeff . u + constant - norm_weight * |u|, concave in u.
struct SocConstraint {
  Eigen::VectorXd coeff;
  double constant = 0.0;
  double norm_weight = 0.0;
  std::size_t member = 0;

  double slack(const Eigen::VectorXd& u) const {
    return coeff.dot(u) + constant - norm_weight * u.norm();
  }
};

/// One constraint per member:
///   grad h_i . (f(xhat) + g(xhat) u) - (a + b |u|) + gamma h_i(xhat) >= 0
std::vector<SocConstraint> continuous_constraints(const BarrierSet& set,
                                                  const world::Dynamics& dyn,
                                                  const Eigen::VectorXd& xhat,
                                                  const Margins& m, double gamma);

/// One constraint per member, with x+ = xhat + dt (f(xhat) + g(xhat) u):
///   h_i(x+) - h_i(xhat) - (a + b |u|) + eta h_i(xhat) >= 0
std::vector<SocConstraint> discrete_constraints(const BarrierSet& set,
                                                const world::Dynamics& dyn,
                                                const Eigen::VectorXd& xhat, double dt,
                                                const Margins& m, double eta);

double min_slack(const std::vector<SocConstraint>& cs, const Eigen::VectorXd& u);

double continuous_constraint_slack(const BarrierSet& set, const world::Dynamics& dyn,
                                   const Eigen::VectorXd& xhat, const Eigen::VectorXd& u,
                                   const Margins& m, double gamma);

double discrete_constraint_slack(const BarrierSet& set, const world::Dynamics& dyn,
                                 const Eigen::VectorXd& xhat, const Eigen::VectorXd& u,
                                 double dt, const Margins& m, double eta);

/// JSON layout: {barriers: [{normal: [...], offset}], gamma}
struct BarrierConfig {
  BarrierSet set;
  double gamma = 1.0;
};
BarrierConfig barrier_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BarrierSet& set, double gamma);

}  // namespace certiguard::barrier
