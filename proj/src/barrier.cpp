#include "certiguard/barrier.hpp"

#include <algorithm>
#include <limits>
#include <stdexcept>

namespace certiguard::barrier {

AffineBarrier::AffineBarrier(Eigen::VectorXd n, double c) : normal(std::move(n)), offset(c) {
  if (normal.size() == 0 || normal.norm() == 0.0) {
    throw std::invalid_argument("AffineBarrier: normal must be nonzero");
  }
}

BarrierSet::BarrierSet(std::vector<AffineBarrier> members) : members_(std::move(members)) {
  if (members_.empty()) throw std::invalid_argument("BarrierSet: no members");
  const auto n = members_.front().normal.size();
  for (const auto& m : members_) {
    if (m.normal.size() != n) throw std::invalid_argument("BarrierSet: dimension mismatch");
  }
}

double BarrierSet::eval(const Eigen::VectorXd& x) const {
  double h = std::numeric_limits<double>::infinity();
  for (const auto& m : members_) h = std::min(h, m.eval(x));
  return h;
}

double BarrierSet::lipschitz() const {
  double l = 0.0;
  for (const auto& m : members_) l = std::max(l, m.lipschitz());
  return l;
}

BarrierSet BarrierSet::hallway(double width) {
  return BarrierSet({AffineBarrier(Eigen::Vector2d(1.0, 0.0), 0.0),
                     AffineBarrier(Eigen::Vector2d(-1.0, 0.0), width)});
}

double eval_barrier(const BarrierSet& set, const Eigen::VectorXd& x) { return set.eval(x); }

BarrierSet shifted_barrier(const BarrierSet& set, double beta_offset, double eta) {
  if (!(eta > 0.0)) throw std::invalid_argument("shifted_barrier: eta must be > 0");
  std::vector<AffineBarrier> members = set.members();
  for (auto& m : members) m.offset -= beta_offset / eta;
  return BarrierSet(std::move(members));
}

Margins continuous_margins(double delta, const ContinuousLipschitz& l) {
  if (delta < 0.0 || l.lfh < 0.0 || l.lgh < 0.0 || l.beta_h < 0.0) {
    throw std::invalid_argument("continuous_margins: inputs must be nonnegative");
  }
  return {(l.lfh + l.beta_h) * delta, l.lgh * delta};
}

Margins discrete_margins(double eps_prime, double eta, const DiscreteLipschitz& l) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("discrete_margins: eta must lie in [0, 1]");
  if (eps_prime < 0.0) throw std::invalid_argument("discrete_margins: eps' must be >= 0");
  return {eps_prime * (l.h * l.f + (1.0 - eta) * l.h), eps_prime * l.h * l.g};
}

ContinuousLipschitz vehicle_continuous_lipschitz(const BarrierSet& set, double gamma) {
  return {0.0, 0.0, gamma * set.lipschitz()};
}

DiscreteLipschitz vehicle_discrete_lipschitz(const BarrierSet& set) {
  return {set.lipschitz(), 1.0, 0.0};
}

RobustParams make_robust_params(double delta, double gamma, const ContinuousLipschitz& l) {
  if (!(delta > 0.0)) throw std::invalid_argument("RobustParams: delta must be > 0");
  return {continuous_margins(delta, l), delta, gamma, l};
}

DtRobustParams make_dt_robust_params(double eps_prime, double eta, const DiscreteLipschitz& l,
                                     double beta_offset) {
  return {eta, eps_prime, l, discrete_margins(eps_prime, eta, l), beta_offset};
}

std::vector<SocConstraint> continuous_constraints(const BarrierSet& set,
                                                  const world::Dynamics& dyn,
                                                  const Eigen::VectorXd& xhat,
                                                  const Margins& m, double gamma) {
  const Eigen::VectorXd fx = dyn.f(xhat);
  const Eigen::MatrixXd gx = dyn.g(xhat);
  std::vector<SocConstraint> out;
  out.reserve(set.members().size());
  for (std::size_t i = 0; i < set.members().size(); ++i) {
    const auto& h = set.members()[i];
    out.push_back({gx.transpose() * h.normal, h.normal.dot(fx) - m.a + gamma * h.eval(xhat), m.b, i});
  }
  return out;
}

std::vector<SocConstraint> discrete_constraints(const BarrierSet& set,
                                                const world::Dynamics& dyn,
                                                const Eigen::VectorXd& xhat, double dt,
                                                const Margins& m, double eta) {
  if (!(dt > 0.0)) throw std::invalid_argument("discrete_constraints: dt must be > 0");
  const Eigen::VectorXd fd = xhat + dt * dyn.f(xhat);
  const Eigen::MatrixXd gd = dt * dyn.g(xhat);
  std::vector<SocConstraint> out;
  out.reserve(set.members().size());
  for (std::size_t i = 0; i < set.members().size(); ++i) {
    const auto& h = set.members()[i];
    const double hx = h.eval(xhat);
    out.push_back({gd.transpose() * h.normal, h.eval(fd) - hx - m.a + eta * hx, m.b, i});
  }
  return out;
}

double min_slack(const std::vector<SocConstraint>& cs, const Eigen::VectorXd& u) {
  double s = std::numeric_limits<double>::infinity();
  for (const auto& c : cs) s = std::min(s, c.slack(u));
  return s;
}

double continuous_constraint_slack(const BarrierSet& set, const world::Dynamics& dyn,
                                   const Eigen::VectorXd& xhat, const Eigen::VectorXd& u,
                                   const Margins& m, double gamma) {
  return min_slack(continuous_constraints(set, dyn, xhat, m, gamma), u);
}

double discrete_constraint_slack(const BarrierSet& set, const world::Dynamics& dyn,
                                 const Eigen::VectorXd& xhat, const Eigen::VectorXd& u,
                                 double dt, const Margins& m, double eta) {
  return min_slack(discrete_constraints(set, dyn, xhat, dt, m, eta), u);
}

BarrierConfig barrier_config_from_json(const nlohmann::json& j) {
  std::vector<AffineBarrier> members;
  for (const auto& b : j.at("barriers")) {
    const auto n = b.at("normal").get<std::vector<double>>();
    members.emplace_back(Eigen::Map<const Eigen::VectorXd>(n.data(), static_cast<Eigen::Index>(n.size())),
                         b.at("offset").get<double>());
  }
  return {BarrierSet(std::move(members)), j.value("gamma", 1.0)};
}

nlohmann::json to_json(const BarrierSet& set, double gamma) {
  nlohmann::json bs = nlohmann::json::array();
  for (const auto& m : set.members()) {
    bs.push_back({{"normal", std::vector<double>(m.normal.data(), m.normal.data() + m.normal.size())},
                  {"offset", m.offset}});
  }
  return {{"barriers", bs}, {"gamma", gamma}};
}

}  // namespace certiguard::barrier
