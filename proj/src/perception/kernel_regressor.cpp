#include <cmath>
#include <limits>

#include "certiguard/perception.hpp"

namespace certiguard::perception {

KernelRegressor::KernelRegressor(RowMatrix scans, Eigen::MatrixX2d positions, double bandwidth,
                                 conformal::Box clamp_box)
    : PerceptionMap(std::move(clamp_box)),
      scans_(std::move(scans)),
      positions_(std::move(positions)),
      bandwidth_(bandwidth) {
  if (scans_.rows() == 0) throw std::invalid_argument("KernelRegressor: empty training set");
  if (scans_.rows() != positions_.rows()) {
    throw std::invalid_argument("KernelRegressor: scans and positions differ in length");
  }
  if (scans_.cols() != static_cast<Eigen::Index>(world::kNumRays)) {
    throw std::invalid_argument("KernelRegressor: scans must have 64 columns");
  }
  if (!(bandwidth_ > 0.0) || !std::isfinite(bandwidth_)) {
    throw std::invalid_argument("KernelRegressor: bandwidth must be > 0");
  }
  sq_norms_ = scans_.rowwise().squaredNorm();
}

world::VehicleState KernelRegressor::raw_estimate(const world::Scan& scan) const {
  const auto y = scan.vec();
  // |y - y_i|^2 via the expansion; clamp the occasional tiny negative.
  Eigen::VectorXd d2 = (sq_norms_.array() + y.squaredNorm()).matrix() - 2.0 * (scans_ * y);
  d2 = d2.cwiseMax(0.0);
  Eigen::Index nearest = 0;
  const double d2_min = d2.minCoeff(&nearest);
  const double inv = 1.0 / (2.0 * bandwidth_ * bandwidth_);
  // Shifting by the nearest distance keeps the largest weight at 1.
  const Eigen::VectorXd w = (-(d2.array() - d2_min) * inv).exp().matrix();
  const double total = w.sum();
  Eigen::Vector2d p;
  if (total > 0.0 && std::isfinite(total)) {
    p = positions_.transpose() * w / total;
  } else {
    p = positions_.row(nearest).transpose();
  }
  return {p.x(), p.y(), scan.heading};
}

nlohmann::json KernelRegressor::descriptor() const {
  return {{"kind", kind()}, {"bandwidth", bandwidth_}, {"training_pairs", size()}};
}

nlohmann::json KernelRegressor::to_json() const {
  nlohmann::json scans = nlohmann::json::array();
  nlohmann::json positions = nlohmann::json::array();
  for (Eigen::Index i = 0; i < scans_.rows(); ++i) {
    scans.push_back(std::vector<double>(scans_.row(i).data(), scans_.row(i).data() + scans_.cols()));
    positions.push_back({positions_(i, 0), positions_(i, 1)});
  }
  const auto& box = clamp_box();
  return {{"kind", kind()},
          {"bandwidth", bandwidth_},
          {"clamp_box", {box.lo[0], box.hi[0], box.lo[1], box.hi[1]}},
          {"positions", positions},
          {"scans", scans}};
}

std::unique_ptr<KernelRegressor> fit_kernel_regressor(const DataSet& train, double bandwidth,
                                                      conformal::Box clamp_box) {
  if (train.pairs.empty()) throw std::invalid_argument("fit_kernel_regressor: empty training set");
  const auto n = static_cast<Eigen::Index>(train.pairs.size());
  KernelRegressor::RowMatrix scans(n, static_cast<Eigen::Index>(world::kNumRays));
  Eigen::MatrixX2d positions(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = train.pairs[static_cast<std::size_t>(i)];
    scans.row(i) = s.scan.vec().transpose();
    positions(i, 0) = s.state.px;
    positions(i, 1) = s.state.py;
  }
  return std::make_unique<KernelRegressor>(std::move(scans), std::move(positions), bandwidth,
                                           std::move(clamp_box));
}

}  // namespace certiguard::perception
