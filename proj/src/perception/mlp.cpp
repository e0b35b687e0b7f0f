#include <cmath>
#include <numeric>
#include <sstream>

#include "certiguard/perception.hpp"

namespace certiguard::perception {

Network Network::random(const std::vector<std::size_t>& widths, Rng& rng) {
  if (widths.size() < 3) throw std::invalid_argument("Network: need at least one hidden layer");
  for (auto w : widths) {
    if (w == 0) throw std::invalid_argument("Network: layer widths must be >= 1");
  }
  Network net;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(widths[l]);
    const auto out = static_cast<Eigen::Index>(widths[l + 1]);
    Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    const double sd = 1.0 / std::sqrt(static_cast<double>(in));
    for (Eigen::Index c = 0; c < in; ++c) {
      for (Eigen::Index r = 0; r < out; ++r) layer.weight(r, c) = rng.normal(0.0, sd);
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

std::vector<std::size_t> Network::widths() const {
  std::vector<std::size_t> w;
  if (layers.empty()) return w;
  w.push_back(static_cast<std::size_t>(layers.front().weight.cols()));
  for (const auto& l : layers) w.push_back(static_cast<std::size_t>(l.weight.rows()));
  return w;
}

std::size_t Network::num_params() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Eigen::VectorXd Network::params() const {
  Eigen::VectorXd p(static_cast<Eigen::Index>(num_params()));
  Eigen::Index k = 0;
  for (const auto& l : layers) {
    p.segment(k, l.weight.size()) = l.weight.reshaped();
    k += l.weight.size();
    p.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return p;
}

void Network::set_params(const Eigen::VectorXd& p) {
  if (static_cast<std::size_t>(p.size()) != num_params()) {
    throw std::invalid_argument("Network::set_params: wrong parameter count");
  }
  Eigen::Index k = 0;
  for (auto& l : layers) {
    l.weight.reshaped() = p.segment(k, l.weight.size());
    k += l.weight.size();
    l.bias = p.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

Eigen::VectorXd Network::forward(const Eigen::VectorXd& x) const {
  Eigen::VectorXd a = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Eigen::VectorXd z = layers[l].weight * a + layers[l].bias;
    a = (l + 1 < layers.size()) ? Eigen::VectorXd(z.array().tanh()) : z;
  }
  return a;
}

namespace {

std::vector<Eigen::MatrixXd> activations(const Network& net, const Eigen::MatrixXd& x) {
  std::vector<Eigen::MatrixXd> acts{x};
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Eigen::MatrixXd z = (net.layers[l].weight * acts.back()).colwise() + net.layers[l].bias;
    if (l + 1 < net.layers.size()) z = z.array().tanh();
    acts.push_back(std::move(z));
  }
  return acts;
}

}  // namespace

double Network::loss(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const {
  const auto acts = activations(*this, x);
  return (acts.back() - y).colwise().squaredNorm().mean();
}

Eigen::VectorXd Network::loss_gradient(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) const {
  const auto acts = activations(*this, x);
  const double batch = static_cast<double>(x.cols());
  Eigen::MatrixXd delta = 2.0 * (acts.back() - y) / batch;
  std::vector<Layer> grads(layers.size());
  for (std::size_t l = layers.size(); l-- > 0;) {
    grads[l].weight = delta * acts[l].transpose();
    grads[l].bias = delta.rowwise().sum();
    if (l > 0) {
      delta = (layers[l].weight.transpose() * delta).cwiseProduct(
          (1.0 - acts[l].array().square()).matrix());
    }
  }
  Network g;
  g.layers = std::move(grads);
  return g.params();
}

Standardizer Standardizer::fit(const Eigen::MatrixXd& columns) {
  Standardizer s;
  s.mean = columns.rowwise().mean();
  const Eigen::MatrixXd centered = columns.colwise() - s.mean;
  s.scale = (centered.array().square().rowwise().mean()).sqrt().matrix();
  for (Eigen::Index i = 0; i < s.scale.size(); ++i) {
    if (!(s.scale[i] > 1e-12)) s.scale[i] = 1.0;
  }
  return s;
}

Mlp::Mlp(Network net, Standardizer in, Standardizer out, conformal::Box clamp_box,
         std::vector<double> loss_history)
    : PerceptionMap(std::move(clamp_box)),
      net_(std::move(net)),
      in_(std::move(in)),
      out_(std::move(out)),
      loss_history_(std::move(loss_history)) {
  const auto w = net_.widths();
  if (w.size() < 3) throw std::invalid_argument("Mlp: need at least one hidden layer");
  if (w.front() != world::kNumRays) throw std::invalid_argument("Mlp: input width must be 64");
  if (w.back() != 2 && w.back() != 3) throw std::invalid_argument("Mlp: output width must be 2 or 3");
}

world::VehicleState Mlp::raw_estimate(const world::Scan& scan) const {
  const Eigen::VectorXd out = out_.invert(net_.forward(in_.apply(scan.vec())));
  return {out[0], out[1], out.size() == 3 ? out[2] : scan.heading};
}

nlohmann::json Mlp::descriptor() const {
  return {{"kind", kind()},
          {"widths", net_.widths()},
          {"epochs_trained", loss_history_.size()},
          {"final_loss", loss_history_.empty() ? 0.0 : loss_history_.back()}};
}

namespace {
std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}
}  // namespace

nlohmann::json Mlp::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : net_.layers) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) rows.push_back(to_vec(l.weight.row(r).transpose()));
    layers.push_back({{"weight", rows}, {"bias", to_vec(l.bias)}});
  }
  const auto& box = clamp_box();
  return {{"kind", kind()},
          {"widths", net_.widths()},
          {"layers", layers},
          {"input_mean", to_vec(in_.mean)},
          {"input_scale", to_vec(in_.scale)},
          {"output_mean", to_vec(out_.mean)},
          {"output_scale", to_vec(out_.scale)},
          {"clamp_box", {box.lo[0], box.hi[0], box.lo[1], box.hi[1]}},
          {"loss_history", loss_history_}};
}

std::unique_ptr<Mlp> fit_mlp(const DataSet& train, const MlpOptions& opts,
                             conformal::Box clamp_box) {
  if (train.pairs.empty()) throw std::invalid_argument("fit_mlp: empty training set");
  if (opts.epochs == 0) throw std::invalid_argument("fit_mlp: epochs must be >= 1");
  if (opts.widths.size() < 3) throw std::invalid_argument("fit_mlp: need at least one hidden layer");
  if (opts.widths.front() != world::kNumRays) throw std::invalid_argument("fit_mlp: input width must be 64");
  const std::size_t out_dim = opts.widths.back();
  if (out_dim != 2 && out_dim != 3) throw std::invalid_argument("fit_mlp: output width must be 2 or 3");
  if (!(opts.step_size > 0.0)) throw std::invalid_argument("fit_mlp: step size must be > 0");

  const auto n = static_cast<Eigen::Index>(train.pairs.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(world::kNumRays), n);
  Eigen::MatrixXd y(static_cast<Eigen::Index>(out_dim), n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = train.pairs[static_cast<std::size_t>(i)];
    x.col(i) = s.scan.vec();
    y(0, i) = s.state.px;
    y(1, i) = s.state.py;
    if (out_dim == 3) y(2, i) = s.state.heading;
  }
  const auto in_std = Standardizer::fit(x);
  const auto out_std = Standardizer::fit(y);
  x = (x.colwise() - in_std.mean).array().colwise() / in_std.scale.array();
  y = (y.colwise() - out_std.mean).array().colwise() / out_std.scale.array();

  Rng rng(opts.seed);
  Network net = Network::random(opts.widths, rng);
  const auto np = static_cast<Eigen::Index>(net.num_params());
  Eigen::VectorXd theta = net.params();
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(np);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(np);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double b1t = 1.0, b2t = 1.0;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  const auto batch = static_cast<Eigen::Index>(std::max<std::size_t>(1, opts.batch_size));
  std::vector<double> history;
  double last_loss = net.loss(x, y);
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    for (Eigen::Index start = 0; start < n; start += batch) {
      const Eigen::Index len = std::min(batch, n - start);
      Eigen::MatrixXd xb(x.rows(), len), yb(y.rows(), len);
      for (Eigen::Index c = 0; c < len; ++c) {
        xb.col(c) = x.col(order[static_cast<std::size_t>(start + c)]);
        yb.col(c) = y.col(order[static_cast<std::size_t>(start + c)]);
      }
      const Eigen::VectorXd g = net.loss_gradient(xb, yb);
      if (!g.allFinite()) {
        std::ostringstream msg;
        msg << "fit_mlp: non-finite gradient at epoch " << epoch + 1 << ", batch offset " << start
            << "; last loss " << last_loss << ", step size " << opts.step_size;
        throw TrainingError(msg.str());
      }
      b1t *= kBeta1;
      b2t *= kBeta2;
      m1 = kBeta1 * m1 + (1.0 - kBeta1) * g;
      m2 = kBeta2 * m2 + (1.0 - kBeta2) * g.cwiseAbs2();
      theta.array() -= opts.step_size * (m1.array() / (1.0 - b1t)) /
                       ((m2.array() / (1.0 - b2t)).sqrt() + kEps);
      net.set_params(theta);
    }
    const double loss = net.loss(x, y);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "fit_mlp: loss diverged at epoch " << epoch + 1 << "; previous loss " << last_loss
          << ", step size " << opts.step_size;
      throw TrainingError(msg.str());
    }
    history.push_back(loss);
    last_loss = loss;
  }
  return std::make_unique<Mlp>(std::move(net), in_std, out_std, std::move(clamp_box),
                               std::move(history));
}

}  // namespace certiguard::perception
