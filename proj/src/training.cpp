#include "koopmhe/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "koopmhe/log.hpp"

namespace koopmhe {

ReactorPhysics::ReactorPhysics(ProcessParams params, double dt, std::vector<int> equations)
    : params_(std::move(params)), dt_(dt), equations_(std::move(equations)) {
  params_.validate();
  require(dt_ > 0.0, ErrorCode::kConfiguration, "physics step must be positive");
  require(!equations_.empty(), ErrorCode::kConfiguration, "physics needs at least one equation");
  for (int e : equations_) {
    require(e >= 0 && e < kStateDim, ErrorCode::kConfiguration,
            "physics equation index out of range");
  }
}

PhysicsPrediction ReactorPhysics::step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
  require(x.size() == kStateDim && u.size() == kInputDim, ErrorCode::kInputShape,
          "reactor physics expects a 9-state and 3-input vector");
  // Model rollouts can leave the physical range; the physics sees mass
  // fractions clipped to [0, 1] and temperatures floored at kMinTemperature,
  // with zero sensitivity when clipped.
  constexpr double kMinTemperature = 200.0;  // K
  StateVector xc = x;
  std::array<bool, kStateDim> clipped{};
  for (int i : {kXA1, kXB1, kXA2, kXB2, kXA3, kXB3}) {
    const double v = std::clamp(x[i], 0.0, 1.0);
    clipped[static_cast<std::size_t>(i)] = v != x[i];
    xc[i] = v;
  }
  for (int i : {kT1, kT2, kT3}) {
    const double v = std::max(x[i], kMinTemperature);
    clipped[static_cast<std::size_t>(i)] = v != x[i];
    xc[i] = v;
  }
  auto r = subset_step_with_jacobian(xc, InputVector(u), dt_, params_, equations_);
  for (int i = 0; i < kStateDim; ++i) {
    if (clipped[static_cast<std::size_t>(i)]) r.jacobian.col(i).setZero();
  }
  return {r.values, r.jacobian};
}

PhysicsPrediction scaled_physics_step(const PhysicsModel& fp, const Scaler& scaler,
                                      const Eigen::VectorXd& x_scaled,
                                      const Eigen::VectorXd& u_scaled) {
  const Eigen::VectorXd x = scaler.state_mean + scaler.state_std.cwiseProduct(x_scaled);
  const Eigen::VectorXd u = scaler.input_mean + scaler.input_std.cwiseProduct(u_scaled);
  PhysicsPrediction raw = fp.step(x, u);
  const auto& idx = fp.indices();
  PhysicsPrediction out;
  out.values.resize(raw.values.size());
  out.jacobian.resize(raw.jacobian.rows(), raw.jacobian.cols());
  for (Eigen::Index i = 0; i < out.values.size(); ++i) {
    const double sd = scaler.state_std[idx[i]];
    out.values[i] = (raw.values[i] - scaler.state_mean[idx[i]]) / sd;
    out.jacobian.row(i) = raw.jacobian.row(i).cwiseProduct(scaler.state_std.transpose()) / sd;
  }
  return out;
}

Batch make_batch(const std::vector<Trajectory>& scaled_runs, const std::vector<WindowRef>& windows,
                 int horizon, int n_g) {
  require(horizon >= 1, ErrorCode::kConfiguration, "horizon must be at least 1");
  require(!windows.empty() && !scaled_runs.empty(), ErrorCode::kInputShape, "empty batch");
  const Eigen::Index nx = scaled_runs.front().state_dim();
  const Eigen::Index nu = scaled_runs.front().input_dim();
  const Eigen::Index m = static_cast<Eigen::Index>(windows.size());
  Batch b;
  b.horizon = horizon;
  b.states.resize(nx, m * (horizon + 1));
  b.inputs.resize(nu, m * horizon);
  b.mu = Eigen::MatrixXd::Zero(n_g, m * horizon);
  for (Eigen::Index w = 0; w < m; ++w) {
    const WindowRef& ref = windows[static_cast<std::size_t>(w)];
    require(ref.run >= 0 && ref.run < static_cast<int>(scaled_runs.size()), ErrorCode::kContract,
            "window refers to a missing run");
    const Trajectory& t = scaled_runs[static_cast<std::size_t>(ref.run)];
    require(ref.start >= 0 && ref.start + horizon < t.size(), ErrorCode::kContract,
            "window runs past the end of its trajectory");
    b.states.middleCols(w * (horizon + 1), horizon + 1) = t.states.middleCols(ref.start, horizon + 1);
    b.inputs.middleCols(w * horizon, horizon) = t.inputs.middleCols(ref.start, horizon);
  }
  return b;
}

ModelGradients ModelGradients::zeros_like(const KoopmanModel& m) {
  ModelGradients g;
  g.lifting = MlpGradients::zeros_like(m.lifting_net);
  g.A = Eigen::MatrixXd::Zero(m.A.rows(), m.A.cols());
  g.B = Eigen::MatrixXd::Zero(m.B.rows(), m.B.cols());
  return g;
}

Eigen::VectorXd ModelGradients::pack() const {
  const Eigen::VectorXd l = lifting.pack();
  Eigen::VectorXd flat(l.size() + A.size() + B.size());
  flat << l, A.reshaped(), B.reshaped();
  return flat;
}

Eigen::VectorXd pack_trainable(const KoopmanModel& m) {
  const Eigen::VectorXd l = m.lifting_net.pack();
  Eigen::VectorXd flat(l.size() + m.A.size() + m.B.size());
  flat << l, m.A.reshaped(), m.B.reshaped();
  return flat;
}

void unpack_trainable(const Eigen::VectorXd& flat, KoopmanModel& m) {
  const Eigen::Index nl = static_cast<Eigen::Index>(m.lifting_net.parameter_count());
  require(flat.size() == nl + m.A.size() + m.B.size(), ErrorCode::kInputShape,
          "trainable parameter vector has wrong length");
  if (nl > 0) m.lifting_net.unpack(flat.head(nl));
  m.A.reshaped() = flat.segment(nl, m.A.size());
  m.B.reshaped() = flat.segment(nl + m.A.size(), m.B.size());
}

LossValues evaluate_losses(const KoopmanModel& m, const Batch& batch, const PhysicsModel* fp,
                           const std::array<double, 4>& weights, ModelGradients* grads) {
  const int h = batch.horizon;
  const Eigen::Index nb = batch.size();
  const int nx = m.n_x;
  const int nl = m.n_l;
  const int g = m.n_g();
  const Eigen::Index t = h + 1;
  require(h >= 1 && nb >= 1, ErrorCode::kInputShape, "batch is empty");
  require(batch.states.rows() == nx && batch.states.cols() == nb * t, ErrorCode::kInputShape,
          "batch states do not match the model");
  require(batch.inputs.rows() == m.n_u && batch.inputs.cols() == nb * h, ErrorCode::kInputShape,
          "batch inputs do not match the model");
  require(batch.mu.rows() == g && batch.mu.cols() == nb * h, ErrorCode::kInputShape,
          "batch noise does not match the model");
  if (fp) {
    require(fp->state_dim() == nx && fp->input_dim() == m.n_u, ErrorCode::kInputShape,
            "physics model dimensions do not match the Koopman model");
  }
  const double norm = 1.0 / (static_cast<double>(nb) * h);

  // Lifted targets g(x_j); their first columns double as the rollout start.
  MlpBatchCache target_cache;
  Eigen::MatrixXd zt(g, nb * t);
  zt.topRows(nx) = batch.states;
  if (nl > 0) {
    zt.bottomRows(nl) =
        mlp_forward_batch(m.lifting_net, batch.states, grads ? &target_cache : nullptr);
  }

  Eigen::MatrixXd zh(g, nb * t);
  for (Eigen::Index b = 0; b < nb; ++b) {
    zh.col(b * t) = zt.col(b * t);
    for (int j = 0; j < h; ++j) {
      zh.col(b * t + j + 1).noalias() = m.A * zh.col(b * t + j) + m.B * batch.inputs.col(b * h + j);
      zh.col(b * t + j + 1) += batch.mu.col(b * h + j);
    }
  }

  LossValues out;
  const Eigen::MatrixXd ex = batch.states - zh.topRows(nx);
  const Eigen::MatrixXd ez = zt - zh;
  out.terms[kLossX] = norm * ex.squaredNorm();
  out.terms[kLossZ] = norm * ez.squaredNorm();

  Eigen::MatrixXd gz;       // d loss / d zhat
  Eigen::MatrixXd gtarget;  // d loss / d lifted targets (tail rows used)
  if (grads) {
    gz = (-2.0 * norm * weights[kLossZ]) * ez;
    gz.topRows(nx) -= (2.0 * norm * weights[kLossX]) * ex;
    gtarget = (2.0 * norm * weights[kLossZ]) * ez;
  }

  if (fp) {
    const auto& idx = fp->indices();
    const Eigen::Index np = static_cast<Eigen::Index>(idx.size());
    std::vector<bool> covered(static_cast<std::size_t>(nx), false);
    for (int i : idx) covered[static_cast<std::size_t>(i)] = true;
    Eigen::MatrixXd xbar(nx, nb * h);
    Eigen::MatrixXd rpx(np, nb * h);
    std::vector<Eigen::MatrixXd> jac(static_cast<std::size_t>(nb * h));
    for (Eigen::Index b = 0; b < nb; ++b) {
      for (int j = 0; j < h; ++j) {
        const Eigen::Index c = b * t + j;
        const Eigen::Index col = b * h + j;
        PhysicsPrediction pred =
            scaled_physics_step(*fp, m.scaler, zh.col(c).head(nx), batch.inputs.col(col));
        xbar.col(col) = zh.col(c + 1).head(nx);
        for (Eigen::Index i = 0; i < np; ++i) {
          rpx(i, col) = pred.values[i] - zh(idx[i], c + 1);
          xbar(idx[i], col) = pred.values[i];
        }
        jac[static_cast<std::size_t>(col)] = std::move(pred.jacobian);
      }
    }
    out.terms[kLossPx] = norm * rpx.squaredNorm();

    MlpBatchCache hybrid_cache;
    Eigen::MatrixXd zbar(g, nb * h);
    zbar.topRows(nx) = xbar;
    if (nl > 0) {
      zbar.bottomRows(nl) = mlp_forward_batch(m.lifting_net, xbar, grads ? &hybrid_cache : nullptr);
    }
    Eigen::MatrixXd epz(g, nb * h);
    for (Eigen::Index b = 0; b < nb; ++b) {
      epz.middleCols(b * h, h) = zbar.middleCols(b * h, h) - zh.middleCols(b * t + 1, h);
    }
    out.terms[kLossPz] = norm * epz.squaredNorm();

    if (grads) {
      const Eigen::MatrixXd dr = (2.0 * norm * weights[kLossPx]) * rpx;
      const Eigen::MatrixXd de = (2.0 * norm * weights[kLossPz]) * epz;
      Eigen::MatrixXd dxbar = de.topRows(nx);
      if (nl > 0) dxbar += mlp_backward_batch(m.lifting_net, hybrid_cache, de.bottomRows(nl), grads->lifting);
      for (Eigen::Index b = 0; b < nb; ++b) {
        for (int j = 0; j < h; ++j) {
          const Eigen::Index c = b * t + j;
          const Eigen::Index col = b * h + j;
          gz.col(c + 1) -= de.col(col);
          Eigen::VectorXd dpred(np);
          for (Eigen::Index i = 0; i < np; ++i) {
            gz(idx[i], c + 1) -= dr(i, col);
            dpred[i] = dr(i, col) + dxbar(idx[i], col);
          }
          for (int r = 0; r < nx; ++r) {
            if (!covered[static_cast<std::size_t>(r)]) gz(r, c + 1) += dxbar(r, col);
          }
          gz.col(c).head(nx).noalias() += jac[static_cast<std::size_t>(col)].transpose() * dpred;
        }
      }
    }
  }

  if (grads) {
    // Adjoint sweep through z_{j+1} = A z_j + B u_j + mu.
    Eigen::MatrixXd lam(g, nb * h);
    Eigen::MatrixXd zprev(g, nb * h);
    for (Eigen::Index b = 0; b < nb; ++b) {
      Eigen::VectorXd l = gz.col(b * t + h);
      for (int j = h - 1; j >= 0; --j) {
        const Eigen::Index c = b * t + j;
        lam.col(b * h + j) = l;
        zprev.col(b * h + j) = zh.col(c);
        l = gz.col(c) + m.A.transpose() * l;
      }
      gtarget.col(b * t) += l;  // z0 = g(x0)
    }
    grads->A.noalias() += lam * zprev.transpose();
    grads->B.noalias() += lam * batch.inputs.transpose();
    if (nl > 0) mlp_backward_batch(m.lifting_net, target_cache, gtarget.bottomRows(nl), grads->lifting);
  }
  return out;
}

LossWeights LossWeights::initial(bool physics, const std::array<double, 4>& static_scale,
                                 double beta) {
  LossWeights w;
  w.static_scale = static_scale;
  w.beta = beta;
  w.rho.fill(-0.5 * std::log(2.0));
  w.active = {true, true, physics, physics};
  return w;
}

double LossWeights::nu(int i) const { return std::exp(rho[static_cast<std::size_t>(i)]); }

double LossWeights::effective(int i) const {
  if (!active[static_cast<std::size_t>(i)]) return 0.0;
  const double v = nu(i);
  return static_scale[static_cast<std::size_t>(i)] / (2.0 * v * v);
}

std::array<double, 4> LossWeights::effective_weights() const {
  return {effective(0), effective(1), effective(2), effective(3)};
}

double LossWeights::regularizer() const {
  double r = 0.0;
  for (int i = 0; i < 4; ++i) {
    if (active[static_cast<std::size_t>(i)]) r += std::log1p(nu(i));
  }
  return beta * r;
}

double LossWeights::total(const LossValues& l) const {
  double s = regularizer();
  for (int i = 0; i < 4; ++i) s += effective(i) * l[i];
  return s;
}

std::array<double, 4> LossWeights::rho_gradient(const LossValues& l) const {
  std::array<double, 4> g{};
  for (int i = 0; i < 4; ++i) {
    if (!active[static_cast<std::size_t>(i)]) continue;
    const double v = nu(i);
    g[static_cast<std::size_t>(i)] = -2.0 * effective(i) * l[i] + beta * v / (1.0 + v);
  }
  return g;
}

Eigen::VectorXd sample_window_noise(const KoopmanModel& m, const Eigen::VectorXd& z0, Rng& rng) {
  const Eigen::VectorXd sigma = noise_std(m, z0);
  Eigen::VectorXd mu(sigma.size());
  for (Eigen::Index i = 0; i < mu.size(); ++i) mu[i] = sigma[i] * rng.normal();
  return mu;
}

void TrainConfig::validate() const {
  require(horizon >= 1, ErrorCode::kConfiguration, "train.horizon must be at least 1");
  require(!physics_enabled || horizon >= 2, ErrorCode::kConfiguration,
          "physics-informed training needs train.horizon >= 2");
  require(epochs >= 0 && pretrain_epochs >= 0, ErrorCode::kConfiguration,
          "epoch counts must be non-negative");
  require(batch_size >= 1, ErrorCode::kConfiguration, "train.batch_size must be positive");
  require(learning_rate > 0.0 && noise_learning_rate > 0.0 && nu_learning_rate >= 0.0,
          ErrorCode::kConfiguration, "learning rates must be positive");
  require(beta > 0.0, ErrorCode::kConfiguration, "train.beta must be positive");
  for (double s : static_scale) {
    require(s > 0.0, ErrorCode::kConfiguration, "static loss scales must be positive");
  }
  if (physics_enabled) {
    require(!physics_equations.empty(), ErrorCode::kConfiguration,
            "physics-informed training needs at least one physics equation");
  }
  if (physics_enabled) {
    for (int e : physics_equations) {
      require(e >= 0 && e < shape.n_x, ErrorCode::kConfiguration,
              "physics equation index out of range");
    }
  }
  require(shape.n_l >= 0, ErrorCode::kConfiguration, "train.lifted_dim must be non-negative");
}

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = {
      "horizon",          "epochs",        "batch_size",   "learning_rate",
      "noise_learning_rate", "nu_learning_rate", "beta", "static_scale",
      "seed",             "physics",       "physics_equations", "sample_noise",
      "pretrain_epochs",  "init_from_pretrained", "lifted_dim", "lifting_hidden",
      "noise_hidden",     "activation"};
  return k;
}

TrainConfig TrainConfig::from_key_values(const KeyValues& kv) {
  kv.expect_only(keys(), "train");
  TrainConfig c;
  c.horizon = kv.get_or<int>("horizon", c.horizon);
  c.epochs = kv.get_or<int>("epochs", c.epochs);
  c.batch_size = kv.get_or<int>("batch_size", c.batch_size);
  c.learning_rate = kv.get_or<double>("learning_rate", c.learning_rate);
  c.noise_learning_rate = kv.get_or<double>("noise_learning_rate", c.noise_learning_rate);
  c.nu_learning_rate = kv.get_or<double>("nu_learning_rate", c.nu_learning_rate);
  c.beta = kv.get_or<double>("beta", c.beta);
  if (kv.has("static_scale")) {
    const auto v = kv.get_doubles("static_scale");
    require(v.size() == 4, ErrorCode::kConfiguration, "train.static_scale needs 4 values");
    for (std::size_t i = 0; i < 4; ++i) c.static_scale[i] = v[i];
  }
  c.seed = kv.get_or<std::uint64_t>("seed", c.seed);
  c.physics_enabled = kv.get_or<bool>("physics", c.physics_enabled);
  if (kv.has("physics_equations")) {
    // Listed as 1-based equation numbers.
    c.physics_equations.clear();
    for (int e : kv.get_ints("physics_equations")) c.physics_equations.push_back(e - 1);
  }
  c.sample_noise = kv.get_or<bool>("sample_noise", c.sample_noise);
  c.pretrain_epochs = kv.get_or<int>("pretrain_epochs", c.pretrain_epochs);
  c.init_from_pretrained = kv.get_or<bool>("init_from_pretrained", c.init_from_pretrained);
  c.shape.n_l = kv.get_or<int>("lifted_dim", c.shape.n_l);
  if (kv.has("lifting_hidden")) c.shape.lifting_hidden = kv.get_ints("lifting_hidden");
  if (kv.has("noise_hidden")) c.shape.noise_hidden = kv.get_ints("noise_hidden");
  c.shape.activation = parse_activation(kv.get_or<std::string>("activation", "relu"));
  c.validate();
  return c;
}

std::string TrainReport::to_csv(const std::vector<std::string>& comments) const {
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "epoch,train_loss,val_loss,test_mse,nu1,nu2,nu3,nu4\n";
  for (const auto& e : epochs) {
    out << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss) << ','
        << format_double(e.test_mse);
    for (double v : e.nu) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

double window_nll(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& log_sigma) {
  require(residuals.rows() == log_sigma.size(), ErrorCode::kInputShape,
          "residual and sigma dimensions differ");
  const Eigen::ArrayXd inv_var = (-2.0 * log_sigma.array()).exp();
  double s = 0.0;
  for (Eigen::Index j = 0; j < residuals.cols(); ++j) {
    const double step = static_cast<double>(j + 1);
    s += (residuals.col(j).array().square() * inv_var).sum() / (2.0 * step) + log_sigma.sum() +
         0.5 * std::log(step) * static_cast<double>(residuals.rows());
  }
  return s;
}

Eigen::VectorXd window_nll_gradient(const Eigen::MatrixXd& residuals, const Eigen::VectorXd& log_sigma) {
  require(residuals.rows() == log_sigma.size(), ErrorCode::kInputShape,
          "residual and sigma dimensions differ");
  const Eigen::ArrayXd inv_var = (-2.0 * log_sigma.array()).exp();
  Eigen::ArrayXd d = Eigen::ArrayXd::Zero(log_sigma.size());
  for (Eigen::Index j = 0; j < residuals.cols(); ++j) {
    d += 1.0 - residuals.col(j).array().square() * inv_var / static_cast<double>(j + 1);
  }
  return d.matrix();
}

namespace {

std::vector<WindowRef> shuffled(std::vector<WindowRef> w, Rng& rng) {
  for (std::size_t i = w.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.uniform_index(i));
    std::swap(w[i - 1], w[j]);
  }
  return w;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Residuals g(x_j) - zhat_j of deterministic rollouts; columns as in Batch.states.
Eigen::MatrixXd rollout_residuals(const KoopmanModel& m, const Batch& batch) {
  const int h = batch.horizon;
  const Eigen::Index t = h + 1;
  const Eigen::MatrixXd zt = lift_batch(m, batch.states);
  Eigen::MatrixXd r(zt.rows(), zt.cols());
  for (Eigen::Index b = 0; b < batch.size(); ++b) {
    Eigen::VectorXd z = zt.col(b * t);
    r.col(b * t).setZero();
    for (int j = 0; j < h; ++j) {
      z = m.A * z + m.B * batch.inputs.col(b * h + j);
      r.col(b * t + j + 1) = zt.col(b * t + j + 1) - z;
    }
  }
  return r;
}

double validation_loss(const KoopmanModel& m, const std::vector<Trajectory>& runs,
                       const TrainConfig& cfg) {
  const auto windows = enumerate_windows(runs, cfg.horizon);
  if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::array<double, 4> w{cfg.static_scale[0], cfg.static_scale[1], 0.0, 0.0};
  constexpr std::size_t kChunk = 256;
  double sum = 0.0;
  for (std::size_t s = 0; s < windows.size(); s += kChunk) {
    const std::vector<WindowRef> part(windows.begin() + static_cast<std::ptrdiff_t>(s),
                                      windows.begin() + static_cast<std::ptrdiff_t>(std::min(windows.size(), s + kChunk)));
    const Batch b = make_batch(runs, part, cfg.horizon, m.n_g());
    const LossValues l = evaluate_losses(m, b, nullptr, w, nullptr);
    sum += (w[0] * l[0] + w[1] * l[1]) * static_cast<double>(part.size());
  }
  return sum / static_cast<double>(windows.size());
}

// sigma comes from the window's first state; draws are independent per step.
void fill_window_noise(const KoopmanModel& m, Batch& batch, Rng& rng) {
  const Eigen::Index t = batch.horizon + 1;
  Eigen::MatrixXd x0(m.n_x, batch.size());
  for (Eigen::Index b = 0; b < batch.size(); ++b) x0.col(b) = batch.states.col(b * t);
  const Eigen::MatrixXd z0 = lift_batch(m, x0);
  const Eigen::MatrixXd logs = mlp_forward_batch(m.noise_net, z0);
  const double cap = std::log(m.sigma_max);
  for (Eigen::Index b = 0; b < batch.size(); ++b) {
    for (Eigen::Index i = 0; i < logs.rows(); ++i) {
      const double s = logs(i, b) <= cap ? std::exp(logs(i, b)) : m.sigma_max;
      for (int j = 0; j < batch.horizon; ++j) batch.mu(i, b * batch.horizon + j) = s * rng.normal();
    }
  }
}

}  // namespace

PretrainResult pretrain_noise_net(const KoopmanModel& init, const std::vector<Trajectory>& scaled_train,
                                  const TrainConfig& cfg) {
  cfg.validate();
  require(init.has_noise_net(), ErrorCode::kContract, "pretraining needs a noise network");
  const auto t0 = std::chrono::steady_clock::now();
  PretrainResult res{init, {}};
  KoopmanModel& m = res.model;
  const int h = cfg.horizon;
  const auto windows = enumerate_windows(scaled_train, h);
  require(!windows.empty(), ErrorCode::kInputShape, "no training windows for pretraining");
  const Rng master = Rng(cfg.seed).stream("pretrain");
  Eigen::VectorXd params = pack_trainable(m);
  AdamState adam = AdamState::for_size(params.size(), cfg.learning_rate);
  Eigen::VectorXd noise_params = m.noise_net.pack();
  AdamState noise_adam = AdamState::for_size(noise_params.size(), cfg.noise_learning_rate);
  const std::array<double, 4> data_w{cfg.static_scale[0], cfg.static_scale[1], 0.0, 0.0};

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    Rng order_rng = master.stream("shuffle").stream(static_cast<std::uint64_t>(epoch));
    const auto order = shuffled(windows, order_rng);
    double nll_sum = 0.0, data_sum = 0.0;
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<WindowRef> part(
          order.begin() + static_cast<std::ptrdiff_t>(s),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + cfg.batch_size)));
      const Batch batch = make_batch(scaled_train, part, h, m.n_g());
      const Eigen::Index nb = batch.size();
      const double norm = 1.0 / (static_cast<double>(nb) * h);
      const Eigen::Index t = h + 1;

      // Noise net: NLL of detached residuals.
      const Eigen::MatrixXd r = rollout_residuals(m, batch);
      Eigen::MatrixXd z0(m.n_g(), nb);
      for (Eigen::Index b = 0; b < nb; ++b) z0.col(b) = lift(m, batch.states.col(b * t), true);
      MlpBatchCache cache;
      const Eigen::MatrixXd logs = mlp_forward_batch(m.noise_net, z0, &cache);
      Eigen::MatrixXd dlogs(logs.rows(), nb);
      double nll = 0.0;
      for (Eigen::Index b = 0; b < nb; ++b) {
        const Eigen::MatrixXd rb = r.middleCols(b * t + 1, h);
        nll += window_nll(rb, logs.col(b));
        dlogs.col(b) = norm * window_nll_gradient(rb, logs.col(b));
      }
      nll *= norm;
      require(std::isfinite(nll), ErrorCode::kPretrainingFailed,
              "noise-net likelihood became non-finite in pretraining epoch " + std::to_string(epoch));
      MlpGradients ng = MlpGradients::zeros_like(m.noise_net);
      mlp_backward_batch(m.noise_net, cache, dlogs, ng);
      try {
        adam_step(noise_params, ng.pack(), noise_adam);
      } catch (const Error&) {
        fail(ErrorCode::kPretrainingFailed,
             "noise-net gradient became non-finite in pretraining epoch " + std::to_string(epoch));
      }
      m.noise_net.unpack(noise_params);

      // Lifting net and operators: data loss.
      ModelGradients g = ModelGradients::zeros_like(m);
      const LossValues l = evaluate_losses(m, batch, nullptr, data_w, &g);
      const double data = data_w[0] * l[0] + data_w[1] * l[1];
      require(std::isfinite(data), ErrorCode::kPretrainingFailed,
              "data loss became non-finite in pretraining epoch " + std::to_string(epoch));
      try {
        adam_step(params, g.pack(), adam);
      } catch (const Error&) {
        fail(ErrorCode::kPretrainingFailed,
             "model gradient became non-finite in pretraining epoch " + std::to_string(epoch));
      }
      unpack_trainable(params, m);
      nll_sum += nll * static_cast<double>(nb);
      data_sum += data * static_cast<double>(nb);
    }
    const double n = static_cast<double>(order.size());
    res.report.nll.push_back(nll_sum / n);
    res.report.data_loss.push_back(data_sum / n);
    log_debug("pretrain epoch " + std::to_string(epoch) + " nll=" + format_double(nll_sum / n) +
              " data=" + format_double(data_sum / n));
  }
  res.report.wall_seconds = seconds_since(t0);
  return res;
}

FitResult fit(const KoopmanModel& init, const std::vector<Trajectory>& scaled_train,
              const std::vector<Trajectory>& scaled_val,
              const std::vector<Trajectory>& scaled_test, const PhysicsModel* fp,
              const TrainConfig& cfg) {
  cfg.validate();
  require(!cfg.physics_enabled || fp != nullptr, ErrorCode::kConfiguration,
          "physics-informed training needs a physics model");
  require(!cfg.sample_noise || init.has_noise_net(), ErrorCode::kContract,
          "window noise sampling needs a noise network");
  const auto t0 = std::chrono::steady_clock::now();
  FitResult res{init, {}};
  KoopmanModel model = init;
  const int h = cfg.horizon;
  const auto windows = enumerate_windows(scaled_train, h);
  require(!windows.empty(), ErrorCode::kInputShape, "no training windows");
  const PhysicsModel* physics = cfg.physics_enabled ? fp : nullptr;
  const Rng master = Rng(cfg.seed).stream("fit");

  LossWeights weights = LossWeights::initial(cfg.physics_enabled, cfg.static_scale, cfg.beta);
  Eigen::VectorXd params = pack_trainable(model);
  AdamState adam = AdamState::for_size(params.size(), cfg.learning_rate);
  Eigen::VectorXd rho = Eigen::Map<const Eigen::Vector4d>(weights.rho.data());
  AdamState rho_adam = AdamState::for_size(4, std::max(cfg.nu_learning_rate, 1e-300));
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng order_rng = master.stream("shuffle").stream(static_cast<std::uint64_t>(epoch));
    Rng noise_rng = master.stream("noise").stream(static_cast<std::uint64_t>(epoch));
    const auto order = shuffled(windows, order_rng);
    LossValues sums;
    const std::array<double, 4> eff = weights.effective_weights();
    for (std::size_t s = 0; s < order.size(); s += static_cast<std::size_t>(cfg.batch_size)) {
      const std::vector<WindowRef> part(
          order.begin() + static_cast<std::ptrdiff_t>(s),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + cfg.batch_size)));
      Batch batch = make_batch(scaled_train, part, h, model.n_g());
      if (cfg.sample_noise) fill_window_noise(model, batch, noise_rng);
      ModelGradients g = ModelGradients::zeros_like(model);
      const LossValues l = evaluate_losses(model, batch, physics, eff, &g);
      static const char* kNames[4] = {"L_x", "L_z", "L_px", "L_pz"};
      for (int i = 0; i < 4; ++i) {
        require(std::isfinite(l[i]), ErrorCode::kTrainingDiverged,
                std::string(kNames[i]) + " became non-finite in epoch " + std::to_string(epoch));
      }
      const Eigen::VectorXd gp = g.pack();
      require(gp.allFinite(), ErrorCode::kTrainingDiverged,
              "non-finite gradient in epoch " + std::to_string(epoch));
      adam_step(params, gp, adam);
      unpack_trainable(params, model);
      for (int i = 0; i < 4; ++i) sums.terms[i] += l[i] * static_cast<double>(part.size());
    }
    LossValues avg;
    for (int i = 0; i < 4; ++i) avg.terms[i] = sums[i] / static_cast<double>(order.size());

    EpochRecord rec;
    rec.epoch = epoch;
    rec.raw = avg;
    rec.train_loss = weights.total(avg);
    if (cfg.nu_learning_rate > 0.0) {
      const auto gr = weights.rho_gradient(avg);
      adam_step(rho, Eigen::Map<const Eigen::Vector4d>(gr.data()), rho_adam);
      for (int i = 0; i < 4; ++i) {
        if (weights.active[static_cast<std::size_t>(i)]) weights.rho[static_cast<std::size_t>(i)] = rho[i];
      }
    }
    for (int i = 0; i < 4; ++i) rec.nu[static_cast<std::size_t>(i)] = weights.nu(i);
    rec.val_loss = validation_loss(model, scaled_val.empty() ? scaled_train : scaled_val, cfg);
    rec.test_mse = scaled_test.empty() ? std::numeric_limits<double>::quiet_NaN()
                                       : evaluate_prediction(model, scaled_test, h).mse;
    if (rec.val_loss < best) {
      best = rec.val_loss;
      res.model = model;
      res.report.best_epoch = epoch;
      res.report.best_val_loss = rec.val_loss;
    }
    log_info("epoch " + std::to_string(epoch) + " train=" + format_double(rec.train_loss) +
             " val=" + format_double(rec.val_loss) + " test=" + format_double(rec.test_mse));
    res.report.epochs.push_back(rec);
  }
  for (int i = 0; i < 4; ++i) res.report.final_nu[static_cast<std::size_t>(i)] = weights.nu(i);
  res.report.wall_seconds = seconds_since(t0);
  return res;
}

PredictionReport evaluate_prediction(const KoopmanModel& m, const std::vector<Trajectory>& scaled_runs,
                                     int horizon) {
  require(horizon >= 1, ErrorCode::kConfiguration, "horizon must be at least 1");
  const auto windows = enumerate_windows(scaled_runs, horizon);
  require(!windows.empty(), ErrorCode::kInputShape, "no windows to evaluate");
  PredictionReport rep;
  rep.windows = static_cast<Eigen::Index>(windows.size());
  rep.per_state_mse = Eigen::VectorXd::Zero(m.n_x);
  rep.per_step_mse = Eigen::VectorXd::Zero(horizon);
  // Lift every sample once per run, then roll out from each window start.
  for (std::size_t r = 0; r < scaled_runs.size(); ++r) {
    const Trajectory& t = scaled_runs[r];
    if (t.size() <= horizon) continue;
    const Eigen::MatrixXd z = lift_batch(m, t.states);
    for (Eigen::Index s = 0; s + horizon < t.size(); ++s) {
      Eigen::VectorXd zj = z.col(s);
      for (int j = 0; j < horizon; ++j) {
        zj = m.A * zj + m.B * t.inputs.col(s + j);
        const Eigen::ArrayXd e2 = (t.states.col(s + j + 1) - zj.head(m.n_x)).array().square();
        rep.per_state_mse += e2.matrix();
        rep.per_step_mse[j] += e2.sum();
      }
    }
  }
  const double n = static_cast<double>(rep.windows);
  rep.mse = rep.per_state_mse.sum() / (n * horizon * m.n_x);
  rep.per_state_mse /= n * horizon;
  rep.per_step_mse /= n * m.n_x;
  return rep;
}

std::string prediction_residuals_csv(const KoopmanModel& m, const std::vector<Trajectory>& scaled_runs,
                                     int horizon) {
  std::ostringstream out;
  out << "window,j";
  for (int i = 0; i < m.n_x; ++i) out << ",e_" << (i + 1);
  out << '\n';
  long long w = 0;
  for (const auto& t : scaled_runs) {
    if (t.size() <= horizon) continue;
    const Eigen::MatrixXd z = lift_batch(m, t.states);
    for (Eigen::Index s = 0; s + horizon < t.size(); ++s, ++w) {
      Eigen::VectorXd zj = z.col(s);
      for (int j = 0; j < horizon; ++j) {
        zj = m.A * zj + m.B * t.inputs.col(s + j);
        out << w << ',' << (j + 1);
        for (int i = 0; i < m.n_x; ++i) out << ',' << format_double(t.states(i, s + j + 1) - zj[i]);
        out << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace koopmhe
