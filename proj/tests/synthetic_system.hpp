#pragma once

// A two-state plant that is exactly linear in z = [x1, x2, relu(x1), relu(-x1)]:
//   x1+ = a x1
//   x2+ = b x2 + c relu(x1) + d relu(-x1) + e u
// (relu(a x1) = a relu(x1) for a > 0).

#include <cmath>

#include <Eigen/Dense>

#include "koopmhe/dataset.hpp"
#include "koopmhe/koopman_model.hpp"
#include "koopmhe/rng.hpp"

namespace testing_support {

struct SyntheticSystem {
  double a = 0.97, b = 0.9, c = 0.6, d = -0.5, e = 0.4;

  Eigen::Vector2d step(const Eigen::Vector2d& x, double u) const {
    return {a * x[0], b * x[1] + c * std::max(x[0], 0.0) + d * std::max(-x[0], 0.0) + e * u};
  }

  // Input levels held for `dwell` steps, drawn from [-1, 1].
  koopmhe::Trajectory simulate(const Eigen::Vector2d& x0, int samples, koopmhe::Rng& rng,
                               int dwell = 10) const {
    koopmhe::Trajectory t;
    t.dt = 1.0;
    t.states.resize(2, samples);
    t.inputs.resize(1, samples - 1);
    Eigen::Vector2d x = x0;
    double u = 0.0;
    for (int k = 0; k < samples; ++k) {
      t.states.col(k) = x;
      if (k + 1 == samples) break;
      if (k % dwell == 0) u = rng.uniform(-1.0, 1.0);
      t.inputs(0, k) = u;
      x = step(x, u);
    }
    return t;
  }

  // Stitches short runs from random initial states into one trajectory list.
  std::vector<koopmhe::Trajectory> runs(int count, int samples, koopmhe::Rng& rng) const {
    std::vector<koopmhe::Trajectory> out;
    for (int r = 0; r < count; ++r) {
      const Eigen::Vector2d x0(rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
      out.push_back(simulate(x0, samples, rng));
    }
    return out;
  }

  // Exact model under the identity scaler with a constant noise level.
  koopmhe::KoopmanModel exact_model(double sigma) const {
    koopmhe::KoopmanModel m;
    m.n_x = 2;
    m.n_u = 1;
    m.n_l = 2;
    m.measured = {0, 1};
    m.A = Eigen::MatrixXd::Zero(4, 4);
    m.A(0, 0) = a;
    m.A(1, 1) = b;
    m.A(1, 2) = c;
    m.A(1, 3) = d;
    m.A(2, 2) = a;
    m.A(3, 3) = a;
    m.B = Eigen::MatrixXd::Zero(4, 1);
    m.B(1, 0) = e;
    m.C = koopmhe::reconstruction_matrix(2, 4);
    m.D = koopmhe::build_D(koopmhe::selector_matrix(m.measured, 2), 4);
    koopmhe::DenseLayer hidden{Eigen::MatrixXd::Zero(2, 2), Eigen::VectorXd::Zero(2)};
    hidden.weight(0, 0) = 1.0;
    hidden.weight(1, 0) = -1.0;
    koopmhe::DenseLayer out{Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(2)};
    m.lifting_net = koopmhe::Mlp({hidden, out}, koopmhe::Activation::kRelu);
    m.noise_net = koopmhe::Mlp(
        {koopmhe::DenseLayer{Eigen::MatrixXd::Zero(4, 4), Eigen::VectorXd::Constant(4, std::log(sigma))}},
        koopmhe::Activation::kRelu);
    m.scaler.state_mean = Eigen::VectorXd::Zero(2);
    m.scaler.state_std = Eigen::VectorXd::Ones(2);
    m.scaler.input_mean = Eigen::VectorXd::Zero(1);
    m.scaler.input_std = Eigen::VectorXd::Ones(1);
    m.validate();
    return m;
  }
};

}  // namespace testing_support
