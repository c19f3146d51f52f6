#include <doctest.h>

#include <cmath>

#include "koopmhe/error.hpp"
#include "koopmhe/nn.hpp"
#include "koopmhe/rng.hpp"
#include "test_support.hpp"

using namespace koopmhe;
using testing_support::central_difference;
using testing_support::relative_error;

namespace {

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

TEST_CASE("zero weights return the output bias") {
  Mlp net = init_mlp({4, 5, 3}, 1);
  for (auto& l : net.layers()) l.weight.setZero();
  net.layers().back().bias << 0.5, -2.0, 3.0;
  const Eigen::VectorXd y = mlp_eval(net, Eigen::VectorXd::Constant(4, 7.0));
  CHECK(y == net.layers().back().bias);
}

TEST_CASE("single identity layer passes input through") {
  Mlp net({DenseLayer{Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3)}},
          Activation::kRelu);
  const Eigen::Vector3d x(-1.0, 2.0, -3.0);
  CHECK(mlp_eval(net, x) == Eigen::VectorXd(x));
}

TEST_CASE("3-2-2 network matches hand evaluation") {
  Eigen::MatrixXd w1(2, 3), w2(2, 2);
  w1 << 0.5, -1.0, 2.0, -0.25, 0.75, 1.5;
  w2 << 1.0, 2.0, -3.0, 0.5;
  Eigen::VectorXd b1(2), b2(2);
  b1 << 0.1, -5.0;
  b2 << 0.0, 1.0;
  Mlp net({{w1, b1}, {w2, b2}}, Activation::kRelu);
  Eigen::VectorXd x(3);
  x << 1.0, 2.0, 3.0;
  // hidden pre-activations: 0.5-2+6+0.1 = 4.6 ; -0.25+1.5+4.5-5 = 0.75
  // outputs: 4.6 + 1.5 = 6.1 ; -13.8 + 0.375 + 1 = -12.425
  const Eigen::VectorXd y = mlp_eval(net, x);
  CHECK(y[0] == doctest::Approx(6.1).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(-12.425).epsilon(1e-14));
}

TEST_CASE("input size mismatch is an input-shape error") {
  const Mlp net = init_mlp({3, 4, 2}, 2);
  try {
    mlp_eval(net, Eigen::VectorXd::Zero(4));
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInputShape);
  }
}

TEST_CASE("zero cotangent gives zero gradients") {
  const Mlp net = init_mlp({3, 6, 2}, 3);
  auto fwd = mlp_forward(net, Eigen::Vector3d(0.3, -0.2, 0.9));
  const auto back = mlp_backward(net, fwd.cache, Eigen::VectorXd::Zero(2));
  CHECK(back.param_grads.pack().norm() == 0.0);
  CHECK(back.input_grad.norm() == 0.0);
}

TEST_CASE("scalar linear chain rule") {
  Mlp net({DenseLayer{Eigen::MatrixXd::Constant(1, 1, 2.5), Eigen::VectorXd::Zero(1)}},
          Activation::kRelu);
  auto fwd = mlp_forward(net, Eigen::VectorXd::Constant(1, -4.0));
  const auto back = mlp_backward(net, fwd.cache, Eigen::VectorXd::Ones(1));
  CHECK(back.param_grads.layers[0].weight(0, 0) == -4.0);
  CHECK(back.input_grad[0] == 2.5);
}

TEST_CASE("backward with another network's cache is a contract error") {
  const Mlp a = init_mlp({3, 4, 2}, 4);
  const Mlp b = init_mlp({3, 4, 2}, 5);
  auto fwd = mlp_forward(a, Eigen::Vector3d::Ones());
  CHECK_THROWS_AS(mlp_backward(b, fwd.cache, Eigen::VectorXd::Ones(2)), Error);
}

TEST_CASE("gradients match central differences on random networks") {
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Activation act = trial % 2 == 0 ? Activation::kRelu : Activation::kTanh;
    const int in = 2 + static_cast<int>(rng.uniform_index(5));
    const int hidden = 3 + static_cast<int>(rng.uniform_index(8));
    const int out = 1 + static_cast<int>(rng.uniform_index(4));
    Mlp net = init_mlp({in, hidden, hidden, out}, rng.next_u64(), act);
    // Nonzero biases keep pre-activations away from the ReLU kink at exactly 0.
    for (auto& l : net.layers()) l.bias = random_vector(l.bias.size(), rng);
    const Eigen::VectorXd x = random_vector(in, rng);
    const Eigen::VectorXd c = random_vector(out, rng);  // scalarization weights

    auto fwd = mlp_forward(net, x);
    const auto back = mlp_backward(net, fwd.cache, c);

    const auto loss_params = [&](const Eigen::VectorXd& p) {
      Mlp m = net;
      m.unpack(p);
      return c.dot(mlp_eval(m, x));
    };
    const auto loss_input = [&](const Eigen::VectorXd& xi) { return c.dot(mlp_eval(net, xi)); };
    CHECK(relative_error(back.param_grads.pack(), central_difference(loss_params, net.pack())) <
          1e-4);
    CHECK(relative_error(back.input_grad, central_difference(loss_input, x)) < 1e-4);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("init is deterministic with the documented shapes and spread") {
  const Mlp a = init_mlp({9, 32, 13}, 42);
  const Mlp b = init_mlp({9, 32, 13}, 42);
  CHECK(a == b);
  CHECK(a.layers()[0].weight.rows() == 32);
  CHECK(a.layers()[0].weight.cols() == 9);
  CHECK(a.layers()[1].weight.rows() == 13);
  CHECK(a.layers()[1].weight.cols() == 32);
  CHECK(a.layers()[0].bias.norm() == 0.0);

  const Mlp big = init_mlp({1000, 1000}, 7);
  const Eigen::MatrixXd& w = big.layers()[0].weight;
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().mean());
  const double target = std::sqrt(6.0 / 2000.0) / std::sqrt(3.0);
  CHECK(std::abs(sd - target) < 0.2 * target);

  CHECK_THROWS_AS(init_mlp({3}, 1), Error);
  CHECK_THROWS_AS(init_mlp({3, 0, 2}, 1), Error);
}

TEST_CASE("adam basics") {
  SUBCASE("zero gradient is a fixed point") {
    Eigen::VectorXd p(3);
    p << 1.0, -2.0, 3.0;
    const Eigen::VectorXd before = p;
    AdamState s = AdamState::for_size(3, 1e-3);
    adam_step(p, Eigen::VectorXd::Zero(3), s);
    CHECK(p == before);
    CHECK(s.first_moment.norm() == 0.0);
    CHECK(s.second_moment.norm() == 0.0);
    CHECK(s.step_count == 1);
  }
  SUBCASE("first step moves by the learning rate") {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(1, 0.5);
    AdamState s = AdamState::for_size(1, 1e-3);
    adam_step(p, Eigen::VectorXd::Constant(1, 3.7), s);
    // m_hat = g, v_hat = g^2  ->  step = lr * g / (|g| + eps)
    CHECK(0.5 - p[0] == doctest::Approx(1e-3 * 3.7 / (3.7 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("descends a quadratic") {
    Eigen::VectorXd p = Eigen::VectorXd::Constant(1, 2.0);
    AdamState s = AdamState::for_size(1, 0.1);
    const auto loss = [](double v) { return v * v; };
    double prev = loss(p[0]);
    for (int i = 0; i < 2; ++i) {
      adam_step(p, Eigen::VectorXd::Constant(1, 2.0 * p[0]), s);
      CHECK(loss(p[0]) < prev);
      prev = loss(p[0]);
    }
  }
  SUBCASE("non-finite gradient is a divergence error") {
    Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
    AdamState s = AdamState::for_size(2, 1e-3);
    try {
      adam_step(p, Eigen::Vector2d(1.0, std::nan("")), s);
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kTrainingDiverged);
    }
  }
}

TEST_CASE("batched passes agree with per-sample passes") {
  Rng rng(21);
  Mlp net = init_mlp({4, 7, 7, 3}, 8);
  for (auto& l : net.layers()) l.bias = random_vector(l.bias.size(), rng);
  Eigen::MatrixXd x(4, 6), g(3, 6);
  for (Eigen::Index c = 0; c < 6; ++c) {
    x.col(c) = random_vector(4, rng);
    g.col(c) = random_vector(3, rng);
  }
  MlpBatchCache cache;
  const Eigen::MatrixXd y = mlp_forward_batch(net, x, &cache);
  MlpGradients acc = MlpGradients::zeros_like(net);
  const Eigen::MatrixXd gx = mlp_backward_batch(net, cache, g, acc);
  MlpGradients ref = MlpGradients::zeros_like(net);
  for (Eigen::Index c = 0; c < 6; ++c) {
    auto fwd = mlp_forward(net, x.col(c));
    CHECK((fwd.output - y.col(c)).norm() < 1e-14);
    const Eigen::VectorXd in = mlp_backward_accumulate(net, fwd.cache, g.col(c), ref);
    CHECK((in - gx.col(c)).norm() < 1e-13);
  }
  CHECK((ref.pack() - acc.pack()).norm() < 1e-12);
}
