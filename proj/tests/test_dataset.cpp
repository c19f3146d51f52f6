#include <doctest.h>

#include <cmath>

#include "koopmhe/dataset.hpp"

using namespace koopmhe;

namespace {

DatasetConfig small_config() {
  DatasetConfig c;
  c.n_windows = 100;
  c.horizon = 5;
  return c;
}

}  // namespace

TEST_CASE("zero disturbance reproduces deterministic integration") {
  const ProcessParams p;
  Rng rng(1);
  const Eigen::MatrixXd u = generate_inputs(30, InputPolicy{}, rng);
  const Trajectory t =
      simulate(steady_state(), u, DisturbanceConfig::none(kStateDim), p, 1e-3);
  StateVector x = steady_state();
  for (int k = 0; k < 30; ++k) {
    x = rk4_step(x, u.col(k), 1e-3, p);
    CHECK(t.states.col(k + 1) == Eigen::VectorXd(x));
  }
  CHECK(t.inputs.cols() == t.states.cols() - 1);
}

TEST_CASE("truncated disturbance statistics") {
  DisturbanceConfig d;
  d.stddev = Eigen::Vector2d(0.5, 3.0);
  d.bound = Eigen::Vector2d(5.0, 4.0);
  Rng rng(9);
  const int n = 100000;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero(), sq = Eigen::Vector2d::Zero();
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd w = sample_disturbance(d, rng);
    CHECK_MESSAGE((w.array().abs() <= d.bound.array()).all(), "sample exceeds bound");
    sum += w;
    sq += w.cwiseAbs2();
  }
  const Eigen::Vector2d mean = sum / n;
  const Eigen::Vector2d sd = (sq / n - mean.cwiseAbs2()).cwiseSqrt();
  // The first component is effectively untruncated.
  CHECK(std::abs(sd[0] - 0.5) < 0.05 * 0.5);
  // Second: N(0, 3^2) truncated to +-4 has a smaller spread, about 2.11.
  CHECK(sd[1] < 3.0);
  CHECK(std::abs(sd[1] - 2.111) < 0.1 * 2.111);
}

TEST_CASE("generated inputs stay inside the box") {
  Rng rng(2);
  const InputPolicy pol;
  const Eigen::MatrixXd u = generate_inputs(5000, pol, rng);
  for (int i = 0; i < kInputDim; ++i) {
    CHECK(u.row(i).minCoeff() >= pol.lower[i]);
    CHECK(u.row(i).maxCoeff() <= pol.upper[i]);
  }
  CHECK(u(0, 0) != u(0, pol.dwell));
}

TEST_CASE("dataset windows, split and determinism") {
  const ProcessParams p;
  DatasetConfig c = small_config();
  std::vector<Eigen::MatrixXd> applied;
  const auto a = generate_dataset(c, p, 77, &applied);
  const auto b = generate_dataset(c, p, 77);
  REQUIRE(a.train.size() == 1);
  REQUIRE(a.validation.size() == 1);
  CHECK(a.train[0] == b.train[0]);
  CHECK(a.validation[0] == b.validation[0]);
  CHECK(TrajectoryDataset::window_count(a.train, c.horizon) == 80);
  CHECK(TrajectoryDataset::window_count(a.validation, c.horizon) == 20);
  CHECK(a.train[0].states.col(80) == a.validation[0].states.col(0));
  for (const auto& w : applied) {
    for (Eigen::Index k = 0; k < w.cols(); ++k) {
      CHECK((w.col(k).array().abs() <= a.disturbance.bound.array()).all());
    }
  }
  const auto other = generate_dataset(c, p, 78);
  CHECK_FALSE(other.train[0] == a.train[0]);

  c.n_windows = 2000;
  c.horizon = 20;
  const auto full = generate_dataset(c, p, 5);
  CHECK(full.train[0].size() + full.validation[0].size() - c.horizon == 2020);
  CHECK(TrajectoryDataset::window_count(full.train, 20) +
            TrajectoryDataset::window_count(full.validation, 20) ==
        2000);
  for (const auto& t : full.train) {
    CHECK(t.inputs.row(0).minCoeff() >= 2.8e6);
    CHECK(t.inputs.row(0).maxCoeff() <= 3.2e6);
  }
}

TEST_CASE("single window dataset") {
  DatasetConfig c;
  c.n_windows = 1;
  c.horizon = 1;
  const auto ds = generate_dataset(c, ProcessParams{}, 3);
  CHECK(ds.train[0].size() == 2);
  CHECK(ds.validation.empty());
  CHECK(enumerate_windows(ds.train, 1).size() == 1);
}

TEST_CASE("scaler round trip and training statistics") {
  const auto ds = generate_dataset(small_config(), ProcessParams{}, 4);
  const Scaler s = fit_scaler(ds.train);
  const Trajectory scaled = s.scale(ds.train[0]);
  CHECK(scaled.states.rowwise().mean().cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::VectorXd sd =
      (scaled.states.array().square().rowwise().mean()).sqrt().matrix();
  CHECK((sd.array() - 1.0).abs().maxCoeff() < 1e-10);
  const Trajectory back = s.unscale(scaled);
  const Eigen::ArrayXXd rel = (back.states - ds.train[0].states).array().abs() /
                              ds.train[0].states.array().abs().max(1.0);
  CHECK(rel.maxCoeff() < 1e-12);

  Trajectory flat = ds.train[0];
  flat.states.row(3).setConstant(0.25);
  try {
    fit_scaler({flat});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateScaling);
  }
}

TEST_CASE("trajectory csv round trip") {
  const auto ds = generate_dataset(small_config(), ProcessParams{}, 6);
  const std::string text = trajectory_to_csv(ds.train[0], {"config_hash=abc"});
  CHECK(text.find("k,xA1,xB1,T1,xA2,xB2,T2,xA3,xB3,T3,Q1,Q2,Q3") != std::string::npos);
  const Trajectory back = trajectory_from_csv(text, kInputDim);
  CHECK(back == ds.train[0]);
  CHECK(trajectory_to_csv(back, {"config_hash=abc"}) == text);

  const std::string gap = "k,x1,u1\n0,1,2\n2,3,\n";
  try {
    trajectory_from_csv(gap, 1);
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("sample index 2") != std::string::npos);
  }
}
