#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "koopmhe/koopman_model.hpp"
#include "koopmhe/log.hpp"

using namespace koopmhe;

namespace {

Scaler unit_scaler(int n_x, int n_u) {
  Scaler s;
  s.state_mean = Eigen::VectorXd::LinSpaced(n_x, 1.0, 2.0);
  s.state_std = Eigen::VectorXd::LinSpaced(n_x, 0.5, 3.0);
  s.input_mean = Eigen::VectorXd::Constant(n_u, 10.0);
  s.input_std = Eigen::VectorXd::Constant(n_u, 4.0);
  return s;
}

KoopmanModel default_model(std::uint64_t seed = 1) {
  return make_model(ModelShape{}, unit_scaler(kStateDim, kInputDim), seed);
}

Eigen::VectorXd random_vector(Eigen::Index n, Rng& rng, double scale = 1.0) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return v;
}

}  // namespace

TEST_CASE("lift and reconstruct") {
  const KoopmanModel m = default_model();
  CHECK(m.n_g() == 22);
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const Eigen::VectorXd x = random_vector(9, rng, 500.0);
    const Eigen::VectorXd z = lift(m, x, false);
    CHECK(z.size() == 22);
    const Eigen::VectorXd xs = m.scaler.scale_states(x);
    CHECK(reconstruct_scaled(m, z) == xs);
  }
  KoopmanModel zero = default_model();
  for (auto& l : zero.lifting_net.layers()) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(9);
  const Eigen::VectorXd z = lift(zero, x, true);
  CHECK(z.head(9) == x);
  CHECK(z.tail(13).norm() == 0.0);

  CHECK(reconstruct_scaled(m, Eigen::VectorXd::Zero(22)).norm() == 0.0);
  CHECK(reconstruct_unscaled(m, Eigen::VectorXd::Zero(22)) == m.scaler.state_mean);
  CHECK_THROWS_AS(reconstruct_scaled(m, Eigen::VectorXd::Zero(21)), Error);
}

TEST_CASE("C and D structure") {
  const KoopmanModel m = default_model();
  CHECK(m.C.leftCols(9) == Eigen::MatrixXd::Identity(9, 9));
  CHECK(m.C.rightCols(13).norm() == 0.0);
  for (Eigen::Index r = 0; r < 3; ++r) {
    for (Eigen::Index c = 0; c < 22; ++c) {
      const bool unit = (r == 0 && c == 2) || (r == 1 && c == 5) || (r == 2 && c == 8);
      CHECK(m.D(r, c) == (unit ? 1.0 : 0.0));
    }
  }
  const Eigen::MatrixXd full = build_D(Eigen::MatrixXd::Identity(9, 9), 22);
  CHECK(full == m.C);
  Rng rng(3);
  const Eigen::VectorXd x = random_vector(9, rng);
  const Eigen::VectorXd y = m.D * lift(m, x, true);
  CHECK(y == Eigen::Vector3d(x[2], x[5], x[8]));

  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(2, 9);
  bad(0, 1) = 1.0;
  CHECK_THROWS_AS(build_D(bad, 22), Error);
  bad(1, 2) = 0.5;
  CHECK_THROWS_AS(build_D(bad, 22), Error);
}

TEST_CASE("noise std") {
  KoopmanModel m = default_model();
  for (auto& l : m.noise_net.layers()) {
    l.weight.setZero();
    l.bias.setZero();
  }
  const Eigen::VectorXd z = Eigen::VectorXd::Ones(22);
  CHECK(noise_std(m, z) == Eigen::VectorXd::Ones(22));
  m.noise_net.layers().back().bias[4] = std::log(2.0);
  CHECK(noise_std(m, z)[4] == doctest::Approx(2.0).epsilon(1e-15));

  m.noise_net.layers().back().bias[0] = 1000.0;
  const LogLevel prev = log_level();
  set_log_level(LogLevel::kQuiet);
  int clamped = 0;
  const Eigen::VectorXd s = noise_std(m, z, &clamped);
  set_log_level(prev);
  CHECK(clamped == 1);
  CHECK(s[0] == 1e6);

  const KoopmanModel r = default_model(9);
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Eigen::VectorXd zz = random_vector(22, rng, 3.0);
    const Eigen::VectorXd sig = noise_std(r, zz);
    // independent forward: relu hidden layer then linear output
    const auto& l0 = r.noise_net.layers()[0];
    const auto& l1 = r.noise_net.layers()[1];
    const Eigen::VectorXd h = (l0.weight * zz + l0.bias).cwiseMax(0.0);
    const Eigen::VectorXd ref = (l1.weight * h + l1.bias).array().exp().matrix();
    CHECK((sig - ref).norm() <= 1e-14 * ref.norm());
    CHECK((sig.array() > 0.0).all());
  }
}

TEST_CASE("rollout recursions") {
  KoopmanModel m = default_model();
  Rng rng(5);
  const Eigen::VectorXd z0 = random_vector(22, rng);
  const Eigen::MatrixXd u = Eigen::MatrixXd::Random(3, 4);
  auto r = rollout(m, z0, u, Eigen::VectorXd::Zero(22));
  for (int j = 0; j <= 4; ++j) CHECK(r.z.col(j) == z0);
  const Eigen::VectorXd mu = random_vector(22, rng);
  r = rollout(m, z0, u, mu);
  for (int j = 0; j <= 4; ++j) CHECK((r.z.col(j) - (z0 + j * mu)).norm() < 1e-14);
  CHECK(r.x == r.z.topRows(9));

  m.A = Eigen::MatrixXd::Random(22, 22) * 0.3;
  m.B = Eigen::MatrixXd::Random(22, 3);
  const Eigen::MatrixXd u3 = Eigen::MatrixXd::Random(3, 3);
  r = rollout(m, z0, u3, mu);
  const Eigen::VectorXd hand =
      m.A * (m.A * (m.A * z0 + m.B * u3.col(0) + mu) + m.B * u3.col(1) + mu) + m.B * u3.col(2) + mu;
  CHECK((r.z.col(3) - hand).norm() < 1e-12);

  // Linearity in (z0, mu) with inputs fixed.
  const Eigen::VectorXd z0b = random_vector(22, rng);
  const Eigen::VectorXd mub = random_vector(22, rng);
  const double a = 1.7;
  const Eigen::MatrixXd base = rollout(m, z0, u3, mu).z;
  const Eigen::MatrixXd lhs = rollout(m, Eigen::VectorXd(a * z0b + z0), u3, Eigen::VectorXd(a * mub + mu)).z - base;
  const Eigen::MatrixXd rhs = rollout(m, Eigen::VectorXd(z0b + z0), u3, Eigen::VectorXd(mub + mu)).z - base;
  CHECK((lhs - a * rhs).norm() < 1e-10);
}

TEST_CASE("serialization round trip and corruption") {
  KoopmanModel m = default_model(7);
  m.A = Eigen::MatrixXd::Random(22, 22);
  m.B = Eigen::MatrixXd::Random(22, 3);
  m.metadata["physics"] = "on";
  const std::string bytes = serialize_model(m);
  const KoopmanModel back = deserialize_model(bytes);
  CHECK(back == m);
  CHECK(serialize_model(back) == bytes);

  const std::string path = "koopman_model_roundtrip.bin";
  save_model(m, path);
  CHECK(load_model(path) == m);
  std::remove(path.c_str());

  for (std::size_t cut : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}}) {
    try {
      deserialize_model(bytes.substr(0, cut));
      FAIL("expected error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kLoad);
    }
  }
  std::string flipped = bytes;
  flipped[100] ^= 0x01;
  CHECK_THROWS_AS(deserialize_model(flipped), Error);

  const std::string text = export_readable(m);
  CHECK(text.find("n_g 22") != std::string::npos);
  CHECK(text.find("meta physics = on") != std::string::npos);
}

TEST_CASE("degenerate lifted dimension") {
  ModelShape shape;
  shape.n_l = 0;
  const KoopmanModel m = make_model(shape, unit_scaler(9, 3), 1);
  CHECK(m.n_g() == 9);
  const Eigen::VectorXd x = Eigen::VectorXd::Ones(9);
  CHECK(lift(m, x, true) == x);
  CHECK(deserialize_model(serialize_model(m)) == m);
}
