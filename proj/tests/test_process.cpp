#include <doctest.h>

#include <cmath>

#include "koopmhe/process.hpp"
#include "koopmhe/rng.hpp"
#include "test_support.hpp"

using namespace koopmhe;

namespace {

// Heat duties balancing the energy equations at the nominal point, computed
// once by an independent least-squares solve of f(x_s, u) = 0.
const InputVector kEquilibriumDuties(3003084.26451425, 1045137.97915691, 2996781.32484068);

}  // namespace

TEST_CASE("recycle fractions sum to one and respect volatility symmetry") {
  const ProcessParams p;
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double a = rng.uniform(), b = rng.uniform() * (1.0 - a);
    const auto r = recycle_fractions(a, b, p);
    CHECK(std::abs(r.xA + r.xB + r.xC - 1.0) <= 1e-14);
    CHECK(r.xA >= 0.0);
    CHECK(r.xC >= 0.0);
  }
  ProcessParams eq = p;
  eq.alphaA = eq.alphaB = eq.alphaC = 2.0;
  const auto r = recycle_fractions(0.2, 0.5, eq);
  CHECK(r.xA == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(r.xB == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("recycle fractions reject a zero denominator") {
  // 1*(-1) + 0.5*(1 - 0 + 1) = 0
  try {
    recycle_fractions(0.0, -1.0, ProcessParams{});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kSingularComposition);
  }
}

TEST_CASE("non-positive temperature is a domain error") {
  StateVector x = steady_state();
  x[kT2] = 0.0;
  try {
    cstr_rhs<double>(x, kEquilibriumDuties, ProcessParams{});
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDomain);
  }
}

TEST_CASE("nominal point is nearly stationary at the equilibrium duties") {
  const ProcessParams p;
  const StateVector f = cstr_rhs<double>(steady_state(), kEquilibriumDuties, p);
  for (int i = 0; i < kStateDim; ++i) CHECK(std::abs(f[i]) < 0.01);
  // Transient derivative magnitudes are orders larger.
  const StateVector g = cstr_rhs<double>(1.2 * steady_state(), kEquilibriumDuties, p);
  CHECK(std::abs(g[kT1]) > 1e3);

  const InputVector u = equilibrium_input(steady_state(), p);
  CHECK((u - kEquilibriumDuties).norm() < 1e-4 * kEquilibriumDuties.norm());
}

TEST_CASE("simulated transient matches an independent integration") {
  const ProcessParams p;
  StateVector x = 1.2 * steady_state();
  for (int k = 0; k < 11; ++k) x = rk4_step(x, kEquilibriumDuties, 1e-3, p);
  CHECK(x[kT1] == doctest::Approx(598.9910).epsilon(2e-7));
  CHECK(x[kT2] == doctest::Approx(589.5525).epsilon(2e-7));
  CHECK(x[kT3] == doctest::Approx(577.1342).epsilon(2e-7));
  CHECK(x[kXB3] == doctest::Approx(0.8068).epsilon(1e-4));
}

TEST_CASE("rk4 on trivial and exponential test equations") {
  const Eigen::Vector2d x0(1.0, -2.0);
  const auto zero = [](const Eigen::Vector2d&) { return Eigen::Vector2d::Zero().eval(); };
  CHECK(rk4(zero, x0, 0.1) == x0);

  const auto decay = [](double v) { return -v; };
  CHECK(std::abs(rk4(decay, 1.0, 0.1) - std::exp(-0.1)) < 1e-7);

  const auto global_error = [&](int steps) {
    double v = 1.0;
    const double dt = 1.0 / steps;
    for (int i = 0; i < steps; ++i) v = rk4(decay, v, dt);
    return std::abs(v - std::exp(-1.0));
  };
  for (int n : {5, 10, 20}) {
    const double ratio = global_error(n) / global_error(2 * n);
    CHECK(std::log2(ratio) >= 3.5);
    CHECK(std::log2(ratio) <= 4.5);
  }
}

TEST_CASE("temperature step Jacobian matches finite differences") {
  const ProcessParams p;
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    StateVector x;
    for (int i = 0; i < kStateDim; ++i) x[i] = steady_state()[i] * rng.uniform(1.0, 1.2);
    const auto r = temperature_step_with_jacobian(x, kEquilibriumDuties, 1e-3, p);
    CHECK((r.temperatures - temperature_step<double>(x, kEquilibriumDuties, 1e-3, p)).norm() ==
          0.0);
    for (int row = 0; row < 3; ++row) {
      const auto fn = [&](const Eigen::VectorXd& v) {
        return temperature_step<double>(StateVector(v), kEquilibriumDuties, 1e-3, p)[row];
      };
      // Perturb each coordinate relative to its magnitude.
      Eigen::VectorXd fd(kStateDim);
      for (int i = 0; i < kStateDim; ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(x[i]));
        StateVector a = x, b = x;
        a[i] += h;
        b[i] -= h;
        fd[i] = (fn(a) - fn(b)) / (2.0 * h);
      }
      CHECK(testing_support::relative_error(r.jacobian.row(row).transpose(), fd) < 1e-6);
    }
  }
}

TEST_CASE("temperature step freezes compositions and approximates the full step") {
  const ProcessParams p;
  const StateVector x = 1.1 * steady_state();
  const Eigen::Vector3d tp = temperature_step<double>(x, kEquilibriumDuties, 1e-3, p);
  const StateVector full = rk4_step(x, kEquilibriumDuties, 1e-3, p);
  for (int i = 0; i < 3; ++i) {
    const double exact = full[kTemperatureIndices[i]];
    const double moved = std::abs(exact - x[kTemperatureIndices[i]]);
    CHECK(std::abs(tp[i] - exact) < 0.1 * moved + 1e-9);
  }
}

TEST_CASE("parameters round-trip through key-value text and validate") {
  ProcessParams p;
  p.k1 = 1.5e7;
  const ProcessParams q = ProcessParams::from_key_values(
      KeyValues::parse(p.to_key_values().to_string()));
  CHECK(q.k1 == 1.5e7);
  CHECK(q.E2_R == p.E2_R);
  KeyValues bad;
  bad.set("V1", "-1");
  CHECK_THROWS_AS(ProcessParams::from_key_values(bad), Error);
  KeyValues unknown;
  unknown.set("V9", "1");
  CHECK_THROWS_AS(ProcessParams::from_key_values(unknown), Error);
}
