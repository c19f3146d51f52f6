#pragma once

#include <array>
#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>

#include "koopmhe/config.hpp"
#include "koopmhe/error.hpp"

namespace koopmhe {

inline constexpr int kStateDim = 9;
inline constexpr int kInputDim = 3;

using StateVector = Eigen::Matrix<double, kStateDim, 1>;
using InputVector = Eigen::Matrix<double, kInputDim, 1>;

// x = [xA1, xB1, T1, xA2, xB2, T2, xA3, xB3, T3]
enum StateIndex : int { kXA1 = 0, kXB1, kT1, kXA2, kXB2, kT2, kXA3, kXB3, kT3 };

inline const std::array<std::string, kStateDim> kStateNames = {
    "xA1", "xB1", "T1", "xA2", "xB2", "T2", "xA3", "xB3", "T3"};
inline const std::array<std::string, kInputDim> kInputNames = {"Q1", "Q2", "Q3"};

// Temperatures are the measured states and the ones with known balances.
inline constexpr std::array<int, 3> kTemperatureIndices = {kT1, kT2, kT3};

// Nominal operating point around which data is generated.
StateVector steady_state();

// Reactor-separator constants. Units: volumes m^3, flows m^3/h, temperatures K,
// rate constants 1/h, activation temperatures E/R in K, heats kJ/kg, cp kJ/(kg K),
// density kg/m^3. Flows, volumes, kinetics and volatilities follow the usual
// two-CSTR/flash benchmark; the heat constants are calibrated so that
// steady_state() is an equilibrium for heat duties inside the default input box.
struct ProcessParams {
  double V1 = 1.0;
  double V2 = 0.5;
  double V3 = 1.0;
  double F10 = 5.04;
  double F1 = 55.44;
  double F2 = 60.48;
  double F20 = 5.04;
  double Fr = 50.4;
  double Fp = 0.504;
  double xA10 = 1.0;
  double xB10 = 0.0;
  double xA20 = 1.0;
  double xB20 = 0.0;
  double T10 = 300.0;
  double T20 = 300.0;
  double k1 = 9.972e6;
  double k2 = 9.36e6;
  double E1_R = 6013.952369497233;
  double E2_R = 7216.742843396680;
  double dH1 = -228.0;
  double dH2 = -266.0;
  double dHvap1 = -7.35e4;
  double dHvap2 = -3.27e4;
  double dHvap3 = -8.46e4;
  double cp = 4.2;
  double rho = 1000.0;
  double alphaA = 3.5;
  double alphaB = 1.0;
  double alphaC = 0.5;

  void validate() const;

  static const std::vector<std::string>& keys();
  static ProcessParams from_key_values(const KeyValues& kv);
  static ProcessParams load(const std::string& path);
  KeyValues to_key_values() const;
};

namespace detail {

template <class T>
double value_of(const T& v) {
  if constexpr (std::is_arithmetic_v<T>) {
    return static_cast<double>(v);
  } else {
    return v.value();
  }
}

}  // namespace detail

template <class T>
struct RecycleFractions {
  T xA, xB, xC;
};

// Overhead composition of the flash separator from relative volatilities, with
// xC3 closed as 1 - xA3 - xB3 (clipped at zero).
template <class T>
RecycleFractions<T> recycle_fractions(const T& xA3, const T& xB3, const ProcessParams& p) {
  T xC3 = T(1.0) - xA3 - xB3;
  if (detail::value_of(xC3) < 0.0) xC3 = T(0.0);
  const T denom = p.alphaA * xA3 + p.alphaB * xB3 + p.alphaC * xC3;
  require(detail::value_of(denom) > 0.0, ErrorCode::kSingularComposition,
          "separator composition has non-positive volatility-weighted sum");
  return {p.alphaA * xA3 / denom, p.alphaB * xB3 / denom, p.alphaC * xC3 / denom};
}

// Right-hand sides of the nine material and energy balances (per hour).
template <class T>
Eigen::Matrix<T, kStateDim, 1> cstr_rhs(const Eigen::Matrix<T, kStateDim, 1>& x,
                                       const InputVector& u, const ProcessParams& p) {
  using std::exp;
  for (int i : kTemperatureIndices) {
    const double t = detail::value_of(x[i]);
    require(std::isfinite(t) && t > 0.0, ErrorCode::kDomain,
            "temperature " + std::to_string(t) + " K at state index " + std::to_string(i));
  }
  const T& xA1 = x[kXA1];
  const T& xB1 = x[kXB1];
  const T& T1 = x[kT1];
  const T& xA2 = x[kXA2];
  const T& xB2 = x[kXB2];
  const T& T2 = x[kT2];
  const T& xA3 = x[kXA3];
  const T& xB3 = x[kXB3];
  const T& T3 = x[kT3];

  const auto rec = recycle_fractions<T>(xA3, xB3, p);
  const T r1_1 = p.k1 * exp(-p.E1_R / T1);
  const T r2_1 = p.k2 * exp(-p.E2_R / T1);
  const T r1_2 = p.k1 * exp(-p.E1_R / T2);
  const T r2_2 = p.k2 * exp(-p.E2_R / T2);
  const double out3 = p.Fr + p.Fp;

  Eigen::Matrix<T, kStateDim, 1> f;
  f[kXA1] = p.F10 / p.V1 * (p.xA10 - xA1) + p.Fr / p.V1 * (rec.xA - xA1) - r1_1 * xA1;
  f[kXB1] = p.F10 / p.V1 * (p.xB10 - xB1) + p.Fr / p.V1 * (rec.xB - xB1) + r1_1 * xA1 -
            r2_1 * xB1;
  f[kT1] = p.F10 / p.V1 * (p.T10 - T1) + p.Fr / p.V1 * (T3 - T1) - p.dH1 / p.cp * r1_1 * xA1 -
           p.dH2 / p.cp * r2_1 * xB1 + u[0] / (p.rho * p.cp * p.V1);
  f[kXA2] = p.F1 / p.V2 * (xA1 - xA2) + p.F20 / p.V2 * (p.xA20 - xA2) - r1_2 * xA2;
  f[kXB2] = p.F1 / p.V2 * (xB1 - xB2) + p.F20 / p.V2 * (p.xB20 - xB2) + r1_2 * xA2 -
            r2_2 * xB2;
  f[kT2] = p.F1 / p.V2 * (T1 - T2) + p.F20 / p.V2 * (p.T20 - T2) - p.dH1 / p.cp * r1_2 * xA2 -
           p.dH2 / p.cp * r2_2 * xB2 + u[1] / (p.rho * p.cp * p.V2);
  f[kXA3] = p.F2 / p.V3 * (xA2 - xA3) - out3 / p.V3 * (rec.xA - xA3);
  f[kXB3] = p.F2 / p.V3 * (xB2 - xB3) - out3 / p.V3 * (rec.xB - xB3);
  f[kT3] = p.F2 / p.V3 * (T2 - T3) + u[2] / (p.rho * p.cp * p.V3) +
           out3 / (p.rho * p.cp * p.V3) *
               (rec.xA * p.dHvap1 + rec.xB * p.dHvap2 + rec.xC * p.dHvap3);
  return f;
}

// Classic four-stage Runge-Kutta step of dx/dt = rhs(x) with the input held.
template <class Rhs, class Vec>
Vec rk4(Rhs&& rhs, const Vec& x, double dt) {
  const Vec k1 = rhs(x);
  const Vec k2 = rhs(Vec(x + (0.5 * dt) * k1));
  const Vec k3 = rhs(Vec(x + (0.5 * dt) * k2));
  const Vec k4 = rhs(Vec(x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

inline double rk4(const auto& rhs, double x, double dt) {
  const double k1 = rhs(x);
  const double k2 = rhs(x + 0.5 * dt * k1);
  const double k3 = rhs(x + 0.5 * dt * k2);
  const double k4 = rhs(x + dt * k3);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

StateVector rk4_step(const StateVector& x, const InputVector& u, double dt,
                     const ProcessParams& p);

// One RK4 step of the balances listed in `equations` (state indices) with all
// other states held at their values in x. Returns the advanced components in
// the order given.
template <class T>
Eigen::Matrix<T, Eigen::Dynamic, 1> subset_step(const Eigen::Matrix<T, kStateDim, 1>& x,
                                                const InputVector& u, double dt,
                                                const ProcessParams& p,
                                                const std::vector<int>& equations) {
  using VecN = Eigen::Matrix<T, Eigen::Dynamic, 1>;
  const auto n = static_cast<Eigen::Index>(equations.size());
  auto rhs = [&](const VecN& part) {
    Eigen::Matrix<T, kStateDim, 1> xs = x;
    for (Eigen::Index i = 0; i < n; ++i) xs[equations[i]] = part[i];
    const auto f = cstr_rhs<T>(xs, u, p);
    VecN out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = f[equations[i]];
    return out;
  };
  VecN start(n);
  for (Eigen::Index i = 0; i < n; ++i) start[i] = x[equations[i]];
  return rk4(rhs, start, dt);
}

template <class T>
Eigen::Matrix<T, 3, 1> temperature_step(const Eigen::Matrix<T, kStateDim, 1>& x,
                                        const InputVector& u, double dt,
                                        const ProcessParams& p) {
  static const std::vector<int> temps(kTemperatureIndices.begin(), kTemperatureIndices.end());
  return subset_step<T>(x, u, dt, p, temps);
}

struct SubsetStepResult {
  Eigen::VectorXd values;
  Eigen::MatrixXd jacobian;  // d values / d x, one row per listed equation
};

// subset_step with its exact Jacobian (forward-mode automatic differentiation).
SubsetStepResult subset_step_with_jacobian(const StateVector& x, const InputVector& u, double dt,
                                           const ProcessParams& p,
                                           const std::vector<int>& equations);

struct TemperatureStepResult {
  Eigen::Vector3d temperatures;
  Eigen::Matrix<double, 3, kStateDim> jacobian;
};

TemperatureStepResult temperature_step_with_jacobian(const StateVector& x, const InputVector& u,
                                                     double dt, const ProcessParams& p);

// Heat duties that best balance the energy equations at x (least squares; the
// duties enter linearly).
InputVector equilibrium_input(const StateVector& x, const ProcessParams& p);

}  // namespace koopmhe
