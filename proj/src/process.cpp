#include "koopmhe/process.hpp"

#include <unsupported/Eigen/AutoDiff>

namespace koopmhe {

StateVector steady_state() {
  StateVector x;
  x << 0.1763, 0.6731, 480.3165, 0.1965, 0.6536, 472.7863, 0.0651, 0.6703, 474.8877;
  return x;
}

namespace {

struct ParamField {
  const char* key;
  double ProcessParams::*field;
};

const std::array<ParamField, 29>& param_fields() {
  static const std::array<ParamField, 29> fields = {{
      {"V1", &ProcessParams::V1},         {"V2", &ProcessParams::V2},
      {"V3", &ProcessParams::V3},         {"F10", &ProcessParams::F10},
      {"F1", &ProcessParams::F1},         {"F2", &ProcessParams::F2},
      {"F20", &ProcessParams::F20},       {"Fr", &ProcessParams::Fr},
      {"Fp", &ProcessParams::Fp},         {"xA10", &ProcessParams::xA10},
      {"xB10", &ProcessParams::xB10},     {"xA20", &ProcessParams::xA20},
      {"xB20", &ProcessParams::xB20},     {"T10", &ProcessParams::T10},
      {"T20", &ProcessParams::T20},       {"k1", &ProcessParams::k1},
      {"k2", &ProcessParams::k2},         {"E1_R", &ProcessParams::E1_R},
      {"E2_R", &ProcessParams::E2_R},     {"dH1", &ProcessParams::dH1},
      {"dH2", &ProcessParams::dH2},       {"dHvap1", &ProcessParams::dHvap1},
      {"dHvap2", &ProcessParams::dHvap2}, {"dHvap3", &ProcessParams::dHvap3},
      {"cp", &ProcessParams::cp},         {"rho", &ProcessParams::rho},
      {"alphaA", &ProcessParams::alphaA}, {"alphaB", &ProcessParams::alphaB},
      {"alphaC", &ProcessParams::alphaC},
  }};
  return fields;
}

}  // namespace

void ProcessParams::validate() const {
  const std::array<std::pair<const char*, double>, 15> positive = {{
      {"V1", V1}, {"V2", V2}, {"V3", V3}, {"F10", F10}, {"F1", F1},
      {"F2", F2}, {"F20", F20}, {"Fr", Fr}, {"Fp", Fp}, {"cp", cp},
      {"rho", rho}, {"alphaA", alphaA}, {"alphaB", alphaB}, {"alphaC", alphaC},
      {"k1", k1},
  }};
  for (const auto& [name, v] : positive) {
    require(std::isfinite(v) && v > 0.0, ErrorCode::kConfiguration,
            std::string("process parameter ") + name + " must be positive");
  }
  for (const auto& f : param_fields()) {
    require(std::isfinite(this->*f.field), ErrorCode::kConfiguration,
            std::string("process parameter ") + f.key + " is not finite");
  }
}

const std::vector<std::string>& ProcessParams::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& f : param_fields()) out.emplace_back(f.key);
    return out;
  }();
  return names;
}

ProcessParams ProcessParams::from_key_values(const KeyValues& kv) {
  kv.expect_only(keys(), "process parameter");
  ProcessParams p;
  for (const auto& f : param_fields()) {
    if (kv.has(f.key)) p.*f.field = kv.get_double(f.key);
  }
  p.validate();
  return p;
}

ProcessParams ProcessParams::load(const std::string& path) {
  return from_key_values(KeyValues::load(path));
}

KeyValues ProcessParams::to_key_values() const {
  KeyValues kv;
  for (const auto& f : param_fields()) kv.set(f.key, format_double(this->*f.field));
  return kv;
}

StateVector rk4_step(const StateVector& x, const InputVector& u, double dt,
                     const ProcessParams& p) {
  require(dt > 0.0, ErrorCode::kConfiguration, "integration step must be positive");
  return rk4([&](const StateVector& s) { return cstr_rhs<double>(s, u, p); }, x, dt);
}

SubsetStepResult subset_step_with_jacobian(const StateVector& x, const InputVector& u, double dt,
                                           const ProcessParams& p,
                                           const std::vector<int>& equations) {
  for (int e : equations) {
    require(e >= 0 && e < kStateDim, ErrorCode::kConfiguration,
            "physics equation index " + std::to_string(e) + " out of range");
  }
  using Deriv = Eigen::Matrix<double, kStateDim, 1>;
  using Dual = Eigen::AutoDiffScalar<Deriv>;
  Eigen::Matrix<Dual, kStateDim, 1> xd;
  for (int i = 0; i < kStateDim; ++i) xd[i] = Dual(x[i], kStateDim, i);
  const auto out = subset_step<Dual>(xd, u, dt, p, equations);
  SubsetStepResult r;
  r.values.resize(out.size());
  r.jacobian.resize(out.size(), kStateDim);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    r.values[i] = out[i].value();
    // A component that depends on no input carries an empty derivative.
    if (out[i].derivatives().size() == kStateDim) {
      r.jacobian.row(i) = out[i].derivatives().transpose();
    } else {
      r.jacobian.row(i).setZero();
    }
  }
  return r;
}

TemperatureStepResult temperature_step_with_jacobian(const StateVector& x, const InputVector& u,
                                                     double dt, const ProcessParams& p) {
  static const std::vector<int> temps(kTemperatureIndices.begin(), kTemperatureIndices.end());
  const auto s = subset_step_with_jacobian(x, u, dt, p, temps);
  return {s.values, s.jacobian};
}

InputVector equilibrium_input(const StateVector& x, const ProcessParams& p) {
  // f_T(x, u) = f_T(x, 0) + G u with G diagonal in the heat duties.
  const StateVector f0 = cstr_rhs<double>(x, InputVector::Zero(), p);
  InputVector u;
  u[0] = -f0[kT1] * p.rho * p.cp * p.V1;
  u[1] = -f0[kT2] * p.rho * p.cp * p.V2;
  u[2] = -f0[kT3] * p.rho * p.cp * p.V3;
  return u;
}

}  // namespace koopmhe
