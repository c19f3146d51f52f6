#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "koopmhe/training.hpp"

namespace testing_support {

// Three-state toy plant with one known equation (state 1):
//   x1+ = x1 + dt * (-0.5 x1 + sin(x0) u0 + 0.3 x2^2)
class ToyPhysics final : public koopmhe::PhysicsModel {
 public:
  explicit ToyPhysics(double dt = 0.05) : dt_(dt) {}
  int state_dim() const override { return 3; }
  int input_dim() const override { return 1; }
  const std::vector<int>& indices() const override { return idx_; }
  koopmhe::PhysicsPrediction step(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const override {
    koopmhe::PhysicsPrediction p;
    p.values.resize(1);
    p.values[0] = x[1] + dt_ * (-0.5 * x[1] + std::sin(x[0]) * u[0] + 0.3 * x[2] * x[2]);
    p.jacobian.resize(1, 3);
    p.jacobian << dt_ * std::cos(x[0]) * u[0], 1.0 - 0.5 * dt_, dt_ * 0.6 * x[2];
    return p;
  }

 private:
  double dt_;
  std::vector<int> idx_{1};
};

}  // namespace testing_support
