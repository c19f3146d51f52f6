#pragma once

// Independent reference solvers for small estimation windows. None of these
// share code with the interior-point solver.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "koopmhe/mhe.hpp"
#include "koopmhe/rng.hpp"

namespace testing_support {

// Stage costs computed straight from the definition.
inline Eigen::VectorXd oracle_stages(const koopmhe::MheModel& m, const koopmhe::MheProblem& p,
                                     const Eigen::MatrixXd& z) {
  const Eigen::MatrixXd rinv = p.weights.R.inverse();
  Eigen::VectorXd l(p.horizon());
  for (int j = 0; j < p.horizon(); ++j) {
    const Eigen::VectorXd mu = z.col(j + 1) - m.A * z.col(j) - m.B * p.u.col(j);
    const Eigen::VectorXd v = p.y.col(j + 1) - m.D * z.col(j + 1);
    l[j] = (mu.array().square() / p.weights.q.array()).sum() + v.dot(rinv * v);
  }
  return l;
}

inline double oracle_objective(const koopmhe::MheModel& m, const koopmhe::MheProblem& p,
                               const Eigen::MatrixXd& z, bool with_max) {
  const Eigen::VectorXd l = oracle_stages(m, p, z);
  return (z.col(0) - p.prior).squaredNorm() + l.sum() + (with_max ? l.maxCoeff() : 0.0);
}

// argmin of |z0 - prior|^2 + sum_j c_j l_j via a stacked least-squares
// system solved by QR. c defaults to ones.
inline Eigen::MatrixXd weighted_least_squares(const koopmhe::MheModel& m, const koopmhe::MheProblem& p,
                                              const Eigen::VectorXd& c = Eigen::VectorXd()) {
  const int g = m.n_g();
  const int h = p.horizon();
  const int ny = m.n_y();
  const int n = g * (h + 1);
  Eigen::MatrixXd rinv = p.weights.R.inverse();
  rinv = 0.5 * (rinv + rinv.transpose());
  const Eigen::MatrixXd w = Eigen::LLT<Eigen::MatrixXd>(rinv).matrixU();  // rinv = w^T w
  Eigen::MatrixXd mat = Eigen::MatrixXd::Zero(g + h * (g + ny), n);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(mat.rows());
  mat.topLeftCorner(g, g).setIdentity();
  rhs.head(g) = p.prior;
  for (int j = 0; j < h; ++j) {
    const double cj = std::sqrt(c.size() ? c[j] : 1.0);
    const int r0 = g + j * (g + ny);
    const Eigen::VectorXd lq = p.weights.q.cwiseSqrt().cwiseInverse() * cj;
    mat.block(r0, (j + 1) * g, g, g) = lq.asDiagonal();
    mat.block(r0, j * g, g, g) = -(lq.asDiagonal() * m.A);
    rhs.segment(r0, g) = lq.asDiagonal() * (m.B * p.u.col(j));
    mat.block(r0 + g, (j + 1) * g, ny, g) = cj * w * m.D;
    rhs.segment(r0 + g, ny) = cj * w * p.y.col(j + 1);
  }
  const Eigen::VectorXd sol = mat.colPivHouseholderQr().solve(rhs);
  return Eigen::Map<const Eigen::MatrixXd>(sol.data(), g, h + 1);
}

// Repeated grid refinement around the best point of a convex function on a
// box. Each round keeps a quarter of the grid on either side of the best
// point; narrower zooms lose the minimizer in the diagonal valleys the max
// term creates.
inline Eigen::VectorXd grid_minimize(const std::function<double(const Eigen::VectorXd&)>& f,
                                     Eigen::VectorXd lo, Eigen::VectorXd hi, int points = 41,
                                     double cell_tol = 1e-11) {
  const Eigen::Index d = lo.size();
  const Eigen::VectorXd lo0 = lo, hi0 = hi;
  Eigen::VectorXd best = 0.5 * (lo + hi);
  for (int round = 0; round < 200; ++round) {
    const Eigen::VectorXd cell = (hi - lo) / (points - 1);
    double fbest = std::numeric_limits<double>::infinity();
    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    for (;;) {
      Eigen::VectorXd x(d);
      for (Eigen::Index i = 0; i < d; ++i) x[i] = lo[i] + cell[i] * idx[static_cast<std::size_t>(i)];
      const double v = f(x);
      if (v < fbest) {
        fbest = v;
        best = x;
      }
      Eigen::Index k = 0;
      while (k < d && ++idx[static_cast<std::size_t>(k)] == points) idx[static_cast<std::size_t>(k++)] = 0;
      if (k == d) break;
    }
    if (cell.maxCoeff() < cell_tol) break;
    const double keep = std::max(2, (points - 1) / 4);
    lo = (best - keep * cell).cwiseMax(lo0);
    hi = (best + keep * cell).cwiseMin(hi0);
  }
  return best;
}

inline Eigen::VectorXd project_simplex(const Eigen::VectorXd& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    cum += s[i];
    const double t = (cum - 1.0) / static_cast<double>(i + 1);
    if (s[i] - t > 0.0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0).matrix();
}

struct DualResult {
  double primal = 0.0;  // objective at the recovered trajectory
  double dual = 0.0;    // lower bound
  Eigen::MatrixXd z;
  int iterations = 0;
};

// max over the simplex of phi(w) = min_z |z0 - prior|^2 + sum_j (1 + w_j) l_j(z),
// by accelerated projected gradient ascent. Unbounded boxes only.
inline DualResult minimax_dual(const koopmhe::MheModel& m, const koopmhe::MheProblem& p,
                               double rel_gap = 1e-11, int max_iter = 200000) {
  const int h = p.horizon();
  auto inner = [&](const Eigen::VectorXd& w, Eigen::MatrixXd& z, Eigen::VectorXd& l) {
    z = weighted_least_squares(m, p, (1.0 + w.array()).matrix());
    l = oracle_stages(m, p, z);
    return (z.col(0) - p.prior).squaredNorm() + ((1.0 + w.array()) * l.array()).sum();
  };
  DualResult res;
  Eigen::VectorXd w = Eigen::VectorXd::Constant(h, 1.0 / h);
  Eigen::VectorXd w_prev = w;
  double step = 1.0;
  double tk = 1.0;
  Eigen::MatrixXd z;
  Eigen::VectorXd l;
  for (int it = 0; it < max_iter; ++it) {
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    const Eigen::VectorXd yv = project_simplex(w + ((tk - 1.0) / tn) * (w - w_prev));
    Eigen::MatrixXd zy;
    Eigen::VectorXd ly;
    const double phy = inner(yv, zy, ly);
    Eigen::VectorXd wn;
    Eigen::MatrixXd zn;
    Eigen::VectorXd ln;
    double phn = 0.0;
    for (;;) {
      wn = project_simplex(yv + step * ly);
      phn = inner(wn, zn, ln);
      const Eigen::VectorXd d = wn - yv;
      if (phn >= phy + ly.dot(d) - d.squaredNorm() / (2.0 * step) - 1e-15 * std::abs(phy)) break;
      step *= 0.5;
    }
    w_prev = w;
    w = wn;
    tk = tn;
    res.dual = std::max(res.dual, phn);
    const double primal = (zn.col(0) - p.prior).squaredNorm() + ln.sum() + ln.maxCoeff();
    if (it == 0 || primal < res.primal) {
      res.primal = primal;
      res.z = zn;
    }
    res.iterations = it + 1;
    if (res.primal - res.dual <= rel_gap * (1.0 + std::abs(res.dual))) break;
    step *= 1.5;
  }
  return res;
}

// Random window with controllable size. Boxes are unbounded unless `box` > 0,
// in which case |C z_j| <= box.
inline koopmhe::MheProblem random_problem(koopmhe::Rng& rng, koopmhe::MheModel& m, int n_g, int n_x,
                                          int n_y, int h, double box = 0.0) {
  m.n_x = n_x;
  m.A = Eigen::MatrixXd(n_g, n_g);
  for (Eigen::Index i = 0; i < m.A.size(); ++i) m.A.data()[i] = rng.uniform(-0.6, 0.6);
  m.A.diagonal().array() += 0.5;
  m.B = Eigen::MatrixXd(n_g, 1);
  for (Eigen::Index i = 0; i < m.B.size(); ++i) m.B.data()[i] = rng.uniform(-1.0, 1.0);
  m.D = Eigen::MatrixXd::Zero(n_y, n_g);
  for (int r = 0; r < n_y; ++r) m.D(r, r % n_x) = 1.0;
  koopmhe::MheProblem p;
  p.prior = Eigen::VectorXd(n_g);
  for (int i = 0; i < n_g; ++i) p.prior[i] = rng.uniform(-1.0, 1.0);
  p.y = Eigen::MatrixXd(n_y, h + 1);
  for (Eigen::Index i = 0; i < p.y.size(); ++i) p.y.data()[i] = rng.uniform(-1.5, 1.5);
  p.u = Eigen::MatrixXd(1, h);
  for (Eigen::Index i = 0; i < p.u.size(); ++i) p.u.data()[i] = rng.uniform(-1.0, 1.0);
  Eigen::VectorXd q(n_g);
  for (int i = 0; i < n_g; ++i) q[i] = rng.uniform(0.2, 2.0);
  p.weights = koopmhe::constant_weights(m, q, 1e-8);
  const double inf = std::numeric_limits<double>::infinity();
  p.lower = Eigen::VectorXd::Constant(n_x, box > 0.0 ? -box : -inf);
  p.upper = Eigen::VectorXd::Constant(n_x, box > 0.0 ? box : inf);
  return p;
}

}  // namespace testing_support
