#include "koopmhe/mhe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "koopmhe/log.hpp"

namespace koopmhe {

void MheModel::validate() const {
  const int g = n_g();
  require(g >= 1 && A.cols() == g, ErrorCode::kInputShape, "estimator A must be square");
  require(B.rows() == g, ErrorCode::kInputShape, "estimator B must have n_g rows");
  require(D.cols() == g && D.rows() >= 1, ErrorCode::kInputShape, "estimator D must be n_y x n_g");
  require(n_x >= 1 && n_x <= g, ErrorCode::kInputShape, "estimator n_x must be in [1, n_g]");
}

MheModel MheModel::from(const KoopmanModel& m) {
  MheModel r;
  r.A = m.A;
  r.B = m.B;
  r.D = m.D;
  r.n_x = m.n_x;
  r.validate();
  return r;
}

namespace {

MheWeights weights_from_q(const Eigen::MatrixXd& D, Eigen::VectorXd q, double r_floor) {
  require(r_floor >= 0.0, ErrorCode::kConfiguration, "r_floor must be non-negative");
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    require(std::isfinite(q[i]) && q[i] > 0.0, ErrorCode::kWeightConditioning,
            "Q entry " + std::to_string(i) + " is not positive");
  }
  MheWeights w;
  w.R = D * q.asDiagonal() * D.transpose();
  w.R.diagonal().array() += r_floor;
  w.q = std::move(q);
  return w;
}

}  // namespace

MheWeights self_tune_weights(const KoopmanModel& m, const Eigen::VectorXd& zbar, double r_floor,
                             double sigma_min, bool normalize) {
  require(m.has_noise_net(), ErrorCode::kContract, "self-tuning needs a noise network");
  require(sigma_min >= 0.0, ErrorCode::kConfiguration, "sigma_min must be non-negative");
  int clamped = 0;
  Eigen::VectorXd sigma = noise_std(m, zbar, &clamped);
  for (Eigen::Index i = 0; i < sigma.size(); ++i) {
    if (sigma[i] < sigma_min) {
      sigma[i] = sigma_min;
      ++clamped;
    }
  }
  Eigen::VectorXd q = sigma.array().square().matrix();
  if (normalize) q /= std::exp(q.array().log().mean());
  MheWeights w = weights_from_q(m.D, q, r_floor);
  w.clamped = clamped;
  return w;
}

MheWeights constant_weights(const MheModel& m, const Eigen::VectorXd& q, double r_floor) {
  require(q.size() == m.n_g(), ErrorCode::kInputShape, "constant Q needs n_g entries");
  return weights_from_q(m.D, q, r_floor);
}

Eigen::VectorXd propagate_prior(const MheModel& m, const Eigen::VectorXd& z, const Eigen::VectorXd& u) {
  require(z.size() == m.n_g() && u.size() == m.n_u(), ErrorCode::kInputShape,
          "prior propagation dimensions do not match the model");
  return m.A * z + m.B * u;
}

namespace {

void check_problem(const MheModel& m, const MheProblem& p) {
  m.validate();
  const int h = p.horizon();
  require(h >= 1, ErrorCode::kInputShape, "estimation window needs at least one input");
  require(p.prior.size() == m.n_g(), ErrorCode::kInputShape, "prior must have n_g entries");
  require(p.y.rows() == m.n_y() && p.y.cols() == h + 1, ErrorCode::kInputShape,
          "measurements must be n_y x (H + 1)");
  require(p.u.rows() == m.n_u(), ErrorCode::kInputShape, "inputs must be n_u x H");
  require(p.weights.q.size() == m.n_g(), ErrorCode::kInputShape, "Q must have n_g entries");
  require(p.weights.R.rows() == m.n_y() && p.weights.R.cols() == m.n_y(), ErrorCode::kInputShape,
          "R must be n_y x n_y");
  require(p.lower.size() == m.n_x && p.upper.size() == m.n_x, ErrorCode::kInputShape,
          "state bounds must have n_x entries");
  for (int i = 0; i < m.n_x; ++i) {
    require(!(p.lower[i] > p.upper[i]), ErrorCode::kInfeasible,
            "state box is empty at component " + std::to_string(i) + ": lower " +
                format_double(p.lower[i]) + " > upper " + format_double(p.upper[i]));
  }
}

Eigen::MatrixXd inverse_spd(const Eigen::MatrixXd& r) {
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  require(llt.info() == Eigen::Success, ErrorCode::kWeightConditioning, "R is not positive definite");
  return llt.solve(Eigen::MatrixXd::Identity(r.rows(), r.cols()));
}

// Inequality c(x) <= 0 on a single state component: sign * (z_j[i] - bound).
struct BoxRow {
  int block;
  int index;
  double sign;
  double bound;
};

// Lower block-bidiagonal Cholesky of a block-tridiagonal SPD matrix.
class BandedCholesky {
 public:
  bool factor(const std::vector<Eigen::MatrixXd>& diag, const std::vector<Eigen::MatrixXd>& upper) {
    const std::size_t n = diag.size();
    chol_.assign(n, {});
    g_.assign(upper.size(), {});
    Eigen::MatrixXd s = diag[0];
    for (std::size_t k = 0; k < n; ++k) {
      chol_[k].compute(s);
      if (chol_[k].info() != Eigen::Success) return false;
      if (k + 1 < n) {
        g_[k] = chol_[k].matrixL().solve(upper[k]);
        s = diag[k + 1] - g_[k].transpose() * g_[k];
      }
    }
    return true;
  }

  // rhs holds the blocks stacked row-wise.
  Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const {
    const std::size_t n = chol_.size();
    const Eigen::Index b = g_.empty() ? rhs.rows() : g_[0].rows();
    Eigen::MatrixXd y(rhs.rows(), rhs.cols());
    for (std::size_t k = 0; k < n; ++k) {
      Eigen::MatrixXd r = rhs.middleRows(static_cast<Eigen::Index>(k) * b, b);
      if (k > 0) r -= g_[k - 1].transpose() * y.middleRows(static_cast<Eigen::Index>(k - 1) * b, b);
      y.middleRows(static_cast<Eigen::Index>(k) * b, b) = chol_[k].matrixL().solve(r);
    }
    Eigen::MatrixXd x(rhs.rows(), rhs.cols());
    for (std::size_t k = n; k-- > 0;) {
      Eigen::MatrixXd r = y.middleRows(static_cast<Eigen::Index>(k) * b, b);
      if (k + 1 < n) r -= g_[k] * x.middleRows(static_cast<Eigen::Index>(k + 1) * b, b);
      x.middleRows(static_cast<Eigen::Index>(k) * b, b) = chol_[k].matrixU().solve(r);
    }
    return x;
  }

 private:
  std::vector<Eigen::LLT<Eigen::MatrixXd>> chol_;
  std::vector<Eigen::MatrixXd> g_;
};

class EpigraphProgram {
 public:
  EpigraphProgram(const MheModel& m, const MheProblem& p)
      : m_(m), p_(p), g_(m.n_g()), h_(p.horizon()), max_term_(p.max_term) {
    pw_ = p.weights.q.cwiseInverse();
    sr_ = inverse_spd(p.weights.R);
    atp_ = m.A.transpose() * pw_.asDiagonal();
    atpa_ = atp_ * m.A;
    dtsr_ = m.D.transpose() * sr_;
    dtsrd_ = dtsr_ * m.D;
    bu_ = m.B * p.u;
    for (int j = 0; j <= h_; ++j) {
      for (int i = 0; i < m.n_x; ++i) {
        if (std::isfinite(p.upper[i])) boxes_.push_back({j, i, 1.0, p.upper[i]});
        if (std::isfinite(p.lower[i])) boxes_.push_back({j, i, -1.0, p.lower[i]});
      }
    }
  }

  int n_z() const { return g_ * (h_ + 1); }
  int n_var() const { return n_z() + (max_term_ ? 1 : 0); }
  int n_quad() const { return max_term_ ? h_ : 0; }
  int n_ineq() const { return n_quad() + static_cast<int>(boxes_.size()); }

  Eigen::Map<const Eigen::MatrixXd> zmat(const Eigen::VectorXd& x) const {
    return Eigen::Map<const Eigen::MatrixXd>(x.data(), g_, h_ + 1);
  }

  // Disturbance and measurement residuals of stage j.
  void residuals(const Eigen::VectorXd& x, int j, Eigen::VectorXd& r, Eigen::VectorXd& v) const {
    const auto z = zmat(x);
    r = z.col(j + 1) - m_.A * z.col(j) - bu_.col(j);
    v = p_.y.col(j + 1) - m_.D * z.col(j + 1);
  }

  double stage(const Eigen::VectorXd& r, const Eigen::VectorXd& v) const {
    return r.dot(pw_.cwiseProduct(r)) + v.dot(sr_ * v);
  }

  struct Eval {
    double f = 0.0;
    Eigen::VectorXd grad_f;
    Eigen::VectorXd c;                      // all inequalities
    std::vector<Eigen::VectorXd> grad_a;    // d l_j / d z_j
    std::vector<Eigen::VectorXd> grad_b;    // d l_j / d z_{j+1}
    Eigen::VectorXd l;
  };

  Eval evaluate(const Eigen::VectorXd& x) const {
    Eval e;
    const auto z = zmat(x);
    e.grad_f = Eigen::VectorXd::Zero(n_var());
    e.grad_a.resize(static_cast<std::size_t>(h_));
    e.grad_b.resize(static_cast<std::size_t>(h_));
    e.l.resize(h_);
    const Eigen::VectorXd d0 = z.col(0) - p_.prior;
    e.f = d0.squaredNorm();
    e.grad_f.head(g_) = 2.0 * d0;
    Eigen::VectorXd r, v;
    for (int j = 0; j < h_; ++j) {
      residuals(x, j, r, v);
      e.l[j] = stage(r, v);
      e.grad_a[static_cast<std::size_t>(j)] = -2.0 * atp_ * r;
      e.grad_b[static_cast<std::size_t>(j)] = 2.0 * pw_.cwiseProduct(r) - 2.0 * dtsr_ * v;
      e.f += e.l[j];
      e.grad_f.segment(j * g_, g_) += e.grad_a[static_cast<std::size_t>(j)];
      e.grad_f.segment((j + 1) * g_, g_) += e.grad_b[static_cast<std::size_t>(j)];
    }
    e.c.resize(n_ineq());
    if (max_term_) {
      const double t = x[n_z()];
      e.f += t;
      e.grad_f[n_z()] = 1.0;
      for (int j = 0; j < h_; ++j) e.c[j] = e.l[j] - t;
    }
    for (std::size_t b = 0; b < boxes_.size(); ++b) {
      const BoxRow& row = boxes_[b];
      e.c[n_quad() + static_cast<int>(b)] = row.sign * (z(row.index, row.block) - row.bound);
    }
    return e;
  }

  // Adds sum_i w_i * c_i'(x) to `out` (a vector over the variables).
  void add_jt(const Eval& e, const Eigen::VectorXd& w, Eigen::VectorXd& out) const {
    for (int j = 0; j < n_quad(); ++j) {
      out.segment(j * g_, g_) += w[j] * e.grad_a[static_cast<std::size_t>(j)];
      out.segment((j + 1) * g_, g_) += w[j] * e.grad_b[static_cast<std::size_t>(j)];
      out[n_z()] -= w[j];
    }
    for (std::size_t b = 0; b < boxes_.size(); ++b) {
      const BoxRow& row = boxes_[b];
      out[row.block * g_ + row.index] += w[n_quad() + static_cast<int>(b)] * row.sign;
    }
  }

  // c'(x) dx for every inequality.
  Eigen::VectorXd jdx(const Eval& e, const Eigen::VectorXd& dx) const {
    Eigen::VectorXd out(n_ineq());
    for (int j = 0; j < n_quad(); ++j) {
      out[j] = e.grad_a[static_cast<std::size_t>(j)].dot(dx.segment(j * g_, g_)) +
               e.grad_b[static_cast<std::size_t>(j)].dot(dx.segment((j + 1) * g_, g_)) - dx[n_z()];
    }
    for (std::size_t b = 0; b < boxes_.size(); ++b) {
      const BoxRow& row = boxes_[b];
      out[n_quad() + static_cast<int>(b)] = row.sign * dx[row.block * g_ + row.index];
    }
    return out;
  }

  // Hessian of the Lagrangian plus J^T diag(w) J, as block-tridiagonal Z
  // blocks with a border for t.
  void assemble(const Eval& e, const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                std::vector<Eigen::MatrixXd>& diag, std::vector<Eigen::MatrixXd>& upper,
                Eigen::VectorXd& border, double& corner) const {
    diag.assign(static_cast<std::size_t>(h_ + 1), Eigen::MatrixXd::Zero(g_, g_));
    upper.assign(static_cast<std::size_t>(h_), Eigen::MatrixXd::Zero(g_, g_));
    border = Eigen::VectorXd::Zero(n_z());
    corner = 0.0;
    diag[0].diagonal().array() += 2.0;
    for (int j = 0; j < h_; ++j) {
      const auto sj = static_cast<std::size_t>(j);
      const double a = 1.0 + (max_term_ ? lambda[j] : 0.0);
      diag[sj] += (2.0 * a) * atpa_;
      upper[sj] -= (2.0 * a) * atp_;
      diag[sj + 1] += (2.0 * a) * dtsrd_;
      diag[sj + 1].diagonal() += (2.0 * a) * pw_;
      if (max_term_) {
        const double wj = w[j];
        const Eigen::VectorXd& ga = e.grad_a[sj];
        const Eigen::VectorXd& gb = e.grad_b[sj];
        diag[sj].noalias() += wj * ga * ga.transpose();
        upper[sj].noalias() += wj * ga * gb.transpose();
        diag[sj + 1].noalias() += wj * gb * gb.transpose();
        border.segment(j * g_, g_) -= wj * ga;
        border.segment((j + 1) * g_, g_) -= wj * gb;
        corner += wj;
      }
    }
    for (std::size_t b = 0; b < boxes_.size(); ++b) {
      const BoxRow& row = boxes_[b];
      diag[static_cast<std::size_t>(row.block)](row.index, row.index) += w[n_quad() + static_cast<int>(b)];
    }
  }

  // Scale of each inequality for the relative feasibility measure.
  double ineq_scale(const Eigen::VectorXd& x, int i) const {
    if (i < n_quad()) return 1.0 + std::abs(x[n_z()]);
    return 1.0 + std::abs(boxes_[static_cast<std::size_t>(i - n_quad())].bound);
  }

  int g() const { return g_; }
  int h() const { return h_; }
  bool max_term() const { return max_term_; }

 private:
  const MheModel& m_;
  const MheProblem& p_;
  int g_;
  int h_;
  bool max_term_;
  Eigen::VectorXd pw_;
  Eigen::MatrixXd sr_, atp_, atpa_, dtsr_, dtsrd_, bu_;
  std::vector<BoxRow> boxes_;
};

// Solves the (possibly bordered) Newton system for several right-hand sides.
class NewtonSystem {
 public:
  NewtonSystem(const EpigraphProgram& prog, bool dense) : prog_(prog), dense_(dense) {}

  void factor(std::vector<Eigen::MatrixXd> diag, const std::vector<Eigen::MatrixXd>& upper,
              const Eigen::VectorXd& border, double corner) {
    border_ = border;
    corner_ = corner;
    const int g = prog_.g();
    const int nz = prog_.n_z();
    if (dense_) {
      Eigen::MatrixXd k = Eigen::MatrixXd::Zero(prog_.n_var(), prog_.n_var());
      for (std::size_t b = 0; b < diag.size(); ++b) {
        k.block(static_cast<Eigen::Index>(b) * g, static_cast<Eigen::Index>(b) * g, g, g) = diag[b];
      }
      for (std::size_t b = 0; b < upper.size(); ++b) {
        const Eigen::Index o = static_cast<Eigen::Index>(b) * g;
        k.block(o, o + g, g, g) = upper[b];
        k.block(o + g, o, g, g) = upper[b].transpose();
      }
      if (prog_.max_term()) {
        k.col(nz).head(nz) = border;
        k.row(nz).head(nz) = border.transpose();
        k(nz, nz) = corner;
      }
      dense_ldlt_.compute(k);
      require(dense_ldlt_.info() == Eigen::Success, ErrorCode::kWeightConditioning,
              "KKT matrix factorization failed");
      return;
    }
    double scale = 0.0;
    for (const auto& d : diag) scale = std::max(scale, d.diagonal().cwiseAbs().maxCoeff());
    bool ok = banded_.factor(diag, upper);
    for (double reg = 1e-14; !ok && reg <= 1e-8; reg *= 100.0) {
      auto shifted = diag;
      for (auto& d : shifted) d.diagonal().array() += reg * (1.0 + scale);
      ok = banded_.factor(shifted, upper);
    }
    require(ok, ErrorCode::kWeightConditioning, "KKT matrix is not positive definite");
    if (prog_.max_term()) {
      tb_ = banded_.solve(border_);
      schur_ = corner_ - border_.dot(tb_);
      require(schur_ > 0.0 && std::isfinite(schur_), ErrorCode::kWeightConditioning,
              "epigraph Schur complement is not positive");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
    if (dense_) return dense_ldlt_.solve(rhs);
    const int nz = prog_.n_z();
    if (!prog_.max_term()) return banded_.solve(rhs);
    const Eigen::VectorXd x1 = banded_.solve(rhs.head(nz));
    const double dt = (rhs[nz] - border_.dot(x1)) / schur_;
    Eigen::VectorXd out(prog_.n_var());
    out.head(nz) = x1 - tb_ * dt;
    out[nz] = dt;
    return out;
  }

 private:
  const EpigraphProgram& prog_;
  bool dense_;
  BandedCholesky banded_;
  Eigen::LDLT<Eigen::MatrixXd> dense_ldlt_;
  Eigen::VectorXd border_, tb_;
  double corner_ = 0.0;
  double schur_ = 1.0;
};

double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double a = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
  }
  return a;
}

double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// |(dual residual, primal residual, s .* lambda - target)|_2, infinite when
// the objective is not finite at x.
double residual_norm(const EpigraphProgram& prog, const EpigraphProgram::Eval& e,
                     const Eigen::VectorXd& s, const Eigen::VectorXd& lambda, double target) {
  if (!std::isfinite(e.f)) return std::numeric_limits<double>::infinity();
  Eigen::VectorXd rd = e.grad_f;
  prog.add_jt(e, lambda, rd);
  const double rp = (e.c + s).squaredNorm();
  const double rc = (s.cwiseProduct(lambda).array() - target).matrix().squaredNorm();
  const double r = std::sqrt(rd.squaredNorm() + rp + rc);
  return std::isfinite(r) ? r : std::numeric_limits<double>::infinity();
}

}  // namespace

Eigen::VectorXd stage_costs(const MheModel& m, const MheProblem& p, const Eigen::MatrixXd& z) {
  check_problem(m, p);
  require(z.rows() == m.n_g() && z.cols() == p.horizon() + 1, ErrorCode::kInputShape,
          "lifted trajectory must be n_g x (H + 1)");
  const EpigraphProgram prog(m, p);
  Eigen::VectorXd x(prog.n_var());
  x.head(prog.n_z()) = Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
  if (p.max_term) x[prog.n_z()] = 0.0;
  Eigen::VectorXd out(p.horizon()), r, v;
  for (int j = 0; j < p.horizon(); ++j) {
    prog.residuals(x, j, r, v);
    out[j] = prog.stage(r, v);
  }
  return out;
}

double mhe_objective(const MheModel& m, const MheProblem& p, const Eigen::MatrixXd& z) {
  const Eigen::VectorXd l = stage_costs(m, p, z);
  double f = (z.col(0) - p.prior).squaredNorm() + l.sum();
  if (p.max_term) f += l.maxCoeff();
  return f;
}

ProgramSize program_size(const MheModel& m, const MheProblem& p) {
  check_problem(m, p);
  const EpigraphProgram prog(m, p);
  return {prog.n_var(), prog.n_quad(), prog.n_ineq() - prog.n_quad()};
}

MheSolution solve_mhe(const MheModel& m, const MheProblem& p, const SolverOptions& opts,
                      const Eigen::MatrixXd* warm) {
  check_problem(m, p);
  require(opts.tolerance > 0.0 && opts.max_iterations >= 1, ErrorCode::kConfiguration,
          "solver tolerance and iteration cap must be positive");
  const EpigraphProgram prog(m, p);
  const int g = prog.g();
  const int h = prog.h();
  const int nz = prog.n_z();
  const int nq = prog.n_quad();
  const int ni = prog.n_ineq();

  // Starting point: the warm trajectory or the noise-free rollout of the prior.
  Eigen::VectorXd x(prog.n_var());
  Eigen::Map<Eigen::MatrixXd> z0(x.data(), g, h + 1);
  if (warm && warm->rows() == g && warm->cols() == h + 1 && warm->allFinite()) {
    z0 = *warm;
  } else {
    z0.col(0) = p.prior;
    for (int j = 0; j < h; ++j) z0.col(j + 1) = m.A * z0.col(j) + m.B * p.u.col(j);
  }
  Eigen::VectorXd s(ni), lambda(ni);
  {
    EpigraphProgram::Eval e0 = prog.evaluate(x);
    if (p.max_term) {
      const double lmax = e0.l.maxCoeff();
      x[nz] = lmax + 1.0 + 0.1 * std::abs(lmax);
      e0 = prog.evaluate(x);
    }
    for (int i = 0; i < ni; ++i) {
      s[i] = std::max(-e0.c[i], i < nq ? 1.0 : 1e-2);
      lambda[i] = i < nq ? 1.0 / nq : 1.0 / s[i];
    }
  }

  MheSolution best;
  double best_kkt = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best_x = x;
  NewtonSystem newton(prog, opts.dense);
  std::vector<Eigen::MatrixXd> diag, upper;
  Eigen::VectorXd border;
  double corner = 0.0;
  int iter = 0;
  bool converged = false;

  for (;; ++iter) {
    const EpigraphProgram::Eval e = prog.evaluate(x);
    if (!std::isfinite(e.f)) {
      require(iter > 0, ErrorCode::kWeightConditioning, "estimator objective is not finite");
      break;  // keep the best iterate, flagged as not converged
    }
    Eigen::VectorXd rd = e.grad_f;
    prog.add_jt(e, lambda, rd);
    const Eigen::VectorXd rp = e.c + s;

    // Relative KKT residual evaluated on the true constraint values.
    const double stat = inf_norm(rd) / (1.0 + inf_norm(e.grad_f));
    double feas = 0.0, comp = 0.0;
    for (int i = 0; i < ni; ++i) {
      feas = std::max(feas, std::max(e.c[i], 0.0) / prog.ineq_scale(x, i));
      comp = std::max(comp, lambda[i] * std::abs(e.c[i]) / (1.0 + std::abs(e.f)));
    }
    const double kkt = std::max({stat, feas, comp});
    if (kkt < best_kkt) {
      best_kkt = kkt;
      best_x = x;
    }
    if (kkt <= opts.tolerance) {
      converged = true;
      break;
    }
    if (iter >= opts.max_iterations) break;

    const Eigen::VectorXd w = lambda.cwiseQuotient(s);
    prog.assemble(e, lambda, w, diag, upper, border, corner);
    newton.factor(diag, upper, border, corner);

    // Right-hand side for a complementarity target rc (Mehrotra form).
    auto direction = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& ds,
                         Eigen::VectorXd& dl) {
      Eigen::VectorXd rhs = -rd;
      const Eigen::VectorXd phi = (lambda.cwiseProduct(rp) - rc).cwiseQuotient(s);
      prog.add_jt(e, -phi, rhs);
      dx = newton.solve(rhs);
      const Eigen::VectorXd jd = prog.jdx(e, dx);
      dl = (lambda.cwiseProduct(jd + rp) - rc).cwiseQuotient(s);
      ds = -rp - jd;
    };

    Eigen::VectorXd dx, ds, dl;
    if (ni == 0) {
      direction(Eigen::VectorXd(), dx, ds, dl);
      x += dx;
      continue;
    }
    const double mu = s.dot(lambda) / ni;
    const Eigen::VectorXd sl = s.cwiseProduct(lambda);
    direction(sl, dx, ds, dl);
    const double a_aff = std::min(max_step(s, ds), max_step(lambda, dl));
    const double mu_aff = (s + a_aff * ds).dot(lambda + a_aff * dl) / ni;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
    // Complementarity far below the tolerance only degrades the Newton matrix.
    const double mu_floor = 0.01 * opts.tolerance * (1.0 + std::abs(e.f));
    const double target = std::max(sigma * mu, mu_floor);
    const Eigen::VectorXd rc = sl + ds.cwiseProduct(dl) - Eigen::VectorXd::Constant(ni, target);
    direction(rc, dx, ds, dl);
    const double tau = std::max(0.99, 1.0 - mu);
    double alpha = std::min(1.0, tau * std::min(max_step(s, ds), max_step(lambda, dl)));
    // The constraints are quadratic, so on badly scaled windows a full step
    // can blow up the residual. Only such steps are shortened.
    const double r0 = residual_norm(prog, e, s, lambda, target);
    for (int bt = 0; bt < 40; ++bt) {
      const Eigen::VectorXd xt = x + alpha * dx;
      const double r = residual_norm(prog, prog.evaluate(xt), s + alpha * ds, lambda + alpha * dl, target);
      if (r <= 10.0 * r0) break;
      alpha *= 0.5;
    }
    if (log_level() >= LogLevel::kDebug) {
      log_debug("ipm " + std::to_string(iter) + " kkt=" + format_double(kkt) + " f=" + format_double(e.f) +
                " mu=" + format_double(mu) + " alpha=" + format_double(alpha));
    }
    x += alpha * dx;
    s += alpha * ds;
    lambda += alpha * dl;
    s = s.cwiseMax(1e-300);
    lambda = lambda.cwiseMax(1e-300);
  }
  if (!converged) x = best_x;

  MheSolution sol;
  const Eigen::Map<const Eigen::MatrixXd> z(x.data(), g, h + 1);
  sol.z = z;
  sol.mu.resize(g, h);
  for (int j = 0; j < h; ++j) sol.mu.col(j) = z.col(j + 1) - m.A * z.col(j) - m.B * p.u.col(j);
  sol.v = p.y - m.D * sol.z;
  sol.stage = stage_costs(m, p, sol.z);
  sol.objective = mhe_objective(m, p, sol.z);
  sol.t_star = p.max_term ? x[nz] : 0.0;
  sol.info.iterations = iter;
  sol.info.kkt_residual = best_kkt;
  sol.info.converged = converged;
  return sol;
}

void MheConfig::validate() const {
  require(horizon >= 1, ErrorCode::kConfiguration, "mhe.horizon must be at least 1");
  require(tolerance > 0.0, ErrorCode::kConfiguration, "mhe.tolerance must be positive");
  require(max_iterations >= 1, ErrorCode::kConfiguration, "mhe.max_iterations must be positive");
  require(r_floor >= 0.0, ErrorCode::kConfiguration, "mhe.r_floor must be non-negative");
  require(sigma_min >= 0.0, ErrorCode::kConfiguration, "mhe.sigma_min must be non-negative");
  require(initial_guess_factor > 0.0, ErrorCode::kConfiguration,
          "mhe.initial_guess_factor must be positive");
  require(box_margin >= 0.0, ErrorCode::kConfiguration, "mhe.box_margin must be non-negative");
  require(lower.size() == upper.size(), ErrorCode::kConfiguration,
          "mhe.lower and mhe.upper need the same length");
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    require(lower[i] <= upper[i], ErrorCode::kConfiguration,
            "mhe box lower bound exceeds upper bound at component " + std::to_string(i));
  }
  for (Eigen::Index i = 0; i < constant_q.size(); ++i) {
    require(constant_q[i] > 0.0, ErrorCode::kConfiguration, "mhe.constant_q entries must be positive");
  }
}

const std::vector<std::string>& MheConfig::keys() {
  static const std::vector<std::string> k = {
      "horizon",  "tolerance",         "max_iterations",       "r_floor", "sigma_min", "normalize_q", "self_tuning",
      "constant_q", "max_term",        "initial_guess_factor", "lower",   "upper",
      "box_margin", "warm_start"};
  return k;
}

MheConfig MheConfig::from_key_values(const KeyValues& kv) {
  kv.expect_only(keys(), "mhe");
  MheConfig c;
  c.horizon = kv.get_or<int>("horizon", c.horizon);
  c.tolerance = kv.get_or<double>("tolerance", c.tolerance);
  c.max_iterations = kv.get_or<int>("max_iterations", c.max_iterations);
  c.r_floor = kv.get_or<double>("r_floor", c.r_floor);
  c.sigma_min = kv.get_or<double>("sigma_min", c.sigma_min);
  c.normalize_q = kv.get_or<bool>("normalize_q", c.normalize_q);
  c.self_tuning = kv.get_or<bool>("self_tuning", c.self_tuning);
  auto vec = [&](const char* key) {
    const auto v = kv.get_doubles(key);
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  };
  if (kv.has("constant_q")) c.constant_q = vec("constant_q");
  c.max_term = kv.get_or<bool>("max_term", c.max_term);
  c.initial_guess_factor = kv.get_or<double>("initial_guess_factor", c.initial_guess_factor);
  if (kv.has("lower")) c.lower = vec("lower");
  if (kv.has("upper")) c.upper = vec("upper");
  c.box_margin = kv.get_or<double>("box_margin", c.box_margin);
  c.warm_start = kv.get_or<bool>("warm_start", c.warm_start);
  c.validate();
  return c;
}

void default_box(const std::vector<Trajectory>& scaled_runs, double margin, Eigen::VectorXd& lower,
                 Eigen::VectorXd& upper) {
  require(!scaled_runs.empty(), ErrorCode::kInputShape, "default box needs training data");
  const Eigen::Index n = scaled_runs.front().state_dim();
  lower = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  upper = -lower;
  for (const auto& r : scaled_runs) {
    lower = lower.cwiseMin(r.states.rowwise().minCoeff());
    upper = upper.cwiseMax(r.states.rowwise().maxCoeff());
  }
  lower.array() -= margin;
  upper.array() += margin;
}

MovingHorizonEstimator::MovingHorizonEstimator(const KoopmanModel& model, MheConfig cfg)
    : model_(model), lin_(MheModel::from(model)), cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.lower.size() == 0) {
    cfg_.lower = Eigen::VectorXd::Constant(model.n_x, -std::numeric_limits<double>::infinity());
    cfg_.upper = Eigen::VectorXd::Constant(model.n_x, std::numeric_limits<double>::infinity());
  }
  require(cfg_.lower.size() == model.n_x, ErrorCode::kConfiguration,
          "mhe box must have one entry per state");
  if (cfg_.constant_q.size() == 0) cfg_.constant_q = Eigen::VectorXd::Ones(model.n_g());
  require(cfg_.constant_q.size() == model.n_g(), ErrorCode::kConfiguration,
          "mhe.constant_q needs one entry per lifted state");
  require(!cfg_.self_tuning || model.has_noise_net(), ErrorCode::kConfiguration,
          "self-tuning estimation needs a model with a noise network");
}

void MovingHorizonEstimator::reset(const Eigen::VectorXd& x0_guess) {
  require(x0_guess.size() == model_.n_x, ErrorCode::kInputShape, "initial guess must have n_x entries");
  first_prior_ = lift(model_, cfg_.initial_guess_factor * x0_guess, false);
  ys_.clear();
  us_.clear();
  last_.reset();
  dropped_u_.resize(0);
  k_ = -1;
}

std::optional<EstimateRecord> MovingHorizonEstimator::step(const Eigen::VectorXd& y,
                                                           const Eigen::VectorXd& u_prev) {
  require(first_prior_.size() == model_.n_g(), ErrorCode::kContract,
          "estimator must be reset with an initial guess before use");
  require(y.size() == model_.n_y(), ErrorCode::kInputShape, "measurement must have n_y entries");
  const Scaler& sc = model_.scaler;
  Eigen::VectorXd ys(y.size());
  for (int i = 0; i < model_.n_y(); ++i) {
    const int idx = model_.measured[static_cast<std::size_t>(i)];
    ys[i] = (y[i] - sc.state_mean[idx]) / sc.state_std[idx];
  }
  if (k_ < 0) {
    require(u_prev.size() == 0, ErrorCode::kInputShape, "the first measurement takes no input");
  } else {
    require(u_prev.size() == model_.n_u, ErrorCode::kInputShape, "input must have n_u entries");
    us_.push_back(sc.scale_inputs(u_prev));
  }
  ys_.push_back(ys);
  ++k_;
  const auto window = static_cast<std::size_t>(cfg_.horizon + 1);
  if (ys_.size() > window) {
    ys_.erase(ys_.begin());
    dropped_u_ = us_.front();
    us_.erase(us_.begin());
  }
  if (ys_.size() < window) return std::nullopt;

  const int h = cfg_.horizon;
  MheProblem p;
  p.prior = last_ ? propagate_prior(lin_, last_->z.col(0), dropped_u_) : first_prior_;
  p.y.resize(model_.n_y(), h + 1);
  p.u.resize(model_.n_u, h);
  for (int j = 0; j <= h; ++j) p.y.col(j) = ys_[static_cast<std::size_t>(j)];
  for (int j = 0; j < h; ++j) p.u.col(j) = us_[static_cast<std::size_t>(j)];
  if (cfg_.self_tuning) {
    // The noise net only saw data inside the box; outside it extrapolates.
    Eigen::VectorXd zq = p.prior;
    const Eigen::VectorXd x = zq.head(model_.n_x);
    const Eigen::VectorXd xc = x.cwiseMax(cfg_.lower).cwiseMin(cfg_.upper);
    if (xc != x) zq = lift(model_, xc, true);
    p.weights = self_tune_weights(model_, zq, cfg_.r_floor, cfg_.sigma_min, cfg_.normalize_q);
  } else {
    p.weights = constant_weights(lin_, cfg_.constant_q, cfg_.r_floor);
  }
  if (log_level() >= LogLevel::kDebug) {
    log_debug("step " + std::to_string(k_) + " q min=" + format_double(p.weights.q.minCoeff()) +
              " max=" + format_double(p.weights.q.maxCoeff()) + " |prior|=" + format_double(p.prior.norm()));
  }
  p.lower = cfg_.lower;
  p.upper = cfg_.upper;
  p.max_term = cfg_.max_term;

  Eigen::MatrixXd warm;
  if (cfg_.warm_start && last_) {
    warm.resize(model_.n_g(), h + 1);
    warm.leftCols(h) = last_->z.rightCols(h);
    warm.col(h) = lin_.A * last_->z.col(h) + lin_.B * p.u.col(h - 1);
  }
  SolverOptions opts;
  opts.tolerance = cfg_.tolerance;
  opts.max_iterations = cfg_.max_iterations;
  MheSolution sol;
  try {
    sol = solve_mhe(lin_, p, opts, warm.size() ? &warm : nullptr);
  } catch (const Error& e) {
    throw Error(e.code(), "estimator step " + std::to_string(k_) + ": " + e.detail());
  }
  if (!sol.info.converged) {
    log_warning("estimator step " + std::to_string(k_) + " did not converge (kkt residual " +
                format_double(sol.info.kkt_residual) + ")");
  }
  EstimateRecord rec;
  rec.k = k_;
  rec.xhat = reconstruct_unscaled(model_, sol.z.col(h));
  rec.objective = sol.objective;
  rec.t_star = sol.t_star;
  rec.info = sol.info;
  rec.clamped = p.weights.clamped;
  last_ = std::move(sol);
  return rec;
}

EstimationRun run_estimator(const KoopmanModel& model, const Trajectory& truth,
                            const Eigen::MatrixXd& measurements, const MheConfig& cfg) {
  truth.validate();
  require(truth.state_dim() == model.n_x && truth.input_dim() == model.n_u, ErrorCode::kInputShape,
          "trajectory dimensions do not match the model");
  require(measurements.rows() == model.n_y() && measurements.cols() == truth.size(),
          ErrorCode::kInputShape, "measurement log must be n_y x N and aligned with the trajectory");
  MovingHorizonEstimator est(model, cfg);
  est.reset(truth.states.col(0));
  EstimationRun run;
  std::vector<int> ks;
  for (Eigen::Index k = 0; k < truth.size(); ++k) {
    const Eigen::VectorXd u = k == 0 ? Eigen::VectorXd() : Eigen::VectorXd(truth.inputs.col(k - 1));
    if (auto rec = est.step(measurements.col(k), u)) run.records.push_back(std::move(*rec));
  }
  run.truth.resize(model.n_x, static_cast<Eigen::Index>(run.records.size()));
  double se = 0.0;
  for (std::size_t r = 0; r < run.records.size(); ++r) {
    const auto c = static_cast<Eigen::Index>(r);
    run.truth.col(c) = truth.states.col(run.records[r].k);
    const Eigen::VectorXd e =
        (run.records[r].xhat - run.truth.col(c)).cwiseQuotient(model.scaler.state_std);
    se += e.squaredNorm();
  }
  run.mse = run.records.empty() ? 0.0 : se / (static_cast<double>(run.records.size()) * model.n_x);
  return run;
}

std::string estimates_to_csv(const EstimationRun& run, const std::vector<std::string>& comments) {
  std::ostringstream out;
  for (const auto& c : comments) out << "# " << c << '\n';
  const Eigen::Index n = run.truth.rows();
  out << 'k';
  for (Eigen::Index i = 1; i <= n; ++i) out << ",xhat_" << i;
  for (Eigen::Index i = 1; i <= n; ++i) out << ",x_true_" << i;
  out << ",obj,t_star,kkt_residual,iters,converged\n";
  for (std::size_t r = 0; r < run.records.size(); ++r) {
    const EstimateRecord& rec = run.records[r];
    out << rec.k;
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << format_double(rec.xhat[i]);
    for (Eigen::Index i = 0; i < n; ++i) out << ',' << format_double(run.truth(i, static_cast<Eigen::Index>(r)));
    out << ',' << format_double(rec.objective) << ',' << format_double(rec.t_star) << ','
        << format_double(rec.info.kkt_residual) << ',' << rec.info.iterations << ','
        << (rec.info.converged ? 1 : 0) << '\n';
  }
  return out.str();
}

}  // namespace koopmhe
