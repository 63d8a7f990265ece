#include "lkmpc/qp.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lkmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct ScaledProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  Eigen::VectorXd row_scale_G;  // original row / scale -> scaled row
  Eigen::VectorXd row_scale_A;
  double obj_scale = 1.0;
};

void check_dimensions(const QpProblem& p) {
  const int n = p.num_vars();
  if (p.H.rows() != n || p.H.cols() != n) throw std::invalid_argument("solve_qp: dimension mismatch in H");
  if (p.G.size() > 0 && p.G.cols() != n) throw std::invalid_argument("solve_qp: dimension mismatch in G");
  if (p.G.rows() != p.h.size()) throw std::invalid_argument("solve_qp: dimension mismatch between G and h");
  if (p.A.size() > 0 && p.A.cols() != n) throw std::invalid_argument("solve_qp: dimension mismatch in A");
  if (p.A.rows() != p.b.size()) throw std::invalid_argument("solve_qp: dimension mismatch between A and b");
}

void check_psd(const Eigen::MatrixXd& H, double tol) {
  if (H.size() == 0 || H.lpNorm<Eigen::Infinity>() == 0.0) return;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (lo < -tol * scale) throw std::invalid_argument("solve_qp: indefinite cost");
}

ScaledProblem scale_problem(const QpProblem& p) {
  ScaledProblem s;
  const int m = static_cast<int>(p.G.rows());
  const int me = static_cast<int>(p.A.rows());
  s.row_scale_G.resize(m);
  for (int i = 0; i < m; ++i) {
    double r = std::max(p.G.row(i).lpNorm<Eigen::Infinity>(), std::abs(p.h(i)));
    s.row_scale_G(i) = (r > 1e-300) ? 1.0 / r : 1.0;
  }
  s.row_scale_A.resize(me);
  for (int i = 0; i < me; ++i) {
    double r = std::max(p.A.row(i).lpNorm<Eigen::Infinity>(), std::abs(p.b(i)));
    s.row_scale_A(i) = (r > 1e-300) ? 1.0 / r : 1.0;
  }
  double os = std::max(p.H.size() ? p.H.lpNorm<Eigen::Infinity>() : 0.0,
                       p.f.size() ? p.f.lpNorm<Eigen::Infinity>() : 0.0);
  s.obj_scale = (os > 1e-300) ? os : 1.0;
  s.H = p.H / s.obj_scale;
  s.f = p.f / s.obj_scale;
  s.G = s.row_scale_G.asDiagonal() * p.G;
  s.h = s.row_scale_G.asDiagonal() * p.h;
  s.A = s.row_scale_A.asDiagonal() * p.A;
  s.b = s.row_scale_A.asDiagonal() * p.b;
  return s;
}

KktResiduals residuals(const ScaledProblem& sp, const Eigen::VectorXd& x,
                       const Eigen::VectorXd& z, const Eigen::VectorXd& y) {
  KktResiduals r;
  Eigen::VectorXd st = sp.f;
  if (sp.H.size()) st += sp.H * x;
  if (sp.G.rows()) st += sp.G.transpose() * z;
  if (sp.A.rows()) st += sp.A.transpose() * y;
  r.stationarity = st.size() ? st.lpNorm<Eigen::Infinity>() : 0.0;
  double prim = 0.0;
  if (sp.A.rows()) prim = (sp.A * x - sp.b).lpNorm<Eigen::Infinity>();
  if (sp.G.rows()) prim = std::max(prim, (sp.G * x - sp.h).cwiseMax(0.0).maxCoeff());
  r.primal = prim;
  r.dual = sp.G.rows() ? std::max(0.0, -z.minCoeff()) : 0.0;
  if (sp.G.rows()) {
    Eigen::VectorXd slack = (sp.h - sp.G * x).cwiseMax(0.0);
    r.complementarity = (z.array() * slack.array()).abs().maxCoeff();
  }
  return r;
}

struct IpmResult {
  Eigen::VectorXd x, z, y;
  SolveStatus status = SolveStatus::max_iter;
  int iterations = 0;
  bool diverged_primal = false;
};

// Mehrotra predictor-corrector on the scaled data.
IpmResult ipm(const ScaledProblem& sp, const QpOptions& opts) {
  const int n = static_cast<int>(sp.f.size());
  const int m = static_cast<int>(sp.G.rows());
  const int me = static_cast<int>(sp.A.rows());
  IpmResult out;

  // equality-only / unconstrained case: single KKT solve
  if (m == 0) {
    Eigen::MatrixXd K(n + me, n + me);
    K.setZero();
    K.topLeftCorner(n, n) = sp.H + 1e-12 * Eigen::MatrixXd::Identity(n, n);
    if (me) {
      K.topRightCorner(n, me) = sp.A.transpose();
      K.bottomLeftCorner(me, n) = sp.A;
      K.bottomRightCorner(me, me) = -1e-12 * Eigen::MatrixXd::Identity(me, me);
    }
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -sp.f;
    if (me) rhs.tail(me) = sp.b;
    Eigen::VectorXd sol = K.ldlt().solve(rhs);
    out.x = sol.head(n);
    out.y = me ? Eigen::VectorXd(sol.tail(me)) : Eigen::VectorXd::Zero(0);
    out.z = Eigen::VectorXd::Zero(0);
    KktResiduals r = residuals(sp, out.x, out.z, out.y);
    const bool lp_mode = (sp.H.size() == 0 || sp.H.lpNorm<Eigen::Infinity>() == 0.0);
    if (lp_mode && r.stationarity > 1e-8)
      out.status = SolveStatus::unbounded;
    else
      out.status = (r.stationarity < 1e-7 && r.primal < 1e-7) ? SolveStatus::optimal
                                                              : SolveStatus::max_iter;
    return out;
  }

  // initial point
  Eigen::VectorXd x;
  {
    Eigen::MatrixXd K(n + me, n + me);
    K.setZero();
    K.topLeftCorner(n, n) = sp.H + Eigen::MatrixXd::Identity(n, n);
    if (me) {
      K.topRightCorner(n, me) = sp.A.transpose();
      K.bottomLeftCorner(me, n) = sp.A;
    }
    Eigen::VectorXd rhs(n + me);
    rhs.head(n) = -sp.f;
    if (me) rhs.tail(me) = sp.b;
    x = K.ldlt().solve(rhs).head(n);
    if (!x.allFinite()) x.setZero();
  }
  Eigen::VectorXd s(m), z(m);
  {
    Eigen::VectorXd r = sp.G * x - sp.h;
    for (int i = 0; i < m; ++i) s(i) = std::max(1.0, r(i) + 1.5);
    z.setOnes();
  }
  Eigen::VectorXd y = Eigen::VectorXd::Zero(me);

  const double tau = 0.995;
  for (int it = 0; it < opts.max_iter; ++it) {
    out.iterations = it + 1;
    Eigen::VectorXd rd = sp.f + sp.G.transpose() * z;
    if (sp.H.size()) rd += sp.H * x;
    if (me) rd += sp.A.transpose() * y;
    Eigen::VectorXd rp = sp.G * x + s - sp.h;
    Eigen::VectorXd re = me ? Eigen::VectorXd(sp.A * x - sp.b) : Eigen::VectorXd::Zero(0);
    double mu = s.dot(z) / m;

    const double rdn = rd.lpNorm<Eigen::Infinity>();
    const double rpn = rp.lpNorm<Eigen::Infinity>();
    const double ren = me ? re.lpNorm<Eigen::Infinity>() : 0.0;
    const bool tight = rdn <= opts.tol * 10 && rpn <= opts.tol * 10 &&
                       ren <= opts.tol * 10 && mu <= opts.tol;
    // near-converged with vanished barrier: stop and let the polish step
    // finish the remaining digits
    const bool stalled = mu <= 1e-13 && rdn <= 1e-7 && rpn <= 1e-7 && ren <= 1e-7;
    if (tight || stalled) {
      out.x = x; out.z = z; out.y = y;
      out.status = SolveStatus::optimal;
      return out;
    }
    if (x.lpNorm<Eigen::Infinity>() > 1e11) {
      out.x = x; out.z = z; out.y = y;
      // blown-up primal with small duals: unbounded; blown-up duals: infeasible
      out.status = SolveStatus::unbounded;
      out.diverged_primal = rpn > 1e-6;
      return out;
    }

    Eigen::VectorXd w = z.cwiseQuotient(s);
    Eigen::MatrixXd M = sp.G.transpose() * w.asDiagonal() * sp.G;
    if (sp.H.size()) M += sp.H;
    const double reg = 1e-12 * std::max(1.0, M.diagonal().maxCoeff());
    M.diagonal().array() += reg;
    Eigen::MatrixXd K(n + me, n + me);
    K.setZero();
    K.topLeftCorner(n, n) = M;
    if (me) {
      K.topRightCorner(n, me) = sp.A.transpose();
      K.bottomLeftCorner(me, n) = sp.A;
      K.bottomRightCorner(me, me) = -reg * Eigen::MatrixXd::Identity(me, me);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(K);

    // Newton system with Z ds + S dz = rc, eliminated onto (dx, dy).
    auto solve_dir = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx,
                         Eigen::VectorXd& dy, Eigen::VectorXd& ds, Eigen::VectorXd& dz) {
      Eigen::VectorXd rhs(n + me);
      rhs.head(n) = -rd - sp.G.transpose() * (rc.cwiseQuotient(s) + w.cwiseProduct(rp)).eval();
      if (me) rhs.tail(me) = -re;
      Eigen::VectorXd sol = ldlt.solve(rhs);
      dx = sol.head(n);
      dy = me ? Eigen::VectorXd(sol.tail(me)) : Eigen::VectorXd::Zero(0);
      ds = -rp - sp.G * dx;
      dz = rc.cwiseQuotient(s) - w.cwiseProduct(ds);
    };
    Eigen::VectorXd rc = -(z.array() * s.array()).matrix();
    Eigen::VectorXd dx, dy, ds, dz;
    solve_dir(rc, dx, dy, ds, dz);

    auto step_len = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
      double a = 1.0;
      for (int i = 0; i < v.size(); ++i)
        if (dv(i) < 0) a = std::min(a, -v(i) / dv(i));
      return a;
    };
    double a_aff = std::min(step_len(s, ds), step_len(z, dz));
    double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / m;
    double sigma = std::pow(mu_aff / std::max(mu, 1e-300), 3.0);
    sigma = std::min(std::max(sigma, 0.0), 1.0);

    rc = -(z.array() * s.array() + dz.array() * ds.array() - sigma * mu).matrix();
    solve_dir(rc, dx, dy, ds, dz);
    double a = tau * std::min(step_len(s, ds), step_len(z, dz));
    a = std::min(a, 1.0);
    x += a * dx; y += a * dy; s += a * ds; z += a * dz;
  }
  out.x = x; out.z = z; out.y = y;
  out.status = SolveStatus::max_iter;
  return out;
}

// Phase-1 LP: min t s.t. Gx - t*1 <= h, Ax = b, t >= -1.
// t* <= 0 within tolerance -> feasible; t* > 0 -> infeasible with Farkas
// certificate from the duals.
struct Phase1Result {
  double t = 0.0;
  bool solved = false;
  Eigen::VectorXd x;
  Eigen::VectorXd z;  // duals of the original inequality rows
  Eigen::VectorXd y;
};

Phase1Result phase1(const ScaledProblem& sp, const QpOptions& opts) {
  const int n = static_cast<int>(sp.f.size());
  const int m = static_cast<int>(sp.G.rows());
  const int me = static_cast<int>(sp.A.rows());
  ScaledProblem aux;
  aux.obj_scale = 1.0;
  aux.H = Eigen::MatrixXd::Zero(n + 1, n + 1);
  aux.f = Eigen::VectorXd::Zero(n + 1);
  aux.f(n) = 1.0;
  aux.G = Eigen::MatrixXd::Zero(m + 1, n + 1);
  aux.G.topLeftCorner(m, n) = sp.G;
  aux.G.col(n).head(m).setConstant(-1.0);
  aux.G(m, n) = -1.0;
  aux.h = Eigen::VectorXd(m + 1);
  aux.h.head(m) = sp.h;
  aux.h(m) = 1.0;
  aux.A = Eigen::MatrixXd::Zero(me, n + 1);
  if (me) aux.A.leftCols(n) = sp.A;
  aux.b = sp.b;
  QpOptions o2 = opts;
  o2.max_iter = 200;
  IpmResult r = ipm(aux, o2);
  Phase1Result pr;
  pr.solved = (r.status == SolveStatus::optimal);
  if (pr.solved) {
    pr.t = r.x(n);
    pr.x = r.x.head(n);
    pr.z = r.z.head(m);
    pr.y = r.y;
  }
  return pr;
}

}  // namespace

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::unbounded: return "unbounded";
  }
  return "unknown";
}

QpSolution solve_qp(const QpProblem& p, const QpOptions& opts) {
  check_dimensions(p);
  check_psd(p.H, opts.psd_tol);
  const int n = p.num_vars();
  const int m = static_cast<int>(p.G.rows());
  const int me = static_cast<int>(p.A.rows());
  ScaledProblem sp = scale_problem(p);

  QpSolution sol;
  IpmResult r = ipm(sp, opts);

  // Unconverged or diverged: classify via phase-1.
  if (r.status != SolveStatus::optimal) {
    Phase1Result ph = phase1(sp, opts);
    if (ph.solved && ph.t > 1e-9) {
      sol.status = SolveStatus::infeasible;
      // certificate in original row scaling: G' (Dg zc) + A' (Da yc) = 0
      Eigen::VectorXd zc = sp.row_scale_G.asDiagonal() * ph.z;
      Eigen::VectorXd yc = sp.row_scale_A.asDiagonal() * ph.y;
      double nrm = zc.lpNorm<1>() + (me ? yc.lpNorm<1>() : 0.0);
      if (nrm > 0) { zc /= nrm; yc /= nrm; }
      sol.farkas_z = zc;
      sol.farkas_y = yc;
      sol.farkas_violation = -(p.h.dot(zc) + (me ? p.b.dot(yc) : 0.0));
      sol.x = ph.x;
      sol.iterations = r.iterations;
      return sol;
    }
    if (r.status == SolveStatus::unbounded && !r.diverged_primal) {
      sol.status = SolveStatus::unbounded;
      sol.x = r.x;
      sol.iterations = r.iterations;
      return sol;
    }
  }

  Eigen::VectorXd x = r.x, z = r.z, y = r.y;
  SolveStatus status = r.status;

  // Active-set polish: resolve the equality-constrained KKT on the detected
  // active set to machine precision.
  if (opts.polish && status == SolveStatus::optimal && m > 0) {
    std::vector<int> act;
    Eigen::VectorXd slack = sp.h - sp.G * x;
    for (int i = 0; i < m; ++i)
      if (z(i) > slack(i)) act.push_back(i);
    const int ma = static_cast<int>(act.size());
    Eigen::MatrixXd Ga(ma, n);
    for (int i = 0; i < ma; ++i) Ga.row(i) = sp.G.row(act[i]);
    const int dim = n + ma + me;
    Eigen::MatrixXd K = Eigen::MatrixXd::Zero(dim, dim);
    K.topLeftCorner(n, n) = sp.H.size() ? sp.H : Eigen::MatrixXd::Zero(n, n);
    K.topLeftCorner(n, n).diagonal().array() += 1e-14;
    if (ma) {
      K.block(0, n, n, ma) = Ga.transpose();
      K.block(n, 0, ma, n) = Ga;
      K.block(n, n, ma, ma).diagonal().array() -= 1e-14;
    }
    if (me) {
      K.block(0, n + ma, n, me) = sp.A.transpose();
      K.block(n + ma, 0, me, n) = sp.A;
    }
    Eigen::VectorXd rhs(dim);
    rhs.head(n) = -sp.f;
    for (int i = 0; i < ma; ++i) rhs(n + i) = sp.h(act[i]);
    if (me) rhs.tail(me) = sp.b;
    Eigen::VectorXd sol_p = K.ldlt().solve(rhs);
    Eigen::VectorXd xp = sol_p.head(n);
    Eigen::VectorXd zp = Eigen::VectorXd::Zero(m);
    for (int i = 0; i < ma; ++i) zp(act[i]) = sol_p(n + i);
    Eigen::VectorXd yp = me ? Eigen::VectorXd(sol_p.tail(me)) : Eigen::VectorXd::Zero(0);
    bool ok = xp.allFinite() && zp.allFinite();
    if (ok) {
      Eigen::VectorXd sl = sp.h - sp.G * xp;
      ok = sl.minCoeff() > -1e-8 && zp.minCoeff() > -1e-8;
      if (ok) {
        KktResiduals rp_ = residuals(sp, xp, zp.cwiseMax(0.0), yp);
        KktResiduals r0 = residuals(sp, x, z, y);
        double worst_p = std::max({rp_.stationarity, rp_.primal, rp_.complementarity});
        double worst_0 = std::max({r0.stationarity, r0.primal, r0.complementarity});
        if (worst_p <= worst_0 * 1.01 + 1e-15) {
          x = xp; z = zp.cwiseMax(0.0); y = yp;
        }
      }
    }
  }

  sol.x = x;
  sol.z = sp.obj_scale * (sp.row_scale_G.asDiagonal() * z);
  sol.y = me ? Eigen::VectorXd(sp.obj_scale * (sp.row_scale_A.asDiagonal() * y))
             : Eigen::VectorXd::Zero(0);
  sol.kkt = residuals(sp, x, z, y);
  sol.status = status;
  sol.iterations = r.iterations;
  sol.objective = 0.5 * x.dot(p.H.size() ? Eigen::VectorXd(p.H * x) : Eigen::VectorXd::Zero(n)) +
                  p.f.dot(x);
  if (status == SolveStatus::optimal) {
    const double worst = std::max({sol.kkt.stationarity, sol.kkt.primal,
                                   sol.kkt.dual, sol.kkt.complementarity});
    if (worst > 1e-6) sol.status = SolveStatus::max_iter;
  }
  return sol;
}

QpSolution solve_lp(const Eigen::VectorXd& f, const Eigen::MatrixXd& G,
                    const Eigen::VectorXd& h, const QpOptions& opts) {
  QpProblem p;
  p.H = Eigen::MatrixXd::Zero(f.size(), f.size());
  p.f = f;
  p.G = G;
  p.h = h;
  p.A = Eigen::MatrixXd(0, f.size());
  p.b = Eigen::VectorXd(0);
  return solve_qp(p, opts);
}

}  // namespace lkmpc
