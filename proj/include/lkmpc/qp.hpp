#ifndef LKMPC_QP_HPP_
#define LKMPC_QP_HPP_

#include <Eigen/Dense>
#include <string>

namespace lkmpc {

// Dense convex QP
//   min 0.5 x'Hx + f'x   s.t.  G x <= h,  A x = b
// H symmetric PSD. LP mode: H = 0.
struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd f;
  Eigen::MatrixXd G;
  Eigen::VectorXd h;
  Eigen::MatrixXd A;  // may be 0 x n
  Eigen::VectorXd b;

  int num_vars() const { return static_cast<int>(f.size()); }
};

enum class SolveStatus { optimal, infeasible, max_iter, unbounded };

const char* to_string(SolveStatus s);

struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
};

struct QpSolution {
  Eigen::VectorXd x;
  Eigen::VectorXd z;        // multipliers of Gx<=h
  Eigen::VectorXd y;        // multipliers of Ax=b
  double objective = 0.0;
  SolveStatus status = SolveStatus::max_iter;
  KktResiduals kkt;
  int iterations = 0;
  // Farkas-type certificate when status == infeasible:
  // zc >= 0, G'zc + A'yc ~ 0, h'zc + b'yc = -violation < 0
  Eigen::VectorXd farkas_z;
  Eigen::VectorXd farkas_y;
  double farkas_violation = 0.0;
};

struct QpOptions {
  int max_iter = 100;
  double tol = 1e-10;           // on scaled residuals and mu
  bool polish = true;
  double psd_tol = 1e-10;       // eigenvalue tolerance when validating H
};

QpSolution solve_qp(const QpProblem& p, const QpOptions& opts = {});

// LP mode: min f'x s.t. Gx <= h.
QpSolution solve_lp(const Eigen::VectorXd& f, const Eigen::MatrixXd& G,
                    const Eigen::VectorXd& h, const QpOptions& opts = {});

}  // namespace lkmpc

#endif  // LKMPC_QP_HPP_
