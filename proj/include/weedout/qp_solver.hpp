#pragma once

// Dense convex QP with box bounds and a two-sided sum constraint:
//
//   minimize   ½ a'Ha + g'a
//   subject to lower <= a <= upper,  sum_lo <= 1'a <= sum_hi
//
// solved by diagonally preconditioned projected gradient. The projection onto
// the box-slab intersection is exact (bisection on the shift of the clipped
// point followed by an interpolation step on the final linear piece).

#include <Eigen/Dense>

#include <functional>
#include <optional>

namespace weedout {

struct QpProblem {
  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double sum_lo = 0.0;
  double sum_hi = 0.0;

  Eigen::Index size() const noexcept { return g.size(); }
  double objective(const Eigen::VectorXd& alpha) const {
    return 0.5 * alpha.dot(H * alpha) + g.dot(alpha);
  }
};

/// Throws kInvalidArgument on shape/ordering errors and kInfeasibleProblem
/// when the box and slab do not intersect.
void validate(const QpProblem& p);

enum class QpStatus { kConverged, kMaxIter };

struct QpSolution {
  Eigen::VectorXd alpha;
  double objective = 0.0;
  double kkt_residual = 0.0;
  int iterations = 0;
  QpStatus status = QpStatus::kMaxIter;
};

struct QpOptions {
  double tol = 1e-6;
  int max_iter = 50000;
  int power_iterations = 20;
  std::optional<Eigen::VectorXd> initial;  // projected before use
  // Called once per accepted iterate with (iteration, objective).
  std::function<void(int, double)> trace;
};

QpSolution solve_qp(const QpProblem& p, const QpOptions& options = {});

/// Euclidean projection onto {lower <= x <= upper, sum_lo <= 1'x <= sum_hi}.
Eigen::VectorXd project_box_slab(const Eigen::VectorXd& y, const Eigen::VectorXd& lower,
                                 const Eigen::VectorXd& upper, double sum_lo,
                                 double sum_hi);

/// Same set, projection in the metric ½ Σ d_i (x_i - y_i)² with d_i > 0.
Eigen::VectorXd project_box_slab(const Eigen::VectorXd& y, const Eigen::VectorXd& metric,
                                 const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                 double sum_lo, double sum_hi);

/// ‖a - P(a - ∇f(a))‖∞ plus the largest bound or sum violation. Zero exactly
/// at KKT points of the problem.
double kkt_residual(const QpProblem& p, const Eigen::VectorXd& alpha);

/// Largest violation of the box or sum constraints (0 when feasible).
double feasibility_violation(const QpProblem& p, const Eigen::VectorXd& alpha);

}  // namespace weedout
