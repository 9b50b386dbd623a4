#include "weedout/qp_solver.hpp"

#include "weedout/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace weedout {

namespace {

struct PieceEval {
  double sum = 0.0;
  double offset = 0.0;  // sum of clamped values plus free y_i
  double slope = 0.0;   // sum of 1/d_i over free coordinates
};

PieceEval eval_shift(const Eigen::VectorXd& y, const Eigen::VectorXd& metric,
                     const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                     double shift) {
  PieceEval e;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double v = y(i) - shift / metric(i);
    if (v <= lower(i)) {
      e.sum += lower(i);
      e.offset += lower(i);
    } else if (v >= upper(i)) {
      e.sum += upper(i);
      e.offset += upper(i);
    } else {
      e.sum += v;
      e.offset += y(i);
      e.slope += 1.0 / metric(i);
    }
  }
  return e;
}

Eigen::VectorXd clip_shift(const Eigen::VectorXd& y, const Eigen::VectorXd& metric,
                           const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                           double shift) {
  Eigen::VectorXd x(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    x(i) = std::clamp(y(i) - shift / metric(i), lower(i), upper(i));
  }
  return x;
}

// Finds the shift s with sum(clip(y - s/d)) == target inside [lo, hi], where
// the clipped sum is non-increasing in s. Bisection, with a jump to the root
// of the current linear piece whenever that root lands inside the bracket.
double find_shift(const Eigen::VectorXd& y, const Eigen::VectorXd& metric,
                  const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                  double target, double lo, double hi) {
  const double tiny = 1e-14 * std::max(1.0, std::abs(target));
  for (int iter = 0; iter < 200 && hi - lo > 0.0; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    const PieceEval e = eval_shift(y, metric, lower, upper, mid);
    if (std::abs(e.sum - target) <= tiny) return mid;
    if (e.sum > target) lo = mid; else hi = mid;
    if (e.slope > 0.0) {
      const double jump = (e.offset - target) / e.slope;
      if (jump > lo && jump < hi) {
        const PieceEval j = eval_shift(y, metric, lower, upper, jump);
        if (std::abs(j.sum - target) <= tiny) return jump;
        if (j.sum > target) lo = jump; else hi = jump;
      }
    }
  }
  return 0.5 * (lo + hi);
}

double max_abs(const Eigen::MatrixXd& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

// Largest eigenvalue estimate by power iteration from the all-ones vector.
double power_estimate(const Eigen::MatrixXd& m, int iterations) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(m.rows()).normalized();
  double estimate = 0.0;
  for (int k = 0; k < iterations; ++k) {
    Eigen::VectorXd mv = m * v;
    const double norm = mv.norm();
    if (norm == 0.0) return 0.0;
    estimate = v.dot(mv);
    v = mv / norm;
  }
  return std::max(estimate, v.dot(m * v));
}

// Ritz value for the smallest eigenvalue from shifted power iteration.
double smallest_ritz(const Eigen::MatrixXd& h, double largest, int iterations) {
  const Eigen::Index n = h.rows();
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = 1.0 + 0.5 * std::sin(1.0 + static_cast<double>(i));
  v.normalize();
  for (int k = 0; k < iterations; ++k) {
    Eigen::VectorXd mv = largest * v - h * v;
    const double norm = mv.norm();
    if (norm == 0.0) break;
    v = mv / norm;
  }
  return v.dot(h * v);
}

void check_psd(const QpProblem& p, double largest) {
  const auto n = p.size();
  if (n == 0) return;
  const double trace = p.H.trace();
  if (trace < 0.0) throw Error(ErrorCode::kNumericalBreakdown, "H has negative trace");
  const double ritz = smallest_ritz(p.H, std::max(largest, trace), 200);
  if (ritz < -1e-8 * trace / static_cast<double>(n)) {
    throw Error(ErrorCode::kNumericalBreakdown,
                "H is not positive semidefinite (Ritz value " + std::to_string(ritz) + ")");
  }
}

}  // namespace

void validate(const QpProblem& p) {
  const auto n = p.size();
  if (p.H.rows() != n || p.H.cols() != n || p.lower.size() != n || p.upper.size() != n) {
    throw Error(ErrorCode::kInvalidArgument, "QP dimensions are inconsistent");
  }
  if (!p.H.allFinite() || !p.g.allFinite() || std::isnan(p.sum_lo) || std::isnan(p.sum_hi)) {
    throw Error(ErrorCode::kInvalidArgument, "QP data must be finite");
  }
  if (max_abs(p.H - p.H.transpose()) > 1e-9 * std::max(1.0, max_abs(p.H))) {
    throw Error(ErrorCode::kInvalidArgument, "H is not symmetric");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(p.lower(i) <= p.upper(i))) {
      throw Error(ErrorCode::kInvalidArgument, "lower bound exceeds upper bound");
    }
  }
  if (!(p.sum_lo <= p.sum_hi)) {
    throw Error(ErrorCode::kInvalidArgument, "sum_lo exceeds sum_hi");
  }
  if (p.lower.sum() > p.sum_hi || p.upper.sum() < p.sum_lo) {
    throw Error(ErrorCode::kInfeasibleProblem, "box and sum constraint do not intersect");
  }
}

Eigen::VectorXd project_box_slab(const Eigen::VectorXd& y, const Eigen::VectorXd& metric,
                                 const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                 double sum_lo, double sum_hi) {
  const double at_zero = eval_shift(y, metric, lower, upper, 0.0).sum;
  if (at_zero >= sum_lo && at_zero <= sum_hi) return clip_shift(y, metric, lower, upper, 0.0);

  // Shift that pushes every coordinate onto the bound on the target side.
  double reach = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    reach = std::max(reach, std::max(std::abs(y(i) - lower(i)), std::abs(y(i) - upper(i))) *
                                metric(i));
  }
  reach = reach * (1.0 + 1e-12) + 1e-300;
  const double shift = at_zero > sum_hi
                           ? find_shift(y, metric, lower, upper, sum_hi, 0.0, reach)
                           : find_shift(y, metric, lower, upper, sum_lo, -reach, 0.0);
  return clip_shift(y, metric, lower, upper, shift);
}

Eigen::VectorXd project_box_slab(const Eigen::VectorXd& y, const Eigen::VectorXd& lower,
                                 const Eigen::VectorXd& upper, double sum_lo, double sum_hi) {
  return project_box_slab(y, Eigen::VectorXd::Ones(y.size()), lower, upper, sum_lo, sum_hi);
}

double feasibility_violation(const QpProblem& p, const Eigen::VectorXd& alpha) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < alpha.size(); ++i) {
    worst = std::max({worst, p.lower(i) - alpha(i), alpha(i) - p.upper(i)});
  }
  const double s = alpha.sum();
  return std::max({worst, p.sum_lo - s, s - p.sum_hi});
}

double kkt_residual(const QpProblem& p, const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd grad = p.H * alpha + p.g;
  const Eigen::VectorXd stepped =
      project_box_slab(alpha - grad, p.lower, p.upper, p.sum_lo, p.sum_hi);
  const double stationarity = alpha.size() == 0 ? 0.0 : (alpha - stepped).cwiseAbs().maxCoeff();
  return stationarity + feasibility_violation(p, alpha);
}

QpSolution solve_qp(const QpProblem& p, const QpOptions& options) {
  validate(p);
  const auto n = p.size();
  QpSolution sol;
  if (n == 0) {
    sol.alpha = Eigen::VectorXd();
    sol.status = QpStatus::kConverged;
    return sol;
  }

  // Jacobi scaling; the projection is taken in the same metric.
  const double trace = p.H.trace();
  const double floor = std::max(1e-12 * trace / static_cast<double>(n), 1e-300);
  Eigen::VectorXd metric = p.H.diagonal().cwiseMax(floor);
  if (trace <= 0.0) metric.setOnes();
  const Eigen::VectorXd inv_sqrt = metric.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd scaled = inv_sqrt.asDiagonal() * p.H * inv_sqrt.asDiagonal();
  const double largest = power_estimate(scaled, options.power_iterations);
  check_psd(p, power_estimate(p.H, options.power_iterations));
  double lipschitz = std::max(largest, 1e-12);

  Eigen::VectorXd alpha = options.initial ? *options.initial : Eigen::VectorXd::Zero(n);
  if (alpha.size() != n) throw Error(ErrorCode::kInvalidArgument, "initial point has wrong size");
  alpha = project_box_slab(alpha, p.lower, p.upper, p.sum_lo, p.sum_hi);

  Eigen::VectorXd h_alpha = p.H * alpha;
  double objective = 0.5 * alpha.dot(h_alpha) + p.g.dot(alpha);
  if (options.trace) options.trace(0, objective);

  // Accelerated projected gradient with function-value restarts: a step is
  // taken from the extrapolated point y and accepted only if it lowers the
  // objective; otherwise momentum is dropped and the step is retried from the
  // current iterate. Accepted iterates are therefore monotone.
  Eigen::VectorXd y = alpha;
  Eigen::VectorXd h_y = h_alpha;
  double momentum_t = 1.0;
  bool restarted = true;

  sol.status = QpStatus::kMaxIter;
  int iter = 0;
  for (; iter < options.max_iter; ++iter) {
    if (iter % 10 == 0 && kkt_residual(p, alpha) <= options.tol) {
      sol.status = QpStatus::kConverged;
      break;
    }
    const Eigen::VectorXd grad = h_y + p.g;
    // Objective changes are formed from differences (gradient term plus
    // curvature term) rather than by subtracting two large objective values.
    Eigen::VectorXd candidate, h_candidate;
    for (;;) {
      const Eigen::VectorXd target = y - grad.cwiseQuotient(metric) / lipschitz;
      candidate = project_box_slab(target, metric, p.lower, p.upper, p.sum_lo, p.sum_hi);
      h_candidate = p.H * candidate;
      const Eigen::VectorXd delta = candidate - y;
      const double curvature = delta.dot(h_candidate - h_y);
      if (curvature <= lipschitz * delta.dot(metric.cwiseProduct(delta)) * (1.0 + 1e-12)) break;
      lipschitz *= 2.0;
      if (lipschitz > 1e300) {
        throw Error(ErrorCode::kNumericalBreakdown, "step size collapsed");
      }
    }
    const Eigen::VectorXd step = candidate - alpha;
    const double change =
        (h_alpha + p.g).dot(step) + 0.5 * step.dot(h_candidate - h_alpha);
    if (change > 0.0 || (change == 0.0 && restarted)) {
      // From the current iterate the sufficient-decrease test guarantees
      // descent, so a rise there is rounding in the gradient term (large
      // multipliers times tiny sum errors) once steps get very short. Such
      // steps are still taken; a rise beyond that noise level ends the run.
      if (restarted) {
        const Eigen::VectorXd full = h_alpha + p.g;
        const double noise = 4096.0 * std::numeric_limits<double>::epsilon() *
                             (full.cwiseAbs().dot(step.cwiseAbs()) +
                              0.5 * step.cwiseAbs().dot((h_candidate - h_alpha).cwiseAbs()) +
                              std::abs(objective) * 1e-3);
        if (change > noise || step.squaredNorm() == 0.0) break;
      } else {
        y = alpha;
        h_y = h_alpha;
        momentum_t = 1.0;
        restarted = true;
        continue;
      }
    }
    const double next_t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * momentum_t * momentum_t));
    const double beta = (momentum_t - 1.0) / next_t;
    y = candidate + beta * (candidate - alpha);
    h_y = h_candidate + beta * (h_candidate - h_alpha);
    momentum_t = next_t;
    restarted = false;
    alpha = std::move(candidate);
    h_alpha = std::move(h_candidate);
    objective += change;
    if (options.trace) options.trace(iter + 1, objective);
  }

  sol.alpha = alpha;
  sol.objective = p.objective(alpha);
  sol.kkt_residual = kkt_residual(p, alpha);
  sol.iterations = iter;
  if (sol.kkt_residual <= options.tol) sol.status = QpStatus::kConverged;
  return sol;
}

}  // namespace weedout
