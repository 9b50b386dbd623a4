#pragma once

// The three pool rerankers. Each maps an unlabeled pool (plus whatever
// supervision it uses) to a RerankOutcome aligned with the pool rows.

#include "weedout/linear_svm.hpp"
#include "weedout/model.hpp"
#include "weedout/qp_solver.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace weedout {

// ---------------------------------------------------------------------------
// Cross-validated SVM: out-of-fold scoring of the pool against negatives.

struct CvsvmParams {
  int folds = 5;
  SvmParams svm{};  // C = 1, hinge
  double keep_threshold = 0.0;
};

/// Fold index of each pool row. Rows are visited in ascending id order and
/// shuffled with `seed`, so the assignment does not depend on pool row order.
std::vector<int> assign_folds(const std::vector<std::string>& ids, int folds,
                              std::uint64_t seed);

RerankOutcome rerank_cvsvm(const FeatureMatrix& pool, const FeatureMatrix& negatives,
                           const CvsvmParams& params, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Kernel mean matching (linear kernel).

enum class SumTarget { kNSide, kMSide };

struct KmmParams {
  double B = 5.0;
  std::optional<double> eps;        // default B / sqrt(n)
  SumTarget sum_target = SumTarget::kNSide;
  std::optional<double> threshold;  // default 1e-3 * (target midpoint / n)
  double qp_tol = 1e-6;
  int qp_max_iter = 50000;
  // When Z has fewer independent directions than pool items the minimizer is
  // not unique; return the one closest to uniform weights.
  bool closest_to_uniform = true;
};

struct KmmResolved {
  double eps = 0.0;
  double sum_lo = 0.0;
  double sum_hi = 0.0;
  double threshold = 0.0;
};

KmmResolved resolve_kmm(const KmmParams& p, std::size_t m, std::size_t n);

/// The QP whose minimizer matches the weighted pool mean to the labeled mean:
/// H = ZZ', g = -(n/m) Z X'1, box [0, B], sum per `sum_target`.
QpProblem build_kmm_problem(const FeatureMatrix& labeled, const FeatureMatrix& pool,
                            const KmmParams& params);

/// ‖mean(X) - Σ α_j z_j / Σ α_j‖.
double weighted_mean_residual(const FeatureMatrix& labeled, const FeatureMatrix& pool,
                              const Eigen::VectorXd& alpha);

/// Among the weightings α in the problem's box and sum slab with Z'α = target,
/// the one nearest to the all-ones vector, found by Newton steps on the dual
/// (dimension of `target`). Returns nullopt when |Z'α - target|∞ stays above
/// `tol`.
std::optional<Eigen::VectorXd> closest_to_uniform(const Eigen::MatrixXd& pool,
                                                  const Eigen::VectorXd& target,
                                                  const QpProblem& problem, double tol,
                                                  int max_iter = 200);

struct KmmResult {
  RerankOutcome outcome;
  QpSolution qp;  // alpha holds the reported weights
  QpProblem problem;
  bool tie_broken = false;
};

KmmResult rerank_kmm_detailed(const FeatureMatrix& labeled, const FeatureMatrix& pool,
                              const KmmParams& params);
RerankOutcome rerank_kmm(const FeatureMatrix& labeled, const FeatureMatrix& pool,
                         const KmmParams& params);

// ---------------------------------------------------------------------------
// Transductive SVM with a fixed positive/negative ratio on the pool.

struct TsvmParams {
  double alpha = 1.0;
  double beta = 1e-4;
  double rho = 0.25;  // n+ / n-; callers usually set 1000 / n
  int max_outer = 50;
  SvmParams inner_svm = [] {
    SvmParams p;
    p.loss = SvmLoss::kSquaredHinge;
    return p;
  }();
};

/// round(rho * n / (1 + rho)); throws kDegenerateRatio outside [1, n-1].
std::size_t tsvm_positive_count(double rho, std::size_t n);

/// Assigns +1 to the `positives` highest scores, ties broken by ascending id.
std::vector<int> top_k_labels(const Eigen::VectorXd& scores,
                              const std::vector<std::string>& ids, std::size_t positives);

struct TsvmIteration {
  double objective = 0.0;  // transductive objective at (w, t) after the w-step
  std::size_t positives = 0;
  std::size_t flips = 0;   // labels changed by the following label-step
};

struct TsvmResult {
  RerankOutcome outcome;
  LinearModel model;
  std::vector<TsvmIteration> trace;
  bool converged = false;
};

/// ½‖w‖² + (α/m) Σ ℓ(y_i f(x_i)) + (β/n) Σ ℓ(t_j f(z_j)), ℓ the inner loss,
/// ‖w‖ including the bias.
double tsvm_objective(const LinearModel& model, const LabeledSet& labeled,
                      const FeatureMatrix& pool, const std::vector<int>& t,
                      const TsvmParams& params);

TsvmResult rerank_tsvm_detailed(const LabeledSet& labeled, const FeatureMatrix& pool,
                                const TsvmParams& params, std::uint64_t seed);
RerankOutcome rerank_tsvm(const LabeledSet& labeled, const FeatureMatrix& pool,
                          const TsvmParams& params, std::uint64_t seed);

}  // namespace weedout
