#include "weedout/rerank.hpp"

#include "weedout/error.hpp"
#include "weedout/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace weedout {

namespace {

void require_same_dim(const FeatureMatrix& a, const FeatureMatrix& b, const char* what) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                std::string(what) + ": d=" + std::to_string(a.dim()) + " vs d=" +
                    std::to_string(b.dim()));
  }
}

const char* loss_name(SvmLoss loss) {
  return loss == SvmLoss::kHinge ? "hinge" : "squared_hinge";
}

nlohmann::json svm_echo(const SvmParams& p) {
  return {{"cost", p.cost},
          {"loss", loss_name(p.loss)},
          {"tolerance", p.tolerance},
          {"max_iter", p.max_iter}};
}

std::vector<double> to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<int> assign_folds(const std::vector<std::string>& ids, int folds,
                              std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 folds");
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<int> fold(ids.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    fold[order[pos]] = static_cast<int>(pos % static_cast<std::size_t>(folds));
  }
  return fold;
}

RerankOutcome rerank_cvsvm(const FeatureMatrix& pool, const FeatureMatrix& negatives,
                           const CvsvmParams& params, std::uint64_t seed) {
  const std::size_t n = pool.rows();
  if (params.folds < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 folds");
  if (n < static_cast<std::size_t>(params.folds)) {
    throw Error(ErrorCode::kPoolTooSmall, "pool of " + std::to_string(n) +
                                              " items cannot fill " +
                                              std::to_string(params.folds) + " folds");
  }
  if (negatives.rows() == 0) {
    throw Error(ErrorCode::kInvalidArgument, "cvsvm needs at least one negative");
  }
  if (!params.svm.per_item_cost.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "cvsvm does not take per-item costs");
  }
  require_same_dim(pool, negatives, "pool vs negatives");

  const auto fold = assign_folds(pool.ids, params.folds, seed);
  Eigen::VectorXd scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));

  // Training sets are assembled in id order so that permuting the pool rows
  // changes nothing.
  std::vector<std::size_t> canonical(n);
  std::iota(canonical.begin(), canonical.end(), std::size_t{0});
  std::stable_sort(canonical.begin(), canonical.end(),
                   [&](std::size_t a, std::size_t b) { return pool.ids[a] < pool.ids[b]; });

  for (int k = 0; k < params.folds; ++k) {
    std::vector<std::size_t> train_rows, test_rows;
    for (std::size_t j : canonical) (fold[j] == k ? test_rows : train_rows).push_back(j);

    LabeledSet train;
    train.features = concat(pool.select(train_rows), negatives);
    train.labels.assign(train_rows.size(), 1);
    train.labels.resize(train.features.rows(), -1);

    SvmParams svm = params.svm;
    svm.seed = derive_seed(seed, static_cast<std::uint64_t>(k));
    const LinearModel model = train_svm(train, svm);

    const Eigen::VectorXd fold_scores = decision_scores(model, pool.select(test_rows));
    for (std::size_t t = 0; t < test_rows.size(); ++t) {
      scores(static_cast<Eigen::Index>(test_rows[t])) = fold_scores(static_cast<Eigen::Index>(t));
    }
  }

  RerankOutcome out;
  out.method = Method::kCvsvm;
  out.ids = pool.ids;
  out.scores = to_std(scores);
  out.weights.assign(n, 1.0);
  out.threshold = params.keep_threshold;
  out.keep.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.keep[j] = out.scores[j] > params.keep_threshold;
  out.params_echo = {{"folds", params.folds},
                     {"svm", svm_echo(params.svm)},
                     {"keep_threshold", params.keep_threshold},
                     {"negatives", negatives.rows()},
                     {"seed", seed}};
  return out;
}

// ---------------------------------------------------------------------------

KmmResolved resolve_kmm(const KmmParams& p, std::size_t m, std::size_t n) {
  if (!(p.B > 0.0)) throw Error(ErrorCode::kInvalidArgument, "KMM bound B must be positive");
  if (m == 0 || n == 0) throw Error(ErrorCode::kInvalidArgument, "KMM needs m >= 1 and n >= 1");
  KmmResolved r;
  r.eps = p.eps.value_or(p.B / std::sqrt(static_cast<double>(n)));
  if (!(r.eps > 0.0)) throw Error(ErrorCode::kInvalidArgument, "KMM eps must be positive");
  const double target =
      static_cast<double>(p.sum_target == SumTarget::kNSide ? n : m);
  r.sum_lo = target * (1.0 - r.eps);
  r.sum_hi = target * (1.0 + r.eps);
  r.threshold = p.threshold.value_or(1e-3 * target / static_cast<double>(n));
  if (!(r.threshold >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "KMM threshold must be >= 0");
  return r;
}

QpProblem build_kmm_problem(const FeatureMatrix& labeled, const FeatureMatrix& pool,
                            const KmmParams& params) {
  require_same_dim(labeled, pool, "labeled vs pool");
  const std::size_t m = labeled.rows();
  const std::size_t n = pool.rows();
  const KmmResolved r = resolve_kmm(params, m, n);
  if (params.B * static_cast<double>(n) < r.sum_lo) {
    throw Error(ErrorCode::kInfeasibleProblem,
                "B * n = " + std::to_string(params.B * static_cast<double>(n)) +
                    " is below the required weight sum " + std::to_string(r.sum_lo));
  }
  const auto nn = static_cast<Eigen::Index>(n);
  QpProblem p;
  p.H.noalias() = pool.data * pool.data.transpose();
  const Eigen::VectorXd labeled_sum = labeled.data.colwise().sum().transpose();
  p.g = -(static_cast<double>(n) / static_cast<double>(m)) * (pool.data * labeled_sum);
  p.lower = Eigen::VectorXd::Zero(nn);
  p.upper = Eigen::VectorXd::Constant(nn, params.B);
  p.sum_lo = r.sum_lo;
  p.sum_hi = r.sum_hi;
  return p;
}

double weighted_mean_residual(const FeatureMatrix& labeled, const FeatureMatrix& pool,
                              const Eigen::VectorXd& alpha) {
  const double total = alpha.sum();
  if (total <= 0.0 || labeled.rows() == 0) return std::numeric_limits<double>::infinity();
  const Eigen::VectorXd target = labeled.data.colwise().mean().transpose();
  const Eigen::VectorXd weighted = pool.data.transpose() * alpha / total;
  return (target - weighted).norm();
}

std::optional<Eigen::VectorXd> closest_to_uniform(const Eigen::MatrixXd& pool,
                                                  const Eigen::VectorXd& target,
                                                  const QpProblem& problem, double tol,
                                                  int max_iter) {
  const auto n = pool.rows();
  const auto d = pool.cols();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  auto weights = [&](const Eigen::VectorXd& lambda) {
    return project_box_slab(ones + pool * lambda, problem.lower, problem.upper, problem.sum_lo,
                            problem.sum_hi);
  };
  // Concave dual: D(λ) = ½|α(λ) - 1|² - λ'(Z'α(λ) - target), ∇D = target - Z'α(λ),
  // maximized by semismooth Newton; the generalized Hessian is -Z'JZ with J
  // the Jacobian of the projection at 1 + Zλ.
  auto dual = [&](const Eigen::VectorXd& lambda, const Eigen::VectorXd& a) {
    return 0.5 * (a - ones).squaredNorm() - lambda.dot(pool.transpose() * a - target);
  };

  Eigen::VectorXd lambda = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd alpha = weights(lambda);
  Eigen::VectorXd grad = target - pool.transpose() * alpha;
  double value = dual(lambda, alpha);
  const double ridge = 1e-12 * std::max(1.0, pool.squaredNorm() / static_cast<double>(d));

  for (int iter = 0; iter < max_iter; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() <= tol) return alpha;

    // Free coordinates, and whether the sum slab bound is active.
    Eigen::VectorXd free = Eigen::VectorXd::Zero(n);
    double unshifted = 0.0;
    const Eigen::VectorXd y = ones + pool * lambda;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (alpha(i) > problem.lower(i) && alpha(i) < problem.upper(i)) free(i) = 1.0;
      unshifted += std::clamp(y(i), problem.lower(i), problem.upper(i));
    }
    const double free_count = free.sum();
    const bool slab_active =
        (unshifted < problem.sum_lo || unshifted > problem.sum_hi) && free_count > 0.0;
    auto apply = [&](const Eigen::VectorXd& v) {
      Eigen::VectorXd u = free.cwiseProduct(pool * v);
      if (slab_active) u -= free * (u.sum() / free_count);
      return Eigen::VectorXd(pool.transpose() * u + ridge * v);
    };

    // Conjugate gradients on (Z'JZ + ridge) Δ = ∇D.
    Eigen::VectorXd delta = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd r = grad;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    const double stop = 1e-24 * rr;
    for (Eigen::Index k = 0; k < 2 * d && rr > stop; ++k) {
      const Eigen::VectorXd ap = apply(p);
      const double pap = p.dot(ap);
      if (!(pap > 0.0)) break;
      const double step = rr / pap;
      delta += step * p;
      r -= step * ap;
      const double next_rr = r.squaredNorm();
      p = r + (next_rr / rr) * p;
      rr = next_rr;
    }
    if (delta.squaredNorm() == 0.0) delta = grad;

    // Backtracking: accept on sufficient dual ascent or a shrinking gradient.
    bool moved = false;
    const double slope = grad.dot(delta);
    for (double step = 1.0; step > 1e-12; step *= 0.5) {
      const Eigen::VectorXd next = lambda + step * delta;
      Eigen::VectorXd a_next = weights(next);
      Eigen::VectorXd g_next = target - pool.transpose() * a_next;
      const double next_value = dual(next, a_next);
      if (next_value >= value + 1e-4 * step * slope ||
          g_next.norm() <= (1.0 - 1e-4 * step) * grad.norm()) {
        lambda = next;
        alpha = std::move(a_next);
        grad = std::move(g_next);
        value = next_value;
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  if (grad.lpNorm<Eigen::Infinity>() <= tol) return alpha;
  return std::nullopt;
}

KmmResult rerank_kmm_detailed(const FeatureMatrix& labeled, const FeatureMatrix& pool,
                              const KmmParams& params) {
  KmmResult result;
  result.problem = build_kmm_problem(labeled, pool, params);
  const KmmResolved r = resolve_kmm(params, labeled.rows(), pool.rows());

  QpOptions options;
  options.tol = params.qp_tol;
  options.max_iter = params.qp_max_iter;
  options.initial = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(pool.rows()));
  result.qp = solve_qp(result.problem, options);

  if (params.closest_to_uniform && pool.rows() > 0) {
    const Eigen::VectorXd target = pool.data.transpose() * result.qp.alpha;
    const double tol = 1e-9 * std::max(1.0, target.lpNorm<Eigen::Infinity>());
    if (auto nearest = closest_to_uniform(pool.data, target, result.problem, tol)) {
      const double objective = result.problem.objective(*nearest);
      const double residual = kkt_residual(result.problem, *nearest);
      if (objective <= result.qp.objective + 1e-9 * std::max(1.0, std::abs(result.qp.objective)) &&
          residual <= std::max(params.qp_tol, result.qp.kkt_residual)) {
        result.qp.alpha = std::move(*nearest);
        result.qp.objective = objective;
        result.qp.kkt_residual = residual;
        result.tie_broken = true;
      }
    }
  }

  auto& out = result.outcome;
  out.method = Method::kKmm;
  out.ids = pool.ids;
  out.weights = to_std(result.qp.alpha);
  out.scores = out.weights;
  out.threshold = r.threshold;
  out.keep.resize(pool.rows());
  for (std::size_t j = 0; j < pool.rows(); ++j) out.keep[j] = out.weights[j] > r.threshold;
  out.params_echo = {
      {"B", params.B},
      {"eps", r.eps},
      {"sum_target", params.sum_target == SumTarget::kNSide ? "n_side" : "m_side"},
      {"sum_lo", r.sum_lo},
      {"sum_hi", r.sum_hi},
      {"weight_threshold", r.threshold},
      {"qp_tol", params.qp_tol},
      {"qp_iterations", result.qp.iterations},
      {"qp_kkt_residual", result.qp.kkt_residual},
      {"qp_converged", result.qp.status == QpStatus::kConverged},
      {"closest_to_uniform", result.tie_broken},
      {"labeled", labeled.rows()}};
  return result;
}

RerankOutcome rerank_kmm(const FeatureMatrix& labeled, const FeatureMatrix& pool,
                         const KmmParams& params) {
  return rerank_kmm_detailed(labeled, pool, params).outcome;
}

// ---------------------------------------------------------------------------

std::size_t tsvm_positive_count(double rho, std::size_t n) {
  if (!(rho > 0.0) || !std::isfinite(rho)) {
    throw Error(ErrorCode::kDegenerateRatio, "rho must be positive and finite");
  }
  const double exact = rho * static_cast<double>(n) / (1.0 + rho);
  const auto positives = static_cast<long long>(std::llround(exact));
  if (positives < 1 || positives > static_cast<long long>(n) - 1) {
    throw Error(ErrorCode::kDegenerateRatio,
                "rho=" + std::to_string(rho) + " gives " + std::to_string(positives) +
                    " positives for a pool of " + std::to_string(n));
  }
  return static_cast<std::size_t>(positives);
}

std::vector<int> top_k_labels(const Eigen::VectorXd& scores,
                              const std::vector<std::string>& ids, std::size_t positives) {
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double sa = scores(static_cast<Eigen::Index>(a));
    const double sb = scores(static_cast<Eigen::Index>(b));
    if (sa != sb) return sa > sb;
    return ids[a] < ids[b];
  });
  std::vector<int> labels(ids.size(), -1);
  for (std::size_t k = 0; k < positives && k < order.size(); ++k) labels[order[k]] = 1;
  return labels;
}

namespace {

struct TransductiveProblem {
  LabeledSet data;
  SvmParams svm;
};

TransductiveProblem make_transductive(const LabeledSet& labeled, const FeatureMatrix& pool,
                                      const std::vector<int>& t, const TsvmParams& params) {
  TransductiveProblem tp;
  tp.data.features = concat(labeled.features, pool);
  tp.data.labels = labeled.labels;
  tp.data.labels.insert(tp.data.labels.end(), t.begin(), t.end());
  tp.svm = params.inner_svm;
  const double m = static_cast<double>(labeled.rows());
  const double n = static_cast<double>(pool.rows());
  tp.svm.per_item_cost.assign(labeled.rows(), params.alpha / m);
  tp.svm.per_item_cost.resize(labeled.rows() + pool.rows(), params.beta / n);
  return tp;
}

void validate_tsvm(const TsvmParams& p) {
  if (!(p.alpha >= 0.0) || !(p.beta >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "tsvm alpha and beta must be >= 0");
  }
  if (p.max_outer < 1) throw Error(ErrorCode::kInvalidArgument, "tsvm max_outer must be >= 1");
}

}  // namespace

double tsvm_objective(const LinearModel& model, const LabeledSet& labeled,
                      const FeatureMatrix& pool, const std::vector<int>& t,
                      const TsvmParams& params) {
  const auto tp = make_transductive(labeled, pool, t, params);
  return primal_objective(model, tp.data, tp.svm);
}

TsvmResult rerank_tsvm_detailed(const LabeledSet& labeled, const FeatureMatrix& pool,
                                const TsvmParams& params, std::uint64_t seed) {
  validate_tsvm(params);
  require_same_dim(labeled.features, pool, "labeled vs pool");
  const std::size_t n = pool.rows();
  const std::size_t positives = tsvm_positive_count(params.rho, n);

  // Supervised start: labeled data only, then the first label assignment.
  SvmParams supervised = params.inner_svm;
  supervised.per_item_cost.assign(labeled.rows(),
                                  params.alpha / static_cast<double>(labeled.rows()));
  supervised.seed = derive_seed(seed, 0);
  LinearModel model = train_svm(labeled, supervised);
  std::vector<int> t = top_k_labels(decision_scores(model, pool), pool.ids, positives);

  TsvmResult result;
  std::optional<LinearModel> previous;
  for (int outer = 0; outer < params.max_outer; ++outer) {
    auto tp = make_transductive(labeled, pool, t, params);
    tp.svm.seed = derive_seed(seed, static_cast<std::uint64_t>(outer) + 1);
    LinearModel candidate = train_svm(tp.data, tp.svm);
    double objective = primal_objective(candidate, tp.data, tp.svm);
    if (previous) {
      // The inner solve is inexact; never accept a w that is worse than the
      // one it replaces for the current labels.
      const double kept = primal_objective(*previous, tp.data, tp.svm);
      if (kept < objective) {
        candidate = *previous;
        objective = kept;
      }
    }
    model = std::move(candidate);

    std::vector<int> next = top_k_labels(decision_scores(model, pool), pool.ids, positives);
    std::size_t flips = 0;
    for (std::size_t j = 0; j < n; ++j) flips += next[j] != t[j] ? 1 : 0;
    result.trace.push_back({objective,
                            static_cast<std::size_t>(std::count(t.begin(), t.end(), 1)),
                            flips});
    previous = model;
    t = std::move(next);
    if (flips == 0) {
      result.converged = true;
      break;
    }
  }

  const Eigen::VectorXd scores = decision_scores(model, pool);
  auto& out = result.outcome;
  out.method = Method::kTsvm;
  out.ids = pool.ids;
  out.scores = to_std(scores);
  out.weights.assign(n, 1.0);
  out.keep.resize(n);
  for (std::size_t j = 0; j < n; ++j) out.keep[j] = t[j] == 1;
  // Keep is the top-n+ rule; the recorded threshold is the lowest kept score.
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (out.keep[j]) lowest = std::min(lowest, out.scores[j]);
  }
  out.threshold = lowest;
  out.params_echo = {{"alpha", params.alpha},
                     {"beta", params.beta},
                     {"rho", params.rho},
                     {"positives", positives},
                     {"max_outer", params.max_outer},
                     {"outer_iterations", result.trace.size()},
                     {"converged", result.converged},
                     {"inner_svm", svm_echo(params.inner_svm)},
                     {"seed", seed}};
  result.model = std::move(model);
  return result;
}

RerankOutcome rerank_tsvm(const LabeledSet& labeled, const FeatureMatrix& pool,
                          const TsvmParams& params, std::uint64_t seed) {
  return rerank_tsvm_detailed(labeled, pool, params, seed).outcome;
}

}  // namespace weedout
