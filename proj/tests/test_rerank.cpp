#include "support.hpp"
#include "weedout/error.hpp"
#include "weedout/rerank.hpp"
#include "weedout/synthgen.hpp"

#include <doctest.h>

#include <algorithm>
#include <map>

using namespace weedout;
using weedout::testing::gaussian_matrix;

namespace {

SynthSpec clusters(std::size_t clean, std::size_t noise, std::uint64_t seed) {
  SynthSpec s;
  s.n_clean = clean;
  s.n_noise = noise;
  s.d = 16;
  s.separation = 6.0;
  s.m_labeled = 10;
  s.background_fraction = 0.0;  // every outlier from the other cluster
  s.n_negatives = 400;
  s.seed = seed;
  return s;
}

std::vector<std::string> sorted(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

// --- cvsvm -----------------------------------------------------------------

TEST_CASE("folds partition the pool into near-equal parts") {
  const auto ids = weedout::testing::numbered_ids(100);
  const auto fold = assign_folds(ids, 5, 0);
  std::map<int, int> sizes;
  for (int f : fold) ++sizes[f];
  REQUIRE(sizes.size() == 5);
  for (const auto& [f, size] : sizes) CHECK(size == 20);

  const auto odd = assign_folds(weedout::testing::numbered_ids(23), 5, 3);
  std::map<int, int> odd_sizes;
  for (int f : odd) ++odd_sizes[f];
  int lo = 1000, hi = 0;
  for (const auto& [f, size] : odd_sizes) lo = std::min(lo, size), hi = std::max(hi, size);
  CHECK(hi - lo <= 1);
}

TEST_CASE("fold assignment follows ids, not row order") {
  auto ids = weedout::testing::numbered_ids(40);
  const auto fold = assign_folds(ids, 4, 17);
  std::map<std::string, int> by_id;
  for (std::size_t j = 0; j < ids.size(); ++j) by_id[ids[j]] = fold[j];
  std::reverse(ids.begin(), ids.end());
  const auto again = assign_folds(ids, 4, 17);
  for (std::size_t j = 0; j < ids.size(); ++j) CHECK(again[j] == by_id[ids[j]]);
}

TEST_CASE("cvsvm scores every pool item once and rejects planted outliers") {
  const SyntheticSynset s = generate_synset(clusters(180, 20, 42));
  const RerankOutcome o = rerank_cvsvm(s.pool, s.negatives, CvsvmParams{}, 0);
  CHECK(o.ids == s.pool.ids);
  CHECK(validate_outcome(o).ok());
  const DetectionMetrics m = eval_detection(o, s.truth);
  CHECK(m.recall >= 0.9);
  // Inliers kept: at most 10% of the clean items rejected.
  CHECK(m.rejected - m.true_rejections <= 18);
  for (std::size_t j = 0; j < o.size(); ++j) {
    CHECK(o.weights[j] == 1.0);
    CHECK(o.keep[j] == (o.scores[j] > 0.0));
  }
}

TEST_CASE("cvsvm is invariant to pool row order") {
  const SyntheticSynset s = generate_synset(clusters(60, 10, 5));
  const RerankOutcome a = rerank_cvsvm(s.pool, s.negatives, CvsvmParams{}, 9);
  std::vector<std::size_t> rows(s.pool.rows());
  for (std::size_t j = 0; j < rows.size(); ++j) rows[j] = rows.size() - 1 - j;
  const RerankOutcome b = rerank_cvsvm(s.pool.select(rows), s.negatives, CvsvmParams{}, 9);
  for (std::size_t j = 0; j < rows.size(); ++j) {
    CHECK(b.ids[j] == a.ids[rows[j]]);
    CHECK(b.scores[j] == a.scores[rows[j]]);
  }
}

TEST_CASE("cvsvm argument errors") {
  Rng rng(1);
  const FeatureMatrix pool = gaussian_matrix(4, 3, rng);
  const FeatureMatrix neg = gaussian_matrix(10, 3, rng, "n");
  try {
    rerank_cvsvm(pool, neg, CvsvmParams{}, 0);
    FAIL("expected PoolTooSmall");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kPoolTooSmall);
  }
  const FeatureMatrix wide = gaussian_matrix(10, 4, rng, "w");
  try {
    rerank_cvsvm(gaussian_matrix(10, 3, rng), wide, CvsvmParams{}, 0);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
  }
}

// --- kmm -------------------------------------------------------------------

TEST_CASE("kmm with the pool equal to the labeled set matches the means") {
  Rng rng(4);
  const FeatureMatrix x = gaussian_matrix(30, 8, rng);
  KmmParams p;
  p.B = 5.0;
  const KmmResult r = rerank_kmm_detailed(x, x, p);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(30);
  CHECK(r.qp.objective <= r.problem.objective(ones) + 1e-9);
  CHECK(weighted_mean_residual(x, x, r.qp.alpha) <= weighted_mean_residual(x, x, ones) + 1e-6);
  CHECK(weighted_mean_residual(x, x, ones) <= 1e-12);
}

TEST_CASE("kmm two-item example down-weights the far item") {
  const FeatureMatrix labeled({"x"}, (Eigen::MatrixXd(1, 2) << 1, 0).finished());
  const FeatureMatrix pool({"z1", "z2"}, (Eigen::MatrixXd(2, 2) << 1, 0, -1, 0).finished());
  KmmParams p;
  p.B = 5.0;
  p.eps = 0.1;  // sum in [1.8, 2.2]
  const KmmResult r = rerank_kmm_detailed(labeled, pool, p);

  // The QP written out by hand: H = ZZ', g = -(n/m) Z x.
  QpProblem hand;
  hand.H = (Eigen::MatrixXd(2, 2) << 1, -1, -1, 1).finished();
  hand.g = Eigen::Vector2d(-2, 2);
  hand.lower = Eigen::Vector2d::Zero();
  hand.upper = Eigen::Vector2d::Constant(5);
  hand.sum_lo = 1.8;
  hand.sum_hi = 2.2;
  CHECK((r.problem.H - hand.H).norm() <= 1e-12);
  CHECK((r.problem.g - hand.g).norm() <= 1e-12);
  CHECK(r.problem.sum_lo == doctest::Approx(1.8));
  CHECK(r.problem.sum_hi == doctest::Approx(2.2));

  const GridOracleResult grid = grid_oracle_qp(hand, 221);
  CHECK(grid.alpha(0) > grid.alpha(1));
  CHECK(r.qp.alpha(0) > r.qp.alpha(1));
  CHECK(r.qp.objective <= grid.objective + 1e-6);
}

TEST_CASE("kmm weights are feasible in both sum modes and beat random probes") {
  Rng rng(12);
  const FeatureMatrix labeled = gaussian_matrix(10, 6, rng, "l");
  FeatureMatrix pool = gaussian_matrix(60, 6, rng, "p");
  pool.data.topRows(10).array() += 3.0;
  for (SumTarget mode : {SumTarget::kNSide, SumTarget::kMSide}) {
    KmmParams p;
    p.sum_target = mode;
    const KmmResult r = rerank_kmm_detailed(labeled, pool, p);
    const double tol = p.qp_tol;
    const Eigen::VectorXd& a = r.qp.alpha;
    CHECK(a.minCoeff() >= -tol);
    CHECK(a.maxCoeff() <= p.B + tol);
    CHECK(a.sum() >= r.problem.sum_lo - tol);
    CHECK(a.sum() <= r.problem.sum_hi + tol);
    CHECK(r.qp.kkt_residual <= tol);
    for (int k = 0; k < 100; ++k) {
      Eigen::VectorXd z(a.size());
      for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.uniform(0.0, p.B);
      z = project_box_slab(z, r.problem.lower, r.problem.upper, r.problem.sum_lo,
                           r.problem.sum_hi);
      CHECK(r.qp.objective <= r.problem.objective(z) + tol);
    }
    // Keep is a threshold rule on the weights.
    const RerankOutcome& o = r.outcome;
    for (std::size_t j = 0; j < o.size(); ++j) {
      CHECK(o.scores[j] == o.weights[j]);
      CHECK(o.keep[j] == (o.weights[j] > o.threshold));
    }
    CHECK(sorted(o.ids) == sorted(pool.ids));
  }
}

TEST_CASE("kmm defaults") {
  const KmmResolved r = resolve_kmm(KmmParams{}, 10, 100);
  CHECK(r.eps == doctest::Approx(0.5));
  CHECK(r.sum_lo == doctest::Approx(50.0));
  CHECK(r.sum_hi == doctest::Approx(150.0));
  CHECK(r.threshold == doctest::Approx(1e-3));
  KmmParams m_side;
  m_side.sum_target = SumTarget::kMSide;
  const KmmResolved rm = resolve_kmm(m_side, 10, 100);
  CHECK(rm.sum_lo == doctest::Approx(5.0));
  CHECK(rm.sum_hi == doctest::Approx(15.0));
  CHECK(rm.threshold == doctest::Approx(1e-4));
}

TEST_CASE("kmm reports an infeasible bound") {
  Rng rng(2);
  KmmParams p;
  p.B = 0.5;
  p.eps = 0.1;
  try {
    rerank_kmm(gaussian_matrix(3, 2, rng), gaussian_matrix(20, 2, rng, "p"), p);
    FAIL("expected InfeasibleProblem");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInfeasibleProblem);
  }
}

TEST_CASE("tie-break picks the minimizer nearest to uniform weights") {
  // More pool items than dimensions: the minimizer set is an affine family.
  Rng rng(21);
  const FeatureMatrix labeled = gaussian_matrix(5, 3, rng, "l");
  const FeatureMatrix pool = gaussian_matrix(40, 3, rng, "p");
  KmmParams plain;
  plain.closest_to_uniform = false;
  KmmParams tied;
  const KmmResult a = rerank_kmm_detailed(labeled, pool, plain);
  const KmmResult b = rerank_kmm_detailed(labeled, pool, tied);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(40);
  CHECK(b.qp.objective <= a.qp.objective + 1e-6);
  CHECK(b.qp.kkt_residual <= std::max(tied.qp_tol, a.qp.kkt_residual));
  if (b.tie_broken) {
    CHECK((b.qp.alpha - ones).norm() <= (a.qp.alpha - ones).norm() + 1e-6);
  }
  CHECK(b.outcome.params_echo["closest_to_uniform"].get<bool>() == b.tie_broken);
}

// --- tsvm ------------------------------------------------------------------

TEST_CASE("positive count follows the ratio convention") {
  CHECK(tsvm_positive_count(0.25, 10) == 2);
  CHECK(tsvm_positive_count(1000.0 / 4000.0, 4000) == 800);
  CHECK(tsvm_positive_count(1.0 / 3.0, 200) == 50);
  CHECK_THROWS_AS(tsvm_positive_count(0.01, 10), Error);
  CHECK_THROWS_AS(tsvm_positive_count(1000.0, 10), Error);
  CHECK_THROWS_AS(tsvm_positive_count(0.0, 10), Error);
}

TEST_CASE("top-k labels break ties by ascending id") {
  const Eigen::Vector4d scores(1.0, 2.0, 1.0, 1.0);
  const std::vector<std::string> ids{"d", "a", "b", "c"};
  const auto t = top_k_labels(scores, ids, 2);
  CHECK(t == std::vector<int>{-1, 1, 1, -1});
}

TEST_CASE("tsvm keeps exactly n+ items at every outer iteration") {
  Rng rng(31);
  LabeledSet labeled;
  labeled.features = gaussian_matrix(4, 3, rng, "l");
  labeled.labels = {1, 1, -1, -1};
  labeled.features.data.topRows(2).array() += 2.0;
  const FeatureMatrix pool = gaussian_matrix(10, 3, rng, "p");
  TsvmParams p;
  p.rho = 0.25;
  const TsvmResult r = rerank_tsvm_detailed(labeled, pool, p, 0);
  REQUIRE_FALSE(r.trace.empty());
  for (const auto& it : r.trace) CHECK(it.positives == 2);
  CHECK(r.outcome.kept() == 2);
}

TEST_CASE("tsvm recovers the labeled-positive cluster") {
  const SyntheticSynset s = generate_synset(clusters(50, 150, 8));
  TsvmParams p;
  p.rho = 1.0 / 3.0;
  const TsvmResult r = rerank_tsvm_detailed(s.labeled, s.pool, p, 0);
  CHECK(r.outcome.kept() == 50);
  std::size_t agree = 0;
  for (std::size_t j = 0; j < s.truth.size(); ++j) agree += r.outcome.keep[j] == !s.truth[j];
  CHECK(static_cast<double>(agree) / s.truth.size() >= 0.9);
  for (std::size_t k = 1; k < r.trace.size(); ++k) {
    CHECK(r.trace[k].objective <= r.trace[k - 1].objective + 1e-6);
  }
  CHECK(static_cast<int>(r.trace.size()) <= p.max_outer);
}

TEST_CASE("tsvm objective matches its definition") {
  Rng rng(41);
  LabeledSet labeled;
  labeled.features = gaussian_matrix(4, 2, rng, "l");
  labeled.labels = {1, -1, 1, -1};
  const FeatureMatrix pool = gaussian_matrix(6, 2, rng, "p");
  const std::vector<int> t{1, 1, -1, -1, -1, -1};
  LinearModel model;
  model.w = Eigen::Vector2d(0.3, -0.7);
  model.bias = 0.2;
  TsvmParams p;
  p.alpha = 2.0;
  p.beta = 0.5;
  auto sq = [](double u) { return std::pow(std::max(0.0, 1.0 - u), 2); };
  double expect = 0.5 * (model.w.squaredNorm() + model.bias * model.bias);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const double f = labeled.features.data.row(i).dot(model.w) + model.bias;
    expect += p.alpha / 4.0 * sq(labeled.labels[static_cast<std::size_t>(i)] * f);
  }
  for (Eigen::Index j = 0; j < 6; ++j) {
    const double f = pool.data.row(j).dot(model.w) + model.bias;
    expect += p.beta / 6.0 * sq(t[static_cast<std::size_t>(j)] * f);
  }
  CHECK(tsvm_objective(model, labeled, pool, t, p) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("tsvm rejects degenerate ratios") {
  Rng rng(3);
  LabeledSet labeled;
  labeled.features = gaussian_matrix(2, 2, rng, "l");
  labeled.labels = {1, -1};
  TsvmParams p;
  p.rho = 1e-6;
  try {
    rerank_tsvm(labeled, gaussian_matrix(10, 2, rng, "p"), p, 0);
    FAIL("expected DegenerateRatio");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDegenerateRatio);
  }
}
