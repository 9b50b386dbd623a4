#include "support.hpp"
#include "weedout/error.hpp"
#include "weedout/feature_io.hpp"
#include "weedout/linear_svm.hpp"
#include "weedout/pipeline.hpp"
#include "weedout/synthgen.hpp"

#include <doctest.h>

#include <functional>
#include <set>

using namespace weedout;
using weedout::testing::TempDir;

namespace {

SynthSpec spec_of(std::size_t clean, std::size_t noise, std::size_t d, double sep, std::size_t m,
                  std::uint64_t seed) {
  SynthSpec s;
  s.n_clean = clean;
  s.n_noise = noise;
  s.d = d;
  s.separation = sep;
  s.m_labeled = m;
  s.seed = seed;
  return s;
}

std::size_t fingerprint(const SyntheticSynset& s) {
  std::size_t h = 0;
  auto mix = [&](double v) { h = h * 1000003u ^ std::hash<double>{}(v); };
  for (Eigen::Index i = 0; i < s.pool.data.size(); ++i) mix(s.pool.data.data()[i]);
  for (Eigen::Index i = 0; i < s.labeled.features.data.size(); ++i) mix(s.labeled.features.data.data()[i]);
  return h;
}

QpProblem box_simplex() {
  QpProblem p;
  p.H = Eigen::MatrixXd::Identity(2, 2);
  p.g = Eigen::Vector2d::Zero();
  p.lower = Eigen::Vector2d::Zero();
  p.upper = Eigen::Vector2d::Constant(5);
  p.sum_lo = 1.0;
  p.sum_hi = 1.0;
  return p;
}

}  // namespace

TEST_CASE("pure-noise spec marks every item as noise") {
  const SyntheticSynset s = generate_synset(spec_of(0, 5, 4, 6.0, 2, 1));
  CHECK(s.truth == std::vector<bool>(5, true));
  CHECK(s.pool.rows() == 5);
  CHECK(s.labeled.rows() == 4);
  CHECK(s.labeled.labels == std::vector<int>{1, 1, -1, -1});
}

TEST_CASE("zero separation makes noise indistinguishable from clean items") {
  const SyntheticSynset s = generate_synset(spec_of(2000, 2000, 4, 0.0, 1, 3));
  Eigen::VectorXd clean = Eigen::VectorXd::Zero(4), noise = Eigen::VectorXd::Zero(4);
  for (std::size_t j = 0; j < s.truth.size(); ++j) {
    (s.truth[j] ? noise : clean) += s.pool.data.row(static_cast<Eigen::Index>(j)).transpose();
  }
  clean /= 2000.0;
  noise /= 2000.0;
  // Standard error of each mean coordinate is 1/sqrt(2000) ~ 0.022.
  CHECK((clean - noise).cwiseAbs().maxCoeff() < 0.15);
}

TEST_CASE("clean and noise items of the reference spec are linearly separable") {
  const SyntheticSynset s = generate_synset(spec_of(180, 20, 16, 6.0, 10, 42));
  LabeledSet probe;
  probe.features = s.pool;
  for (bool noise : s.truth) probe.labels.push_back(noise ? -1 : 1);
  SvmParams p;
  p.cost = 1e4;  // close to hard margin: the probe tests separability
  p.max_iter = 20000;
  const LinearModel model = train_svm(probe, p);
  const Eigen::VectorXd f = decision_scores(model, probe.features);
  std::size_t right = 0;
  for (std::size_t j = 0; j < probe.labels.size(); ++j) {
    right += (f(static_cast<Eigen::Index>(j)) > 0) == (probe.labels[j] > 0);
  }
  CHECK(right == probe.labels.size());
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  const SynthSpec base = spec_of(30, 10, 5, 6.0, 3, 0);
  std::set<std::size_t> prints;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    SynthSpec s = base;
    s.seed = seed;
    const SyntheticSynset a = generate_synset(s, "x_");
    const SyntheticSynset b = generate_synset(s, "x_");
    CHECK(a.pool == b.pool);
    CHECK(a.truth == b.truth);
    CHECK(a.negatives == b.negatives);
    CHECK(a.pool.ids[0].starts_with("x_p"));
    prints.insert(fingerprint(a));
  }
  CHECK(prints.size() == 4);
}

TEST_CASE("invalid specs are rejected") {
  SynthSpec s;
  s.d = 0;
  CHECK_THROWS_AS(generate_synset(s), Error);
  s = SynthSpec{};
  s.separation = -1.0;
  CHECK_THROWS_AS(generate_synset(s), Error);
  s = SynthSpec{};
  s.background_fraction = 1.5;
  CHECK_THROWS_AS(generate_synset(s), Error);
}

TEST_CASE("detection metrics") {
  const std::vector<bool> truth{false, false, false, false, true};
  SUBCASE("perfect") {
    const DetectionMetrics m = eval_detection({true, true, true, true, false}, truth);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.kept_fraction == doctest::Approx(0.8));
  }
  SUBCASE("reject nothing") {
    const DetectionMetrics m = eval_detection(std::vector<bool>(5, true), truth);
    CHECK(m.recall == 0.0);
    CHECK(m.kept_fraction == 1.0);
    CHECK(m.precision == 0.0);
    CHECK(m.precision_undefined);
  }
  SUBCASE("reject everything") {
    const DetectionMetrics m = eval_detection(std::vector<bool>(5, false), truth);
    CHECK(m.precision == doctest::Approx(0.2));
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == doctest::Approx(2 * 0.2 / 1.2));
  }
  SUBCASE("length mismatch") {
    try {
      eval_detection(std::vector<bool>(4, false), truth);
      FAIL("expected LengthMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kLengthMismatch);
    }
  }
}

TEST_CASE("perfect outcome scores (1, 1, 1, clean fraction) on generated specs") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const SyntheticSynset s = generate_synset(spec_of(20 + seed * 7, 3 + seed, 3, 4.0, 2, seed));
    std::vector<bool> keep;
    for (bool noise : s.truth) keep.push_back(!noise);
    const DetectionMetrics m = eval_detection(keep, s.truth);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.kept_fraction == doctest::Approx(static_cast<double>(20 + seed * 7) / s.truth.size()));
  }
}

TEST_CASE("grid oracle on the simplex slice") {
  const GridOracleResult r = grid_oracle_qp(box_simplex(), 501);
  CHECK(std::abs(r.alpha(0) - 0.5) <= 1e-3);
  CHECK(std::abs(r.alpha(1) - 0.5) <= 1e-3);
  CHECK(std::abs(r.objective - 0.25) <= 1e-3);
  CHECK(r.objective >= solve_qp(box_simplex()).objective - 1e-9);
}

TEST_CASE("grid oracle never beats the solver and improves under refinement") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.below(3));
    Eigen::MatrixXd a(n, n);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
    QpProblem p;
    p.H = a.transpose() * a;
    p.g = Eigen::VectorXd(n);
    for (Eigen::Index i = 0; i < n; ++i) p.g(i) = rng.normal();
    p.lower = Eigen::VectorXd::Zero(n);
    p.upper = Eigen::VectorXd::Constant(n, 2.0);
    p.sum_lo = 1.0;
    p.sum_hi = static_cast<double>(n);
    const double solver = solve_qp(p).objective;
    // r -> 2r - 1 keeps every old grid point, so the best value cannot rise.
    double previous = std::numeric_limits<double>::infinity();
    for (std::size_t r = 3; r <= 129; r = 2 * r - 1) {
      const GridOracleResult g = grid_oracle_qp(p, r);
      CHECK(g.objective <= previous);
      CHECK(g.objective >= solver - 1e-9);
      previous = g.objective;
    }
  }
}

TEST_CASE("grid oracle limits") {
  QpProblem p;
  p.H = Eigen::MatrixXd::Identity(5, 5);
  p.g = Eigen::VectorXd::Zero(5);
  p.lower = Eigen::VectorXd::Zero(5);
  p.upper = Eigen::VectorXd::Ones(5);
  p.sum_lo = 0;
  p.sum_hi = 5;
  try {
    grid_oracle_qp(p, 3);
    FAIL("expected TooManyVariables");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kTooManyVariables);
  }
  // Feasible set {a1 + a2 = 0.7} misses a grid of step 2.5 entirely.
  QpProblem q = box_simplex();
  q.sum_lo = q.sum_hi = 0.7;
  try {
    grid_oracle_qp(q, 3);
    FAIL("expected InfeasibleProblem");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInfeasibleProblem);
  }
}

TEST_CASE("synthetic collections on disk") {
  TempDir dir("synth");
  SynthSpec s = spec_of(12, 3, 4, 6.0, 2, 7);
  s.n_negatives = 9;
  const auto manifest = write_synthetic_collection(dir.path(), 3, s);
  const CollectionLayout layout = load_layout(manifest);
  REQUIRE(layout.synsets.size() == 3);
  for (const auto& m : layout.synsets) {
    const FeatureMatrix pool = ingest_features(m.unlabeled_path);
    CHECK(pool.rows() == 15);
    const auto truth = read_truth(truth_path_for(m.unlabeled_path), pool.ids);
    CHECK(std::count(truth.begin(), truth.end(), true) == 3);
    CHECK(ingest_labeled(m.labeled_path).rows() == 4);
    CHECK(ingest_features(*m.negatives_path).rows() == 9);
    CHECK(std::filesystem::exists(m.unlabeled_path.parent_path() / "manifest.json"));
  }
}

TEST_CASE("empty synsets are valid") {
  TempDir dir("synth0");
  SynthSpec s = spec_of(0, 0, 4, 6.0, 1, 7);
  const auto manifest = write_synthetic_collection(dir.path(), 2, s);
  const CollectionLayout layout = load_layout(manifest);
  CHECK(ingest_features(layout.synsets[0].unlabeled_path).rows() == 0);
}
