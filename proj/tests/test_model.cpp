#include "support.hpp"
#include "weedout/error.hpp"
#include "weedout/model.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace weedout;
using weedout::testing::gaussian_matrix;

TEST_CASE("validate_matrix accepts a zero matrix") {
  FeatureMatrix m({"a", "b"}, Eigen::MatrixXd::Zero(2, 3));
  CHECK(validate_matrix(m).ok());
}

TEST_CASE("validate_matrix reports the position of a NaN") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2, 3);
  x(0, 1) = std::numeric_limits<double>::quiet_NaN();
  const auto report = validate_matrix(FeatureMatrix({"a", "b"}, x));
  REQUIRE(report.violations.size() == 1);
  CHECK(report.violations[0] == "non-finite at (0,1)");
}

TEST_CASE("validate_matrix reports duplicate ids") {
  const auto report = validate_matrix(FeatureMatrix({"a", "a"}, Eigen::MatrixXd::Zero(2, 3)));
  REQUIRE_FALSE(report.ok());
  CHECK(report.violations[0] == "duplicate id a");
  CHECK_THROWS_AS(require_valid(FeatureMatrix({"a", "a"}, Eigen::MatrixXd::Zero(2, 3))), Error);
}

TEST_CASE("ragged rows are rejected") {
  const auto report = validate_rows({"a", "b"}, {{1.0, 2.0}, {1.0}});
  CHECK_FALSE(report.ok());
  try {
    FeatureMatrix::from_rows({"a", "b"}, {{1.0, 2.0}, {1.0}}, 2);
    FAIL("expected DimensionMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kDimensionMismatch);
  }
}

TEST_CASE("l2_normalize on a 3-4-5 row") {
  FeatureMatrix m({"a"}, (Eigen::MatrixXd(1, 2) << 3.0, 4.0).finished());
  const auto r = l2_normalize(m);
  CHECK(r.matrix.data(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(r.matrix.data(0, 1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(r.zero_rows.empty());
}

TEST_CASE("l2_normalize keeps and flags zero rows") {
  FeatureMatrix m({"a", "b"}, (Eigen::MatrixXd(2, 2) << 0.0, 0.0, 1.0, 1.0).finished());
  const auto r = l2_normalize(m, 1e-12);
  REQUIRE(r.matrix.rows() == 2);
  CHECK(r.matrix.data.row(0).isZero(0.0));
  REQUIRE(r.zero_rows.size() == 1);
  CHECK(r.zero_rows[0] == 0);
  CHECK(r.matrix.ids == m.ids);
}

TEST_CASE("l2_normalize yields unit rows, keeps direction, and is idempotent") {
  Rng rng(11);
  const FeatureMatrix m = gaussian_matrix(100, 64, rng);
  const auto once = l2_normalize(m);
  const auto twice = l2_normalize(once.matrix);
  for (Eigen::Index i = 0; i < m.data.rows(); ++i) {
    const Eigen::VectorXd in = m.data.row(i);
    const Eigen::VectorXd out = once.matrix.data.row(i);
    // Oracle: recompute norms and cosines independently.
    CHECK(std::abs(out.norm() - 1.0) <= 1e-6);
    CHECK(std::abs(in.dot(out) / (in.norm() * out.norm()) - 1.0) <= 1e-9);
    CHECK((twice.matrix.data.row(i) - once.matrix.data.row(i)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("labeled set helpers") {
  LabeledSet s;
  s.features = FeatureMatrix({"a", "b", "c"}, Eigen::MatrixXd::Identity(3, 3));
  s.labels = {1, -1, 1};
  CHECK(validate_labeled(s).ok());
  CHECK(s.count(1) == 2);
  CHECK(s.has_both_classes());
  const FeatureMatrix pos = s.with_label(1);
  CHECK(pos.ids == std::vector<std::string>{"a", "c"});
  s.labels = {1, 0, 1};
  CHECK_FALSE(validate_labeled(s).ok());
}

TEST_CASE("outcome validation checks aligned lengths") {
  RerankOutcome o;
  o.ids = {"a", "b"};
  o.scores = {1.0, -1.0};
  o.weights = {1.0, 1.0};
  o.keep = {true, false};
  CHECK(validate_outcome(o).ok());
  CHECK(o.kept() == 1);
  o.keep.pop_back();
  CHECK_FALSE(validate_outcome(o).ok());
}

TEST_CASE("manifest validation") {
  SynsetManifest m;
  m.synset_id = "s";
  m.unlabeled_path = "pool.fmx";
  m.labeled_path = "labeled.fmx";
  CHECK(validate_manifest(m).ok());
  m.labeled_path = "pool.fmx";
  CHECK_FALSE(validate_manifest(m).ok());
  m.labeled_path = "labeled.fmx";
  m.synset_id.clear();
  CHECK_FALSE(validate_manifest(m).ok());
}

TEST_CASE("method names round-trip") {
  for (Method m : {Method::kCvsvm, Method::kKmm, Method::kTsvm}) {
    CHECK(parse_method(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_method("svm"), Error);
}
