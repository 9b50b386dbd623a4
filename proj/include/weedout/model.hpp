#pragma once

// Domain types shared by every stage: feature collections, labeled sets,
// reranking outcomes and per-synset manifests.

#include <Eigen/Dense>
#include <json.hpp>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace weedout {

/// n x d feature vectors with one unique identifier per row. Values are kept
/// in double precision regardless of the on-disk encoding.
struct FeatureMatrix {
  std::vector<std::string> ids;
  Eigen::MatrixXd data;

  FeatureMatrix() = default;
  FeatureMatrix(std::vector<std::string> row_ids, Eigen::MatrixXd values)
      : ids(std::move(row_ids)), data(std::move(values)) {}

  /// Builds from nested rows; throws kDimensionMismatch on ragged input.
  static FeatureMatrix from_rows(std::vector<std::string> row_ids,
                                 const std::vector<std::vector<double>>& rows,
                                 std::size_t dim);

  std::size_t rows() const noexcept { return static_cast<std::size_t>(data.rows()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(data.cols()); }

  /// Copies the given rows, in order, into a new matrix.
  FeatureMatrix select(const std::vector<std::size_t>& rows) const;

  friend bool operator==(const FeatureMatrix& a, const FeatureMatrix& b) {
    return a.ids == b.ids && a.data.rows() == b.data.rows() &&
           a.data.cols() == b.data.cols() && a.data == b.data;
  }
};

/// Row-wise concatenation; both inputs must share the dimension.
FeatureMatrix concat(const FeatureMatrix& top, const FeatureMatrix& bottom);

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const noexcept { return violations.empty(); }
};

ValidationReport validate_matrix(const FeatureMatrix& m);
ValidationReport validate_rows(const std::vector<std::string>& ids,
                               const std::vector<std::vector<double>>& rows);

/// Throws kDuplicateId or kInvalidArgument with the first violation.
void require_valid(const FeatureMatrix& m);

struct NormalizeResult {
  FeatureMatrix matrix;
  std::vector<std::size_t> zero_rows;  // rows whose norm was <= zero_eps
};

inline constexpr double kDefaultZeroEps = 1e-12;

/// Scales every row to unit Euclidean norm. Rows at or below zero_eps are
/// set to exact zeros and reported, never dropped.
NormalizeResult l2_normalize(const FeatureMatrix& m,
                             double zero_eps = kDefaultZeroEps);

struct LabeledSet {
  FeatureMatrix features;
  std::vector<int> labels;  // +1 / -1

  std::size_t rows() const noexcept { return features.rows(); }
  std::size_t count(int label) const;
  bool has_both_classes() const { return count(1) > 0 && count(-1) > 0; }

  /// Rows carrying the given label, as a plain feature matrix.
  FeatureMatrix with_label(int label) const;
};

ValidationReport validate_labeled(const LabeledSet& s);

enum class Method { kCvsvm, kKmm, kTsvm };

std::string_view to_string(Method m);
Method parse_method(std::string_view name);

/// Verdict for each item of an unlabeled pool. Aligned with the pool's row
/// order; `keep` is derived from scores/weights via `threshold`.
struct RerankOutcome {
  std::vector<std::string> ids;
  std::vector<double> scores;
  std::vector<double> weights;
  std::vector<bool> keep;
  Method method = Method::kCvsvm;
  double threshold = 0.0;
  nlohmann::json params_echo = nlohmann::json::object();

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t kept() const;
};

ValidationReport validate_outcome(const RerankOutcome& o);

struct SynsetManifest {
  std::string synset_id;
  std::filesystem::path unlabeled_path;
  std::filesystem::path labeled_path;
  std::optional<std::filesystem::path> negatives_path;
  std::size_t expected_dim = 0;  // 0 = take from the pool file
};

ValidationReport validate_manifest(const SynsetManifest& m);

}  // namespace weedout
