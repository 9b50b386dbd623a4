#include "weedout/model.hpp"

#include "weedout/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace weedout {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kSingleClassData: return "SingleClassData";
    case ErrorCode::kInfeasibleProblem: return "InfeasibleProblem";
    case ErrorCode::kNumericalBreakdown: return "NumericalBreakdown";
    case ErrorCode::kPoolTooSmall: return "PoolTooSmall";
    case ErrorCode::kDegenerateRatio: return "DegenerateRatio";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kNotEnoughNegatives: return "NotEnoughNegatives";
    case ErrorCode::kTooManyVariables: return "TooManyVariables";
    case ErrorCode::kUnknownSynset: return "UnknownSynset";
    case ErrorCode::kMissingPass1Features: return "MissingPass1Features";
  }
  return "Unknown";
}

FeatureMatrix FeatureMatrix::from_rows(std::vector<std::string> row_ids,
                                       const std::vector<std::vector<double>>& rows,
                                       std::size_t dim) {
  if (row_ids.size() != rows.size()) {
    throw Error(ErrorCode::kLengthMismatch, "ids and rows differ in length");
  }
  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()),
                         static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != dim) {
      throw Error(ErrorCode::kDimensionMismatch,
                  "ragged row " + std::to_string(r) + ": expected " +
                      std::to_string(dim) + " values, got " +
                      std::to_string(rows[r].size()));
    }
    for (std::size_t c = 0; c < dim; ++c) {
      values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return FeatureMatrix(std::move(row_ids), std::move(values));
}

FeatureMatrix FeatureMatrix::select(const std::vector<std::size_t>& rows) const {
  FeatureMatrix out;
  out.ids.reserve(rows.size());
  out.data.resize(static_cast<Eigen::Index>(rows.size()), data.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.ids.push_back(ids.at(rows[k]));
    out.data.row(static_cast<Eigen::Index>(k)) = data.row(static_cast<Eigen::Index>(rows[k]));
  }
  return out;
}

FeatureMatrix concat(const FeatureMatrix& top, const FeatureMatrix& bottom) {
  if (top.dim() != bottom.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "cannot stack d=" + std::to_string(top.dim()) + " on d=" +
                    std::to_string(bottom.dim()));
  }
  FeatureMatrix out;
  out.ids = top.ids;
  out.ids.insert(out.ids.end(), bottom.ids.begin(), bottom.ids.end());
  out.data.resize(top.data.rows() + bottom.data.rows(), top.data.cols());
  out.data << top.data, bottom.data;
  return out;
}

namespace {

void check_ids(const std::vector<std::string>& ids, ValidationReport& report) {
  std::unordered_set<std::string_view> seen;
  seen.reserve(ids.size());
  std::unordered_set<std::string_view> reported;
  for (const auto& id : ids) {
    if (!seen.insert(id).second && reported.insert(id).second) {
      report.violations.push_back("duplicate id " + id);
    }
  }
}

std::string cell(std::size_t r, std::size_t c) {
  std::ostringstream os;
  os << '(' << r << ',' << c << ')';
  return os.str();
}

}  // namespace

ValidationReport validate_matrix(const FeatureMatrix& m) {
  ValidationReport report;
  if (m.dim() < 1) report.violations.push_back("dimension must be at least 1");
  if (m.ids.size() != m.rows()) {
    report.violations.push_back("row count mismatch: " + std::to_string(m.ids.size()) +
                                " ids for " + std::to_string(m.rows()) + " rows");
  }
  check_ids(m.ids, report);
  for (Eigen::Index r = 0; r < m.data.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.data.cols(); ++c) {
      if (!std::isfinite(m.data(r, c))) {
        report.violations.push_back("non-finite at " +
                                    cell(static_cast<std::size_t>(r), static_cast<std::size_t>(c)));
      }
    }
  }
  return report;
}

ValidationReport validate_rows(const std::vector<std::string>& ids,
                               const std::vector<std::vector<double>>& rows) {
  ValidationReport report;
  if (ids.size() != rows.size()) {
    report.violations.push_back("row count mismatch: " + std::to_string(ids.size()) +
                                " ids for " + std::to_string(rows.size()) + " rows");
  }
  check_ids(ids, report);
  const std::size_t d = rows.empty() ? 0 : rows.front().size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d) report.violations.push_back("ragged row " + std::to_string(r));
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      if (!std::isfinite(rows[r][c])) report.violations.push_back("non-finite at " + cell(r, c));
    }
  }
  return report;
}

void require_valid(const FeatureMatrix& m) {
  const auto report = validate_matrix(m);
  if (report.ok()) return;
  const auto& first = report.violations.front();
  const auto code = first.starts_with("duplicate id") ? ErrorCode::kDuplicateId
                                                      : ErrorCode::kInvalidArgument;
  throw Error(code, first);
}

NormalizeResult l2_normalize(const FeatureMatrix& m, double zero_eps) {
  NormalizeResult result{m, {}};
  auto& data = result.matrix.data;
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    const double norm = data.row(r).norm();
    if (norm > zero_eps) {
      data.row(r) /= norm;
    } else {
      data.row(r).setZero();
      result.zero_rows.push_back(static_cast<std::size_t>(r));
    }
  }
  return result;
}

std::size_t LabeledSet::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

FeatureMatrix LabeledSet::with_label(int label) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) rows.push_back(i);
  }
  return features.select(rows);
}

ValidationReport validate_labeled(const LabeledSet& s) {
  auto report = validate_matrix(s.features);
  if (s.labels.size() != s.features.rows()) {
    report.violations.push_back("labels length " + std::to_string(s.labels.size()) +
                                " differs from row count " +
                                std::to_string(s.features.rows()));
  }
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    if (s.labels[i] != 1 && s.labels[i] != -1) {
      report.violations.push_back("label at row " + std::to_string(i) + " is not +1/-1");
    }
  }
  return report;
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kCvsvm: return "cvsvm";
    case Method::kKmm: return "kmm";
    case Method::kTsvm: return "tsvm";
  }
  return "unknown";
}

Method parse_method(std::string_view name) {
  if (name == "cvsvm") return Method::kCvsvm;
  if (name == "kmm") return Method::kKmm;
  if (name == "tsvm") return Method::kTsvm;
  throw Error(ErrorCode::kInvalidArgument, "unknown method " + std::string(name));
}

std::size_t RerankOutcome::kept() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), true));
}

ValidationReport validate_outcome(const RerankOutcome& o) {
  ValidationReport report;
  const auto n = o.ids.size();
  if (o.scores.size() != n || o.weights.size() != n || o.keep.size() != n) {
    report.violations.push_back("outcome columns differ in length");
  }
  for (double w : o.weights) {
    if (!(w >= 0.0)) {
      report.violations.push_back("negative weight");
      break;
    }
  }
  return report;
}

ValidationReport validate_manifest(const SynsetManifest& m) {
  ValidationReport report;
  if (m.synset_id.empty()) report.violations.push_back("empty synset id");
  std::vector<std::filesystem::path> paths{m.unlabeled_path};
  if (!m.labeled_path.empty()) paths.push_back(m.labeled_path);
  if (m.negatives_path) paths.push_back(*m.negatives_path);
  for (std::size_t i = 0; i < paths.size(); ++i) {
    for (std::size_t j = i + 1; j < paths.size(); ++j) {
      if (paths[i] == paths[j]) {
        report.violations.push_back("paths not distinct: " + paths[i].string());
      }
    }
  }
  return report;
}

}  // namespace weedout
