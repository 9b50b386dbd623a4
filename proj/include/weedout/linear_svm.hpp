#pragma once

// L2-regularized linear binary SVM trained by dual coordinate descent.
//
// The bias is learned through an augmented constant feature (value 1), so it
// is regularized together with w. For item i with cost C_i the dual box is
// [0, C_i] under hinge loss and [0, inf) with a diagonal shift 1/(2 C_i)
// under squared hinge loss.

#include "weedout/model.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

namespace weedout {

enum class SvmLoss { kHinge, kSquaredHinge };

struct SvmParams {
  double cost = 1.0;
  SvmLoss loss = SvmLoss::kHinge;
  double tolerance = 1e-4;
  int max_iter = 1000;  // epochs
  // Per-item multipliers of `cost`; empty means 1 for every item.
  std::vector<double> per_item_cost;
  std::uint64_t seed = 0;
};

void validate(const SvmParams& p);

struct TrainMeta {
  int iterations = 0;
  bool converged = false;
  // Max |projected gradient| of the dual, evaluated at the returned state.
  double dual_violation = 0.0;
  double primal_objective = 0.0;
  double dual_objective = 0.0;
  double duality_gap = 0.0;
  // Final dual variables and their upper bounds (inf for squared hinge).
  std::vector<double> dual;
  std::vector<double> dual_upper;
};

struct LinearModel {
  Eigen::VectorXd w;
  double bias = 0.0;
  TrainMeta train_meta;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(w.size()); }
};

/// Throws kSingleClassData when a label is missing, kDimensionMismatch when
/// per_item_cost does not match the data.
LinearModel train_svm(const LabeledSet& data, const SvmParams& params);

/// w'z + bias for each row of `items`.
Eigen::VectorXd decision_scores(const LinearModel& model, const FeatureMatrix& items);
Eigen::VectorXd decision_scores(const LinearModel& model, const Eigen::MatrixXd& items);

/// ½‖(w, bias)‖² + Σ C_i ℓ(y_i (w'x_i + bias)) for the given data and params.
double primal_objective(const LinearModel& model, const LabeledSet& data,
                        const SvmParams& params);

// Model file: "LSVM" | u32 version | u32 d | d x f64 w | f64 bias, all
// little-endian.
void save_model(const LinearModel& model, const std::filesystem::path& path);
LinearModel load_model(const std::filesystem::path& path);

}  // namespace weedout
