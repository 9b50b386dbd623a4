#pragma once

// Synthetic synsets with planted noise, detection metrics, and a brute-force
// grid oracle for small QPs.

#include "weedout/model.hpp"
#include "weedout/qp_solver.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace weedout {

// Geometry (within-cluster standard deviation is 1):
//   clean       c+ + N(0, I),            |c+| = center_radius
//   adversarial c- + N(0, I),            |c-| = |c+|, |c+ - c-| = separation
//   background  c+ + N(0, I) + separation * U[-1, 1]^d
// Both centers sit on one sphere, so L2 normalization scales the gap and the
// spread alike and the separation in standard deviations survives it. When
// the separation exceeds the diameter, c- lies on the far side of the origin
// along -c+. Noise draws adversarial with
// probability 1 - background_fraction. Negatives
// (the "other concepts" pool used by cvsvm) come from the adversarial cluster.
// Labeled examples: m_labeled clean draws (+1) and m_labeled draws from the
// adversarial cluster (-1). Nothing is normalized here.
struct SynthSpec {
  std::size_t n_clean = 180;
  std::size_t n_noise = 20;
  std::size_t d = 16;
  double separation = 6.0;
  std::size_t m_labeled = 10;
  std::uint64_t seed = 0;
  std::size_t n_negatives = 1000;
  double background_fraction = 0.5;
  double center_radius = 0.0;  // 0 = 2 * sqrt(d)
};

void validate(const SynthSpec& s);

struct SyntheticSynset {
  LabeledSet labeled;
  FeatureMatrix pool;
  std::vector<bool> truth;  // true = planted noise
  FeatureMatrix negatives;
};

/// Ids are "<prefix>p<j>" for the pool, "<prefix>l<i>" for labeled and
/// "<prefix>n<k>" for negatives. Pool rows are shuffled.
SyntheticSynset generate_synset(const SynthSpec& spec, const std::string& id_prefix = "");

struct DetectionMetrics {
  double precision = 0.0;  // on the noise class: rejected ∧ noise / rejected
  double recall = 0.0;     // rejected ∧ noise / noise
  double f1 = 0.0;
  double kept_fraction = 0.0;
  bool precision_undefined = false;  // nothing rejected
  bool recall_undefined = false;     // no noise present
  std::size_t kept = 0;
  std::size_t rejected = 0;
  std::size_t true_rejections = 0;
  std::size_t noise = 0;
};

/// Throws kLengthMismatch when sizes differ.
DetectionMetrics eval_detection(const RerankOutcome& outcome, const std::vector<bool>& truth);
DetectionMetrics eval_detection(const std::vector<bool>& keep, const std::vector<bool>& truth);

struct GridOracleResult {
  Eigen::VectorXd alpha;
  double objective = 0.0;
  std::size_t feasible_points = 0;
};

/// Exhaustive search over `resolution` evenly spaced values per coordinate
/// (box endpoints included) keeping points that satisfy the sum constraint
/// up to 1e-9. Throws kTooManyVariables for n > 4, kInfeasibleProblem when
/// no grid point is feasible.
GridOracleResult grid_oracle_qp(const QpProblem& p, std::size_t resolution);

/// Writes `synsets` synthetic synsets under `dir` in the pipeline formats
/// plus a "collection.json" manifest; returns the manifest path. Per-synset
/// seeds derive from spec.seed.
std::filesystem::path write_synthetic_collection(const std::filesystem::path& dir,
                                                 std::size_t synsets, const SynthSpec& spec);

/// Truth file written next to each synthetic pool.
std::filesystem::path truth_path_for(const std::filesystem::path& pool_path);

}  // namespace weedout
