#pragma once

// Per-synset orchestration: load a collection manifest, prepare features,
// dispatch to a reranker, write outcomes and summarize counts.

#include "weedout/model.hpp"
#include "weedout/rerank.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace weedout {

struct CollectionLayout {
  std::filesystem::path root;
  std::vector<SynsetManifest> synsets;
  bool normalize = true;
  std::uint64_t seed = 0;

  const SynsetManifest* find(const std::string& synset_id) const;
};

/// Collection manifest (JSON):
///   {"version": 1, "normalize": true, "seed": 0,
///    "synsets": [{"id": "...", "unlabeled": "...", "labeled": "...",
///                 "negatives": "...", "dim": 16}, ...]}
/// Relative paths resolve against the manifest's directory. Throws
/// kInvalidArgument on duplicate ids and kIoError on missing files.
CollectionLayout load_layout(const std::filesystem::path& manifest_path);
void save_layout(const CollectionLayout& layout, const std::filesystem::path& manifest_path);
nlohmann::json layout_to_json(const CollectionLayout& layout);

inline constexpr std::size_t kDefaultNegativeCount = 10000;
inline constexpr double kDefaultKeptTarget = 1000.0;

/// Everything a rerank run needs besides the data.
struct RerankConfig {
  Method method = Method::kCvsvm;
  CvsvmParams cvsvm{};
  KmmParams kmm{};
  TsvmParams tsvm{};
  // When unset, rho = kept_target / n for each synset.
  std::optional<double> rho;
  double kept_target = kDefaultKeptTarget;
  std::size_t negative_count = kDefaultNegativeCount;
  double zero_eps = kDefaultZeroEps;
};

double resolve_rho(const RerankConfig& config, std::size_t n);

/// Uniform sample without replacement over the pool items of every synset
/// except `exclude_synset`. Ids are prefixed "<synset>/". Throws
/// kNotEnoughNegatives.
FeatureMatrix sample_negatives(const CollectionLayout& layout,
                               const std::string& exclude_synset, std::size_t count,
                               std::uint64_t seed);

struct RerankReport {
  std::string synset_id;
  Method method = Method::kCvsvm;
  std::size_t n = 0;
  std::size_t kept = 0;
  std::size_t rejected = 0;
  double kept_fraction = 0.0;
  double runtime_seconds = 0.0;
  nlohmann::json params_echo = nlohmann::json::object();
  std::filesystem::path outcome_path;
  std::vector<std::size_t> zero_rows;  // flagged by normalization
};

nlohmann::json report_to_json(const RerankReport& r);

/// Seed used for one synset: depends only on the run seed and the synset id.
std::uint64_t synset_seed(std::uint64_t run_seed, const std::string& synset_id);

/// Outcome file location for a synset/method pair under `output_dir`.
std::filesystem::path outcome_path(const std::filesystem::path& output_dir,
                                   const std::string& synset_id, Method method);

/// Runs one synset and writes its outcome TSV. Nothing is written if any
/// step fails.
RerankReport rerank_synset(const CollectionLayout& layout, const std::string& synset_id,
                           const RerankConfig& config, std::uint64_t seed,
                           const std::filesystem::path& output_dir);

/// Same, also returning the full outcome.
RerankReport rerank_synset(const CollectionLayout& layout, const std::string& synset_id,
                           const RerankConfig& config, std::uint64_t seed,
                           const std::filesystem::path& output_dir, RerankOutcome* outcome);

struct SynsetFailure {
  std::string synset_id;
  std::string message;
};

struct CollectionTotals {
  std::size_t n = 0;
  std::size_t kept = 0;
  std::size_t rejected = 0;
  double kept_fraction() const { return n == 0 ? 0.0 : static_cast<double>(kept) / n; }
};

struct CollectionResult {
  std::vector<RerankReport> reports;  // layout order
  std::vector<SynsetFailure> failures;
  CollectionTotals totals;
};

/// Processes every synset on up to `parallelism` workers. Failures are
/// collected per synset; the rest of the run continues.
CollectionResult rerank_collection(const CollectionLayout& layout, const RerankConfig& config,
                                   std::size_t parallelism, std::uint64_t seed,
                                   const std::filesystem::path& output_dir);

nlohmann::json collection_to_json(const CollectionResult& result);

// ---------------------------------------------------------------------------
// Self-reranking: features re-extracted by a model trained on the raw
// collection are fed back to the rerankers.

enum class PlanStep { kExtractFeatures, kRerank, kEmitKeptManifest };

struct PlanTask {
  PlanStep step = PlanStep::kRerank;
  bool external = false;
  bool satisfied = false;
  std::string synset_id;  // rerank steps only
  std::filesystem::path input;
  std::filesystem::path output;
  std::string note;
};

struct SelfRerankPlan {
  Method method = Method::kCvsvm;
  std::filesystem::path pass1_dir;
  std::filesystem::path pass2_dir;
  std::vector<PlanTask> tasks;
};

/// Pass-2 features for synset s are expected at `<pass2_dir>/<s>.fmx`.
std::filesystem::path pass2_features_path(const std::filesystem::path& pass2_dir,
                                          const std::string& synset_id);

/// Throws kMissingPass1Features when pass1_dir does not exist.
SelfRerankPlan self_rerank_plan(const CollectionLayout& layout,
                                const std::filesystem::path& pass1_dir,
                                const std::filesystem::path& pass2_dir, Method method,
                                const RerankConfig& config);

nlohmann::json plan_to_json(const SelfRerankPlan& plan, const RerankConfig& config);

/// Layout whose pools point at the pass-2 features.
CollectionLayout pass2_layout(const CollectionLayout& layout,
                              const std::filesystem::path& pass2_dir);

/// Kept-id manifest for retraining: {"method": ..., "synsets": {id: [kept ids]}}.
nlohmann::json kept_manifest(const CollectionResult& result);

}  // namespace weedout
