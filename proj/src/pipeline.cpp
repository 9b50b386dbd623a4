#include "weedout/pipeline.hpp"

#include "weedout/error.hpp"
#include "weedout/feature_io.hpp"
#include "weedout/random.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <set>
#include <thread>
#include <unordered_set>

namespace weedout {

namespace fs = std::filesystem;

const SynsetManifest* CollectionLayout::find(const std::string& synset_id) const {
  for (const auto& s : synsets) {
    if (s.synset_id == synset_id) return &s;
  }
  return nullptr;
}

namespace {

fs::path resolve(const fs::path& root, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : root / path;
}

std::string relative_to(const fs::path& root, const fs::path& p) {
  std::error_code ec;
  const auto rel = fs::relative(p, root, ec);
  return ec || rel.empty() ? p.string() : rel.generic_string();
}

void require_exists(const fs::path& p, const std::string& synset) {
  if (!fs::exists(p)) {
    throw Error(ErrorCode::kIoError, "synset " + synset + ": missing file " + p.string());
  }
}

}  // namespace

CollectionLayout load_layout(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open manifest " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "manifest is not valid JSON: " + std::string(e.what()));
  }

  CollectionLayout layout;
  layout.root = fs::absolute(manifest_path).parent_path();
  try {
    layout.normalize = j.value("normalize", true);
    layout.seed = j.value("seed", std::uint64_t{0});
    std::unordered_set<std::string> seen;
    for (const auto& s : j.at("synsets")) {
      SynsetManifest m;
      m.synset_id = s.at("id").get<std::string>();
      m.unlabeled_path = resolve(layout.root, s.at("unlabeled").get<std::string>());
      if (s.contains("labeled") && !s["labeled"].is_null()) {
        m.labeled_path = resolve(layout.root, s["labeled"].get<std::string>());
      }
      if (s.contains("negatives") && !s["negatives"].is_null()) {
        m.negatives_path = resolve(layout.root, s["negatives"].get<std::string>());
      }
      m.expected_dim = s.value("dim", std::size_t{0});
      const auto report = validate_manifest(m);
      if (!report.ok()) {
        throw Error(ErrorCode::kInvalidArgument,
                    "synset '" + m.synset_id + "': " + report.violations.front());
      }
      if (!seen.insert(m.synset_id).second) {
        throw Error(ErrorCode::kInvalidArgument, "duplicate synset id " + m.synset_id);
      }
      require_exists(m.unlabeled_path, m.synset_id);
      if (!m.labeled_path.empty()) require_exists(m.labeled_path, m.synset_id);
      if (m.negatives_path) require_exists(*m.negatives_path, m.synset_id);
      layout.synsets.push_back(std::move(m));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, "malformed manifest: " + std::string(e.what()));
  }
  return layout;
}

nlohmann::json layout_to_json(const CollectionLayout& layout) {
  nlohmann::json synsets = nlohmann::json::array();
  for (const auto& m : layout.synsets) {
    nlohmann::json s = {{"id", m.synset_id},
                        {"unlabeled", relative_to(layout.root, m.unlabeled_path)}};
    if (!m.labeled_path.empty()) s["labeled"] = relative_to(layout.root, m.labeled_path);
    if (m.negatives_path) s["negatives"] = relative_to(layout.root, *m.negatives_path);
    if (m.expected_dim != 0) s["dim"] = m.expected_dim;
    synsets.push_back(std::move(s));
  }
  return {{"version", 1},
          {"normalize", layout.normalize},
          {"seed", layout.seed},
          {"synsets", std::move(synsets)}};
}

void save_layout(const CollectionLayout& layout, const fs::path& manifest_path) {
  write_file_atomic(manifest_path, layout_to_json(layout).dump(2) + "\n");
}

double resolve_rho(const RerankConfig& config, std::size_t n) {
  if (config.rho) return *config.rho;
  if (n == 0) throw Error(ErrorCode::kDegenerateRatio, "empty pool");
  return config.kept_target / static_cast<double>(n);
}

FeatureMatrix sample_negatives(const CollectionLayout& layout, const std::string& exclude_synset,
                               std::size_t count, std::uint64_t seed) {
  std::vector<const SynsetManifest*> sources;
  for (const auto& s : layout.synsets) {
    if (s.synset_id != exclude_synset) sources.push_back(&s);
  }
  std::sort(sources.begin(), sources.end(),
            [](const auto* a, const auto* b) { return a->synset_id < b->synset_id; });

  std::vector<std::uint64_t> sizes;
  std::uint64_t total = 0;
  std::size_t dim = 0;
  for (const auto* s : sources) {
    const auto header = peek_features(s->unlabeled_path);
    sizes.push_back(header.rows);
    total += header.rows;
    if (header.rows > 0) {
      if (dim != 0 && dim != header.dim) {
        throw Error(ErrorCode::kDimensionMismatch, "pools disagree on dimension");
      }
      dim = header.dim;
    }
  }
  if (total < count) {
    throw Error(ErrorCode::kNotEnoughNegatives,
                "need " + std::to_string(count) + " negatives, other synsets hold " +
                    std::to_string(total));
  }

  // Floyd's algorithm: `count` distinct indices out of [0, total).
  Rng rng(seed);
  std::set<std::uint64_t> chosen;
  for (std::uint64_t j = total - count; j < total; ++j) {
    const std::uint64_t t = rng.below(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }

  FeatureMatrix out;
  out.data.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  out.ids.reserve(count);
  auto it = chosen.begin();
  std::uint64_t base = 0;
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < sources.size() && it != chosen.end(); ++k) {
    const std::uint64_t end = base + sizes[k];
    if (*it < end) {
      const FeatureMatrix pool = ingest_features(sources[k]->unlabeled_path);
      for (; it != chosen.end() && *it < end; ++it) {
        const auto local = static_cast<Eigen::Index>(*it - base);
        out.ids.push_back(sources[k]->synset_id + "/" + pool.ids[static_cast<std::size_t>(local)]);
        out.data.row(row++) = pool.data.row(local);
      }
    }
    base = end;
  }
  return out;
}

nlohmann::json report_to_json(const RerankReport& r) {
  return {{"synset_id", r.synset_id},
          {"method", std::string(to_string(r.method))},
          {"n", r.n},
          {"kept", r.kept},
          {"rejected", r.rejected},
          {"kept_fraction", r.kept_fraction},
          {"runtime_seconds", r.runtime_seconds},
          {"params", r.params_echo},
          {"outcome_path", r.outcome_path.string()},
          {"zero_rows", r.zero_rows}};
}

std::uint64_t synset_seed(std::uint64_t run_seed, const std::string& synset_id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : synset_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(run_seed, h);
}

fs::path outcome_path(const fs::path& output_dir, const std::string& synset_id, Method method) {
  return output_dir / (synset_id + "." + std::string(to_string(method)) + ".tsv");
}

namespace {

FeatureMatrix prepare(const FeatureMatrix& m, bool normalize, double zero_eps,
                      std::vector<std::size_t>* zero_rows) {
  if (!normalize) return m;
  auto result = l2_normalize(m, zero_eps);
  if (zero_rows) *zero_rows = std::move(result.zero_rows);
  return std::move(result.matrix);
}

FeatureMatrix load_negatives(const CollectionLayout& layout, const SynsetManifest& manifest,
                             const RerankConfig& config, std::uint64_t seed) {
  if (manifest.negatives_path) return ingest_features(*manifest.negatives_path, manifest.expected_dim);
  return sample_negatives(layout, manifest.synset_id, config.negative_count,
                          derive_seed(seed, 0x6e6567));
}

LabeledSet load_labeled(const SynsetManifest& manifest) {
  if (manifest.labeled_path.empty()) {
    throw Error(ErrorCode::kInvalidArgument,
                "synset " + manifest.synset_id + " has no labeled examples");
  }
  if (fs::exists(sidecar(manifest.labeled_path, ".labels"))) {
    return ingest_labeled(manifest.labeled_path, manifest.expected_dim);
  }
  LabeledSet s;
  s.features = ingest_features(manifest.labeled_path, manifest.expected_dim);
  s.labels.assign(s.features.rows(), 1);
  return s;
}

}  // namespace

RerankReport rerank_synset(const CollectionLayout& layout, const std::string& synset_id,
                           const RerankConfig& config, std::uint64_t seed,
                           const fs::path& output_dir) {
  return rerank_synset(layout, synset_id, config, seed, output_dir, nullptr);
}

RerankReport rerank_synset(const CollectionLayout& layout, const std::string& synset_id,
                           const RerankConfig& config, std::uint64_t seed,
                           const fs::path& output_dir, RerankOutcome* outcome_out) {
  const SynsetManifest* manifest = layout.find(synset_id);
  if (!manifest) throw Error(ErrorCode::kUnknownSynset, "no synset '" + synset_id + "'");
  const auto start = std::chrono::steady_clock::now();

  RerankReport report;
  report.synset_id = synset_id;
  report.method = config.method;
  const bool norm = layout.normalize;
  const FeatureMatrix pool = prepare(ingest_features(manifest->unlabeled_path, manifest->expected_dim),
                                     norm, config.zero_eps, &report.zero_rows);

  RerankOutcome outcome;
  switch (config.method) {
    case Method::kCvsvm: {
      const FeatureMatrix negatives =
          prepare(load_negatives(layout, *manifest, config, seed), norm, config.zero_eps, nullptr);
      outcome = rerank_cvsvm(pool, negatives, config.cvsvm, seed);
      break;
    }
    case Method::kKmm: {
      const LabeledSet labeled = load_labeled(*manifest);
      FeatureMatrix positives = labeled.with_label(1);
      if (positives.rows() == 0) {
        throw Error(ErrorCode::kInvalidArgument, "synset " + synset_id + " has no +1 examples");
      }
      outcome = rerank_kmm(prepare(positives, norm, config.zero_eps, nullptr), pool, config.kmm);
      break;
    }
    case Method::kTsvm: {
      LabeledSet labeled = load_labeled(*manifest);
      if (labeled.count(-1) == 0) {
        // Positives only: borrow as many negatives as there are positives.
        const FeatureMatrix negatives = load_negatives(layout, *manifest, config, seed);
        std::vector<std::size_t> rows(negatives.rows());
        for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = k;
        Rng rng(derive_seed(seed, 0x746e));
        rng.shuffle(std::span<std::size_t>(rows));
        rows.resize(std::min(rows.size(), labeled.count(1)));
        std::sort(rows.begin(), rows.end());
        labeled.features = concat(labeled.features, negatives.select(rows));
        labeled.labels.resize(labeled.features.rows(), -1);
      }
      labeled.features = prepare(labeled.features, norm, config.zero_eps, nullptr);
      TsvmParams params = config.tsvm;
      params.rho = resolve_rho(config, pool.rows());
      outcome = rerank_tsvm(labeled, pool, params, seed);
      break;
    }
  }

  report.n = outcome.size();
  report.kept = outcome.kept();
  report.rejected = report.n - report.kept;
  report.kept_fraction = report.n == 0 ? 0.0 : static_cast<double>(report.kept) / report.n;
  report.params_echo = outcome.params_echo;
  report.params_echo["normalize"] = norm;

  fs::create_directories(output_dir);
  report.outcome_path = outcome_path(output_dir, synset_id, config.method);
  write_outcome(outcome, report.outcome_path);
  report.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (outcome_out) *outcome_out = std::move(outcome);
  return report;
}

CollectionResult rerank_collection(const CollectionLayout& layout, const RerankConfig& config,
                                   std::size_t parallelism, std::uint64_t seed,
                                   const fs::path& output_dir) {
  const std::size_t count = layout.synsets.size();
  std::vector<std::optional<RerankReport>> reports(count);
  std::vector<std::optional<SynsetFailure>> failures(count);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t k = next.fetch_add(1); k < count; k = next.fetch_add(1)) {
      const auto& id = layout.synsets[k].synset_id;
      try {
        reports[k] = rerank_synset(layout, id, config, synset_seed(seed, id), output_dir);
        spdlog::info("{} {}: kept {}/{}", to_string(config.method), id, reports[k]->kept,
                     reports[k]->n);
      } catch (const std::exception& e) {
        failures[k] = SynsetFailure{id, e.what()};
        spdlog::error("{} {}: {}", to_string(config.method), id, e.what());
      }
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(count, 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }

  CollectionResult result;
  for (std::size_t k = 0; k < count; ++k) {
    if (reports[k]) {
      result.totals.n += reports[k]->n;
      result.totals.kept += reports[k]->kept;
      result.totals.rejected += reports[k]->rejected;
      result.reports.push_back(std::move(*reports[k]));
    }
    if (failures[k]) result.failures.push_back(std::move(*failures[k]));
  }
  return result;
}

nlohmann::json collection_to_json(const CollectionResult& result) {
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : result.reports) reports.push_back(report_to_json(r));
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : result.failures) {
    failures.push_back({{"synset_id", f.synset_id}, {"error", f.message}});
  }
  return {{"reports", std::move(reports)},
          {"failures", std::move(failures)},
          {"totals",
           {{"n", result.totals.n},
            {"kept", result.totals.kept},
            {"rejected", result.totals.rejected},
            {"kept_fraction", result.totals.kept_fraction()}}}};
}

// ---------------------------------------------------------------------------

fs::path pass2_features_path(const fs::path& pass2_dir, const std::string& synset_id) {
  return pass2_dir / (synset_id + ".fmx");
}

namespace {

fs::path pass2_labeled_path(const fs::path& pass2_dir, const std::string& synset_id) {
  return pass2_dir / (synset_id + ".labeled.fmx");
}

fs::path pass2_negatives_path(const fs::path& pass2_dir, const std::string& synset_id) {
  return pass2_dir / (synset_id + ".negatives.fmx");
}

const char* step_name(PlanStep s) {
  switch (s) {
    case PlanStep::kExtractFeatures: return "extract-features";
    case PlanStep::kRerank: return "rerank";
    case PlanStep::kEmitKeptManifest: return "emit-kept-manifest";
  }
  return "unknown";
}

}  // namespace

SelfRerankPlan self_rerank_plan(const CollectionLayout& layout, const fs::path& pass1_dir,
                                const fs::path& pass2_dir, Method method,
                                const RerankConfig& config) {
  if (!fs::is_directory(pass1_dir)) {
    throw Error(ErrorCode::kMissingPass1Features,
                "pass-1 feature directory not found: " + pass1_dir.string());
  }
  (void)config;
  SelfRerankPlan plan;
  plan.method = method;
  plan.pass1_dir = pass1_dir;
  plan.pass2_dir = pass2_dir;

  const bool needs_labeled = method != Method::kCvsvm;
  bool extracted = fs::is_directory(pass2_dir) && !layout.synsets.empty();
  for (const auto& s : layout.synsets) {
    if (!extracted) break;
    extracted = fs::exists(pass2_features_path(pass2_dir, s.synset_id)) &&
                (!needs_labeled || fs::exists(pass2_labeled_path(pass2_dir, s.synset_id)));
  }

  plan.tasks.push_back({PlanStep::kExtractFeatures, true, extracted, "", pass1_dir, pass2_dir,
                        "re-extract features with the model trained on the unreranked "
                        "collection; write <synset>.fmx per synset"});
  for (const auto& s : layout.synsets) {
    plan.tasks.push_back({PlanStep::kRerank, false, false, s.synset_id,
                          pass2_features_path(pass2_dir, s.synset_id),
                          fs::path(s.synset_id + "." + std::string(to_string(method)) + ".tsv"),
                          ""});
  }
  plan.tasks.push_back({PlanStep::kEmitKeptManifest, false, false, "", "", "kept_manifest.json",
                        "kept ids per synset, consumed by external retraining"});
  return plan;
}

nlohmann::json plan_to_json(const SelfRerankPlan& plan, const RerankConfig& config) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const auto& t : plan.tasks) {
    nlohmann::json j = {{"step", step_name(t.step)},
                        {"external", t.external},
                        {"satisfied", t.satisfied}};
    if (!t.synset_id.empty()) j["synset_id"] = t.synset_id;
    if (!t.input.empty()) j["input"] = t.input.string();
    if (!t.output.empty()) j["output"] = t.output.string();
    if (!t.note.empty()) j["note"] = t.note;
    tasks.push_back(std::move(j));
  }
  return {{"method", std::string(to_string(plan.method))},
          {"pass1_dir", plan.pass1_dir.string()},
          {"pass2_dir", plan.pass2_dir.string()},
          {"negative_count", config.negative_count},
          {"tasks", std::move(tasks)}};
}

CollectionLayout pass2_layout(const CollectionLayout& layout, const fs::path& pass2_dir) {
  CollectionLayout out = layout;
  for (auto& s : out.synsets) {
    s.unlabeled_path = pass2_features_path(pass2_dir, s.synset_id);
    const auto labeled = pass2_labeled_path(pass2_dir, s.synset_id);
    s.labeled_path = fs::exists(labeled) ? labeled : fs::path();
    const auto negatives = pass2_negatives_path(pass2_dir, s.synset_id);
    s.negatives_path = fs::exists(negatives) ? std::optional<fs::path>(negatives) : std::nullopt;
    s.expected_dim = 0;
  }
  return out;
}

nlohmann::json kept_manifest(const CollectionResult& result) {
  nlohmann::json synsets = nlohmann::json::object();
  std::string method;
  for (const auto& r : result.reports) {
    method = std::string(to_string(r.method));
    const RerankOutcome o = read_outcome(r.outcome_path);
    nlohmann::json kept = nlohmann::json::array();
    for (std::size_t j = 0; j < o.size(); ++j) {
      if (o.keep[j]) kept.push_back(o.ids[j]);
    }
    synsets[r.synset_id] = std::move(kept);
  }
  return {{"method", method}, {"synsets", std::move(synsets)}};
}

}  // namespace weedout
