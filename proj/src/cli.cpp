#include "weedout/cli.hpp"

#include "weedout/error.hpp"
#include "weedout/feature_io.hpp"
#include "weedout/linear_svm.hpp"
#include "weedout/pipeline.hpp"
#include "weedout/synthgen.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <sstream>

namespace weedout {

namespace fs = std::filesystem;

namespace {

void setup_logging(const std::string& override_level) {
  auto logger = spdlog::get("weedout");
  if (!logger) {
    logger = spdlog::stderr_logger_mt("weedout");
    logger->set_pattern("[%l] %v");
    spdlog::set_default_logger(logger);
  }
  std::string level = override_level;
  if (level.empty()) {
    const char* env = std::getenv("WEEDOUT_LOG");
    level = env ? env : "info";
  }
  spdlog::set_level(spdlog::level::from_str(level));
}

SvmLoss parse_loss(const std::string& name) {
  if (name == "hinge") return SvmLoss::kHinge;
  if (name == "squared-hinge" || name == "squared_hinge") return SvmLoss::kSquaredHinge;
  throw Error(ErrorCode::kInvalidArgument, "unknown loss '" + name + "'");
}

const char* loss_name(SvmLoss loss) {
  return loss == SvmLoss::kHinge ? "hinge" : "squared-hinge";
}

std::optional<double> parse_auto(const std::string& text, const char* flag) {
  if (text == "auto") return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw CLI::ValidationError(flag, "expected a number or 'auto', got '" + text + "'");
}

// Flags shared by `rerank` and `plan-self-rerank`.
struct RerankFlags {
  std::string method;
  std::string manifest;
  std::string output = "rerank_out";
  std::string synset;
  std::size_t parallelism = 1;
  std::uint64_t seed = 0;
  bool normalize = false;
  bool no_normalize = false;
  bool print_config = false;
  bool json = false;

  int folds = 5;
  double cost = 1.0;
  std::string loss = "hinge";
  double svm_tol = 1e-4;
  int svm_max_iter = 1000;
  double keep_threshold = 0.0;
  std::size_t negative_count = kDefaultNegativeCount;

  double kmm_bound = 5.0;
  std::string kmm_eps = "auto";
  std::string kmm_sum_target = "n_side";
  std::string kmm_threshold = "auto";
  double qp_tol = 1e-6;
  int qp_max_iter = 50000;
  bool kmm_no_tie_break = false;

  double tsvm_alpha = 1.0;
  double tsvm_beta = 1e-4;
  std::string rho = "auto";
  double kept_target = kDefaultKeptTarget;
  int max_outer = 50;
  double tsvm_cost = 1.0;

  double zero_eps = kDefaultZeroEps;

  void add(CLI::App* app, bool with_synset) {
    app->add_option("--method", method, "cvsvm, kmm or tsvm")
        ->required()
        ->check(CLI::IsMember({"cvsvm", "kmm", "tsvm"}));
    app->add_option("--manifest", manifest, "collection manifest (JSON)")->required();
    app->add_option("--output", output, "directory for outcome files and the report");
    if (with_synset) app->add_option("--synset", synset, "run a single synset");
    app->add_option("--parallelism", parallelism, "worker threads")->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "run seed");
    app->add_flag("--normalize", normalize, "force L2 normalization on");
    app->add_flag("--no-normalize", no_normalize, "force L2 normalization off");
    app->add_flag("--print-config", print_config, "print the resolved parameters and exit");
    app->add_flag("--json", json, "print the report as JSON");

    app->add_option("--folds", folds, "cvsvm folds K")->check(CLI::Range(2, 1 << 20));
    app->add_option("--cost", cost, "cvsvm SVM cost C");
    app->add_option("--loss", loss, "cvsvm SVM loss")
        ->check(CLI::IsMember({"hinge", "squared-hinge"}));
    app->add_option("--svm-tol", svm_tol, "SVM dual tolerance");
    app->add_option("--svm-max-iter", svm_max_iter, "SVM epochs");
    app->add_option("--keep-threshold", keep_threshold, "cvsvm score cutoff");
    app->add_option("--negative-count", negative_count, "negatives sampled from other synsets");

    app->add_option("--kmm-bound", kmm_bound, "KMM box bound B");
    app->add_option("--kmm-eps", kmm_eps, "KMM sum slack, or auto = B/sqrt(n)");
    app->add_option("--kmm-sum-target", kmm_sum_target, "n_side or m_side")
        ->check(CLI::IsMember({"n_side", "m_side"}));
    app->add_option("--kmm-threshold", kmm_threshold, "weight cutoff, or auto");
    app->add_option("--qp-tol", qp_tol, "QP KKT tolerance");
    app->add_option("--qp-max-iter", qp_max_iter, "QP iterations");
    app->add_flag("--kmm-no-tie-break", kmm_no_tie_break,
                  "return the solver's minimizer instead of the one nearest uniform weights");

    app->add_option("--tsvm-alpha", tsvm_alpha, "TSVM labeled weight");
    app->add_option("--tsvm-beta", tsvm_beta, "TSVM pool weight");
    app->add_option("--rho", rho, "TSVM positive/negative ratio, or auto = kept-target/n");
    app->add_option("--kept-target", kept_target, "kept count behind --rho auto");
    app->add_option("--max-outer", max_outer, "TSVM outer iterations");
    app->add_option("--tsvm-cost", tsvm_cost, "TSVM inner SVM cost scale");

    app->add_option("--zero-eps", zero_eps, "norm below which rows are left as zero");
  }

  // Invalid values surface as usage errors.
  RerankConfig config() const {
    try {
      return build_config();
    } catch (const Error& e) {
      throw CLI::ValidationError(e.what());
    }
  }

  RerankConfig build_config() const {
    RerankConfig c;
    c.method = parse_method(method);
    c.cvsvm.folds = folds;
    c.cvsvm.svm.cost = cost;
    c.cvsvm.svm.loss = parse_loss(loss);
    c.cvsvm.svm.tolerance = svm_tol;
    c.cvsvm.svm.max_iter = svm_max_iter;
    c.cvsvm.keep_threshold = keep_threshold;
    c.negative_count = negative_count;
    c.kmm.B = kmm_bound;
    c.kmm.eps = parse_auto(kmm_eps, "--kmm-eps");
    c.kmm.sum_target = kmm_sum_target == "m_side" ? SumTarget::kMSide : SumTarget::kNSide;
    c.kmm.threshold = parse_auto(kmm_threshold, "--kmm-threshold");
    c.kmm.qp_tol = qp_tol;
    c.kmm.qp_max_iter = qp_max_iter;
    c.kmm.closest_to_uniform = !kmm_no_tie_break;
    c.tsvm.alpha = tsvm_alpha;
    c.tsvm.beta = tsvm_beta;
    c.tsvm.max_outer = max_outer;
    c.tsvm.inner_svm.cost = tsvm_cost;
    c.tsvm.inner_svm.tolerance = svm_tol;
    c.tsvm.inner_svm.max_iter = svm_max_iter;
    c.rho = parse_auto(rho, "--rho");
    c.kept_target = kept_target;
    c.zero_eps = zero_eps;
    validate(c.cvsvm.svm);
    validate(c.tsvm.inner_svm);
    if (!(c.kmm.B > 0.0)) throw Error(ErrorCode::kInvalidArgument, "--kmm-bound must be > 0");
    if (c.kmm.eps && !(*c.kmm.eps > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "--kmm-eps must be > 0");
    }
    if (c.rho && !(*c.rho > 0.0)) throw Error(ErrorCode::kInvalidArgument, "--rho must be > 0");
    if (!(c.kept_target > 0.0)) {
      throw Error(ErrorCode::kInvalidArgument, "--kept-target must be > 0");
    }
    if (c.tsvm.max_outer < 1) throw Error(ErrorCode::kInvalidArgument, "--max-outer must be >= 1");
    return c;
  }

  CollectionLayout layout() const {
    CollectionLayout l = load_layout(manifest);
    if (normalize) l.normalize = true;
    if (no_normalize) l.normalize = false;
    return l;
  }
};

nlohmann::json config_json(const RerankFlags& f, const RerankConfig& c,
                           const CollectionLayout& layout) {
  nlohmann::json j = {
      {"method", f.method},
      {"manifest", f.manifest},
      {"output", f.output},
      {"seed", f.seed},
      {"parallelism", f.parallelism},
      {"normalize", layout.normalize},
      {"zero_eps", c.zero_eps},
      {"cvsvm",
       {{"folds", c.cvsvm.folds},
        {"cost", c.cvsvm.svm.cost},
        {"loss", loss_name(c.cvsvm.svm.loss)},
        {"svm_tol", c.cvsvm.svm.tolerance},
        {"svm_max_iter", c.cvsvm.svm.max_iter},
        {"keep_threshold", c.cvsvm.keep_threshold},
        {"negative_count", c.negative_count}}},
      {"kmm",
       {{"B", c.kmm.B},
        {"eps", c.kmm.eps ? nlohmann::json(*c.kmm.eps) : nlohmann::json("auto")},
        {"sum_target", c.kmm.sum_target == SumTarget::kNSide ? "n_side" : "m_side"},
        {"threshold", c.kmm.threshold ? nlohmann::json(*c.kmm.threshold) : nlohmann::json("auto")},
        {"qp_tol", c.kmm.qp_tol},
        {"qp_max_iter", c.kmm.qp_max_iter},
        {"closest_to_uniform", c.kmm.closest_to_uniform}}},
      {"tsvm",
       {{"alpha", c.tsvm.alpha},
        {"beta", c.tsvm.beta},
        {"rho", c.rho ? nlohmann::json(*c.rho) : nlohmann::json("auto")},
        {"kept_target", c.kept_target},
        {"max_outer", c.tsvm.max_outer},
        {"inner_cost", c.tsvm.inner_svm.cost},
        {"inner_loss", loss_name(c.tsvm.inner_svm.loss)}}}};

  // Values that depend on each synset's pool size.
  nlohmann::json resolved = nlohmann::json::array();
  for (const auto& s : layout.synsets) {
    if (!f.synset.empty() && s.synset_id != f.synset) continue;
    const std::size_t n = peek_features(s.unlabeled_path).rows;
    nlohmann::json r = {{"synset_id", s.synset_id}, {"n", n}};
    if (n > 0) {
      const double rho = resolve_rho(c, n);
      r["rho"] = rho;
      try {
        r["tsvm_positives"] = tsvm_positive_count(rho, n);
      } catch (const Error&) {
        r["tsvm_positives"] = nullptr;
      }
      const std::size_t m = s.labeled_path.empty() ? 0 : peek_features(s.labeled_path).rows;
      if (m > 0) {
        const KmmResolved k = resolve_kmm(c.kmm, m, n);
        r["kmm_eps"] = k.eps;
        r["kmm_sum"] = {k.sum_lo, k.sum_hi};
        r["kmm_threshold"] = k.threshold;
      }
    }
    resolved.push_back(std::move(r));
  }
  j["resolved"] = std::move(resolved);
  return j;
}

void print_summary(std::ostream& out, const CollectionResult& result) {
  out << std::left << std::setw(16) << "synset" << std::right << std::setw(8) << "n"
      << std::setw(8) << "kept" << std::setw(10) << "fraction" << std::setw(10) << "seconds"
      << "\n";
  for (const auto& r : result.reports) {
    out << std::left << std::setw(16) << r.synset_id << std::right << std::setw(8) << r.n
        << std::setw(8) << r.kept << std::setw(10) << std::fixed << std::setprecision(3)
        << r.kept_fraction << std::setw(10) << std::setprecision(2) << r.runtime_seconds << "\n";
  }
  for (const auto& f : result.failures) {
    out << std::left << std::setw(16) << f.synset_id << "  failed: " << f.message << "\n";
  }
  out << std::left << std::setw(16) << "total" << std::right << std::setw(8) << result.totals.n
      << std::setw(8) << result.totals.kept << std::setw(10) << std::fixed
      << std::setprecision(3) << result.totals.kept_fraction() << "\n";
  out.unsetf(std::ios::floatfield);
}

int collection_exit(const CollectionResult& result) {
  if (result.failures.empty()) return kExitOk;
  return result.reports.empty() ? kExitFatal : kExitPartial;
}

int cmd_rerank(const RerankFlags& f, std::ostream& out) {
  const RerankConfig config = f.config();
  const CollectionLayout layout = f.layout();
  if (f.print_config) {
    out << config_json(f, config, layout).dump(2) << "\n";
    return kExitOk;
  }

  CollectionResult result;
  if (!f.synset.empty()) {
    // A single synset: any failure is fatal and leaves nothing behind.
    const RerankReport report =
        rerank_synset(layout, f.synset, config, synset_seed(f.seed, f.synset), f.output);
    result.totals = {report.n, report.kept, report.rejected};
    result.reports.push_back(report);
  } else {
    result = rerank_collection(layout, config, f.parallelism, f.seed, f.output);
  }

  nlohmann::json report = collection_to_json(result);
  report["config"] = config_json(f, config, layout);
  fs::create_directories(f.output);
  write_file_atomic(fs::path(f.output) / ("report." + f.method + ".json"), report.dump(2) + "\n");
  if (f.json) {
    out << report.dump(2) << "\n";
  } else {
    print_summary(out, result);
  }
  return collection_exit(result);
}

// ---------------------------------------------------------------------------

struct SynthFlags {
  std::string out_dir;
  std::size_t synsets = 4;
  SynthSpec spec;
};

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  const fs::path manifest = write_synthetic_collection(f.out_dir, f.synsets, f.spec);
  out << manifest.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  std::string manifest;
  std::string runs = "rerank_out";
  std::vector<std::string> methods;
  std::string outcome;
  std::string truth;
  bool json = false;
};

struct EvalRow {
  std::string label;
  DetectionMetrics metrics;
  std::size_t n = 0;
};

nlohmann::json row_json(const EvalRow& r) {
  const auto& m = r.metrics;
  return {{"method", r.label},
          {"n", r.n},
          {"kept", m.kept},
          {"rejected", m.rejected},
          {"kept_fraction", m.kept_fraction},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"precision_undefined", m.precision_undefined},
          {"recall_undefined", m.recall_undefined}};
}

DetectionMetrics evaluate_outcome(const fs::path& outcome_file, const fs::path& truth_file) {
  if (!fs::exists(outcome_file)) throw Error(ErrorCode::kIoError, "missing " + outcome_file.string());
  if (!fs::exists(truth_file)) throw Error(ErrorCode::kIoError, "missing " + truth_file.string());
  const RerankOutcome o = read_outcome(outcome_file);
  return eval_detection(o, read_truth(truth_file, o.ids));
}

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  std::vector<EvalRow> rows;
  if (!f.outcome.empty()) {
    EvalRow row;
    row.label = fs::path(f.outcome).filename().string();
    row.metrics = evaluate_outcome(f.outcome, f.truth);
    row.n = row.metrics.kept + row.metrics.rejected;
    rows.push_back(row);
  } else {
    const CollectionLayout layout = load_layout(f.manifest);
    std::vector<std::string> methods = f.methods;
    const bool explicit_methods = !methods.empty();
    if (!explicit_methods) methods = {"cvsvm", "kmm", "tsvm"};
    for (const auto& name : methods) {
      const Method method = parse_method(name);
      std::size_t present = 0;
      for (const auto& s : layout.synsets) present += fs::exists(outcome_path(f.runs, s.synset_id, method));
      if (present == 0 && !explicit_methods) continue;
      // Pooled counts over the synsets.
      std::vector<bool> keep, truth;
      for (const auto& s : layout.synsets) {
        const fs::path o = outcome_path(f.runs, s.synset_id, method);
        const fs::path t = truth_path_for(s.unlabeled_path);
        if (!fs::exists(o)) throw Error(ErrorCode::kIoError, "missing " + o.string());
        if (!fs::exists(t)) throw Error(ErrorCode::kIoError, "missing " + t.string());
        const RerankOutcome outcome = read_outcome(o);
        const auto mask = read_truth(t, outcome.ids);
        keep.insert(keep.end(), outcome.keep.begin(), outcome.keep.end());
        truth.insert(truth.end(), mask.begin(), mask.end());
      }
      rows.push_back({name, eval_detection(keep, truth), keep.size()});
    }
    if (rows.empty()) {
      throw Error(ErrorCode::kIoError, "no outcome files under " + f.runs);
    }
  }

  if (f.json) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(row_json(r));
    out << arr.dump(2) << "\n";
    return kExitOk;
  }
  out << std::left << std::setw(10) << "method" << std::right << std::setw(8) << "total"
      << std::setw(8) << "kept" << std::setw(10) << "kept_frac" << std::setw(11) << "precision"
      << std::setw(8) << "recall" << "\n";
  std::vector<std::string> undefined;
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.label << std::right << std::setw(8) << r.n
        << std::setw(8) << r.metrics.kept << std::fixed << std::setprecision(3) << std::setw(10)
        << r.metrics.kept_fraction << std::setw(11) << r.metrics.precision << std::setw(8)
        << r.metrics.recall << "\n";
    if (r.metrics.precision_undefined) undefined.push_back(r.label);
  }
  out.unsetf(std::ios::floatfield);
  for (const auto& u : undefined) {
    out << "note: " << u << " rejected nothing; precision is undefined and shown as 0\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SvmFlags {
  std::string data;
  std::string model;
  std::string output;
  double cost = 1.0;
  std::string loss = "hinge";
  double tol = 1e-4;
  int max_iter = 1000;
  std::uint64_t seed = 0;
  bool normalize = false;
  bool json = false;
};

double accuracy(const Eigen::VectorXd& scores, const std::vector<int>& labels,
                std::size_t* correct) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((scores(static_cast<Eigen::Index>(i)) > 0.0 ? 1 : -1) == labels[i]) ++hits;
  }
  *correct = hits;
  return labels.empty() ? 0.0 : static_cast<double>(hits) / labels.size();
}

int cmd_svm_train(const SvmFlags& f, std::ostream& out) {
  LabeledSet data = ingest_labeled(f.data);
  if (f.normalize) data.features = l2_normalize(data.features).matrix;
  SvmParams params;
  params.cost = f.cost;
  params.loss = parse_loss(f.loss);
  params.tolerance = f.tol;
  params.max_iter = f.max_iter;
  params.seed = f.seed;
  const LinearModel model = train_svm(data, params);
  save_model(model, f.model);
  std::size_t correct = 0;
  const double acc = accuracy(decision_scores(model, data.features), data.labels, &correct);
  const auto& meta = model.train_meta;
  if (f.json) {
    out << nlohmann::json{{"d", model.dim()},
                          {"n", data.rows()},
                          {"accuracy", acc},
                          {"epochs", meta.iterations},
                          {"converged", meta.converged},
                          {"dual_violation", meta.dual_violation},
                          {"duality_gap", meta.duality_gap}}
               .dump(2)
        << "\n";
  } else {
    out << "trained d=" << model.dim() << " on " << data.rows() << " items, " << meta.iterations
        << " epochs" << (meta.converged ? "" : " (not converged)") << "\n";
    out << "training accuracy " << std::fixed << std::setprecision(2) << 100.0 * acc << "% ("
        << correct << "/" << data.rows() << ")\n";
    out.unsetf(std::ios::floatfield);
  }
  return kExitOk;
}

int cmd_svm_predict(const SvmFlags& f, std::ostream& out) {
  const LinearModel model = load_model(f.model);
  const bool labeled = fs::exists(sidecar(f.data, ".labels"));
  LabeledSet data;
  if (labeled) {
    data = ingest_labeled(f.data);
  } else {
    data.features = ingest_features(f.data);
  }
  if (f.normalize) data.features = l2_normalize(data.features).matrix;
  const Eigen::VectorXd scores = decision_scores(model, data.features);

  if (!f.output.empty()) {
    std::ostringstream tsv;
    tsv << "id\tscore\tlabel\n";
    tsv << std::setprecision(17);
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const double s = scores(static_cast<Eigen::Index>(i));
      tsv << data.features.ids[i] << '\t' << s << '\t' << (s > 0.0 ? "+1" : "-1") << '\n';
    }
    write_file_atomic(f.output, tsv.str());
  }
  std::size_t positives = 0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) positives += scores(i) > 0.0;
  nlohmann::json j = {{"n", data.rows()}, {"predicted_positive", positives}};
  if (labeled) {
    std::size_t correct = 0;
    j["accuracy"] = accuracy(scores, data.labels, &correct);
    j["correct"] = correct;
  }
  if (f.json) {
    out << j.dump(2) << "\n";
  } else {
    out << "predicted " << data.rows() << " items, " << positives << " positive\n";
    if (labeled) {
      out << "accuracy " << std::fixed << std::setprecision(2)
          << 100.0 * j["accuracy"].get<double>() << "% (" << j["correct"].get<std::size_t>()
          << "/" << data.rows() << ")\n";
      out.unsetf(std::ios::floatfield);
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct NormalizeFlags {
  std::string input;
  std::string output;
  double zero_eps = kDefaultZeroEps;
};

int cmd_normalize(const NormalizeFlags& f, std::ostream& out) {
  const FeatureMatrix m = ingest_features(f.input);
  const NormalizeResult r = l2_normalize(m, f.zero_eps);
  write_features(r.matrix, f.output);
  const fs::path labels = sidecar(f.input, ".labels");
  if (fs::exists(labels)) {
    std::ifstream in(labels, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    write_file_atomic(sidecar(f.output, ".labels"), buf.str());
  }
  out << "normalized " << m.rows() << " rows";
  if (!r.zero_rows.empty()) out << ", " << r.zero_rows.size() << " zero rows left as zero";
  out << "\n";
  for (std::size_t row : r.zero_rows) spdlog::warn("zero row {} ({})", row, m.ids[row]);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct PlanFlags {
  RerankFlags rerank;
  std::string pass1;
  std::string pass2;
  bool execute = false;
};

int cmd_plan(const PlanFlags& f, std::ostream& out, std::ostream& err) {
  const RerankConfig config = f.rerank.config();
  const CollectionLayout layout = f.rerank.layout();
  const SelfRerankPlan plan = self_rerank_plan(layout, f.pass1, f.pass2, config.method, config);
  nlohmann::json j = plan_to_json(plan, config);
  if (!f.execute) {
    out << j.dump(2) << "\n";
    return kExitOk;
  }
  if (!plan.tasks.front().satisfied) {
    err << "pass-2 features are missing under " << f.pass2
        << "; run the external extraction step first\n";
    return kExitFatal;
  }
  const CollectionLayout second = pass2_layout(layout, f.pass2);
  const CollectionResult result =
      rerank_collection(second, config, f.rerank.parallelism, f.rerank.seed, f.rerank.output);
  fs::create_directories(f.rerank.output);
  write_file_atomic(fs::path(f.rerank.output) / "kept_manifest.json",
                    kept_manifest(result).dump(2) + "\n");
  j["result"] = collection_to_json(result);
  out << j.dump(2) << "\n";
  return collection_exit(result);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Noise filtering for weakly labeled image collections"};
  app.name("weedout");
  app.require_subcommand(1);
  std::string log_level;
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  RerankFlags rerank;
  auto* rerank_cmd = app.add_subcommand("rerank", "rerank the synsets of a collection");
  rerank.add(rerank_cmd, true);

  SynthFlags synth;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic collection with planted noise");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_cmd->add_option("--synsets", synth.synsets, "number of synsets");
  synth_cmd->add_option("--n-clean", synth.spec.n_clean, "clean pool items per synset");
  synth_cmd->add_option("--n-noise", synth.spec.n_noise, "planted noise items per synset");
  synth_cmd->add_option("--d", synth.spec.d, "feature dimension")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--sep", synth.spec.separation, "cluster separation in std units");
  synth_cmd->add_option("--m-labeled", synth.spec.m_labeled, "labeled items per class");
  synth_cmd->add_option("--n-negatives", synth.spec.n_negatives, "negatives per synset");
  synth_cmd->add_option("--background-fraction", synth.spec.background_fraction,
                        "share of noise drawn from the uniform background");
  synth_cmd->add_option("--center-radius", synth.spec.center_radius,
                        "distance of the clean center from the origin (0 = 2 sqrt(d))");
  synth_cmd->add_option("--seed", synth.spec.seed, "generator seed");

  EvalFlags eval;
  auto* eval_cmd = app.add_subcommand("eval", "score outcomes against planted truth");
  auto* eval_manifest = eval_cmd->add_option("--manifest", eval.manifest, "collection manifest");
  eval_cmd->add_option("--runs", eval.runs, "directory holding the outcome files");
  eval_cmd->add_option("--method", eval.methods, "methods to score (default: all present)")
      ->check(CLI::IsMember({"cvsvm", "kmm", "tsvm"}));
  auto* eval_outcome = eval_cmd->add_option("--outcome", eval.outcome, "a single outcome file");
  auto* eval_truth = eval_cmd->add_option("--truth", eval.truth, "truth file for --outcome");
  eval_cmd->add_flag("--json", eval.json, "print a JSON array");
  eval_outcome->needs(eval_truth)->excludes(eval_manifest);
  eval_truth->needs(eval_outcome);

  SvmFlags svm;
  auto* svm_cmd = app.add_subcommand("svm", "standalone linear SVM");
  svm_cmd->require_subcommand(1);
  auto* train_cmd = svm_cmd->add_subcommand("train", "train on a labeled feature file");
  train_cmd->add_option("--data", svm.data, "labeled feature file")->required();
  train_cmd->add_option("--model", svm.model, "model file to write")->required();
  train_cmd->add_option("--cost", svm.cost, "cost C");
  train_cmd->add_option("--loss", svm.loss, "hinge or squared-hinge")
      ->check(CLI::IsMember({"hinge", "squared-hinge"}));
  train_cmd->add_option("--tol", svm.tol, "dual tolerance");
  train_cmd->add_option("--max-iter", svm.max_iter, "epochs");
  train_cmd->add_option("--seed", svm.seed, "coordinate order seed");
  train_cmd->add_flag("--normalize", svm.normalize, "L2-normalize rows first");
  train_cmd->add_flag("--json", svm.json, "print JSON");
  auto* predict_cmd = svm_cmd->add_subcommand("predict", "score a feature file");
  predict_cmd->add_option("--model", svm.model, "model file")->required();
  predict_cmd->add_option("--data", svm.data, "feature file")->required();
  predict_cmd->add_option("--output", svm.output, "TSV of scores");
  predict_cmd->add_flag("--normalize", svm.normalize, "L2-normalize rows first");
  predict_cmd->add_flag("--json", svm.json, "print JSON");

  NormalizeFlags norm;
  auto* norm_cmd = app.add_subcommand("normalize", "L2-normalize a feature file");
  norm_cmd->add_option("--input", norm.input, "feature file")->required();
  norm_cmd->add_option("--output", norm.output, "output feature file")->required();
  norm_cmd->add_option("--zero-eps", norm.zero_eps, "norm below which rows stay zero");

  PlanFlags plan;
  auto* plan_cmd = app.add_subcommand(
      "plan-self-rerank", "plan (and optionally run) reranking on re-extracted features");
  plan.rerank.add(plan_cmd, false);
  plan_cmd->add_option("--pass1", plan.pass1, "features of the first pass")->required();
  plan_cmd->add_option("--pass2", plan.pass2, "features re-extracted by the trained model")
      ->required();
  plan_cmd->add_flag("--execute", plan.execute, "rerank the pass-2 features now");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub ? sub->help() : app.help());
    return kExitUsage;
  }

  try {
    setup_logging(log_level);
  } catch (const std::exception& e) {
    err << "error: bad log level: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (rerank_cmd->parsed()) return cmd_rerank(rerank, out);
    if (synth_cmd->parsed()) return cmd_synth(synth, out);
    if (eval_cmd->parsed()) {
      if (eval.manifest.empty() && eval.outcome.empty()) {
        err << "error: eval needs --manifest or --outcome/--truth\n" << eval_cmd->help();
        return kExitUsage;
      }
      return cmd_eval(eval, out);
    }
    if (train_cmd->parsed()) return cmd_svm_train(svm, out);
    if (predict_cmd->parsed()) return cmd_svm_predict(svm, out);
    if (norm_cmd->parsed()) return cmd_normalize(norm, out);
    if (plan_cmd->parsed()) return cmd_plan(plan, out, err);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error [" << to_string(e.code()) << "]: " << e.what() << "\n";
    return kExitFatal;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFatal;
  }
  return kExitUsage;
}

}  // namespace weedout
