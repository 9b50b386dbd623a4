#include "support.hpp"
#include "weedout/cli.hpp"
#include "weedout/feature_io.hpp"
#include "weedout/linear_svm.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sstream>

using namespace weedout;
using weedout::testing::slurp;
using weedout::testing::TempDir;

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::vector<std::string> synth_args(const fs::path& dir) {
  return {"synth", "--out", dir.string(), "--synsets", "4", "--n-clean", "45", "--n-noise", "5",
          "--d", "8", "--sep", "6", "--n-negatives", "100", "--seed", "7"};
}

// Every regular file under `dir`, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return files;
}

void write_toy(const fs::path& path) {
  LabeledSet s;
  s.features = FeatureMatrix({"a", "b", "c", "d"},
                             (Eigen::MatrixXd(4, 2) << 1, 0, 2, 1, -1, 0, -2, -1).finished());
  s.labels = {1, 1, -1, -1};
  write_labeled(s, path);
}

}  // namespace

TEST_CASE("usage errors exit 64") {
  CHECK(cli({}).code == kExitUsage);
  const Run missing = cli({"rerank", "--method", "kmm"});
  CHECK(missing.code == kExitUsage);
  CHECK(missing.err.find("--manifest") != std::string::npos);
  CHECK(cli({"rerank", "--method", "svm", "--manifest", "x.json"}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("synth writes four manifests and is byte-reproducible") {
  TempDir a("cli_a"), b("cli_b");
  const Run r = cli(synth_args(a.path()));
  REQUIRE(r.code == kExitOk);
  CHECK(fs::exists(a / "collection.json"));
  int manifests = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    manifests += e.path().filename() == "manifest.json";
  }
  CHECK(manifests == 4);
  REQUIRE(cli(synth_args(b.path())).code == kExitOk);
  // Manifests hold absolute paths; compare everything else byte for byte.
  auto ta = tree(a.path()), tb = tree(b.path());
  REQUIRE(ta.size() == tb.size());
  for (const auto& [name, bytes] : ta) {
    if (name.ends_with(".json")) continue;
    CHECK_MESSAGE(bytes == tb[name], name);
  }
}

TEST_CASE("synth accepts empty synsets") {
  TempDir dir("cli_empty");
  CHECK(cli({"synth", "--out", dir.path().string(), "--n-clean", "0", "--n-noise", "0"}).code ==
        kExitOk);
  CHECK(ingest_features(dir / "s000/pool.fmx").rows() == 0);
}

TEST_CASE("kmm defaults to B = 5 and rho auto resolves to kept-target / n") {
  TempDir dir("cli_cfg");
  REQUIRE(cli({"synth", "--out", dir.path().string(), "--synsets", "1", "--n-clean", "3600",
               "--n-noise", "400", "--d", "4", "--n-negatives", "10"})
              .code == kExitOk);
  const std::string manifest = (dir / "collection.json").string();
  const Run k = cli({"rerank", "--method", "kmm", "--manifest", manifest, "--print-config"});
  REQUIRE(k.code == kExitOk);
  const auto kj = nlohmann::json::parse(k.out);
  CHECK(kj["kmm"]["B"] == 5.0);
  CHECK(kj["cvsvm"]["folds"] == 5);
  CHECK(kj["cvsvm"]["cost"] == 1.0);
  CHECK(kj["tsvm"]["alpha"] == 1.0);
  CHECK(kj["tsvm"]["beta"] == 1e-4);

  const Run t = cli({"rerank", "--method", "tsvm", "--rho", "auto", "--manifest", manifest,
                     "--print-config"});
  REQUIRE(t.code == kExitOk);
  const auto tj = nlohmann::json::parse(t.out);
  CHECK(tj["resolved"][0]["n"] == 4000);
  CHECK(tj["resolved"][0]["rho"].get<double>() == doctest::Approx(0.25));
  CHECK(tj["resolved"][0]["tsvm_positives"] == 800);
}

TEST_CASE("rerank, then eval: three methods, shared totals, JSON array") {
  TempDir dir("cli_run");
  REQUIRE(cli(synth_args(dir / "data")).code == kExitOk);
  const std::string manifest = (dir / "data/collection.json").string();
  for (const char* method : {"cvsvm", "kmm", "tsvm"}) {
    const Run r = cli({"rerank", "--method", method, "--manifest", manifest, "--output",
                       (dir / "runs").string(), "--rho", "9", "--negative-count", "100"});
    CHECK_MESSAGE(r.code == kExitOk, r.err);
    CHECK(fs::exists(dir / "runs" / (std::string("report.") + method + ".json")));
  }
  const Run table = cli({"eval", "--manifest", manifest, "--runs", (dir / "runs").string()});
  REQUIRE(table.code == kExitOk);
  CHECK(table.out.find("cvsvm") != std::string::npos);
  CHECK(table.out.find("kmm") != std::string::npos);
  CHECK(table.out.find("tsvm") != std::string::npos);

  const Run js = cli({"eval", "--manifest", manifest, "--runs", (dir / "runs").string(), "--json"});
  REQUIRE(js.code == kExitOk);
  const auto arr = nlohmann::json::parse(js.out);
  REQUIRE(arr.is_array());
  REQUIRE(arr.size() == 3);
  for (const auto& row : arr) CHECK(row["n"] == 200);
}

TEST_CASE("eval of a perfect outcome") {
  TempDir dir("cli_perfect");
  RerankOutcome o;
  o.ids = {"a", "b", "c"};
  o.scores = {1, 1, -1};
  o.weights = {1, 1, 1};
  o.keep = {true, true, false};
  write_outcome(o, dir / "o.tsv");
  write_truth(o.ids, {false, false, true}, dir / "t.tsv");
  const Run r = cli({"eval", "--outcome", (dir / "o.tsv").string(), "--truth",
                     (dir / "t.tsv").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("1.000   1.000") != std::string::npos);
  CHECK(cli({"eval", "--outcome", (dir / "none.tsv").string(), "--truth",
             (dir / "t.tsv").string()})
            .code == kExitFatal);
}

TEST_CASE("svm train and predict round-trip") {
  TempDir dir("cli_svm");
  write_toy(dir / "toy.fmx");
  const Run train = cli({"svm", "train", "--data", (dir / "toy.fmx").string(), "--model",
                         (dir / "m.lsvm").string()});
  REQUIRE(train.code == kExitOk);
  CHECK(train.out.find("training accuracy 100.00%") != std::string::npos);
  const Run pred = cli({"svm", "predict", "--model", (dir / "m.lsvm").string(), "--data",
                        (dir / "toy.fmx").string(), "--output", (dir / "p.tsv").string(), "--json"});
  REQUIRE(pred.code == kExitOk);
  CHECK(nlohmann::json::parse(pred.out)["accuracy"] == 1.0);

  // Reloaded model scores match the in-memory one exactly.
  const LinearModel model = load_model(dir / "m.lsvm");
  const Eigen::VectorXd scores = decision_scores(model, ingest_features(dir / "toy.fmx"));
  std::istringstream tsv(slurp(dir / "p.tsv"));
  std::string line;
  std::getline(tsv, line);
  for (Eigen::Index i = 0; std::getline(tsv, line); ++i) {
    const auto a = line.find('\t'), b = line.find('\t', a + 1);
    CHECK(std::stod(line.substr(a + 1, b - a - 1)) == scores(i));
  }

  FeatureMatrix wide({"x"}, Eigen::MatrixXd::Ones(1, 3));
  write_features(wide, dir / "wide.fmx");
  CHECK(cli({"svm", "predict", "--model", (dir / "m.lsvm").string(), "--data",
             (dir / "wide.fmx").string()})
            .code == kExitFatal);
  std::ofstream(dir / "junk.lsvm") << "junk";
  CHECK(cli({"svm", "predict", "--model", (dir / "junk.lsvm").string(), "--data",
             (dir / "toy.fmx").string()})
            .code == kExitFatal);
}

TEST_CASE("normalize command") {
  TempDir dir("cli_norm");
  FeatureMatrix m({"a", "b"}, (Eigen::MatrixXd(2, 2) << 3, 4, 0, 0).finished());
  write_features(m, dir / "in.fmx");
  const Run r = cli({"normalize", "--input", (dir / "in.fmx").string(), "--output",
                     (dir / "out.fmx").string()});
  REQUIRE(r.code == kExitOk);
  CHECK(r.out.find("1 zero rows") != std::string::npos);
  const FeatureMatrix back = ingest_features(dir / "out.fmx");
  CHECK(back.data(0, 0) == doctest::Approx(0.6));
}

TEST_CASE("partial failures exit 2, total failure exits 1") {
  TempDir dir("cli_partial");
  REQUIRE(cli(synth_args(dir / "data")).code == kExitOk);
  fs::remove(dir / "data/s001/labeled.fmx.labels");
  fs::remove(dir / "data/s001/labeled.fmx");
  // The manifest check happens at load time; point one synset at an empty
  // labeled file instead so that only the rerank step fails.
  FeatureMatrix empty;
  empty.data.resize(0, 8);
  write_features(empty, dir / "data/s001/labeled.fmx");
  const std::string manifest = (dir / "data/collection.json").string();
  const Run r = cli({"rerank", "--method", "kmm", "--manifest", manifest, "--output",
                     (dir / "runs").string()});
  CHECK(r.code == kExitPartial);
  const Run single = cli({"rerank", "--method", "kmm", "--manifest", manifest, "--synset", "s001",
                          "--output", (dir / "one").string()});
  CHECK(single.code == kExitFatal);
  CHECK_FALSE(fs::exists(dir / "one/s001.kmm.tsv"));
}

TEST_CASE("self-rerank plan command") {
  TempDir dir("cli_plan");
  REQUIRE(cli(synth_args(dir / "data")).code == kExitOk);
  const std::string manifest = (dir / "data/collection.json").string();
  CHECK(cli({"plan-self-rerank", "--method", "cvsvm", "--manifest", manifest, "--pass1",
             (dir / "p1").string(), "--pass2", (dir / "p2").string()})
            .code == kExitFatal);
  fs::create_directories(dir / "p1");
  const Run plan = cli({"plan-self-rerank", "--method", "cvsvm", "--manifest", manifest, "--pass1",
                        (dir / "p1").string(), "--pass2", (dir / "p2").string()});
  REQUIRE(plan.code == kExitOk);
  const auto j = nlohmann::json::parse(plan.out);
  CHECK(j["tasks"].size() == 6);
  CHECK(j["tasks"][0]["external"] == true);
  CHECK(j["tasks"][0]["satisfied"] == false);
}
