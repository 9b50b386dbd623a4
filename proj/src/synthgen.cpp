#include "weedout/synthgen.hpp"

#include "weedout/error.hpp"
#include "weedout/feature_io.hpp"
#include "weedout/pipeline.hpp"
#include "weedout/random.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace weedout {

namespace fs = std::filesystem;

void validate(const SynthSpec& s) {
  if (s.d < 1) throw Error(ErrorCode::kInvalidArgument, "synthetic d must be >= 1");
  if (!(s.separation >= 0.0) || !std::isfinite(s.separation)) {
    throw Error(ErrorCode::kInvalidArgument, "separation must be finite and >= 0");
  }
  if (!(s.background_fraction >= 0.0 && s.background_fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "background_fraction must lie in [0, 1]");
  }
  if (!(s.center_radius >= 0.0) || !std::isfinite(s.center_radius)) {
    throw Error(ErrorCode::kInvalidArgument, "center_radius must be finite and >= 0");
  }
}

namespace {

struct Geometry {
  Eigen::VectorXd clean;
  Eigen::VectorXd adversarial;
};

Eigen::VectorXd gaussian(Rng& rng, std::size_t d) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(d));
  for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = rng.normal();
  return v;
}

Eigen::VectorXd unit(Rng& rng, std::size_t d) {
  for (;;) {
    Eigen::VectorXd v = gaussian(rng, d);
    const double norm = v.norm();
    if (norm > 1e-12) return v / norm;
  }
}

Geometry make_geometry(const SynthSpec& spec, Rng& rng) {
  const double radius =
      spec.center_radius > 0.0 ? spec.center_radius : 2.0 * std::sqrt(static_cast<double>(spec.d));
  const Eigen::VectorXd u = unit(rng, spec.d);
  Geometry g;
  g.clean = radius * u;
  if (spec.d < 2 || spec.separation >= 2.0 * radius) {
    g.adversarial = (radius - spec.separation) * u;
    return g;
  }
  // Chord of length `separation` on the sphere, in the plane of u and a
  // random direction orthogonal to it.
  Eigen::VectorXd v;
  for (;;) {
    v = unit(rng, spec.d);
    v -= v.dot(u) * u;
    if (v.norm() > 1e-6) break;
  }
  v.normalize();
  const double theta = 2.0 * std::asin(spec.separation / (2.0 * radius));
  g.adversarial = radius * (std::cos(theta) * u + std::sin(theta) * v);
  return g;
}

Eigen::VectorXd draw_noise(const SynthSpec& spec, const Geometry& g, Rng& rng) {
  if (rng.uniform() < spec.background_fraction) {
    Eigen::VectorXd x = g.clean + gaussian(rng, spec.d);
    for (Eigen::Index k = 0; k < x.size(); ++k) x(k) += spec.separation * rng.uniform(-1.0, 1.0);
    return x;
  }
  return g.adversarial + gaussian(rng, spec.d);
}

std::string numbered(const std::string& prefix, char kind, std::size_t j) {
  return prefix + kind + std::to_string(j);
}

}  // namespace

SyntheticSynset generate_synset(const SynthSpec& spec, const std::string& id_prefix) {
  validate(spec);
  Rng geometry_rng(derive_seed(spec.seed, 0));
  Rng pool_rng(derive_seed(spec.seed, 1));
  Rng labeled_rng(derive_seed(spec.seed, 2));
  Rng negative_rng(derive_seed(spec.seed, 3));
  Rng shuffle_rng(derive_seed(spec.seed, 4));
  const Geometry g = make_geometry(spec, geometry_rng);
  const auto d = static_cast<Eigen::Index>(spec.d);

  SyntheticSynset out;
  const std::size_t n = spec.n_clean + spec.n_noise;
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < n; ++j) order[j] = j;
  shuffle_rng.shuffle(std::span<std::size_t>(order));

  // Draw item k (clean first, then noise) and place it at row order[k].
  out.pool.data.resize(static_cast<Eigen::Index>(n), d);
  out.pool.ids.resize(n);
  out.truth.assign(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const bool noise = k >= spec.n_clean;
    const auto row = static_cast<Eigen::Index>(order[k]);
    out.pool.data.row(row) =
        noise ? draw_noise(spec, g, pool_rng) : Eigen::VectorXd(g.clean + gaussian(pool_rng, spec.d));
    out.truth[order[k]] = noise;
  }
  for (std::size_t j = 0; j < n; ++j) out.pool.ids[j] = numbered(id_prefix, 'p', j);

  const std::size_t m = spec.m_labeled;
  out.labeled.features.data.resize(static_cast<Eigen::Index>(2 * m), d);
  for (std::size_t i = 0; i < 2 * m; ++i) {
    const bool positive = i < m;
    const Eigen::VectorXd& center = positive ? g.clean : g.adversarial;
    out.labeled.features.data.row(static_cast<Eigen::Index>(i)) =
        center + gaussian(labeled_rng, spec.d);
    out.labeled.features.ids.push_back(numbered(id_prefix, 'l', i));
    out.labeled.labels.push_back(positive ? 1 : -1);
  }

  out.negatives.data.resize(static_cast<Eigen::Index>(spec.n_negatives), d);
  for (std::size_t k = 0; k < spec.n_negatives; ++k) {
    out.negatives.data.row(static_cast<Eigen::Index>(k)) = g.adversarial + gaussian(negative_rng, spec.d);
    out.negatives.ids.push_back(numbered(id_prefix, 'n', k));
  }
  return out;
}

DetectionMetrics eval_detection(const std::vector<bool>& keep, const std::vector<bool>& truth) {
  if (keep.size() != truth.size()) {
    throw Error(ErrorCode::kLengthMismatch, "outcome has " + std::to_string(keep.size()) +
                                                " items, truth has " + std::to_string(truth.size()));
  }
  DetectionMetrics m;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    if (keep[j]) ++m.kept; else ++m.rejected;
    if (truth[j]) ++m.noise;
    if (!keep[j] && truth[j]) ++m.true_rejections;
  }
  const std::size_t n = keep.size();
  m.kept_fraction = n == 0 ? 0.0 : static_cast<double>(m.kept) / n;
  m.precision_undefined = m.rejected == 0;
  m.recall_undefined = m.noise == 0;
  m.precision = m.precision_undefined ? 0.0 : static_cast<double>(m.true_rejections) / m.rejected;
  m.recall = m.recall_undefined ? 0.0 : static_cast<double>(m.true_rejections) / m.noise;
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  return m;
}

DetectionMetrics eval_detection(const RerankOutcome& outcome, const std::vector<bool>& truth) {
  return eval_detection(outcome.keep, truth);
}

GridOracleResult grid_oracle_qp(const QpProblem& p, std::size_t resolution) {
  validate(p);
  const auto n = static_cast<std::size_t>(p.size());
  if (n > 4) {
    throw Error(ErrorCode::kTooManyVariables,
                "grid oracle handles at most 4 variables, got " + std::to_string(n));
  }
  if (resolution < 2) throw Error(ErrorCode::kInvalidArgument, "resolution must be >= 2");

  std::vector<std::vector<double>> axes(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    axes[i].resize(resolution);
    for (std::size_t k = 0; k < resolution; ++k) {
      const double t = static_cast<double>(k) / static_cast<double>(resolution - 1);
      axes[i][k] = k + 1 == resolution ? p.upper(ii) : p.lower(ii) + t * (p.upper(ii) - p.lower(ii));
    }
  }

  constexpr double kSumTol = 1e-9;
  // Plain arrays in the hot loop: at resolution 201 and n = 3 this visits
  // eight million points.
  double h[4][4] = {};
  double g[4] = {};
  for (std::size_t i = 0; i < n; ++i) {
    g[i] = p.g(static_cast<Eigen::Index>(i));
    for (std::size_t j = 0; j < n; ++j) {
      h[i][j] = p.H(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  GridOracleResult best;
  best.objective = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> best_index;
  std::vector<std::size_t> index(n, 0);
  double x[4] = {};
  for (;;) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = axes[i][index[i]];
      sum += x[i];
    }
    if (sum >= p.sum_lo - kSumTol && sum <= p.sum_hi + kSumTol) {
      ++best.feasible_points;
      double f = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double hx = 0.0;
        for (std::size_t j = 0; j < n; ++j) hx += h[i][j] * x[j];
        f += x[i] * (0.5 * hx + g[i]);
      }
      if (f < best.objective) {
        best.objective = f;
        best_index = index;
      }
    }
    std::size_t i = 0;
    while (i < n && ++index[i] == resolution) index[i++] = 0;
    if (i == n) break;
  }
  if (best.feasible_points == 0) {
    throw Error(ErrorCode::kInfeasibleProblem, "no grid point satisfies the sum constraint");
  }
  best.alpha.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) best.alpha(static_cast<Eigen::Index>(i)) = axes[i][best_index[i]];
  best.objective = p.objective(best.alpha);
  return best;
}

fs::path truth_path_for(const fs::path& pool_path) { return sidecar(pool_path, ".truth"); }

fs::path write_synthetic_collection(const fs::path& dir, std::size_t synsets,
                                    const SynthSpec& spec) {
  validate(spec);
  fs::create_directories(dir);
  CollectionLayout layout;
  layout.root = fs::absolute(dir);
  layout.seed = spec.seed;
  for (std::size_t s = 0; s < synsets; ++s) {
    char name[32];
    std::snprintf(name, sizeof name, "s%03zu", s);
    const std::string id = name;
    SynthSpec local = spec;
    local.seed = derive_seed(spec.seed, 100 + s);
    const SyntheticSynset synset = generate_synset(local, id + "_");

    const fs::path sub = layout.root / id;
    fs::create_directories(sub);
    SynsetManifest m;
    m.synset_id = id;
    m.unlabeled_path = sub / "pool.fmx";
    m.labeled_path = sub / "labeled.fmx";
    m.negatives_path = sub / "negatives.fmx";
    m.expected_dim = spec.d;
    write_features(synset.pool, m.unlabeled_path);
    write_labeled(synset.labeled, m.labeled_path);
    write_features(synset.negatives, *m.negatives_path);
    write_truth(synset.pool.ids, synset.truth, truth_path_for(m.unlabeled_path));

    CollectionLayout single;
    single.root = sub;
    single.seed = layout.seed;
    single.synsets.push_back(m);
    save_layout(single, sub / "manifest.json");
    layout.synsets.push_back(std::move(m));
  }
  const fs::path manifest = layout.root / "collection.json";
  save_layout(layout, manifest);
  return manifest;
}

}  // namespace weedout
