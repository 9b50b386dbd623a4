#include "weedout/linear_svm.hpp"

#include "weedout/error.hpp"
#include "weedout/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace weedout {

static_assert(std::endian::native == std::endian::little,
              "binary formats assume a little-endian host");

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kPolishEvery = 10;
constexpr Eigen::Index kPolishMaxFree = 256;
constexpr int kPolishSteps = 8;

double item_cost(const SvmParams& p, std::size_t i) {
  return p.per_item_cost.empty() ? p.cost : p.cost * p.per_item_cost[i];
}

double loss(SvmLoss kind, double margin) {
  const double slack = std::max(0.0, 1.0 - margin);
  return kind == SvmLoss::kHinge ? slack : slack * slack;
}

// Dual box and diagonal shift for one item.
struct DualItem {
  double upper = 0.0;
  double shift = 0.0;
  bool active = false;
};

DualItem dual_item(const SvmParams& p, std::size_t i) {
  const double c = item_cost(p, i);
  if (c <= 0.0) return {};
  if (p.loss == SvmLoss::kHinge) return {c, 0.0, true};
  return {kInf, 0.5 / c, true};
}

double projected_gradient(double grad, double a, double upper) {
  if (a <= 0.0) return std::min(grad, 0.0);
  if (a >= upper) return std::max(grad, 0.0);
  return grad;
}

}  // namespace

void validate(const SvmParams& p) {
  if (!(p.cost > 0.0) || !std::isfinite(p.cost)) {
    throw Error(ErrorCode::kInvalidArgument, "svm cost must be positive");
  }
  if (!(p.tolerance > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "svm tolerance must be positive");
  }
  if (p.max_iter < 1) throw Error(ErrorCode::kInvalidArgument, "svm max_iter must be >= 1");
  for (double c : p.per_item_cost) {
    if (!(c >= 0.0) || !std::isfinite(c)) {
      throw Error(ErrorCode::kInvalidArgument, "per-item costs must be finite and >= 0");
    }
  }
}

LinearModel train_svm(const LabeledSet& data, const SvmParams& params) {
  validate(params);
  const std::size_t n = data.rows();
  if (data.labels.size() != n) {
    throw Error(ErrorCode::kLengthMismatch, "labels do not match feature rows");
  }
  if (!params.per_item_cost.empty() && params.per_item_cost.size() != n) {
    throw Error(ErrorCode::kDimensionMismatch, "per_item_cost length differs from data");
  }
  if (!data.has_both_classes()) {
    throw Error(ErrorCode::kSingleClassData, "training data needs both +1 and -1 labels");
  }

  const RowMatrix x = data.features.data;
  const auto d = x.cols();

  std::vector<DualItem> items(n);
  std::vector<double> qdiag(n);
  std::vector<std::size_t> order;
  order.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    items[i] = dual_item(params, i);
    qdiag[i] = x.row(static_cast<Eigen::Index>(i)).squaredNorm() + 1.0 + items[i].shift;
    if (items[i].active) order.push_back(i);
  }

  std::vector<double> alpha(n, 0.0);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
  double wb = 0.0;

  auto gradient = [&](std::size_t i) {
    const double f = x.row(static_cast<Eigen::Index>(i)).dot(w) + wb;
    return data.labels[i] * f - 1.0 + items[i].shift * alpha[i];
  };
  auto exact_violation = [&] {
    double worst = 0.0;
    for (std::size_t i : order) {
      worst = std::max(worst,
                       std::abs(projected_gradient(gradient(i), alpha[i], items[i].upper)));
    }
    return worst;
  };

  auto dual_value = [&](const Eigen::VectorXd& v, double vb) {
    double sum = 0.5 * (v.squaredNorm() + vb * vb);
    for (std::size_t i : order) sum += 0.5 * items[i].shift * alpha[i] * alpha[i] - alpha[i];
    return sum;
  };

  // Coordinate descent can crawl when the dual is degenerate (many items at
  // a bound, a few nearly collinear free ones). Active-set steps on the free
  // face settle it: along the null space of the face Hessian the dual is
  // linear, so walk to the first bound there; otherwise take a Newton step
  // clamped to the box. Each step is kept only if the dual improves.
  auto polish_step = [&] {
    std::vector<std::size_t> free;
    for (std::size_t i : order) {
      const double g = gradient(i);
      const double upper = items[i].upper;
      if ((alpha[i] > 0.0 && alpha[i] < upper) || (alpha[i] <= 0.0 && g < 0.0) ||
          (alpha[i] >= upper && g > 0.0)) {
        free.push_back(i);
      }
    }
    const auto k = static_cast<Eigen::Index>(free.size());
    if (k == 0 || k > kPolishMaxFree) return false;
    Eigen::MatrixXd z(k, d + 1);
    Eigen::VectorXd grad(k);
    for (Eigen::Index r = 0; r < k; ++r) {
      const std::size_t i = free[static_cast<std::size_t>(r)];
      z.row(r).head(d) = data.labels[i] * x.row(static_cast<Eigen::Index>(i));
      z(r, d) = data.labels[i];
      grad(r) = gradient(i);
    }
    Eigen::MatrixXd m = z * z.transpose();
    for (Eigen::Index r = 0; r < k; ++r) m(r, r) += items[free[static_cast<std::size_t>(r)]].shift;

    Eigen::VectorXd delta;
    double reach = 1.0;
    Eigen::Index blocking = -1;
    // Only strictly interior items may slide along the null space; one at a
    // bound would block the walk before it starts.
    std::vector<Eigen::Index> inner;
    for (Eigen::Index r = 0; r < k; ++r) {
      const std::size_t i = free[static_cast<std::size_t>(r)];
      if (alpha[i] > 0.0 && alpha[i] < items[i].upper) inner.push_back(r);
    }
    if (!inner.empty()) {
      const Eigen::MatrixXd sub = m(inner, inner);
      Eigen::FullPivLU<Eigen::MatrixXd> lu(sub);
      lu.setThreshold(1e-10);
      if (lu.rank() < sub.rows()) {
        const Eigen::MatrixXd basis = lu.kernel();
        const Eigen::VectorXd g_inner = grad(inner);
        const Eigen::VectorXd step =
            -basis * (basis.transpose() * basis).ldlt().solve(basis.transpose() * g_inner);
        if (g_inner.dot(step) < -1e-12 * g_inner.norm() * step.norm()) {
          delta = Eigen::VectorXd::Zero(k);
          delta(inner) = step;
          reach = kInf;
          for (Eigen::Index r : inner) {
            const std::size_t i = free[static_cast<std::size_t>(r)];
            double room = kInf;
            if (delta(r) < 0.0) room = alpha[i] / -delta(r);
            if (delta(r) > 0.0) room = (items[i].upper - alpha[i]) / delta(r);
            if (room < reach) {
              reach = room;
              blocking = r;
            }
          }
          if (!(reach > 0.0) || !std::isfinite(reach)) {
            reach = 1.0;
            blocking = -1;
            delta.resize(0);
          }
        }
      }
    }
    if (delta.size() == 0) delta = -m.completeOrthogonalDecomposition().solve(grad);
    if (!delta.allFinite()) return false;

    const double before = dual_value(w, wb);
    std::vector<double> saved(free.size());
    for (std::size_t r = 0; r < free.size(); ++r) saved[r] = alpha[free[r]];
    double t = reach;
    for (int halving = 0; halving < 7; ++halving, t *= 0.5) {
      Eigen::VectorXd v = w;
      double vb = wb;
      for (Eigen::Index r = 0; r < k; ++r) {
        const std::size_t i = free[static_cast<std::size_t>(r)];
        const std::size_t ri = static_cast<std::size_t>(r);
        alpha[i] = std::clamp(saved[ri] + t * delta(r), 0.0, items[i].upper);
        if (halving == 0 && r == blocking) alpha[i] = delta(r) < 0.0 ? 0.0 : items[i].upper;
        const double step = alpha[i] - saved[ri];
        v += step * z.row(r).head(d).transpose();
        vb += step * z(r, d);
      }
      if (dual_value(v, vb) < before) {
        w = v;
        wb = vb;
        return true;
      }
    }
    for (std::size_t r = 0; r < free.size(); ++r) alpha[free[r]] = saved[r];
    return false;
  };
  auto polish = [&] {
    for (int step = 0; step < kPolishSteps && polish_step(); ++step) {
    }
  };

  Rng rng(params.seed);
  LinearModel model;
  auto& meta = model.train_meta;
  for (int epoch = 0; epoch < params.max_iter; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double max_pg = 0.0;
    for (std::size_t i : order) {
      const double g = gradient(i);
      const double pg = projected_gradient(g, alpha[i], items[i].upper);
      max_pg = std::max(max_pg, std::abs(pg));
      if (std::abs(pg) <= 1e-14) continue;
      const double updated = std::clamp(alpha[i] - g / qdiag[i], 0.0, items[i].upper);
      const double step = (updated - alpha[i]) * data.labels[i];
      alpha[i] = updated;
      w += step * x.row(static_cast<Eigen::Index>(i)).transpose();
      wb += step;
    }
    meta.iterations = epoch + 1;
    if (max_pg <= params.tolerance && exact_violation() <= params.tolerance) {
      meta.converged = true;
      break;
    }
    if ((epoch + 1) % kPolishEvery == 0) polish();
  }

  model.w = w;
  model.bias = wb;
  meta.dual_violation = exact_violation();

  double dual = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    dual += alpha[i] - 0.5 * items[i].shift * alpha[i] * alpha[i];
  }
  dual -= 0.5 * (w.squaredNorm() + wb * wb);
  meta.primal_objective = primal_objective(model, data, params);
  meta.dual_objective = dual;
  meta.duality_gap = meta.primal_objective - dual;
  meta.dual = std::move(alpha);
  meta.dual_upper.resize(n);
  for (std::size_t i = 0; i < n; ++i) meta.dual_upper[i] = items[i].upper;
  return model;
}

Eigen::VectorXd decision_scores(const LinearModel& model, const Eigen::MatrixXd& items) {
  if (static_cast<std::size_t>(items.cols()) != model.dim()) {
    throw Error(ErrorCode::kDimensionMismatch,
                "model has d=" + std::to_string(model.dim()) + ", items have d=" +
                    std::to_string(items.cols()));
  }
  Eigen::VectorXd scores = items * model.w;
  scores.array() += model.bias;
  return scores;
}

Eigen::VectorXd decision_scores(const LinearModel& model, const FeatureMatrix& items) {
  return decision_scores(model, items.data);
}

double primal_objective(const LinearModel& model, const LabeledSet& data,
                        const SvmParams& params) {
  const Eigen::VectorXd f = decision_scores(model, data.features);
  double total = 0.5 * (model.w.squaredNorm() + model.bias * model.bias);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const double c = item_cost(params, i);
    if (c > 0.0) total += c * loss(params.loss, data.labels[i] * f(static_cast<Eigen::Index>(i)));
  }
  return total;
}

namespace {

template <typename T>
void put(std::string& out, const T& value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(std::istream& in, const std::filesystem::path& path) {
  T value{};
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) {
    throw Error(ErrorCode::kTruncatedFile, "model file ends early: " + path.string());
  }
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

}  // namespace

void save_model(const LinearModel& model, const std::filesystem::path& path) {
  std::string bytes = "LSVM";
  put(bytes, std::uint32_t{1});
  put(bytes, static_cast<std::uint32_t>(model.dim()));
  for (Eigen::Index k = 0; k < model.w.size(); ++k) put(bytes, model.w(k));
  put(bytes, model.bias);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()))) {
    throw Error(ErrorCode::kIoError, "cannot write model " + path.string());
  }
}

LinearModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open model " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw Error(ErrorCode::kTruncatedFile, "empty model file");
  if (std::memcmp(magic, "LSVM", 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "not an LSVM model: " + path.string());
  }
  const auto version = take<std::uint32_t>(in, path);
  if (version != 1) {
    throw Error(ErrorCode::kBadMagic, "unsupported model version " + std::to_string(version));
  }
  const auto d = take<std::uint32_t>(in, path);
  LinearModel model;
  model.w.resize(d);
  for (std::uint32_t k = 0; k < d; ++k) model.w(k) = take<double>(in, path);
  model.bias = take<double>(in, path);
  return model;
}

}  // namespace weedout
