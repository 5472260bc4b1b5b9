#pragma once

// The two semiparametric models: partly linear normal regression observed
// through current status data, and semiparametric logistic regression.
//
// Both are single-index in (theta, f): each observation depends on the
// parameters only through the predictor m = theta * x + f(s), where x is the
// linear covariate (U or W) and s the spline covariate (V or Z). A model
// supplies the per-observation log-likelihood as a function of m together
// with its first two m-derivatives; everything else is generic.

#include <cmath>
#include <algorithm>
#include <concepts>
#include <numbers>
#include <cstdint>
#include <functional>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "pps/errors.hpp"
#include "pps/spline.hpp"
#include "pps/stats.hpp"

namespace pps {

using Rng = std::mt19937_64;

/// Probability floor for Phi tails in the current status likelihood.
inline constexpr double kProbabilityClamp = 1e-10;

enum class ModelVariant { partly_linear, logistic };

inline std::string_view to_string(ModelVariant v) {
  return v == ModelVariant::partly_linear ? "partly-linear" : "logistic";
}

inline ModelVariant parse_model_variant(std::string_view name) {
  if (name == "partly-linear" || name == "partly_linear" || name == "pl") return ModelVariant::partly_linear;
  if (name == "logistic" || name == "semiparametric-logistic") return ModelVariant::logistic;
  throw ConfigError("unknown model '" + std::string(name) + "' (expected partly-linear or logistic)");
}

struct ModelSpec {
  ModelVariant variant = ModelVariant::logistic;
  double lo = 0.0;
  double hi = 1.0;
  int k = 2;
  bool centered = false;
  int theta_dim = 1;

  static ModelSpec partly_linear(int k = 2) { return {ModelVariant::partly_linear, 0.0, 1.0, k, true, 1}; }
  static ModelSpec logistic(int k = 2) { return {ModelVariant::logistic, 0.0, 1.0, k, false, 1}; }
};

struct PartlyLinearObservation {
  double c = 0.0;
  int delta = 0;
  double u = 0.0;
  double v = 0.0;
  bool operator==(const PartlyLinearObservation&) const = default;
};

struct LogisticObservation {
  int y = 0;
  double w = 0.0;
  double z = 0.0;
  bool operator==(const LogisticObservation&) const = default;
};

/// Log-likelihood of one observation and its first two derivatives in the predictor.
struct LinkTerms {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

struct PartlyLinearModel {
  using Observation = PartlyLinearObservation;
  static constexpr ModelVariant variant = ModelVariant::partly_linear;
  static constexpr bool centered = true;

  static double spline_argument(const Observation& o) { return o.v; }
  static double theta_covariate(const Observation& o) { return o.u; }

  /// delta log Phi(q) + (1 - delta) log(1 - Phi(q)), q = c - m, with the
  /// probability clamped to [1e-10, 1 - 1e-10]; derivatives vanish where clamped.
  static LinkTerms link(const Observation& o, double predictor) {
    const double q = o.c - predictor;
    const double p = o.delta == 1 ? normal_cdf(q) : normal_sf(q);
    if (p < kProbabilityClamp) return {std::log(kProbabilityClamp), 0.0, 0.0};
    if (p > 1.0 - kProbabilityClamp) return {std::log1p(-kProbabilityClamp), 0.0, 0.0};
    const double ratio = normal_pdf(q) / p;
    if (o.delta == 1) return {std::log(p), -ratio, -ratio * (q + ratio)};
    return {std::log(p), ratio, -ratio * (ratio - q)};
  }

  static void validate(const Observation& o) {
    if (o.delta != 0 && o.delta != 1) throw InvalidInput("current status indicator must be 0 or 1");
    if (!std::isfinite(o.c) || !std::isfinite(o.u) || !std::isfinite(o.v))
      throw InvalidInput("partly linear observation has non-finite fields");
  }
};

struct LogisticModel {
  using Observation = LogisticObservation;
  static constexpr ModelVariant variant = ModelVariant::logistic;
  static constexpr bool centered = false;

  static double spline_argument(const Observation& o) { return o.z; }
  static double theta_covariate(const Observation& o) { return o.w; }

  /// y log F(m) + (1 - y) log(1 - F(m)) = y m - log(1 + e^m).
  static LinkTerms link(const Observation& o, double predictor) {
    const double e = std::exp(-std::abs(predictor));
    const double f = predictor >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
    const double sp = std::max(predictor, 0.0) + std::log1p(e);
    return {o.y * predictor - sp, o.y - f, -f * (1.0 - f)};
  }

  static void validate(const Observation& o) {
    if (o.y != 0 && o.y != 1) throw InvalidInput("logistic response must be 0 or 1");
    if (!(o.w >= 0.0 && o.w <= 1.0) || !(o.z >= 0.0 && o.z <= 1.0))
      throw InvalidInput("logistic covariates must lie in [0, 1]");
  }
};

template <class M>
concept SemiparametricModel = requires(const typename M::Observation& o, double m) {
  { M::spline_argument(o) } -> std::convertible_to<double>;
  { M::theta_covariate(o) } -> std::convertible_to<double>;
  { M::link(o, m) } -> std::same_as<LinkTerms>;
  { M::centered } -> std::convertible_to<bool>;
  M::validate(o);
};

template <SemiparametricModel Model>
using Dataset = std::vector<typename Model::Observation>;

inline double loglik_partly_linear(double theta, const SplineFunction& f, const PartlyLinearObservation& obs) {
  return PartlyLinearModel::link(obs, theta * obs.u + f(obs.v)).value;
}

inline double loglik_logistic(double theta, const SplineFunction& eta, const LogisticObservation& obs) {
  return LogisticModel::link(obs, theta * obs.w + eta(obs.z)).value;
}

/// Analytic theta-score x * dl/dm of one observation.
template <SemiparametricModel Model>
double theta_score(double theta, const std::function<double(double)>& f, const typename Model::Observation& o) {
  const double x = Model::theta_covariate(o);
  return x * Model::link(o, theta * x + f(Model::spline_argument(o))).d1;
}

/// Basis values of every observation, computed once per (data, basis).
template <SemiparametricModel Model>
struct DesignCache {
  std::vector<typename Model::Observation> obs;
  std::vector<double> x;
  std::vector<int> first;
  std::vector<double> values;  // n * order, row-major
  int order = 0;
  int n_basis = 0;

  DesignCache() = default;
  DesignCache(std::span<const typename Model::Observation> data, const SplineBasis& basis)
      : obs(data.begin(), data.end()), order(basis.order()), n_basis(basis.size()) {
    x.reserve(obs.size());
    first.reserve(obs.size());
    values.reserve(obs.size() * static_cast<std::size_t>(order));
    for (const auto& o : obs) {
      Model::validate(o);
      const double s = Model::spline_argument(o);
      if (!basis.contains(s)) throw InvalidInput("spline covariate " + std::to_string(s) + " outside the basis interval");
      const BasisRow r = basis.row(s);
      x.push_back(Model::theta_covariate(o));
      first.push_back(r.first);
      values.insert(values.end(), r.values.begin(), r.values.end());
    }
  }

  std::size_t size() const { return obs.size(); }

  double spline_value(std::size_t i, const Eigen::VectorXd& c) const {
    const double* b = values.data() + i * order;
    double s = 0.0;
    for (int j = 0; j < order; ++j) s += b[j] * c[first[i] + j];
    return s;
  }

  /// Sum over observations of the basis rows; the centering constraint is column_sums . c = 0.
  Eigen::VectorXd column_sums() const {
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n_basis);
    for (std::size_t i = 0; i < size(); ++i)
      for (int j = 0; j < order; ++j) a[first[i] + j] += values[i * order + j];
    return a;
  }
};

struct LoglikDerivatives {
  double value = 0.0;
  Eigen::VectorXd gradient;
  Eigen::MatrixXd hessian;
  Eigen::VectorXd theta_cross;  // d^2 / (dtheta dcoeff), always filled
};

enum class IncludeTheta : bool { no = false, yes = true };

/// Sum of log-likelihoods with exact gradient and Hessian in the spline coefficients.
/// With IncludeTheta::yes, theta is prepended as coordinate 0.
template <SemiparametricModel Model>
LoglikDerivatives loglik_grad_hess(const DesignCache<Model>& design, double theta, const Eigen::VectorXd& coeffs,
                                   IncludeTheta with_theta = IncludeTheta::no) {
  if (coeffs.size() != design.n_basis) throw InvalidInput("loglik_grad_hess: coefficient dimension mismatch");
  const int off = with_theta == IncludeTheta::yes ? 1 : 0;
  const int dim = design.n_basis + off;
  LoglikDerivatives out;
  out.gradient = Eigen::VectorXd::Zero(dim);
  out.hessian = Eigen::MatrixXd::Zero(dim, dim);
  out.theta_cross = Eigen::VectorXd::Zero(design.n_basis);
  const int ord = design.order;
  const int sq = ord * ord;
  // Per-span ord x ord blocks; the coefficient Hessian is their banded sum.
  std::vector<double> blocks(static_cast<std::size_t>(design.n_basis) * sq, 0.0);
  double* grad = out.gradient.data() + off;
  for (std::size_t i = 0; i < design.size(); ++i) {
    const double m = theta * design.x[i] + design.spline_value(i, coeffs);
    const LinkTerms t = Model::link(design.obs[i], m);
    out.value += t.value;
    const double* b = design.values.data() + i * ord;
    const int f = design.first[i];
    double* blk = blocks.data() + static_cast<std::size_t>(f) * sq;
    for (int a = 0; a < ord; ++a) {
      grad[f + a] += t.d1 * b[a];
      const double wa = t.d2 * b[a];
      for (int c = 0; c < ord; ++c) blk[a * ord + c] += wa * b[c];
    }
    const double wx = t.d2 * design.x[i];
    for (int a = 0; a < ord; ++a) out.theta_cross[f + a] += wx * b[a];
    if (off) {
      out.gradient[0] += t.d1 * design.x[i];
      out.hessian(0, 0) += wx * design.x[i];
    }
  }
  if (off) out.hessian.row(0).tail(design.n_basis) = out.theta_cross.transpose();
  for (int f = 0; f < design.n_basis; ++f) {
    const double* blk = blocks.data() + static_cast<std::size_t>(f) * sq;
    for (int a = 0; a < ord && f + a < design.n_basis; ++a)
      for (int c = 0; c < ord && f + c < design.n_basis; ++c) out.hessian(off + f + a, off + f + c) += blk[a * ord + c];
  }
  if (off) out.hessian.col(0).tail(design.n_basis) = out.hessian.row(0).tail(design.n_basis).transpose();
  return out;
}

template <SemiparametricModel Model>
LoglikDerivatives loglik_grad_hess(std::span<const typename Model::Observation> data, const SplineBasis& basis,
                                   double theta, const Eigen::VectorXd& coeffs,
                                   IncludeTheta with_theta = IncludeTheta::no) {
  return loglik_grad_hess<Model>(DesignCache<Model>(data, basis), theta, coeffs, with_theta);
}

// ---------------------------------------------------------------------------
// Truth functions and simulation designs.

using ScalarFunction = std::function<double(double)>;

struct NamedTruth {
  std::string name;
  ScalarFunction fn;
};

/// Known truths: "sin2pi" (sin 2 pi v, mean zero on [0, 1]), "cospi" (cos pi z - z),
/// "zero", "linear" (z - 1/2).
inline NamedTruth truth_by_name(std::string_view name) {
  if (name == "sin2pi") return {"sin2pi", [](double v) { return std::sin(2.0 * std::numbers::pi * v); }};
  if (name == "cospi") return {"cospi", [](double z) { return std::cos(std::numbers::pi * z) - z; }};
  if (name == "zero") return {"zero", [](double) { return 0.0; }};
  if (name == "linear") return {"linear", [](double z) { return z - 0.5; }};
  throw ConfigError("unknown truth function '" + std::string(name) + "'");
}

inline NamedTruth default_truth(ModelVariant v) {
  return truth_by_name(v == ModelVariant::partly_linear ? "sin2pi" : "cospi");
}

/// Covariate law: S (the spline covariate) marginally, then X (the linear covariate) given S.
/// Censoring times for current status data are Uniform(censor_lo, censor_hi).
struct CovariateDesign {
  std::function<double(Rng&)> sample_s = [](Rng& g) { return std::uniform_real_distribution<double>(0.0, 1.0)(g); };
  std::function<double(Rng&, double)> sample_x_given_s = [](Rng& g, double) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(g);
  };
  double censor_lo = -1.0;
  double censor_hi = 2.0;
};

inline Dataset<PartlyLinearModel> simulate(PartlyLinearModel, double theta0, const ScalarFunction& f0, int n,
                                           std::uint64_t seed, const CovariateDesign& design = {}) {
  if (n < 1) throw InvalidInput("simulate: n must be >= 1");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> censor(design.censor_lo, design.censor_hi);
  Dataset<PartlyLinearModel> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double v = design.sample_s(rng);
    const double u = design.sample_x_given_s(rng, v);
    const double c = censor(rng);
    const double y = theta0 * u + f0(v) + noise(rng);
    out.push_back({c, y <= c ? 1 : 0, u, v});
  }
  return out;
}

inline Dataset<LogisticModel> simulate(LogisticModel, double theta0, const ScalarFunction& eta0, int n,
                                       std::uint64_t seed, const CovariateDesign& design = {}) {
  if (n < 1) throw InvalidInput("simulate: n must be >= 1");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Dataset<LogisticModel> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double z = design.sample_s(rng);
    const double w = design.sample_x_given_s(rng, z);
    const double p = logistic(theta0 * w + eta0(z));
    out.push_back({unif(rng) < p ? 1 : 0, w, z});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Efficient score machinery at the truth.

template <SemiparametricModel Model>
struct EfficientScoreInfo {
  SplineFunction h0;
  double info = 0.0;
  std::function<double(const typename Model::Observation&)> score_fn;
};

struct EfficientScoreSettings {
  int grid_points = 65;
  int draws_per_grid_point = 50000;
  int info_draws = 400000;
  int smoothing_knots = 15;
  std::uint64_t seed = 20240611;
};

namespace detail {

/// Conditional information weight E[Q^2 | x, s] (partly linear, one censoring draw)
/// or F'(m) (logistic) for the predictor m at the truth.
inline double information_weight(PartlyLinearModel, Rng& rng, const CovariateDesign& d, double predictor) {
  const double c = std::uniform_real_distribution<double>(d.censor_lo, d.censor_hi)(rng);
  const double q = c - predictor;
  const double p = normal_cdf(q), s = normal_sf(q);
  if (p <= 0.0 || s <= 0.0) return 0.0;
  const double phi = normal_pdf(q);
  return phi * phi / (p * s);
}

inline double information_weight(LogisticModel, Rng&, const CovariateDesign&, double predictor) {
  const double f = logistic(predictor);
  return f * (1.0 - f);
}

}  // namespace detail

/// Least favorable direction h0(s) = E[X w | S = s] / E[w | S = s] by Monte Carlo on a grid,
/// smoothed into a cubic spline; efficient information E[w (X - h0(S))^2] by Monte Carlo.
/// For current status data w = E[Q^2 | U, V, C] = phi(q)^2 / (Phi(q)(1 - Phi(q))), the
/// conditional second moment of the score factor Q given the inspection time.
template <SemiparametricModel Model>
EfficientScoreInfo<Model> efficient_score_info(Model model, const ModelSpec& spec, double theta0,
                                               const ScalarFunction& eta0, const CovariateDesign& design = {},
                                               const EfficientScoreSettings& cfg = {}) {
  const int g = cfg.grid_points;
  std::vector<double> grid(g), h(g);
  double mean_cond_var = 0.0;
  for (int i = 0; i < g; ++i) {
    const double s = spec.lo + (spec.hi - spec.lo) * i / (g - 1.0);
    const double es = eta0(s);
    Rng rng(cfg.seed);  // common random numbers across the grid
    double num = 0.0, den = 0.0, sx = 0.0, sxx = 0.0;
    for (int m = 0; m < cfg.draws_per_grid_point; ++m) {
      const double x = design.sample_x_given_s(rng, s);
      const double w = detail::information_weight(model, rng, design, theta0 * x + es);
      num += x * w;
      den += w;
      sx += x;
      sxx += x * x;
    }
    const double nd = cfg.draws_per_grid_point;
    mean_cond_var += std::max(0.0, sxx / nd - (sx / nd) * (sx / nd)) / g;
    if (!(den > 0.0)) throw NumericalError("efficient_score_info: vanishing information weight on the grid");
    grid[i] = s;
    h[i] = num / den;
  }
  if (mean_cond_var <= 1e-12)
    throw IdentifiabilityError("efficient_score_info: Var(X | S) is zero; theta is not identifiable");

  std::vector<double> knots;
  for (int j = 1; j <= cfg.smoothing_knots; ++j)
    knots.push_back(spec.lo + (spec.hi - spec.lo) * j / (cfg.smoothing_knots + 1.0));
  auto basis = build_basis(spec.lo, spec.hi, 2, knots);
  EfficientScoreInfo<Model> out;
  out.h0 = fit_least_squares(basis, grid, h);

  Rng rng(mix64(cfg.seed));
  double acc = 0.0;
  for (int m = 0; m < cfg.info_draws; ++m) {
    const double s = design.sample_s(rng);
    const double x = design.sample_x_given_s(rng, s);
    const double w = detail::information_weight(model, rng, design, theta0 * x + eta0(s));
    const double r = x - out.h0(s);
    acc += w * r * r;
  }
  out.info = acc / cfg.info_draws;
  if (!(out.info > 0.0)) throw IdentifiabilityError("efficient_score_info: efficient information is not positive");

  const SplineFunction h0 = out.h0;
  out.score_fn = [h0, theta0, eta0](const typename Model::Observation& o) {
    const double s = Model::spline_argument(o);
    const double x = Model::theta_covariate(o);
    return (x - h0(s)) * Model::link(o, theta0 * x + eta0(s)).d1;
  };
  return out;
}

// ---------------------------------------------------------------------------
// Dataset CSV: header row, then one observation per line.

inline void write_csv(std::ostream& os, std::span<const PartlyLinearObservation> data) {
  os << "c,delta,u,v\n";
  for (const auto& o : data)
    os << format_double(o.c) << ',' << o.delta << ',' << format_double(o.u) << ',' << format_double(o.v) << '\n';
}

inline void write_csv(std::ostream& os, std::span<const LogisticObservation> data) {
  os << "y,w,z\n";
  for (const auto& o : data) os << o.y << ',' << format_double(o.w) << ',' << format_double(o.z) << '\n';
}

namespace detail {

inline std::vector<std::vector<double>> read_numeric_csv(std::istream& is, std::string_view expected_header) {
  std::string line;
  while (std::getline(is, line) && (line.empty() || line[0] == '#')) {
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected_header)
    throw InvalidInput("dataset CSV header '" + line + "' does not match '" + std::string(expected_header) + "'");
  const auto width = static_cast<std::size_t>(std::count(expected_header.begin(), expected_header.end(), ',') + 1);
  std::vector<std::vector<double>> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw InvalidInput("dataset CSV: cannot parse '" + cell + "'");
      }
      if (used != cell.size()) throw InvalidInput("dataset CSV: trailing characters in '" + cell + "'");
      row.push_back(v);
    }
    if (row.size() != width) throw InvalidInput("dataset CSV: wrong number of columns in '" + line + "'");
    rows.push_back(std::move(row));
  }
  return rows;
}

inline int as_indicator(double v) {
  if (v != 0.0 && v != 1.0) throw InvalidInput("dataset CSV: indicator column must be 0 or 1");
  return static_cast<int>(v);
}

}  // namespace detail

inline Dataset<PartlyLinearModel> read_csv(PartlyLinearModel, std::istream& is) {
  Dataset<PartlyLinearModel> out;
  for (const auto& r : detail::read_numeric_csv(is, "c,delta,u,v")) {
    out.push_back({r[0], detail::as_indicator(r[1]), r[2], r[3]});
    PartlyLinearModel::validate(out.back());
  }
  return out;
}

inline Dataset<LogisticModel> read_csv(LogisticModel, std::istream& is) {
  Dataset<LogisticModel> out;
  for (const auto& r : detail::read_numeric_csv(is, "y,w,z")) {
    out.push_back({detail::as_indicator(r[0]), r[1], r[2]});
    LogisticModel::validate(out.back());
  }
  return out;
}

}  // namespace pps
