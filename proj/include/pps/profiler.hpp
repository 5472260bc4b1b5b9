#pragma once

// Log-profile penalized likelihood.
//
// For fixed theta the nuisance coefficients maximize
//     sum_i l(theta, f; x_i) - n lambda^2 J^2(f),
// i.e. n times the per-observation-average criterion P_n l - lambda^2 J^2.
// log_pl(theta) is the attained maximum on this summed scale, which is the
// scale the sampler exponentiates.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "pps/errors.hpp"
#include "pps/models.hpp"
#include "pps/spline.hpp"

namespace pps {

struct ProfileConfig {
  double lambda = 0.0;
  double grad_tol = 1e-8;
  int max_iter = 100;
  std::optional<Eigen::VectorXd> warm_start;
};

struct ProfileEvaluation {
  double theta = 0.0;
  double log_pl = 0.0;
  SplineFunction eta_hat;
  Eigen::VectorXd eta_slope;  // d coeffs / d theta at the optimum
  double roughness = 0.0;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
};

enum class LambdaRuleKind { sobolev, cube, fixed };

struct LambdaRule {
  LambdaRuleKind kind = LambdaRuleKind::sobolev;
  double value = 0.0;  // only for `fixed`
};

/// sobolev: n^{-k/(2k+1)}; cube: n^{-1/3}; fixed: the given value.
inline double lambda_for(std::size_t n, int k, const LambdaRule& rule) {
  const double nn = static_cast<double>(n);
  switch (rule.kind) {
    case LambdaRuleKind::sobolev:
      return std::pow(nn, -static_cast<double>(k) / (2.0 * k + 1.0));
    case LambdaRuleKind::cube:
      return std::pow(nn, -1.0 / 3.0);
    case LambdaRuleKind::fixed:
      if (!(rule.value > 0.0)) throw ConfigError("fixed lambda must be positive");
      return rule.value;
  }
  return 0.0;
}

inline LambdaRule parse_lambda_rule(std::string_view text) {
  if (text == "sobolev") return {LambdaRuleKind::sobolev, 0.0};
  if (text == "cube") return {LambdaRuleKind::cube, 0.0};
  if (text.starts_with("fixed")) {
    auto open = text.find('('), close = text.rfind(')');
    if (open == std::string_view::npos || close == std::string_view::npos || close <= open + 1)
      throw ConfigError("lambda rule 'fixed' needs a value, e.g. fixed(0.2)");
    double v = 0.0;
    try {
      v = std::stod(std::string(text.substr(open + 1, close - open - 1)));
    } catch (const std::exception&) {
      throw ConfigError("cannot parse lambda rule '" + std::string(text) + "'");
    }
    if (!(v > 0.0)) throw ConfigError("fixed lambda must be positive");
    return {LambdaRuleKind::fixed, v};
  }
  throw ConfigError("unknown lambda rule '" + std::string(text) + "' (sobolev, cube, fixed(v))");
}

inline std::string to_string(const LambdaRule& r) {
  switch (r.kind) {
    case LambdaRuleKind::sobolev:
      return "sobolev";
    case LambdaRuleKind::cube:
      return "cube";
    case LambdaRuleKind::fixed:
      return "fixed(" + format_double(r.value) + ")";
  }
  return "";
}

template <SemiparametricModel Model>
class Profiler {
 public:
  using Observation = typename Model::Observation;

  struct InnerResult {
    Eigen::VectorXd coeffs;
    Eigen::VectorXd slope;
    double objective = 0.0;
    double roughness = 0.0;
    int iterations = 0;
    bool converged = false;
    double grad_norm = 0.0;
  };

  Profiler(std::span<const Observation> data, BasisPtr basis, ProfileConfig cfg)
      : design_(data, *basis), basis_(std::move(basis)), penalty_(penalty_matrix(basis_)), cfg_(std::move(cfg)) {
    if (data.empty()) throw InvalidInput("profiler needs at least one observation");
    if (!(cfg_.lambda > 0.0)) throw InvalidInput("smoothing parameter lambda must be positive");
    if (!(cfg_.grad_tol > 0.0)) throw InvalidInput("grad_tol must be positive");
    if (Model::centered) {
      // Orthonormal basis of the coefficients satisfying sum_i f(s_i) = 0.
      const Eigen::VectorXd a = design_.column_sums();
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
      const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(a.size(), a.size());
      null_basis_ = q.rightCols(a.size() - 1);
      null_basis_ext_ = null_basis_.cast<long double>();
    }
  }

  /// Knots at quantiles of the observed spline covariate, capped at `max_knots`.
  static Profiler with_quantile_knots(std::span<const Observation> data, const ModelSpec& spec, ProfileConfig cfg,
                                      int max_knots = 35) {
    std::vector<double> s;
    s.reserve(data.size());
    for (const auto& o : data) s.push_back(Model::spline_argument(o));
    auto basis = build_basis(spec.lo, spec.hi, spec.k, quantile_knots(std::move(s), spec.lo, spec.hi, max_knots));
    return Profiler(data, std::move(basis), std::move(cfg));
  }

  std::size_t n() const { return design_.size(); }
  double lambda() const { return cfg_.lambda; }
  const ProfileConfig& config() const { return cfg_; }
  /// Weight of J^2 in the summed objective: n lambda^2.
  double penalty_weight() const { return static_cast<double>(n()) * cfg_.lambda * cfg_.lambda; }
  const BasisPtr& basis() const { return basis_; }
  const PenaltyMatrix& penalty() const { return penalty_; }
  const DesignCache<Model>& design() const { return design_; }

  double objective(double theta, const Eigen::VectorXd& coeffs, double weight) const {
    return static_cast<double>(objective_ext(theta, ExtVector(coeffs.cast<long double>()), weight));
  }

  /// Damped Newton with a Levenberg shift on sum_i l - weight * J^2. The iterate is
  /// carried in extended precision so that the gradient test is not swamped by the
  /// rounding of the coefficients against the large penalty curvature.
  InnerResult maximize(double theta, double weight, const Eigen::VectorXd* warm = nullptr) const {
    const Eigen::Index p = basis_->size();
    const bool centered = Model::centered;
    const Eigen::Index r = centered ? p - 1 : p;

    ExtVector gamma = ExtVector::Zero(r);
    const Eigen::VectorXd* start = warm ? warm : (cfg_.warm_start ? &*cfg_.warm_start : nullptr);
    if (start) {
      if (start->size() != p) throw InvalidInput("warm start has the wrong dimension");
      const ExtVector s = start->cast<long double>();
      gamma = centered ? ExtVector(null_basis_ext_.transpose() * s) : s;
    }
    auto to_full = [&](const ExtVector& g) -> ExtVector { return centered ? ExtVector(null_basis_ext_ * g) : g; };

    InnerResult res;
    ExtVector coeffs = to_full(gamma);
    long double value = 0.0L;
    for (int it = 0;; ++it) {
      const Eigen::VectorXd cd = coeffs.cast<double>();
      LoglikDerivatives d = loglik_grad_hess<Model>(design_, theta, cd);
      value = d.value - weight * penalty_.quadratic(coeffs);
      if (!std::isfinite(static_cast<double>(value)))
        throw NumericalError("penalized objective is not finite at theta=" + format_double(theta));
      const ExtVector full_grad = d.gradient.cast<long double>() - 2.0L * weight * penalty_.apply(coeffs);
      const Eigen::VectorXd g =
          (centered ? ExtVector(null_basis_ext_.transpose() * full_grad) : full_grad).template cast<double>();
      d.hessian -= 2.0 * weight * penalty_.omega;
      res.grad_norm = g.lpNorm<Eigen::Infinity>();
      res.iterations = it;
      const bool done = res.grad_norm <= cfg_.grad_tol;
      if (!done && it >= cfg_.max_iter) break;

      Eigen::MatrixXd a = centered ? Eigen::MatrixXd(-null_basis_.transpose() * d.hessian * null_basis_)
                                   : Eigen::MatrixXd(-d.hessian);
      Eigen::LLT<Eigen::MatrixXd> llt(a);
      double mu = 1e-8;
      while (llt.info() != Eigen::Success) {
        if (mu > 1e20) throw NumericalError("Newton system could not be regularized");
        llt.compute(a + mu * Eigen::MatrixXd::Identity(r, r));
        mu *= 2.0;
      }
      if (done) {
        // implicit function theorem: d gamma / d theta = A^{-1} d grad / d theta
        const Eigen::VectorXd cross = centered ? Eigen::VectorXd(null_basis_.transpose() * d.theta_cross)
                                               : d.theta_cross;
        const Eigen::VectorXd sl = llt.solve(cross);
        res.slope = centered ? Eigen::VectorXd(null_basis_ * sl) : sl;
        res.converged = true;
        break;
      }
      const ExtVector step = llt.solve(g).cast<long double>();

      const long double slack = 1e-13L * (1.0L + std::abs(value));
      long double t = 1.0L;
      bool moved = false;
      while (t > 1e-12L) {
        const ExtVector trial_gamma = gamma + t * step;
        const ExtVector trial = to_full(trial_gamma);
        const long double v = objective_ext(theta, trial, weight);
        if (std::isfinite(static_cast<double>(v)) && v >= value - slack) {
          gamma = trial_gamma;
          coeffs = trial;
          moved = true;
          break;
        }
        t *= 0.5L;
      }
      if (!moved) break;
    }
    res.coeffs = coeffs.cast<double>();
    res.objective = static_cast<double>(value);
    res.roughness = penalty_.quadratic(res.coeffs);
    return res;
  }

  ProfileEvaluation evaluate(double theta, const Eigen::VectorXd* warm = nullptr) const {
    InnerResult r = maximize(theta, penalty_weight(), warm);
    ProfileEvaluation ev;
    ev.theta = theta;
    ev.log_pl = r.objective;
    ev.roughness = r.roughness;
    ev.eta_hat = SplineFunction(basis_, std::move(r.coeffs));
    ev.eta_slope = std::move(r.slope);
    ev.iterations = r.iterations;
    ev.converged = r.converged;
    ev.grad_norm = r.grad_norm;
    return ev;
  }

 private:
  DesignCache<Model> design_;
  BasisPtr basis_;
  PenaltyMatrix penalty_;
  ProfileConfig cfg_;
  Eigen::MatrixXd null_basis_;
  Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic> null_basis_ext_;

  using ExtVector = PenaltyMatrix::ExtVector;

  long double objective_ext(double theta, const ExtVector& coeffs, double weight) const {
    const Eigen::VectorXd cd = coeffs.cast<double>();
    long double s = 0.0L;
    for (std::size_t i = 0; i < design_.size(); ++i)
      s += Model::link(design_.obs[i], theta * design_.x[i] + design_.spline_value(i, cd)).value;
    return s - weight * penalty_.quadratic(coeffs);
  }
};

template <SemiparametricModel Model>
ProfileEvaluation profile_eval(const Profiler<Model>& profiler, double theta, const Eigen::VectorXd* warm = nullptr) {
  return profiler.evaluate(theta, warm);
}

struct MpleResult {
  double theta_hat = 0.0;
  ProfileEvaluation eval;
  bool at_boundary = false;
  int evaluations = 0;
};

/// theta_hat = argmax log_pl over `bounds`: golden section to |dtheta| <= tol, then one
/// parabolic refinement step. Inner solves are warm-started from the nearest evaluated theta.
template <SemiparametricModel Model>
MpleResult penalized_mple(const Profiler<Model>& profiler, double lo, double hi, double tol = 1e-6) {
  if (!(lo < hi)) throw InvalidInput("penalized_mple: empty theta bracket");
  MpleResult out;
  Eigen::VectorXd warm;
  auto eval = [&](double theta) {
    ProfileEvaluation ev = profiler.evaluate(theta, warm.size() ? &warm : nullptr);
    if (!ev.converged) {
      // one retry from the zero function before giving up
      ev = profiler.evaluate(theta, nullptr);
      if (!ev.converged)
        throw NumericalError("penalized_mple: inner solve failed at theta=" + format_double(theta));
    }
    warm = ev.eta_hat.coeffs;
    ++out.evaluations;
    return ev;
  };

  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - ratio * (b - a), x2 = a + ratio * (b - a);
  ProfileEvaluation e1 = eval(x1), e2 = eval(x2);
  while (b - a > tol) {
    if (e1.log_pl >= e2.log_pl) {
      b = x2;
      x2 = x1;
      e2 = e1;
      x1 = b - ratio * (b - a);
      e1 = eval(x1);
    } else {
      a = x1;
      x1 = x2;
      e1 = e2;
      x2 = a + ratio * (b - a);
      e2 = eval(x2);
    }
  }
  ProfileEvaluation best = e1.log_pl >= e2.log_pl ? e1 : e2;

  // Parabola through (x1, x2) and the midpoint of the final bracket.
  const double xm = 0.5 * (a + b);
  if (xm != x1 && xm != x2 && x1 != x2) {
    const ProfileEvaluation em = eval(xm);
    if (em.log_pl > best.log_pl) best = em;
    const double f1 = e1.log_pl, f2 = e2.log_pl, fm = em.log_pl;
    const double num = (xm - x1) * (xm - x1) * (fm - f2) - (xm - x2) * (xm - x2) * (fm - f1);
    const double den = (xm - x1) * (fm - f2) - (xm - x2) * (fm - f1);
    if (den != 0.0) {
      const double xv = xm - 0.5 * num / den;
      if (xv > a && xv < b) {
        const ProfileEvaluation ev = eval(xv);
        if (ev.log_pl > best.log_pl) best = ev;
      }
    }
  }
  // A monotone profile flattens numerically near the bound; endpoints settle it.
  bool edge = false;
  if (a - lo < 0.1 * (hi - lo) || hi - b < 0.1 * (hi - lo)) {
    for (double x : {lo, hi}) {
      ProfileEvaluation ev = eval(x);
      if (ev.log_pl >= best.log_pl) {
        best = std::move(ev);
        edge = true;
      }
    }
  }
  out.theta_hat = best.theta;
  out.eval = std::move(best);
  out.at_boundary = edge || out.theta_hat - lo < 10 * tol || hi - out.theta_hat < 10 * tol;
  return out;
}

/// Delta(theta) = n^{-1} (log_pl(theta) - log_pl(theta_ref)).
template <SemiparametricModel Model>
double log_profile_ratio(const Profiler<Model>& profiler, double theta, double theta_ref) {
  const ProfileEvaluation ref = profiler.evaluate(theta_ref);
  const ProfileEvaluation at = profiler.evaluate(theta, &ref.eta_hat.coeffs);
  if (!ref.converged || !at.converged) throw NumericalError("log_profile_ratio: inner solve did not converge");
  return (at.log_pl - ref.log_pl) / static_cast<double>(profiler.n());
}

/// -d^2 log_pl / dtheta^2 by central differences; used only to tune proposals and prior width.
template <SemiparametricModel Model>
double profile_curvature(const Profiler<Model>& profiler, const ProfileEvaluation& at, double step) {
  const ProfileEvaluation up = profiler.evaluate(at.theta + step, &at.eta_hat.coeffs);
  const ProfileEvaluation dn = profiler.evaluate(at.theta - step, &at.eta_hat.coeffs);
  if (!up.converged || !dn.converged) throw NumericalError("profile_curvature: inner solve did not converge");
  return -(up.log_pl - 2.0 * at.log_pl + dn.log_pl) / (step * step);
}

}  // namespace pps
