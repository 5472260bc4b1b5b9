#pragma once

// Random-walk Metropolis over theta targeting rho(theta) * pl_lambda(theta).

#include <cmath>
#include <concepts>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "pps/errors.hpp"
#include "pps/profiler.hpp"
#include "pps/stats.hpp"

namespace pps {

/// Anything that can report log_pl at theta, warm-started from a coefficient vector.
template <class T>
concept ProfileTarget = requires(const T& t, double theta, const Eigen::VectorXd* warm) {
  { t.evaluate(theta, warm) } -> std::same_as<ProfileEvaluation>;
  { t.n() } -> std::convertible_to<std::size_t>;
};

/// Exact Gaussian log-target N(mean, sd^2) exposed through the profile interface.
struct GaussianProfileTarget {
  double mean = 0.0;
  double sd = 1.0;
  std::size_t n_obs = 1;

  ProfileEvaluation evaluate(double theta, const Eigen::VectorXd* = nullptr) const {
    ProfileEvaluation ev;
    ev.theta = theta;
    const double z = (theta - mean) / sd;
    ev.log_pl = -0.5 * z * z;
    ev.converged = true;
    return ev;
  }
  std::size_t n() const { return n_obs; }
};

class Prior {
 public:
  enum class Kind { flat, gaussian };

  static Prior flat(double lo, double hi) {
    if (!(lo < hi)) throw ConfigError("flat prior needs lo < hi");
    return Prior(Kind::flat, lo, hi);
  }
  static Prior gaussian(double mean, double sd) {
    if (!(sd > 0.0)) throw ConfigError("gaussian prior needs sd > 0");
    return Prior(Kind::gaussian, mean, sd);
  }

  Kind kind() const { return kind_; }
  double a() const { return a_; }
  double b() const { return b_; }

  bool in_support(double theta) const { return kind_ == Kind::gaussian || (theta >= a_ && theta <= b_); }

  /// Log density up to a constant; -inf off the support.
  double log_density(double theta) const {
    if (kind_ == Kind::flat) return in_support(theta) ? -std::log(b_ - a_) : -INFINITY;
    const double z = (theta - a_) / b_;
    return -0.5 * z * z - std::log(b_);
  }

  double center() const { return kind_ == Kind::flat ? 0.5 * (a_ + b_) : a_; }

 private:
  Prior(Kind k, double a, double b) : kind_(k), a_(a), b_(b) {}
  Kind kind_;
  double a_, b_;
};

struct McmcConfig {
  int n_iter = 25000;
  int burn_in = 5000;
  double proposal_sd = 0.1;
  bool adapt = true;
  double target_acceptance = 0.35;
  std::uint64_t seed = 1;
  std::optional<double> init;

  void validate() const {
    if (n_iter < 1 || burn_in < 0 || burn_in >= n_iter) throw ConfigError("MCMC config needs 0 <= burn_in < n_iter");
    if (!(proposal_sd > 0.0)) throw ConfigError("proposal_sd must be positive");
  }
};

struct ChainRecord {
  int iter = 0;
  double theta = 0.0;
  bool accepted = false;
  double log_post = 0.0;
};

struct Chain {
  std::vector<double> draws;  // post burn-in
  std::vector<ChainRecord> trace;
  double acceptance_rate = 0.0;  // post burn-in
  int n_inner_failures = 0;
  std::uint64_t seed = 0;
  std::size_t n_obs = 0;
  int burn_in = 0;
  double final_proposal_sd = 0.0;
};

/// Metropolis with symmetric Gaussian proposals. The proposal sd is adapted
/// (Robbins-Monro on log sd toward `target_acceptance`) during burn-in only.
/// Proposals whose inner solve fails are rejected and counted; more than 1%
/// failures aborts the chain.
template <ProfileTarget Target>
Chain run_chain(const Target& target, const Prior& prior, const McmcConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  double theta = cfg.init.value_or(prior.center());
  if (!prior.in_support(theta)) throw ConfigError("initial theta lies outside the prior support");
  ProfileEvaluation cur = target.evaluate(theta, nullptr);
  if (!cur.converged) throw NumericalError("run_chain: inner solve failed at the initial theta");
  double log_post = prior.log_density(theta) + cur.log_pl;
  if (!std::isfinite(log_post)) throw NumericalError("run_chain: initial log posterior is not finite");
  Eigen::VectorXd warm = cur.eta_hat.coeffs;
  Eigen::VectorXd slope = cur.eta_slope;
  Eigen::VectorXd start;

  Chain chain;
  chain.seed = cfg.seed;
  chain.n_obs = target.n();
  chain.burn_in = cfg.burn_in;
  chain.trace.reserve(cfg.n_iter);
  chain.draws.reserve(cfg.n_iter - cfg.burn_in);
  const int max_failures = static_cast<int>(0.01 * cfg.n_iter);
  double log_sd = std::log(cfg.proposal_sd);
  int accepted_post = 0;

  for (int it = 0; it < cfg.n_iter; ++it) {
    const double sd = std::exp(log_sd);
    const double prop = theta + sd * normal(rng);
    const double u = unif(rng);
    bool accepted = false;
    if (prior.in_support(prop)) {
      if (warm.size() && slope.size() == warm.size()) start = warm + (prop - theta) * slope;
      else start = warm;
      ProfileEvaluation ev = target.evaluate(prop, start.size() ? &start : nullptr);
      if (!ev.converged) {
        if (++chain.n_inner_failures > max_failures)
          throw NumericalError("run_chain: " + std::to_string(chain.n_inner_failures) +
                               " inner-solve failures exceed 1% of iterations");
      } else {
        const double lp = prior.log_density(prop) + ev.log_pl;
        if (std::isfinite(lp) && std::log(u) < lp - log_post) {
          theta = prop;
          log_post = lp;
          warm = std::move(ev.eta_hat.coeffs);
          slope = std::move(ev.eta_slope);
          accepted = true;
        }
      }
    }
    if (cfg.adapt && it < cfg.burn_in)
      log_sd += std::pow(it + 1.0, -0.6) * ((accepted ? 1.0 : 0.0) - cfg.target_acceptance);
    chain.trace.push_back({it, theta, accepted, log_post});
    if (it >= cfg.burn_in) {
      chain.draws.push_back(theta);
      accepted_post += accepted ? 1 : 0;
    }
  }
  if (accepted_post == 0) throw ConfigError("run_chain: no proposal accepted after burn-in; check proposal_sd");
  chain.acceptance_rate = static_cast<double>(accepted_post) / static_cast<double>(cfg.n_iter - cfg.burn_in);
  chain.final_proposal_sd = std::exp(log_sd);
  return chain;
}

struct ChainSummary {
  double mean = 0.0;
  double variance = 0.0;
  double mc_se = 0.0;  // batch-means standard error of `mean`
  std::map<double, double> quantiles;           // alpha -> tau_{n alpha}
  std::map<double, double> centered_quantiles;  // alpha -> sqrt(n) (tau_{n alpha} - theta_hat)
};

inline const std::vector<double>& default_quantile_levels() {
  static const std::vector<double> levels{0.005, 0.025, 0.05, 0.1, 0.5, 0.9, 0.95, 0.975, 0.995};
  return levels;
}

inline ChainSummary summarize(std::span<const double> draws, double theta_hat, std::size_t n,
                              const std::vector<double>& levels = default_quantile_levels()) {
  if (draws.empty()) throw InvalidInput("summarize: empty chain");
  ChainSummary s;
  s.mean = mean(draws);
  s.variance = variance(draws);
  s.mc_se = batch_means_se(draws);
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  const double rn = std::sqrt(static_cast<double>(n));
  for (double a : levels) {
    const double tau = quantile_sorted(sorted, a);
    s.quantiles[a] = tau;
    s.centered_quantiles[a] = rn * (tau - theta_hat);
  }
  return s;
}

inline ChainSummary summarize(const Chain& chain, double theta_hat, std::size_t n,
                              const std::vector<double>& levels = default_quantile_levels()) {
  return summarize(chain.draws, theta_hat, n, levels);
}

/// KS distance between sqrt(n info) (theta - theta_hat) over the draws and N(0, 1).
inline double standardized_ks(std::span<const double> draws, double theta_hat, double info, std::size_t n) {
  if (!(info > 0.0)) throw InvalidInput("standardized_ks: information must be positive");
  const double scale = std::sqrt(static_cast<double>(n) * info);
  std::vector<double> z;
  z.reserve(draws.size());
  for (double d : draws) z.push_back(scale * (d - theta_hat));
  return ks_standard_normal(std::move(z));
}

inline double standardized_ks(const Chain& chain, double theta_hat, double info, std::size_t n) {
  return standardized_ks(chain.draws, theta_hat, info, n);
}

/// Chain dump: iter,theta,accepted,log_post.
inline void write_chain_csv(std::ostream& os, const Chain& chain) {
  os << "iter,theta,accepted,log_post\n";
  for (const auto& r : chain.trace)
    os << r.iter << ',' << format_double(r.theta) << ',' << (r.accepted ? 1 : 0) << ',' << format_double(r.log_post)
       << '\n';
}

/// Flat key=value summary.
inline void write_summary(std::ostream& os, const Chain& chain, const ChainSummary& s) {
  os << "draws=" << chain.draws.size() << '\n'
     << "acceptance_rate=" << format_double(chain.acceptance_rate) << '\n'
     << "inner_failures=" << chain.n_inner_failures << '\n'
     << "seed=" << chain.seed << '\n'
     << "mean=" << format_double(s.mean) << '\n'
     << "variance=" << format_double(s.variance) << '\n'
     << "mc_se=" << format_double(s.mc_se) << '\n';
  for (const auto& [a, q] : s.quantiles) os << "tau_" << format_double(a) << '=' << format_double(q) << '\n';
  for (const auto& [a, q] : s.centered_quantiles) os << "kappa_" << format_double(a) << '=' << format_double(q) << '\n';
}

}  // namespace pps
