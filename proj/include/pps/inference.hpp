#pragma once

// Posterior-vs-frequentist comparison for one fitted dataset.

#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>

#include "pps/errors.hpp"
#include "pps/sampler.hpp"
#include "pps/stats.hpp"

namespace pps {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double x) const { return x >= lower && x <= upper; }
  double width() const { return upper - lower; }
};

/// theta_hat +- z_{1 - alpha/2} (n info)^{-1/2}.
inline Interval wald_interval(double theta_hat, double info, std::size_t n, double alpha) {
  if (!(info > 0.0)) throw InvalidInput("wald_interval: information must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("wald_interval: alpha must lie in (0, 1)");
  if (n == 0) throw InvalidInput("wald_interval: n must be positive");
  const double half = normal_quantile(1.0 - alpha / 2.0) / std::sqrt(static_cast<double>(n) * info);
  return {theta_hat - half, theta_hat + half};
}

/// Central credible interval (tau_{alpha/2}, tau_{1 - alpha/2}) of the draws.
/// alpha = 1 degenerates to the single point tau_{1/2}.
inline Interval credible_interval(std::span<const double> draws, double alpha) {
  if (draws.empty()) throw InvalidInput("credible_interval: empty chain");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InvalidInput("credible_interval: alpha must lie in (0, 1]");
  std::vector<double> s(draws.begin(), draws.end());
  std::sort(s.begin(), s.end());
  return {quantile_sorted(s, alpha / 2.0), quantile_sorted(s, 1.0 - alpha / 2.0)};
}

struct InferenceReport {
  double theta_hat = 0.0;
  double info_true = 0.0;
  double post_mean = 0.0;
  double post_var = 0.0;
  double mc_se = 0.0;
  double mean_gap = 0.0;
  double info_gap = 0.0;
  double ks_stat = 0.0;
  std::map<double, std::pair<Interval, Interval>> intervals;  // alpha -> (credible, wald)
  double lambda = 0.0;
  std::size_t n = 0;
  std::optional<double> theta0;

  /// Whether the 95% credible interval covers theta0 (requires theta0).
  bool cover95() const {
    if (!theta0) throw InvalidInput("cover95 needs the true theta");
    return intervals.at(0.05).first.contains(*theta0);
  }
};

inline const std::vector<double>& report_alphas() {
  static const std::vector<double> a{0.1, 0.05, 0.01};
  return a;
}

/// Every field is a pure function of (draws, theta_hat, info, n, lambda).
inline InferenceReport build_report(std::size_t n_data, double lambda, const Chain& chain, double theta_hat,
                                    double info_true, std::optional<double> theta0 = std::nullopt) {
  if (chain.n_obs != n_data) throw InvalidInput("build_report: chain was run on a different sample size");
  if (chain.draws.empty()) throw InvalidInput("build_report: empty chain");
  if (!(info_true > 0.0)) throw InvalidInput("build_report: efficient information must be positive");
  InferenceReport r;
  r.theta_hat = theta_hat;
  r.info_true = info_true;
  r.lambda = lambda;
  r.n = n_data;
  r.theta0 = theta0;
  r.post_mean = mean(chain.draws);
  r.post_var = variance(chain.draws);
  r.mc_se = batch_means_se(chain.draws);
  r.mean_gap = std::abs(r.post_mean - theta_hat);
  r.info_gap = r.post_var > 0.0 ? std::abs(info_true - 1.0 / (static_cast<double>(n_data) * r.post_var)) : INFINITY;
  r.ks_stat = standardized_ks(chain.draws, theta_hat, info_true, n_data);
  for (double a : report_alphas())
    r.intervals[a] = {credible_interval(chain.draws, a), wald_interval(theta_hat, info_true, n_data, a)};
  return r;
}

inline const char* report_csv_header() { return "n,lambda,seed,theta_hat,post_mean,post_var,mean_gap,info_gap,ks,cover95"; }

inline std::string report_csv_row(const InferenceReport& r, std::uint64_t seed) {
  std::string row = std::to_string(r.n) + ',' + format_double(r.lambda) + ',' + std::to_string(seed) + ',' +
                    format_double(r.theta_hat) + ',' + format_double(r.post_mean) + ',' + format_double(r.post_var) +
                    ',' + format_double(r.mean_gap) + ',' + format_double(r.info_gap) + ',' + format_double(r.ks_stat) +
                    ',';
  row += r.theta0 ? (r.cover95() ? "1" : "0") : "";
  return row;
}

inline void write_report(std::ostream& os, const InferenceReport& r) {
  os << "n=" << r.n << '\n'
     << "lambda=" << format_double(r.lambda) << '\n'
     << "theta_hat=" << format_double(r.theta_hat) << '\n'
     << "info_true=" << format_double(r.info_true) << '\n'
     << "post_mean=" << format_double(r.post_mean) << '\n'
     << "post_var=" << format_double(r.post_var) << '\n'
     << "mc_se=" << format_double(r.mc_se) << '\n'
     << "mean_gap=" << format_double(r.mean_gap) << '\n'
     << "info_gap=" << format_double(r.info_gap) << '\n'
     << "ks=" << format_double(r.ks_stat) << '\n';
  for (const auto& [a, iv] : r.intervals) {
    const std::string tag = format_double(a);
    os << "credible_" << tag << '=' << format_double(iv.first.lower) << ',' << format_double(iv.first.upper) << '\n'
       << "wald_" << tag << '=' << format_double(iv.second.lower) << ',' << format_double(iv.second.upper) << '\n';
  }
  if (r.theta0) os << "theta0=" << format_double(*r.theta0) << '\n' << "cover95=" << (r.cover95() ? 1 : 0) << '\n';
}

}  // namespace pps
