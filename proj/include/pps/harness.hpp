#pragma once

// Replication studies: plan files, per-cell pipelines, summary tables, CSV emission.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "pps/errors.hpp"
#include "pps/inference.hpp"
#include "pps/models.hpp"
#include "pps/profiler.hpp"
#include "pps/sampler.hpp"
#include "pps/stats.hpp"

namespace pps {

/// Too few usable cells to fit anything.
struct InsufficientDataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Plans

struct ExperimentPlan {
  ModelVariant model = ModelVariant::logistic;
  double theta0 = 1.0;
  std::string truth;  // empty: the model's default truth
  std::vector<int> n_grid{100, 200, 400, 800, 1600};
  LambdaRule lambda_rule{};
  std::vector<double> lambda_grid;  // lambda-study only
  int replications = 50;
  int k = 2;
  int max_knots = 35;
  int chain_iters = 25000;
  int burn_in = 5000;
  double prior_lo = -10.0;
  double prior_hi = 10.0;
  std::string out = ".";
  std::uint64_t seed = 1;
  unsigned threads = 1;  // never echoed: output does not depend on it

  std::string truth_name() const { return truth.empty() ? default_truth(model).name : truth; }

  ModelSpec spec() const {
    ModelSpec s = model == ModelVariant::logistic ? ModelSpec::logistic(k) : ModelSpec::partly_linear(k);
    return s;
  }

  double lambda_at(int n) const { return lambda_for(static_cast<std::size_t>(n), k, lambda_rule); }

  McmcConfig chain_config(std::uint64_t chain_seed) const {
    McmcConfig c;
    c.n_iter = chain_iters;
    c.burn_in = burn_in;
    c.seed = chain_seed;
    return c;
  }

  void validate() const {
    if (n_grid.empty()) throw ConfigError("n_grid must not be empty");
    for (std::size_t i = 0; i < n_grid.size(); ++i) {
      if (n_grid[i] < 2) throw ConfigError("n_grid entries must be >= 2");
      if (i && n_grid[i] <= n_grid[i - 1]) throw ConfigError("n_grid must be strictly ascending");
    }
    if (replications < 1) throw ConfigError("replications must be >= 1");
    if (k < 1 || k > 4) throw ConfigError("k must lie in 1..4");
    if (max_knots < 1) throw ConfigError("max_knots must be >= 1");
    if (!std::isfinite(theta0)) throw ConfigError("theta0 must be finite");
    if (!(prior_lo < prior_hi)) throw ConfigError("prior_lo must be < prior_hi");
    if (!(theta0 > prior_lo && theta0 < prior_hi)) throw ConfigError("theta0 must lie inside the prior support");
    for (double l : lambda_grid)
      if (!(l > 0.0)) throw ConfigError("lambda_grid entries must be positive");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    chain_config(0).validate();
    truth_by_name(truth_name());
    if (lambda_rule.kind == LambdaRuleKind::fixed) lambda_at(n_grid.front());
  }

  /// Canonical key=value pairs in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const {
    auto join_int = [](const std::vector<int>& v) {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
      return s;
    };
    std::string lg;
    for (std::size_t i = 0; i < lambda_grid.size(); ++i) lg += (i ? "," : "") + format_double(lambda_grid[i]);
    return {{"model", std::string(to_string(model))},
            {"theta0", format_double(theta0)},
            {"truth", truth_name()},
            {"n_grid", join_int(n_grid)},
            {"lambda_rule", to_string(lambda_rule)},
            {"lambda_grid", lg},
            {"replications", std::to_string(replications)},
            {"k", std::to_string(k)},
            {"max_knots", std::to_string(max_knots)},
            {"chain_iters", std::to_string(chain_iters)},
            {"burn_in", std::to_string(burn_in)},
            {"prior_lo", format_double(prior_lo)},
            {"prior_hi", format_double(prior_hi)},
            {"seed", std::to_string(seed)}};
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError("plan key '" + key + "': cannot parse '" + text + "'");
  return v;
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<T>(key, item));
  }
  return out;
}

}  // namespace detail

/// Sets one plan field from text. Unknown keys are configuration errors.
inline void apply_plan_entry(ExperimentPlan& p, const std::string& key, const std::string& value) {
  using detail::parse_list;
  using detail::parse_number;
  if (key == "model") p.model = parse_model_variant(value);
  else if (key == "theta0") p.theta0 = parse_number<double>(key, value);
  else if (key == "truth") p.truth = value;
  else if (key == "n_grid" || key == "n") p.n_grid = parse_list<int>(key, value);
  else if (key == "lambda_rule") p.lambda_rule = parse_lambda_rule(value);
  else if (key == "lambda_grid" || key == "lambda") p.lambda_grid = parse_list<double>(key, value);
  else if (key == "replications" || key == "reps") p.replications = parse_number<int>(key, value);
  else if (key == "k") p.k = parse_number<int>(key, value);
  else if (key == "max_knots") p.max_knots = parse_number<int>(key, value);
  else if (key == "chain_iters") p.chain_iters = parse_number<int>(key, value);
  else if (key == "burn_in") p.burn_in = parse_number<int>(key, value);
  else if (key == "prior_lo") p.prior_lo = parse_number<double>(key, value);
  else if (key == "prior_hi") p.prior_hi = parse_number<double>(key, value);
  else if (key == "out") p.out = value;
  else if (key == "seed") p.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "threads") p.threads = parse_number<unsigned>(key, value);
  else throw ConfigError("unknown plan key '" + key + "'");
}

/// Flat key=value lines; blank lines and '#' comments are skipped.
inline ExperimentPlan parse_plan(std::istream& is, ExperimentPlan base = {}) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("plan line " + std::to_string(lineno) + ": expected key=value");
    apply_plan_entry(base, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return base;
}

inline ExperimentPlan load_plan(const std::filesystem::path& path, ExperimentPlan base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open plan file " + path.string());
  return parse_plan(in, std::move(base));
}

inline void write_plan_echo(std::ostream& os, const ExperimentPlan& p, std::string_view study) {
  os << "# study=" << study << '\n';
  for (const auto& [k, v] : p.entries()) os << "# " << k << '=' << v << '\n';
}

// ---------------------------------------------------------------------------
// Replications

/// base_seed xor a hash of (n, rep).
inline std::uint64_t cell_seed(std::uint64_t base, int n, int rep) {
  return base ^ mix64((static_cast<std::uint64_t>(static_cast<std::uint32_t>(n)) << 32) |
                      static_cast<std::uint32_t>(rep));
}

enum class Stage { estimate, full };  // estimate: MPLE only; full: MPLE + chain + report

struct ReplicationOutcome {
  int n = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  double lambda = 0.0;
  bool ok = false;
  std::string error;
  double theta_hat = NAN;
  bool at_boundary = false;
  double eta_l2 = NAN;
  std::optional<InferenceReport> report;
};

/// Truth quantities shared by every cell of a study.
struct TruthContext {
  ScalarFunction eta0;
  double info = NAN;  // efficient information at the truth; NaN until needed
};

/// sqrt(mean over a 512-point midpoint grid of (f - g)^2) on [lo, hi].
inline double l2_distance(const SplineFunction& f, const ScalarFunction& g, double lo, double hi, int points = 512) {
  double s = 0.0;
  for (int i = 0; i < points; ++i) {
    const double z = lo + (hi - lo) * (i + 0.5) / points;
    const double d = f(z) - g(z);
    s += d * d;
  }
  return std::sqrt(s / points);
}

template <SemiparametricModel Model>
TruthContext make_truth(const ExperimentPlan& plan, Stage stage) {
  TruthContext t;
  t.eta0 = truth_by_name(plan.truth_name()).fn;
  if (stage == Stage::full) t.info = efficient_score_info(Model{}, plan.spec(), plan.theta0, t.eta0).info;
  return t;
}

/// simulate -> MPLE -> (chain -> report). Errors are recorded, never thrown.
template <SemiparametricModel Model>
ReplicationOutcome run_replication(const ExperimentPlan& plan, const TruthContext& truth, int n, int rep,
                                   Stage stage, std::optional<double> lambda = std::nullopt) {
  ReplicationOutcome out;
  out.n = n;
  out.rep = rep;
  out.seed = cell_seed(plan.seed, n, rep);
  try {
    out.lambda = lambda ? *lambda : plan.lambda_at(n);
    const auto data = simulate(Model{}, plan.theta0, truth.eta0, n, out.seed);
    const auto profiler = Profiler<Model>::with_quantile_knots(data, plan.spec(), {.lambda = out.lambda}, plan.max_knots);
    const MpleResult m = penalized_mple(profiler, plan.prior_lo, plan.prior_hi);
    out.theta_hat = m.theta_hat;
    out.at_boundary = m.at_boundary;
    out.eta_l2 = l2_distance(m.eval.eta_hat, truth.eta0, plan.spec().lo, plan.spec().hi);
    if (stage == Stage::full) {
      if (m.at_boundary) throw NumericalError("MPLE on the prior boundary");
      const double curv = profile_curvature(profiler, m.eval, 1e-2);
      if (!(curv > 0.0) || !std::isfinite(curv)) throw NumericalError("profile is not concave at theta_hat");
      McmcConfig cfg = plan.chain_config(mix64(out.seed + 1));
      cfg.proposal_sd = 2.4 / std::sqrt(curv);
      cfg.init = m.theta_hat;
      const Chain chain = run_chain(profiler, Prior::flat(plan.prior_lo, plan.prior_hi), cfg);
      out.report = build_report(profiler.n(), out.lambda, chain, m.theta_hat, truth.info, plan.theta0);
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

/// Runs fn(0..count-1) on `threads` workers; results come back in index order.
template <class Fn>
auto ordered_parallel_map(std::size_t count, unsigned threads, Fn fn) {
  using R = decltype(fn(std::size_t{}));
  std::vector<R> results(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) results[i] = fn(i);
  };
  const unsigned t = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (t == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < t; ++i) pool.emplace_back(worker);
  }
  return results;
}

/// Dispatch on the runtime model variant.
template <class Fn>
decltype(auto) with_model(ModelVariant v, Fn&& fn) {
  if (v == ModelVariant::logistic) return fn(LogisticModel{});
  return fn(PartlyLinearModel{});
}

struct Cell {
  int n;
  int rep;
  std::optional<double> lambda;
};

inline std::vector<ReplicationOutcome> run_cells(const ExperimentPlan& plan, const std::vector<Cell>& cells,
                                                 Stage stage) {
  return with_model(plan.model, [&]<class Model>(Model) {
    const TruthContext truth = make_truth<Model>(plan, stage);
    return ordered_parallel_map(cells.size(), plan.threads, [&](std::size_t i) {
      return run_replication<Model>(plan, truth, cells[i].n, cells[i].rep, stage, cells[i].lambda);
    });
  });
}

inline double failure_rate(const std::vector<ReplicationOutcome>& rows) {
  if (rows.empty()) return 0.0;
  const auto bad = std::count_if(rows.begin(), rows.end(), [](const auto& r) { return !r.ok; });
  return static_cast<double>(bad) / static_cast<double>(rows.size());
}

// ---------------------------------------------------------------------------
// Rate study

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_ = 0.0;
  double target_slope = 0.0;
  double tolerance = 0.15;
  bool pass = false;
};

struct RateCell {
  int n = 0;
  double lambda = 0.0;
  double median_error = NAN;
  int n_ok = 0;
  int n_failed = 0;
};

struct RateStudy {
  std::vector<ReplicationOutcome> rows;
  std::vector<RateCell> cells;
  RateFit fit;
};

/// Median L2 error of the nuisance estimate per n, then log(error) on log(n).
inline RateStudy rate_study(const ExperimentPlan& plan, double tolerance = 0.15) {
  plan.validate();
  if (plan.n_grid.size() < 4) throw ConfigError("rate study needs at least 4 sample sizes");
  if (plan.n_grid.back() < 10 * plan.n_grid.front()) throw ConfigError("rate study n_grid must span a decade");
  std::vector<Cell> cells;
  for (int n : plan.n_grid)
    for (int r = 0; r < plan.replications; ++r) cells.push_back({n, r, std::nullopt});
  RateStudy st;
  st.rows = run_cells(plan, cells, Stage::estimate);

  std::vector<double> lx, ly;
  for (int n : plan.n_grid) {
    RateCell c;
    c.n = n;
    c.lambda = plan.lambda_at(n);
    std::vector<double> err;
    for (const auto& r : st.rows)
      if (r.n == n) {
        if (r.ok && std::isfinite(r.eta_l2)) err.push_back(r.eta_l2);
        else ++c.n_failed;
      }
    c.n_ok = static_cast<int>(err.size());
    if (!err.empty()) {
      c.median_error = median(err);
      if (c.median_error > 0.0) {
        lx.push_back(std::log(static_cast<double>(n)));
        ly.push_back(std::log(c.median_error));
      }
    }
    st.cells.push_back(c);
  }
  if (lx.size() < 3) throw InsufficientDataError("rate study: fewer than 3 sample sizes produced estimates");
  const LineFit f = fit_line(lx, ly);
  st.fit.slope = f.slope;
  st.fit.intercept = f.intercept;
  st.fit.stderr_ = f.slope_se;
  st.fit.target_slope = -static_cast<double>(plan.k) / (2.0 * plan.k + 1.0);
  st.fit.tolerance = tolerance;
  st.fit.pass = std::abs(st.fit.slope - st.fit.target_slope) <= tolerance;
  return st;
}

// ---------------------------------------------------------------------------
// Lambda scaling study

struct LambdaCell {
  double lambda = 0.0;
  double median_mean_gap = NAN;
  double median_info_gap = NAN;
  double median_ks = NAN;
  double noise_floor = NAN;  // 3 x median batch-means standard error
  bool above_floor = false;
  bool in_regime = false;
  int n_ok = 0;
  int n_failed = 0;
};

struct LambdaStudy {
  int n = 0;
  std::vector<ReplicationOutcome> rows;
  std::vector<LambdaCell> cells;
  std::optional<LineFit> fit;  // over cells above the noise floor, when >= 2
  int points_used = 0;
};

/// Finite-sample reading of lambda = o(n^{-1/4}), 1/lambda = O(n^{k/(2k+1)}): within a factor 2 of both ends.
inline bool lambda_in_regime(double lambda, int n, int k) {
  const double nn = static_cast<double>(n);
  return lambda >= 0.5 * std::pow(nn, -static_cast<double>(k) / (2.0 * k + 1.0)) && lambda <= 2.0 * std::pow(nn, -0.25);
}

inline LambdaStudy lambda_scaling_study(const ExperimentPlan& plan) {
  plan.validate();
  if (plan.n_grid.size() != 1) throw ConfigError("lambda study needs exactly one sample size");
  if (plan.lambda_grid.size() < 4) throw ConfigError("lambda study needs at least 4 lambda values");
  LambdaStudy st;
  st.n = plan.n_grid.front();
  std::vector<Cell> cells;
  for (double l : plan.lambda_grid)
    for (int r = 0; r < plan.replications; ++r) cells.push_back({st.n, r, l});
  st.rows = run_cells(plan, cells, Stage::full);

  std::vector<double> lx, ly;
  for (double l : plan.lambda_grid) {
    LambdaCell c;
    c.lambda = l;
    c.in_regime = lambda_in_regime(l, st.n, plan.k);
    std::vector<double> mg, ig, ks, se;
    for (const auto& r : st.rows) {
      if (r.lambda != l) continue;
      if (!r.ok || !r.report) {
        ++c.n_failed;
        continue;
      }
      mg.push_back(r.report->mean_gap);
      ig.push_back(r.report->info_gap);
      ks.push_back(r.report->ks_stat);
      se.push_back(r.report->mc_se);
    }
    c.n_ok = static_cast<int>(mg.size());
    if (!mg.empty()) {
      c.median_mean_gap = median(mg);
      c.median_info_gap = median(ig);
      c.median_ks = median(ks);
      c.noise_floor = 3.0 * median(se);
      c.above_floor = c.median_mean_gap > c.noise_floor;
      if (c.above_floor) {
        lx.push_back(std::log(l));
        ly.push_back(std::log(c.median_mean_gap));
      }
    }
    st.cells.push_back(c);
  }
  st.points_used = static_cast<int>(lx.size());
  if (lx.size() >= 2) st.fit = fit_line(lx, ly);
  return st;
}

// ---------------------------------------------------------------------------
// Coverage study

/// Fraction of intervals containing theta0.
inline double coverage(std::span<const Interval> intervals, double theta0) {
  if (intervals.empty()) throw InvalidInput("coverage of an empty set of intervals");
  const auto hit = std::count_if(intervals.begin(), intervals.end(), [&](const Interval& i) { return i.contains(theta0); });
  return static_cast<double>(hit) / static_cast<double>(intervals.size());
}

struct CoverageRow {
  int n = 0;
  double alpha = 0.0;
  double coverage = NAN;
  double binomial_se = NAN;
  int n_ok = 0;
  int n_failed = 0;
};

struct CoverageStudy {
  std::vector<ReplicationOutcome> rows;
  std::vector<CoverageRow> table;
};

inline CoverageStudy coverage_study(const ExperimentPlan& plan) {
  plan.validate();
  if (plan.replications < 100) throw ConfigError("coverage study needs at least 100 replications");
  std::vector<Cell> cells;
  for (int n : plan.n_grid)
    for (int r = 0; r < plan.replications; ++r) cells.push_back({n, r, std::nullopt});
  CoverageStudy st;
  st.rows = run_cells(plan, cells, Stage::full);
  for (int n : plan.n_grid) {
    for (double a : report_alphas()) {
      CoverageRow row;
      row.n = n;
      row.alpha = a;
      std::vector<Interval> iv;
      for (const auto& r : st.rows) {
        if (r.n != n) continue;
        if (r.ok && r.report) iv.push_back(r.report->intervals.at(a).first);
        else ++row.n_failed;
      }
      row.n_ok = static_cast<int>(iv.size());
      if (!iv.empty()) {
        row.coverage = coverage(iv, plan.theta0);
        row.binomial_se = std::sqrt(row.coverage * (1.0 - row.coverage) / static_cast<double>(iv.size()));
      }
      st.table.push_back(row);
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// CSV emission. Every file starts with the plan echo.

namespace detail {

inline std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

}  // namespace detail

/// Report-schema rows; failed replications carry nan fields and an empty cover95.
inline void write_report_rows(std::ostream& os, const std::vector<ReplicationOutcome>& rows) {
  os << report_csv_header() << '\n';
  for (const auto& r : rows) {
    if (r.ok && r.report) {
      os << report_csv_row(*r.report, r.seed) << '\n';
    } else {
      os << r.n << ',' << format_double(r.lambda) << ',' << r.seed << ',' << format_double(r.theta_hat)
         << ",nan,nan,nan,nan,nan,\n";
    }
  }
}

inline void write_failures(std::ostream& os, const std::vector<ReplicationOutcome>& rows) {
  os << "# failure_rate=" << format_double(failure_rate(rows)) << '\n' << "n,rep,seed,lambda,message\n";
  for (const auto& r : rows)
    if (!r.ok)
      os << r.n << ',' << r.rep << ',' << r.seed << ',' << format_double(r.lambda) << ','
         << detail::sanitize(r.error) << '\n';
}

inline void write_rate_rows(std::ostream& os, const RateStudy& st) {
  os << "n,lambda,seed,theta_hat,eta_l2,ok\n";
  for (const auto& r : st.rows)
    os << r.n << ',' << format_double(r.lambda) << ',' << r.seed << ',' << format_double(r.theta_hat) << ','
       << format_double(r.eta_l2) << ',' << (r.ok ? 1 : 0) << '\n';
}

inline void write_rate_cells(std::ostream& os, const RateStudy& st) {
  os << "n,lambda,median_eta_l2,n_ok,n_failed\n";
  for (const auto& c : st.cells)
    os << c.n << ',' << format_double(c.lambda) << ',' << format_double(c.median_error) << ',' << c.n_ok << ','
       << c.n_failed << '\n';
}

inline void write_rate_fit(std::ostream& os, const RateFit& f) {
  os << "slope,intercept,stderr,target_slope,tolerance,pass\n"
     << format_double(f.slope) << ',' << format_double(f.intercept) << ',' << format_double(f.stderr_) << ','
     << format_double(f.target_slope) << ',' << format_double(f.tolerance) << ',' << (f.pass ? 1 : 0) << '\n';
}

inline void write_lambda_cells(std::ostream& os, const LambdaStudy& st) {
  os << "lambda,median_mean_gap,median_info_gap,median_ks,noise_floor,above_floor,in_regime,n_ok,n_failed\n";
  for (const auto& c : st.cells)
    os << format_double(c.lambda) << ',' << format_double(c.median_mean_gap) << ','
       << format_double(c.median_info_gap) << ',' << format_double(c.median_ks) << ','
       << format_double(c.noise_floor) << ',' << (c.above_floor ? 1 : 0) << ',' << (c.in_regime ? 1 : 0) << ','
       << c.n_ok << ',' << c.n_failed << '\n';
}

inline void write_lambda_fit(std::ostream& os, const LambdaStudy& st) {
  os << "n,slope,intercept,stderr,points_used\n" << st.n << ',';
  if (st.fit)
    os << format_double(st.fit->slope) << ',' << format_double(st.fit->intercept) << ','
       << format_double(st.fit->slope_se);
  else
    os << "nan,nan,nan";
  os << ',' << st.points_used << '\n';
}

inline void write_coverage_table(std::ostream& os, const CoverageStudy& st) {
  os << "n,alpha,nominal,coverage,binomial_se,n_ok,n_failed\n";
  for (const auto& r : st.table)
    os << r.n << ',' << format_double(r.alpha) << ',' << format_double(1.0 - r.alpha) << ','
       << format_double(r.coverage) << ',' << format_double(r.binomial_se) << ',' << r.n_ok << ',' << r.n_failed
       << '\n';
}

/// Writes `name` under plan.out with the plan echo, then `body`.
inline std::filesystem::path emit_csv(const ExperimentPlan& plan, std::string_view study, const std::string& name,
                                      const std::function<void(std::ostream&)>& body) {
  const std::filesystem::path dir(plan.out);
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + path.string());
  write_plan_echo(os, plan, study);
  body(os);
  if (!os) throw ConfigError("write failed for " + path.string());
  return path;
}

inline std::vector<std::filesystem::path> emit(const ExperimentPlan& plan, const RateStudy& st) {
  return {emit_csv(plan, "rate", "rate_rows.csv", [&](std::ostream& o) { write_rate_rows(o, st); }),
          emit_csv(plan, "rate", "rate_cells.csv", [&](std::ostream& o) { write_rate_cells(o, st); }),
          emit_csv(plan, "rate", "rate_fit.csv", [&](std::ostream& o) { write_rate_fit(o, st.fit); }),
          emit_csv(plan, "rate", "rate_failures.csv", [&](std::ostream& o) { write_failures(o, st.rows); })};
}

inline std::vector<std::filesystem::path> emit(const ExperimentPlan& plan, const LambdaStudy& st) {
  return {emit_csv(plan, "lambda", "lambda_rows.csv", [&](std::ostream& o) { write_report_rows(o, st.rows); }),
          emit_csv(plan, "lambda", "lambda_cells.csv", [&](std::ostream& o) { write_lambda_cells(o, st); }),
          emit_csv(plan, "lambda", "lambda_fit.csv", [&](std::ostream& o) { write_lambda_fit(o, st); }),
          emit_csv(plan, "lambda", "lambda_failures.csv", [&](std::ostream& o) { write_failures(o, st.rows); })};
}

inline std::vector<std::filesystem::path> emit(const ExperimentPlan& plan, const CoverageStudy& st) {
  return {emit_csv(plan, "coverage", "coverage_rows.csv", [&](std::ostream& o) { write_report_rows(o, st.rows); }),
          emit_csv(plan, "coverage", "coverage_table.csv", [&](std::ostream& o) { write_coverage_table(o, st); }),
          emit_csv(plan, "coverage", "coverage_failures.csv", [&](std::ostream& o) { write_failures(o, st.rows); })};
}

}  // namespace pps
