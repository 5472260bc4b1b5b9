// pps: simulate data, profile, estimate, sample, and run replication studies.
// Exit codes: 0 success, 2 configuration error, 3 numerical failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pps/harness.hpp"

namespace fs = std::filesystem;
using namespace pps;

namespace {

constexpr int kConfigExit = 2;
constexpr int kNumericalExit = 3;

struct Flags {
  std::string plan_file;
  std::optional<std::string> model, n, lambda_rule, lambda, truth, out;
  std::optional<int> k, reps, chain_iters, burn_in;
  std::optional<std::uint64_t> seed;
  std::optional<double> theta0;
  std::optional<unsigned> threads;
  // single-run extras
  std::string data;
  std::optional<double> theta_lo, theta_hi;
  int points = 41;
};

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--plan", f.plan_file, "key=value plan file; flags override it");
  sub->add_option("--model", f.model, "logistic | partly_linear");
  sub->add_option("--n", f.n, "sample size, or comma list for studies");
  sub->add_option("--lambda-rule", f.lambda_rule, "sobolev | cube | fixed(v)");
  sub->add_option("--lambda", f.lambda, "fixed lambda, or comma list for lambda-study");
  sub->add_option("--k", f.k, "Sobolev order");
  sub->add_option("--seed", f.seed, "base seed");
  sub->add_option("--reps", f.reps, "replications");
  sub->add_option("--out", f.out, "output directory");
  sub->add_option("--chain-iters", f.chain_iters, "MCMC iterations");
  sub->add_option("--burn-in", f.burn_in, "MCMC burn-in");
  sub->add_option("--theta0", f.theta0, "true theta for simulation");
  sub->add_option("--truth", f.truth, "named truth: sin2pi | cospi | zero | linear");
  sub->add_option("--threads", f.threads, "worker threads for studies");
}

ExperimentPlan build_plan(const Flags& f, bool lambda_is_grid) {
  ExperimentPlan p = f.plan_file.empty() ? ExperimentPlan{} : load_plan(f.plan_file);
  if (f.model) apply_plan_entry(p, "model", *f.model);
  if (f.n) apply_plan_entry(p, "n_grid", *f.n);
  if (f.lambda_rule) apply_plan_entry(p, "lambda_rule", *f.lambda_rule);
  if (f.lambda) {
    if (lambda_is_grid) apply_plan_entry(p, "lambda_grid", *f.lambda);
    else apply_plan_entry(p, "lambda_rule", "fixed(" + *f.lambda + ")");
  }
  if (f.k) p.k = *f.k;
  if (f.seed) p.seed = *f.seed;
  if (f.reps) p.replications = *f.reps;
  if (f.out) p.out = *f.out;
  if (f.chain_iters) p.chain_iters = *f.chain_iters;
  if (f.burn_in) p.burn_in = *f.burn_in;
  if (f.theta0) p.theta0 = *f.theta0;
  if (f.truth) p.truth = *f.truth;
  if (f.threads) p.threads = *f.threads;
  p.validate();
  return p;
}

template <SemiparametricModel Model>
Dataset<Model> load_or_simulate(const ExperimentPlan& plan, const std::string& data_file) {
  if (!data_file.empty()) {
    std::ifstream in(data_file);
    if (!in) throw ConfigError("cannot open data file " + data_file);
    return read_csv(Model{}, in);
  }
  return simulate(Model{}, plan.theta0, truth_by_name(plan.truth_name()).fn, plan.n_grid.front(), plan.seed);
}

template <SemiparametricModel Model>
Profiler<Model> make_profiler(const ExperimentPlan& plan, const Dataset<Model>& data) {
  return Profiler<Model>::with_quantile_knots(data, plan.spec(), {.lambda = plan.lambda_at(static_cast<int>(data.size()))},
                                              plan.max_knots);
}

void print_paths(const std::vector<fs::path>& paths) {
  for (const auto& p : paths) std::cout << "wrote " << p.string() << '\n';
}

int cmd_simulate(const Flags& f) {
  const ExperimentPlan plan = build_plan(f, false);
  return with_model(plan.model, [&]<class Model>(Model) {
    const auto data = simulate(Model{}, plan.theta0, truth_by_name(plan.truth_name()).fn, plan.n_grid.front(), plan.seed);
    print_paths({emit_csv(plan, "simulate", "data.csv", [&](std::ostream& o) { write_csv(o, std::span(data)); })});
    return 0;
  });
}

int cmd_profile(const Flags& f) {
  const ExperimentPlan plan = build_plan(f, false);
  const double lo = f.theta_lo.value_or(plan.theta0 - 2.0), hi = f.theta_hi.value_or(plan.theta0 + 2.0);
  if (!(lo < hi) || f.points < 2) throw ConfigError("profile grid needs theta-lo < theta-hi and >= 2 points");
  return with_model(plan.model, [&]<class Model>(Model) {
    const auto data = load_or_simulate<Model>(plan, f.data);
    const auto prof = make_profiler<Model>(plan, data);
    std::vector<ProfileEvaluation> evs;
    Eigen::VectorXd warm;
    for (int i = 0; i < f.points; ++i) {
      const double th = lo + (hi - lo) * i / (f.points - 1.0);
      evs.push_back(prof.evaluate(th, warm.size() ? &warm : nullptr));
      if (evs.back().converged) warm = evs.back().eta_hat.coeffs;
    }
    print_paths({emit_csv(plan, "profile", "profile.csv", [&](std::ostream& o) {
      o << "theta,log_pl,roughness,converged,iterations\n";
      for (const auto& e : evs)
        o << format_double(e.theta) << ',' << format_double(e.log_pl) << ',' << format_double(e.roughness) << ','
          << (e.converged ? 1 : 0) << ',' << e.iterations << '\n';
    })});
    return 0;
  });
}

int cmd_mple(const Flags& f) {
  const ExperimentPlan plan = build_plan(f, false);
  return with_model(plan.model, [&]<class Model>(Model) {
    const auto data = load_or_simulate<Model>(plan, f.data);
    const auto prof = make_profiler<Model>(plan, data);
    const MpleResult m = penalized_mple(prof, plan.prior_lo, plan.prior_hi);
    if (m.at_boundary) std::cerr << "warning: maximizer on the theta bound\n";
    std::cout << "n=" << prof.n() << '\n'
              << "lambda=" << format_double(prof.lambda()) << '\n'
              << "theta_hat=" << format_double(m.theta_hat) << '\n'
              << "log_pl=" << format_double(m.eval.log_pl) << '\n'
              << "roughness=" << format_double(m.eval.roughness) << '\n'
              << "at_boundary=" << (m.at_boundary ? 1 : 0) << '\n'
              << "evaluations=" << m.evaluations << '\n';
    return 0;
  });
}

int cmd_sample(const Flags& f) {
  const ExperimentPlan plan = build_plan(f, false);
  return with_model(plan.model, [&]<class Model>(Model) {
    const auto data = load_or_simulate<Model>(plan, f.data);
    const auto prof = make_profiler<Model>(plan, data);
    const MpleResult m = penalized_mple(prof, plan.prior_lo, plan.prior_hi);
    const double curv = profile_curvature(prof, m.eval, 1e-2);
    if (!(curv > 0.0) || !std::isfinite(curv)) throw NumericalError("profile is not concave at theta_hat");
    McmcConfig cfg = plan.chain_config(mix64(plan.seed + 1));
    cfg.proposal_sd = 2.4 / std::sqrt(curv);
    cfg.init = m.theta_hat;
    const Chain chain = run_chain(prof, Prior::flat(plan.prior_lo, plan.prior_hi), cfg);
    const ChainSummary s = summarize(chain, m.theta_hat, prof.n());
    const auto csv = emit_csv(plan, "sample", "chain.csv", [&](std::ostream& o) { write_chain_csv(o, chain); });
    const fs::path summary = fs::path(plan.out) / "chain_summary.txt";
    std::ofstream os(summary, std::ios::binary);
    if (!os) throw ConfigError("cannot write " + summary.string());
    os << "theta_hat=" << format_double(m.theta_hat) << '\n' << "lambda=" << format_double(prof.lambda()) << '\n';
    write_summary(os, chain, s);
    print_paths({csv, summary});
    return 0;
  });
}

int cmd_rate(const Flags& f) {
  const ExperimentPlan plan = build_plan(f, false);
  const RateStudy st = rate_study(plan);
  print_paths(emit(plan, st));
  std::cout << "slope=" << format_double(st.fit.slope) << " target=" << format_double(st.fit.target_slope)
            << " pass=" << (st.fit.pass ? 1 : 0) << " failure_rate=" << format_double(failure_rate(st.rows)) << '\n';
  return 0;
}

int cmd_lambda(const Flags& f) {
  const ExperimentPlan plan = build_plan(f, true);
  const LambdaStudy st = lambda_scaling_study(plan);
  for (const auto& c : st.cells)
    if (!c.in_regime) std::cerr << "warning: lambda=" << format_double(c.lambda) << " is outside the rate regime\n";
  print_paths(emit(plan, st));
  std::cout << "slope=" << (st.fit ? format_double(st.fit->slope) : "nan") << " points_used=" << st.points_used
            << " failure_rate=" << format_double(failure_rate(st.rows)) << '\n';
  return 0;
}

int cmd_coverage(const Flags& f) {
  const ExperimentPlan plan = build_plan(f, false);
  const CoverageStudy st = coverage_study(plan);
  print_paths(emit(plan, st));
  for (const auto& r : st.table)
    if (r.alpha == 0.05)
      std::cout << "n=" << r.n << " coverage95=" << format_double(r.coverage) << " se=" << format_double(r.binomial_se)
                << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Penalized profile sampler"};
  app.require_subcommand(1);
  Flags f;

  auto* sim = app.add_subcommand("simulate", "emit a simulated dataset CSV");
  auto* prof = app.add_subcommand("profile", "log profile likelihood over a theta grid");
  auto* mple = app.add_subcommand("mple", "penalized maximum profile likelihood estimate");
  auto* samp = app.add_subcommand("sample", "one chain: chain CSV and summary");
  auto* rate = app.add_subcommand("rate-study", "nuisance L2 error against n");
  auto* lam = app.add_subcommand("lambda-study", "posterior mean gap against lambda");
  auto* cov = app.add_subcommand("coverage-study", "credible interval coverage");
  for (auto* s : {sim, prof, mple, samp, rate, lam, cov}) add_common(s, f);
  for (auto* s : {prof, mple, samp}) s->add_option("--data", f.data, "dataset CSV instead of simulating");
  prof->add_option("--theta-lo", f.theta_lo, "grid start");
  prof->add_option("--theta-hi", f.theta_hi, "grid end");
  prof->add_option("--points", f.points, "grid size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigExit;
  }

  try {
    if (sim->parsed()) return cmd_simulate(f);
    if (prof->parsed()) return cmd_profile(f);
    if (mple->parsed()) return cmd_mple(f);
    if (samp->parsed()) return cmd_sample(f);
    if (rate->parsed()) return cmd_rate(f);
    if (lam->parsed()) return cmd_lambda(f);
    if (cov->parsed()) return cmd_coverage(f);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const InvalidInput& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalExit;
  }
  return kConfigExit;
}
