#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "pps/harness.hpp"

using namespace pps;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("pps_test_" + name);
  fs::remove_all(d);
  return d;
}

ExperimentPlan small_plan() {
  ExperimentPlan p;
  p.model = ModelVariant::logistic;
  p.n_grid = {60};
  p.replications = 3;
  p.chain_iters = 3000;
  p.burn_in = 500;
  return p;
}

}  // namespace

TEST(Plan, ParseRoundTrip) {
  std::istringstream in(
      "# comment\n"
      "model = partly_linear\n"
      "n_grid=100, 200,400\n"
      "lambda_rule=fixed(0.2)\n"
      "\n"
      "replications=7\n"
      "seed=99\n"
      "threads=3\n");
  const ExperimentPlan p = parse_plan(in);
  EXPECT_EQ(p.model, ModelVariant::partly_linear);
  EXPECT_EQ(p.n_grid, (std::vector<int>{100, 200, 400}));
  EXPECT_EQ(p.lambda_rule.kind, LambdaRuleKind::fixed);
  EXPECT_EQ(p.replications, 7);
  EXPECT_EQ(p.threads, 3u);
  EXPECT_EQ(p.truth_name(), "sin2pi");

  std::ostringstream echo;
  for (const auto& [k, v] : p.entries()) echo << k << '=' << v << '\n';
  std::istringstream back(echo.str());
  EXPECT_EQ(parse_plan(back).entries(), p.entries());
}

TEST(Plan, ConfigurationErrors) {
  auto parse = [](const std::string& s) {
    std::istringstream in(s);
    return parse_plan(in);
  };
  EXPECT_THROW(parse("model=probit\n"), ConfigError);
  EXPECT_THROW(parse("colour=blue\n"), ConfigError);
  EXPECT_THROW(parse("replications=many\n"), ConfigError);
  EXPECT_THROW(parse("just a line\n"), ConfigError);
  EXPECT_THROW(parse("n_grid=400,200\n").validate(), ConfigError);
  EXPECT_THROW(parse("replications=0\n").validate(), ConfigError);
  EXPECT_THROW(parse("burn_in=30000\n").validate(), ConfigError);
  EXPECT_THROW(parse("truth=wiggly\n").validate(), ConfigError);
  EXPECT_THROW(load_plan("/nonexistent/plan.txt"), ConfigError);
  EXPECT_NO_THROW(parse("").validate());
}

TEST(Plan, BadModelFailsBeforeCompute) {
  std::istringstream in("model=nonsense\nn_grid=100000000\n");
  const auto t0 = std::chrono::steady_clock::now();
  EXPECT_THROW(coverage_study(parse_plan(in)), ConfigError);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1.0);
}

TEST(CellSeed, DeterministicAndDistinct) {
  EXPECT_EQ(cell_seed(5, 100, 3), cell_seed(5, 100, 3));
  EXPECT_NE(cell_seed(5, 100, 3), cell_seed(5, 100, 4));
  EXPECT_NE(cell_seed(5, 100, 3), cell_seed(5, 200, 3));
  EXPECT_NE(cell_seed(5, 100, 3), cell_seed(6, 100, 3));
}

TEST(OrderedParallelMap, IndexOrderRegardlessOfThreads) {
  auto sq = [](std::size_t i) { return static_cast<int>(i * i); };
  const auto one = ordered_parallel_map(100, 1, sq);
  const auto four = ordered_parallel_map(100, 4, sq);
  EXPECT_EQ(one, four);
  EXPECT_EQ(four[7], 49);
}

TEST(L2Distance, KnownValue) {
  auto b = build_basis(0.0, 1.0, 2, {0.5});
  SplineFunction zero(b, Eigen::VectorXd::Zero(b->size()));
  EXPECT_NEAR(l2_distance(zero, [](double) { return 2.0; }, 0.0, 1.0), 2.0, 1e-15);
  // mean of z^2 over the midpoint grid -> 1/3
  EXPECT_NEAR(l2_distance(zero, [](double z) { return z; }, 0.0, 1.0), std::sqrt(1.0 / 3.0), 1e-5);
}

TEST(Coverage, DegenerateCases) {
  std::vector<Interval> pinned(10, Interval{1.0, 1.0});
  EXPECT_EQ(coverage(pinned, 1.0), 1.0);
  // alpha = 1 collapses to the median: a continuous chain never hits theta0 exactly.
  std::mt19937_64 rng(1);
  std::normal_distribution<double> nd(1.0, 0.1);
  std::vector<Interval> points;
  for (int r = 0; r < 50; ++r) {
    std::vector<double> d(101);
    for (auto& x : d) x = nd(rng);
    points.push_back(credible_interval(d, 1.0));
  }
  EXPECT_EQ(coverage(points, 1.0), 0.0);
  EXPECT_THROW(coverage(std::vector<Interval>{}, 0.0), InvalidInput);
}

TEST(RunReplication, DeterministicRow) {
  const auto plan = small_plan();
  const auto truth = make_truth<LogisticModel>(plan, Stage::full);
  const auto a = run_replication<LogisticModel>(plan, truth, 60, 0, Stage::full);
  const auto b = run_replication<LogisticModel>(plan, truth, 60, 0, Stage::full);
  ASSERT_TRUE(a.ok) << a.error;
  EXPECT_EQ(report_csv_row(*a.report, a.seed), report_csv_row(*b.report, b.seed));
  const auto c = run_replication<LogisticModel>(plan, truth, 60, 1, Stage::full);
  EXPECT_NE(report_csv_row(*a.report, a.seed), report_csv_row(*c.report, c.seed));
}

TEST(RunReplication, TinySmokeAtDefaultChainLength) {
  ExperimentPlan plan;
  plan.n_grid = {50};
  plan.replications = 1;
  const auto t0 = std::chrono::steady_clock::now();
  for (ModelVariant v : {ModelVariant::logistic, ModelVariant::partly_linear}) {
    plan.model = v;
    const auto rows = run_cells(plan, {{50, 0, std::nullopt}}, Stage::full);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_TRUE(rows[0].ok) << rows[0].error;
    EXPECT_GT(rows[0].eta_l2, 0.0);
  }
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 60.0);
}

TEST(RunReplication, FailuresAreRecordedNotThrown) {
  auto plan = small_plan();
  plan.theta0 = 3.0;
  plan.prior_lo = 2.9;
  plan.prior_hi = 3.1;  // the MPLE lands on the boundary for most datasets
  plan.replications = 6;
  std::vector<Cell> cells;
  for (int r = 0; r < plan.replications; ++r) cells.push_back({60, r, std::nullopt});
  const auto rows = run_cells(plan, cells, Stage::full);
  ASSERT_EQ(rows.size(), 6u);
  EXPECT_GT(failure_rate(rows), 0.0);
  for (const auto& r : rows)
    if (!r.ok) EXPECT_FALSE(r.error.empty());
  std::ostringstream os;
  write_failures(os, rows);
  EXPECT_NE(os.str().find("# failure_rate="), std::string::npos);
  std::ostringstream rep;
  write_report_rows(rep, rows);
  const std::string text = rep.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
}

TEST(RateStudy, RequiresASpreadGrid) {
  auto plan = small_plan();
  plan.n_grid = {100, 200, 400};
  EXPECT_THROW(rate_study(plan), ConfigError);
  plan.n_grid = {100, 200, 400, 800};
  EXPECT_THROW(rate_study(plan), ConfigError);
}

TEST(RateStudy, ErrorsPositiveAndFixedLambdaFlattens) {
  auto plan = small_plan();
  plan.model = ModelVariant::partly_linear;
  plan.n_grid = {200, 400, 800, 1600, 3200};
  plan.replications = 8;
  plan.lambda_rule = parse_lambda_rule("fixed(0.3)");
  const auto st = rate_study(plan);
  for (const auto& c : st.cells) {
    EXPECT_GT(c.median_error, 0.0);
    EXPECT_EQ(c.n_failed, 0);
    EXPECT_GT(c.median_error, 0.4);
  }
  // lambda does not shrink: the fit collapses toward the linear null space, whose distance
  // from sin(2 pi v) is about 0.44, so the error stalls.
  EXPECT_GT(st.fit.slope, -0.2);
  EXPECT_FALSE(st.fit.pass);
}

TEST(LambdaStudy, Preconditions) {
  auto plan = small_plan();
  plan.lambda_grid = {0.3, 0.2};
  EXPECT_THROW(lambda_scaling_study(plan), ConfigError);
  plan.lambda_grid = {0.3, 0.2, 0.15, 0.1};
  plan.n_grid = {100, 200};
  EXPECT_THROW(lambda_scaling_study(plan), ConfigError);
  EXPECT_TRUE(lambda_in_regime(0.1, 1000, 2));
  EXPECT_FALSE(lambda_in_regime(0.01, 1000, 2));
  EXPECT_FALSE(lambda_in_regime(0.5, 1000, 2));
}

TEST(CoverageStudy, NeedsEnoughReplications) {
  auto plan = small_plan();
  plan.replications = 99;
  EXPECT_THROW(coverage_study(plan), ConfigError);
}

TEST(Emit, SelfDescribingAndByteIdentical) {
  auto plan = small_plan();
  plan.n_grid = {100, 200, 400, 1000};
  plan.replications = 2;
  const auto d1 = scratch_dir("emit1"), d2 = scratch_dir("emit2");
  plan.out = d1.string();
  const auto f1 = emit(plan, rate_study(plan));
  plan.out = d2.string();
  plan.threads = 2;
  const auto f2 = emit(plan, rate_study(plan));
  ASSERT_EQ(f1.size(), f2.size());
  for (std::size_t i = 0; i < f1.size(); ++i) {
    const std::string a = slurp(f1[i]);
    EXPECT_EQ(a, slurp(f2[i])) << f1[i];
    EXPECT_EQ(a.rfind("# study=rate\n# model=logistic\n", 0), 0u) << f1[i];
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}
