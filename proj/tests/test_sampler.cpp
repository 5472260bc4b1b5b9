#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "pps/sampler.hpp"

using namespace pps;

namespace {

// Gaussian target whose inner solve "fails" on a fixed region.
struct FlakyTarget {
  double fail_above = 1.0;
  ProfileEvaluation evaluate(double theta, const Eigen::VectorXd* = nullptr) const {
    ProfileEvaluation ev;
    ev.theta = theta;
    ev.log_pl = -0.5 * theta * theta;
    ev.converged = theta <= fail_above;
    return ev;
  }
  std::size_t n() const { return 1; }
};

McmcConfig config(std::uint64_t seed, int n_iter = 20000, int burn_in = 2000) {
  McmcConfig c;
  c.n_iter = n_iter;
  c.burn_in = burn_in;
  c.proposal_sd = 1.0;
  c.seed = seed;
  c.init = 0.0;
  return c;
}

}  // namespace

static_assert(ProfileTarget<GaussianProfileTarget>);
static_assert(ProfileTarget<FlakyTarget>);

TEST(McmcConfig, Validates) {
  auto c = config(1);
  c.burn_in = c.n_iter;
  EXPECT_THROW(c.validate(), ConfigError);
  c = config(1);
  c.proposal_sd = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(Prior::flat(1.0, 1.0), ConfigError);
  EXPECT_THROW(Prior::gaussian(0.0, -1.0), ConfigError);
  c = config(1);
  c.init = 5.0;
  EXPECT_THROW(run_chain(GaussianProfileTarget{}, Prior::flat(-1.0, 1.0), c), ConfigError);
}

TEST(Prior, Densities) {
  const auto f = Prior::flat(-2.0, 2.0);
  EXPECT_NEAR(f.log_density(0.3), -std::log(4.0), 1e-15);
  EXPECT_EQ(f.log_density(2.5), -INFINITY);
  EXPECT_EQ(f.center(), 0.0);
  const auto g = Prior::gaussian(1.0, 2.0);
  EXPECT_NEAR(g.log_density(3.0) - g.log_density(1.0), -0.5, 1e-15);
  EXPECT_TRUE(g.in_support(1e6));
}

TEST(RunChain, CalibratedOnGaussianTarget) {
  const GaussianProfileTarget t{0.7, 0.3, 1};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Chain ch = run_chain(t, Prior::flat(-10.0, 10.0), config(seed));
    const auto s = summarize(ch, 0.7, 1);
    EXPECT_LT(std::abs(s.mean - 0.7), 3.0 * s.mc_se) << seed;
    EXPECT_NEAR(s.variance, 0.09, 0.09 * 0.1) << seed;
    EXPECT_NEAR(ch.acceptance_rate, 0.35, 0.05) << seed;
  }
}

TEST(RunChain, GaussianPriorShiftsPosterior) {
  // N(0, 1) likelihood times N(2, 1) prior is N(1, 1/2).
  const GaussianProfileTarget t{0.0, 1.0, 1};
  const Chain ch = run_chain(t, Prior::gaussian(2.0, 1.0), config(3, 60000, 5000));
  const auto s = summarize(ch, 1.0, 1);
  EXPECT_LT(std::abs(s.mean - 1.0), 3.0 * s.mc_se);
  EXPECT_NEAR(s.variance, 0.5, 0.05);
}

TEST(RunChain, FlatPriorTruncates) {
  const GaussianProfileTarget t{0.0, 1.0, 1};
  const Chain ch = run_chain(t, Prior::flat(0.0, 5.0), config(4, 40000, 4000));
  for (double d : ch.draws) ASSERT_GE(d, 0.0);
  // half-normal mean sqrt(2/pi)
  const auto s = summarize(ch, 0.0, 1);
  EXPECT_LT(std::abs(s.mean - std::sqrt(2.0 / M_PI)), 3.0 * s.mc_se);
}

TEST(RunChain, DeterministicPerSeed) {
  const GaussianProfileTarget t{0.0, 1.0, 1};
  const auto a = run_chain(t, Prior::flat(-5.0, 5.0), config(9, 3000, 500));
  const auto b = run_chain(t, Prior::flat(-5.0, 5.0), config(9, 3000, 500));
  const auto c = run_chain(t, Prior::flat(-5.0, 5.0), config(10, 3000, 500));
  EXPECT_EQ(a.draws, b.draws);
  EXPECT_NE(a.draws, c.draws);
  std::ostringstream oa, ob;
  write_chain_csv(oa, a);
  write_chain_csv(ob, b);
  EXPECT_EQ(oa.str(), ob.str());
  EXPECT_EQ(oa.str().substr(0, oa.str().find('\n')), "iter,theta,accepted,log_post");
}

TEST(RunChain, AdaptationStopsAtBurnIn) {
  const GaussianProfileTarget t{0.0, 1.0, 1};
  const auto shorter = run_chain(t, Prior::flat(-5.0, 5.0), config(5, 3000, 1000));
  const auto longer = run_chain(t, Prior::flat(-5.0, 5.0), config(5, 6000, 1000));
  EXPECT_EQ(shorter.final_proposal_sd, longer.final_proposal_sd);
  for (std::size_t i = 0; i < shorter.trace.size(); ++i) ASSERT_EQ(shorter.trace[i].theta, longer.trace[i].theta);

  auto fixed = config(5, 3000, 1000);
  fixed.adapt = false;
  fixed.proposal_sd = 0.37;
  EXPECT_EQ(run_chain(t, Prior::flat(-5.0, 5.0), fixed).final_proposal_sd, 0.37);
}

TEST(RunChain, InnerFailuresRejectedThenAbort) {
  auto c = config(6, 20000, 1000);
  const auto ch = run_chain(FlakyTarget{8.0}, Prior::flat(-10.0, 10.0), c);
  EXPECT_GT(ch.n_inner_failures, 0);
  EXPECT_LE(ch.n_inner_failures, 200);
  for (double d : ch.draws) ASSERT_LE(d, 8.0);
  EXPECT_THROW(run_chain(FlakyTarget{0.5}, Prior::flat(-10.0, 10.0), c), NumericalError);
}

TEST(Summarize, QuantilesOfKnownDraws) {
  const std::vector<double> d{1, 2, 3, 4, 5};
  const auto s = summarize(d, 3.0, 4, {0.25, 0.5, 0.9});
  EXPECT_EQ(s.mean, 3.0);
  EXPECT_EQ(s.variance, 2.5);
  EXPECT_EQ(s.quantiles.at(0.25), 2.0);
  EXPECT_EQ(s.quantiles.at(0.5), 3.0);
  EXPECT_NEAR(s.quantiles.at(0.9), 4.6, 1e-12);
  EXPECT_NEAR(s.centered_quantiles.at(0.9), 2.0 * 1.6, 1e-12);
  EXPECT_THROW(summarize(std::vector<double>{}, 0.0, 1), InvalidInput);
}

TEST(StandardizedKs, KnownValues) {
  // One draw at theta_hat: F_n jumps 0 -> 1 where Phi = 1/2.
  EXPECT_NEAR(standardized_ks(std::vector<double>{2.0}, 2.0, 1.0, 1), 0.5, 1e-12);
  // Draws at the N(0,1) quartiles scaled back by sqrt(n I) = 2.
  const double q = normal_quantile(0.75);
  const std::vector<double> d{-q / 2.0, q / 2.0};
  EXPECT_NEAR(standardized_ks(d, 0.0, 1.0, 4), 0.25, 1e-12);
  EXPECT_THROW(standardized_ks(d, 0.0, 0.0, 4), InvalidInput);
}

TEST(WriteSummary, KeyValueLines) {
  const GaussianProfileTarget t{0.0, 1.0, 1};
  const auto ch = run_chain(t, Prior::flat(-5.0, 5.0), config(7, 2000, 500));
  std::ostringstream os;
  write_summary(os, ch, summarize(ch, 0.0, 1));
  std::istringstream is(os.str());
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ASSERT_NE(line.find('='), std::string::npos) << line;
    ++n;
  }
  EXPECT_GT(n, 10);
  EXPECT_NE(os.str().find("draws=1500\n"), std::string::npos);
}
