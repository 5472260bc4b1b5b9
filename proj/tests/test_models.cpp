#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "pps/models.hpp"

using namespace pps;

namespace {

BasisPtr unit_basis(int k = 2) { return build_basis(0.0, 1.0, k, {0.2, 0.4, 0.6, 0.8}); }

template <class Model>
Dataset<Model> make_random_data(std::mt19937_64& rng, int n);

template <>
Dataset<LogisticModel> make_random_data<LogisticModel>(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset<LogisticModel> d;
  for (int i = 0; i < n; ++i) d.push_back({u(rng) < 0.5 ? 1 : 0, u(rng), u(rng)});
  return d;
}

template <>
Dataset<PartlyLinearModel> make_random_data<PartlyLinearModel>(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0), c(-1.0, 2.0);
  Dataset<PartlyLinearModel> d;
  for (int i = 0; i < n; ++i) d.push_back({c(rng), u(rng) < 0.5 ? 1 : 0, u(rng), u(rng)});
  return d;
}

// Central finite differences of the value (for the gradient) and of the analytic
// gradient (for the Hessian), over (theta, coeffs).
template <class Model>
void check_derivatives_by_finite_differences(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 0.5);
  auto basis = unit_basis();
  const auto data = make_random_data<Model>(rng, 20);
  const DesignCache<Model> design(data, *basis);
  const double theta = nd(rng);
  Eigen::VectorXd c(basis->size());
  for (auto& v : c) v = nd(rng);

  const double h = 1e-5;
  const auto full = loglik_grad_hess<Model>(design, theta, c, IncludeTheta::yes);
  auto at = [&](const Eigen::VectorXd& x) { return loglik_grad_hess<Model>(design, x[0], x.tail(c.size()).eval(), IncludeTheta::yes); };
  Eigen::VectorXd x(c.size() + 1);
  x << theta, c;
  double worst_grad = 0.0, worst_hess = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += h;
    xm[j] -= h;
    const auto fp = at(xp), fm = at(xm);
    const double fd = (fp.value - fm.value) / (2 * h);
    worst_grad = std::max(worst_grad, std::abs(fd - full.gradient[j]) / std::max(1.0, std::abs(fd)));
    const Eigen::VectorXd col = (fp.gradient - fm.gradient) / (2 * h);
    for (Eigen::Index i = 0; i < x.size(); ++i)
      worst_hess = std::max(worst_hess, std::abs(col[i] - full.hessian(i, j)) / std::max(1.0, std::abs(col[i])));
  }
  EXPECT_LT(worst_grad, 1e-6) << "seed " << seed;
  EXPECT_LT(worst_hess, 1e-6) << "seed " << seed;

  // coefficient-only call agrees with the joint one
  const auto coef = loglik_grad_hess<Model>(design, theta, c);
  EXPECT_NEAR(coef.value, full.value, 1e-12);
  EXPECT_LT((coef.gradient - full.gradient.tail(c.size())).cwiseAbs().maxCoeff(), 1e-12);
}

// E[g(W, F)] over W ~ Uniform(0, 1) by 40-point Gauss-Legendre.
template <class F>
double integrate01(F&& f, int nodes = 40) {
  const GaussLegendre gl(nodes);
  double s = 0.0;
  for (int i = 0; i < nodes; ++i) s += 0.5 * gl.weights[i] * f(0.5 + 0.5 * gl.nodes[i]);
  return s;
}

}  // namespace

TEST(LoglikPartlyLinear, ReferenceValues) {
  auto b = unit_basis();
  SplineFunction zero(b, Eigen::VectorXd::Zero(b->size()));
  EXPECT_NEAR(loglik_partly_linear(0.0, zero, {0.0, 1, 0.3, 0.5}), std::log(0.5), 1e-12);
  EXPECT_NEAR(loglik_partly_linear(0.0, zero, {0.0, 0, 0.3, 0.5}), std::log(0.5), 1e-12);
  EXPECT_NEAR(loglik_partly_linear(0.0, zero, {-40.0, 1, 0.3, 0.5}), std::log(1e-10), 1e-9);
  EXPECT_NEAR(loglik_partly_linear(0.0, zero, {-40.0, 1, 0.3, 0.5}), -23.0259, 1e-4);
  // q = c - theta u - f(v) = 1 - 2 * 0.5 = 0
  EXPECT_NEAR(loglik_partly_linear(2.0, zero, {1.0, 1, 0.5, 0.1}), std::log(0.5), 1e-12);
}

TEST(LoglikLogistic, ReferenceValues) {
  auto b = unit_basis();
  SplineFunction zero(b, Eigen::VectorXd::Zero(b->size()));
  EXPECT_NEAR(loglik_logistic(0.0, zero, {1, 0.4, 0.5}), std::log(0.5), 1e-12);
  const double big = loglik_logistic(100.0, zero, {1, 1.0, 0.5});
  EXPECT_LE(big, 0.0);
  EXPECT_GT(big, -1e-40);
  EXPECT_NEAR(loglik_logistic(2.0, zero, {0, 1.0, 0.5}), -2.0 - std::log1p(std::exp(-2.0)), 1e-12);
  EXPECT_NEAR(loglik_logistic(2.0, zero, {0, 1.0, 0.5}), -2.126928, 1e-6);
  EXPECT_TRUE(std::isfinite(loglik_logistic(-800.0, zero, {1, 1.0, 0.5})));
}

TEST(LoglikGradHess, FiniteDifferencesLogistic) {
  for (std::uint64_t s = 1; s <= 50; ++s) check_derivatives_by_finite_differences<LogisticModel>(s);
}

TEST(LoglikGradHess, FiniteDifferencesPartlyLinear) {
  for (std::uint64_t s = 1; s <= 50; ++s) check_derivatives_by_finite_differences<PartlyLinearModel>(s);
}

TEST(LoglikGradHess, GradientVanishesOffTheSupport) {
  auto b = unit_basis();
  Dataset<LogisticModel> one{{1, 0.5, 0.05}};
  const auto d = loglik_grad_hess<LogisticModel>(one, *b, 0.3, Eigen::VectorXd::Zero(b->size()));
  const BasisRow r = b->row(0.05);
  for (int j = 0; j < b->size(); ++j) {
    const bool in_support = j >= r.first && j < r.first + static_cast<int>(r.values.size()) && r.values[j - r.first] != 0.0;
    if (!in_support) EXPECT_EQ(d.gradient[j], 0.0) << j;
  }
}

TEST(LoglikGradHess, DimensionMismatch) {
  auto b = unit_basis();
  Dataset<LogisticModel> one{{1, 0.5, 0.5}};
  EXPECT_THROW(loglik_grad_hess<LogisticModel>(one, *b, 0.0, Eigen::VectorXd::Zero(3)), InvalidInput);
}

TEST(LoglikGradHess, LogisticJointHessianIsNegativeSemidefinite) {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> nd(0.0, 1.5);
  auto b = unit_basis();
  for (int rep = 0; rep < 100; ++rep) {
    const auto data = make_random_data<LogisticModel>(rng, 20);
    Eigen::VectorXd c(b->size());
    for (auto& v : c) v = nd(rng);
    const auto d = loglik_grad_hess<LogisticModel>(data, *b, nd(rng), c, IncludeTheta::yes);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(d.hessian);
    const double scale = d.hessian.norm();
    EXPECT_LE(es.eigenvalues().maxCoeff(), 1e-8 * scale);
  }
}

TEST(Simulate, ValidatesAndIsDeterministic) {
  const auto f0 = truth_by_name("cospi").fn;
  EXPECT_THROW(simulate(LogisticModel{}, 1.0, f0, 0, 1), InvalidInput);
  EXPECT_EQ(simulate(LogisticModel{}, 1.0, f0, 50, 9), simulate(LogisticModel{}, 1.0, f0, 50, 9));
  EXPECT_NE(simulate(LogisticModel{}, 1.0, f0, 50, 9), simulate(LogisticModel{}, 1.0, f0, 50, 10));
  const auto g0 = truth_by_name("sin2pi").fn;
  EXPECT_EQ(simulate(PartlyLinearModel{}, 1.0, g0, 50, 3), simulate(PartlyLinearModel{}, 1.0, g0, 50, 3));
}

TEST(Simulate, LogisticNullIsBalanced) {
  const auto data = simulate(LogisticModel{}, 0.0, truth_by_name("zero").fn, 100000, 17);
  double s = 0.0;
  for (const auto& o : data) s += o.y;
  EXPECT_NEAR(s / data.size(), 0.5, 0.005);
}

TEST(ScoreAtTruth, MeanWithinThreeStandardErrors) {
  {
    const auto f0 = truth_by_name("cospi").fn;
    const auto data = simulate(LogisticModel{}, 1.0, f0, 20000, 5);
    std::vector<double> s;
    for (const auto& o : data) s.push_back(theta_score<LogisticModel>(1.0, f0, o));
    EXPECT_LT(std::abs(mean(s)), 3.0 * std::sqrt(variance(s) / s.size()));
  }
  {
    const auto f0 = truth_by_name("sin2pi").fn;
    const auto data = simulate(PartlyLinearModel{}, 1.0, f0, 20000, 6);
    std::vector<double> s;
    for (const auto& o : data) s.push_back(theta_score<PartlyLinearModel>(1.0, f0, o));
    EXPECT_LT(std::abs(mean(s)), 3.0 * std::sqrt(variance(s) / s.size()));
  }
}

TEST(EfficientScore, LogisticNullClosedForm) {
  const auto esi = efficient_score_info(LogisticModel{}, ModelSpec::logistic(), 0.0, truth_by_name("zero").fn);
  EXPECT_NEAR(esi.info, 1.0 / 48.0, 0.02 / 48.0);
  for (double z : {0.0, 0.3, 0.77, 1.0}) EXPECT_NEAR(esi.h0(z), 0.5, 0.01);
}

TEST(EfficientScore, LogisticIndependentDesignConstantEta) {
  const double theta0 = 1.3, eta = -0.4;
  const auto esi = efficient_score_info(LogisticModel{}, ModelSpec::logistic(), theta0, [=](double) { return eta; });
  auto fdot = [&](double w) {
    const double f = logistic(theta0 * w + eta);
    return f * (1 - f);
  };
  const double h = integrate01([&](double w) { return w * fdot(w); }) / integrate01(fdot);
  const double info = integrate01([&](double w) { return fdot(w) * (w - h) * (w - h); });
  for (double z : {0.1, 0.5, 0.9}) EXPECT_NEAR(esi.h0(z), h, 5e-3);
  EXPECT_NEAR(esi.info, info, 0.02 * info);
}

TEST(EfficientScore, PartlyLinearIndependentDesignConstantF) {
  const double theta0 = 1.0;
  const auto esi = efficient_score_info(PartlyLinearModel{}, ModelSpec::partly_linear(), theta0, truth_by_name("zero").fn);
  // E[Q^2 | u, c] = phi^2 / (Phi (1 - Phi)), C ~ Uniform(-1, 2)
  auto weight = [&](double u) {
    return integrate01([&](double t) {
      const double q = -1.0 + 3.0 * t - theta0 * u;
      const double phi = normal_pdf(q);
      return phi * phi / (normal_cdf(q) * normal_sf(q));
    });
  };
  const double h = integrate01([&](double u) { return u * weight(u); }) / integrate01(weight);
  const double info = integrate01([&](double u) { return (u - h) * (u - h) * weight(u); });
  for (double v : {0.05, 0.5, 0.95}) EXPECT_NEAR(esi.h0(v), h, 5e-3);
  EXPECT_NEAR(esi.info, info, 0.02 * info);

  // efficient score has mean ~0 at the truth
  const auto data = simulate(PartlyLinearModel{}, theta0, truth_by_name("zero").fn, 20000, 8);
  std::vector<double> s;
  for (const auto& o : data) s.push_back(esi.score_fn(o));
  EXPECT_LT(std::abs(mean(s)), 3.0 * std::sqrt(variance(s) / s.size()));
  EXPECT_NEAR(variance(s), esi.info, 0.1 * esi.info);
}

TEST(EfficientScore, DegenerateDesignIsNotIdentifiable) {
  CovariateDesign design;
  design.sample_x_given_s = [](Rng&, double s) { return s; };
  EXPECT_THROW(efficient_score_info(PartlyLinearModel{}, ModelSpec::partly_linear(), 1.0, truth_by_name("sin2pi").fn, design),
               IdentifiabilityError);
  EXPECT_THROW(efficient_score_info(LogisticModel{}, ModelSpec::logistic(), 1.0, truth_by_name("cospi").fn, design),
               IdentifiabilityError);
}

TEST(DatasetCsv, RoundTripAndErrors) {
  const auto pl = simulate(PartlyLinearModel{}, 1.0, truth_by_name("sin2pi").fn, 30, 2);
  std::stringstream s1;
  write_csv(s1, std::span<const PartlyLinearObservation>(pl));
  EXPECT_EQ(read_csv(PartlyLinearModel{}, s1), pl);

  const auto lg = simulate(LogisticModel{}, 1.0, truth_by_name("cospi").fn, 30, 2);
  std::stringstream s2;
  write_csv(s2, std::span<const LogisticObservation>(lg));
  EXPECT_EQ(read_csv(LogisticModel{}, s2), lg);

  std::stringstream bad_header("y,z,w\n1,0.5,0.5\n");
  EXPECT_THROW(read_csv(LogisticModel{}, bad_header), InvalidInput);
  std::stringstream bad_indicator("y,w,z\n2,0.5,0.5\n");
  EXPECT_THROW(read_csv(LogisticModel{}, bad_indicator), InvalidInput);
  std::stringstream bad_cell("c,delta,u,v\n0.1,1,abc,0.5\n");
  EXPECT_THROW(read_csv(PartlyLinearModel{}, bad_cell), InvalidInput);
}
