#pragma once

// Penalized B-spline representation of the nuisance function and its
// Sobolev roughness J^2(f) = int (f^{(k)}(z))^2 dz.
//
// A basis of Sobolev order k uses B-splines of order 2k (degree 2k - 1) on
// the interior knots with the boundary knots repeated 2k times, so
//     size() == interior_knots().size() + 2k
// and every polynomial of degree < 2k is exactly representable.
//
// The penalty lambda^2 J^2(f) can be read as a centred Gaussian prior on
// J(f) with variance 1 / (2 lambda^2); nothing in the code depends on that
// reading.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pps/errors.hpp"

namespace pps {

/// Gauss-Legendre nodes and weights on [-1, 1].
struct GaussLegendre {
  std::vector<double> nodes;
  std::vector<double> weights;

  explicit GaussLegendre(int n) : nodes(n), weights(n) {
    if (n < 1) throw InvalidInput("Gauss-Legendre rule needs at least one node");
    for (int i = 0; i < (n + 1) / 2; ++i) {
      double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
      double dp = 0.0;
      for (int it = 0; it < 100; ++it) {
        double p0 = 1.0, p1 = 0.0;
        for (int j = 1; j <= n; ++j) {
          const double p2 = p1;
          p1 = p0;
          p0 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p2) / j;
        }
        dp = n * (x * p0 - p1) / (x * x - 1.0);
        const double dx = p0 / dp;
        x -= dx;
        if (std::abs(dx) < 1e-16) break;
      }
      nodes[i] = -x;
      nodes[n - 1 - i] = x;
      weights[i] = weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    if (n % 2 == 1) nodes[n / 2] = 0.0;
  }
};

namespace detail {

/// Knot span index s with t[s] <= x < t[s+1] for a clamped knot vector
/// carrying `n_coef` coefficients of the given order; x == t.back() maps to the last span.
inline int find_span(std::span<const double> t, int order, int n_coef, double x) {
  if (x >= t[n_coef]) return n_coef - 1;
  auto it = std::upper_bound(t.begin() + order - 1, t.begin() + n_coef + 1, x);
  return static_cast<int>(it - t.begin()) - 1;
}

/// Nonzero basis values and derivatives at x (de Boor / Piegl-Tiller).
/// Returns ders[d][j] = B^{(d)}_{span-degree+j}(x) for d = 0..n_der, j = 0..degree.
inline std::vector<std::vector<double>> basis_derivatives(std::span<const double> t, int order, int span,
                                                          double x, int n_der) {
  const int p = order - 1;
  std::vector<std::vector<double>> ndu(p + 1, std::vector<double>(p + 1, 0.0));
  std::vector<double> left(p + 1, 0.0), right(p + 1, 0.0);
  ndu[0][0] = 1.0;
  for (int j = 1; j <= p; ++j) {
    left[j] = x - t[span + 1 - j];
    right[j] = t[span + j] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      ndu[j][r] = right[r + 1] + left[j - r];
      const double temp = ndu[r][j - 1] / ndu[j][r];
      ndu[r][j] = saved + right[r + 1] * temp;
      saved = left[j - r] * temp;
    }
    ndu[j][j] = saved;
  }
  std::vector<std::vector<double>> ders(n_der + 1, std::vector<double>(p + 1, 0.0));
  for (int j = 0; j <= p; ++j) ders[0][j] = ndu[j][p];
  const int top = std::min(n_der, p);
  std::vector<std::vector<double>> a(2, std::vector<double>(p + 1, 0.0));
  for (int r = 0; r <= p; ++r) {
    int s1 = 0, s2 = 1;
    a[0][0] = 1.0;
    for (int k = 1; k <= top; ++k) {
      double d = 0.0;
      const int rk = r - k, pk = p - k;
      if (r >= k) {
        a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
        d = a[s2][0] * ndu[rk][pk];
      }
      const int j1 = rk >= -1 ? 1 : -rk;
      const int j2 = r - 1 <= pk ? k - 1 : p - r;
      for (int j = j1; j <= j2; ++j) {
        a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][rk + j];
        d += a[s2][j] * ndu[rk + j][pk];
      }
      if (r <= pk) {
        a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
        d += a[s2][k] * ndu[r][pk];
      }
      ders[k][r] = d;
      std::swap(s1, s2);
    }
  }
  double scale = p;
  for (int k = 1; k <= top; ++k) {
    for (int j = 0; j <= p; ++j) ders[k][j] *= scale;
    scale *= p - k;
  }
  return ders;
}

}  // namespace detail

/// Nonzero basis values at one point: B_{first + j}(x) = values[j].
struct BasisRow {
  int first = 0;
  std::vector<double> values;
};

class SplineBasis {
 public:
  SplineBasis(double lo, double hi, int k, std::vector<double> interior_knots)
      : lo_(lo), hi_(hi), k_(k), interior_(std::move(interior_knots)) {
    if (!(lo < hi)) throw InvalidInput("spline interval must satisfy lo < hi");
    if (k < 1) throw InvalidInput("Sobolev order k must be >= 1");
    for (std::size_t i = 0; i < interior_.size(); ++i) {
      if (!(interior_[i] > lo && interior_[i] < hi))
        throw InvalidInput("knot " + std::to_string(interior_[i]) + " lies outside the open interval");
      if (i > 0 && !(interior_[i] > interior_[i - 1])) throw InvalidInput("knots must be strictly increasing");
    }
    const int ord = order();
    knots_.assign(ord, lo_);
    knots_.insert(knots_.end(), interior_.begin(), interior_.end());
    knots_.insert(knots_.end(), ord, hi_);
  }

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  /// Sobolev order k; the penalty integrates the k-th derivative.
  int sobolev_order() const { return k_; }
  /// B-spline order 2k.
  int order() const { return 2 * k_; }
  int degree() const { return order() - 1; }
  int size() const { return static_cast<int>(interior_.size()) + order(); }
  const std::vector<double>& interior_knots() const { return interior_; }
  const std::vector<double>& knot_vector() const { return knots_; }

  bool contains(double x) const { return x >= lo_ && x <= hi_; }

  /// Nonzero basis functions (or their `deriv`-th derivatives) at x.
  BasisRow row(double x, int deriv = 0) const {
    if (!contains(x)) throw DomainError("spline evaluated outside [lo, hi] at " + std::to_string(x));
    const int span = detail::find_span(knots_, order(), size(), x);
    auto ders = detail::basis_derivatives(knots_, order(), span, x, deriv);
    return {span - degree(), std::move(ders[deriv])};
  }

  bool same_as(const SplineBasis& other) const { return k_ == other.k_ && knots_ == other.knots_; }

 private:
  double lo_, hi_;
  int k_;
  std::vector<double> interior_;
  std::vector<double> knots_;
};

using BasisPtr = std::shared_ptr<const SplineBasis>;

inline BasisPtr build_basis(double lo, double hi, int k, std::vector<double> knots) {
  return std::make_shared<const SplineBasis>(lo, hi, k, std::move(knots));
}

/// Interior knots at empirical quantiles of `values`, at most min(#unique, cap) of them.
inline std::vector<double> quantile_knots(std::vector<double> values, double lo, double hi, int cap = 35) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  const int m = std::min<int>(static_cast<int>(values.size()), cap);
  std::vector<double> knots;
  if (m <= 0) return knots;
  for (int j = 1; j <= m; ++j) {
    const double h = (static_cast<double>(values.size()) - 1.0) * j / (m + 1.0);
    const auto i = static_cast<std::size_t>(h);
    const std::size_t i1 = std::min(i + 1, values.size() - 1);
    const double q = values[i] + (h - static_cast<double>(i)) * (values[i1] - values[i]);
    if (q > lo && q < hi && (knots.empty() || q > knots.back())) knots.push_back(q);
  }
  return knots;
}

struct SplineFunction {
  BasisPtr basis;
  Eigen::VectorXd coeffs;

  SplineFunction() = default;
  SplineFunction(BasisPtr b, Eigen::VectorXd c) : basis(std::move(b)), coeffs(std::move(c)) {
    if (basis && coeffs.size() != basis->size()) throw InvalidInput("coefficient count does not match basis size");
  }

  double operator()(double z) const { return derivative(z, 0); }

  double derivative(double z, int d) const {
    if (!basis) throw InvalidInput("spline function has no basis");
    const BasisRow r = basis->row(z, d);
    double s = 0.0;
    for (std::size_t j = 0; j < r.values.size(); ++j) s += coeffs[r.first + static_cast<int>(j)] * r.values[j];
    return s;
  }
};

inline double eval(const SplineFunction& f, double z) { return f(z); }

/// Omega[i][j] = int B_i^{(k)} B_j^{(k)} dz, stored together with the factorization
/// Omega = D^T G D, where D maps coefficients to the B-spline coefficients of the
/// k-th derivative and G is the Gram matrix of that order-k basis. J^2 is evaluated
/// through the factorization, so polynomials of degree < k give exactly zero for constants.
struct PenaltyMatrix {
  BasisPtr basis;
  Eigen::MatrixXd omega;
  Eigen::MatrixXd diff;
  Eigen::MatrixXd gram;
  Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic> diff_ext, gram_ext;

  int size() const { return static_cast<int>(omega.rows()); }

  using ExtVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

  double quadratic(const Eigen::VectorXd& c) const { return static_cast<double>(quadratic(ExtVector(c.cast<long double>()))); }

  /// Omega * c through the factorization.
  Eigen::VectorXd apply(const Eigen::VectorXd& c) const { return apply(ExtVector(c.cast<long double>())).cast<double>(); }

  // Extended precision: D c cancels heavily near the null space, and Newton's
  // gradient test sits on this term.
  long double quadratic(const ExtVector& c) const {
    const ExtVector d = diff_ext * c;
    return std::max(0.0L, d.dot(gram_ext * d));
  }
  ExtVector apply(const ExtVector& c) const {
    const ExtVector d = diff_ext * c;
    return diff_ext.transpose() * (gram_ext * d);
  }
};

/// `nodes_per_interval` defaults to k, which integrates the degree 2k-2 products exactly.
inline PenaltyMatrix penalty_matrix(const BasisPtr& basis, int nodes_per_interval = 0) {
  if (!basis) throw InvalidInput("penalty_matrix: null basis");
  const int k = basis->sobolev_order();
  const int n = basis->size();
  if (nodes_per_interval <= 0) nodes_per_interval = k;

  // Repeated differentiation: order 2k on t -> order k on t[k .. end-k].
  const std::vector<double>& t = basis->knot_vector();
  Eigen::MatrixXd diff = Eigen::MatrixXd::Identity(n, n);
  for (int step = 0; step < k; ++step) {
    const int ord = basis->order() - step;
    const int m = n - step;
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(m - 1, m);
    for (int i = 0; i < m - 1; ++i) {
      const double h = t[step + i + ord] - t[step + i + 1];
      d(i, i) = -(ord - 1) / h;
      d(i, i + 1) = (ord - 1) / h;
    }
    diff = d * diff;
  }

  const int m = n - k;
  const std::vector<double> reduced(t.begin() + k, t.end() - k);
  const GaussLegendre gl(nodes_per_interval);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t s = 0; s + 1 < reduced.size(); ++s) {
    const double a = reduced[s], b = reduced[s + 1];
    if (!(b > a)) continue;
    for (int q = 0; q < nodes_per_interval; ++q) {
      const double x = 0.5 * (a + b) + 0.5 * (b - a) * gl.nodes[q];
      const double w = 0.5 * (b - a) * gl.weights[q];
      const int span = static_cast<int>(s);
      auto vals = detail::basis_derivatives(reduced, k, span, x, 0)[0];
      const int first = span - (k - 1);
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) gram(first + i, first + j) += w * vals[i] * vals[j];
    }
  }
  PenaltyMatrix pm;
  pm.basis = basis;
  pm.omega = diff.transpose() * gram * diff;
  pm.omega = 0.5 * (pm.omega + pm.omega.transpose()).eval();
  pm.diff = std::move(diff);
  pm.gram = std::move(gram);
  pm.diff_ext = pm.diff.cast<long double>();
  pm.gram_ext = pm.gram.cast<long double>();
  return pm;
}

/// J^2(f) = c^T Omega c.
inline double roughness(const SplineFunction& f, const PenaltyMatrix& omega) {
  if (!f.basis || !omega.basis || !f.basis->same_as(*omega.basis) || f.coeffs.size() != omega.size())
    throw InvalidInput("roughness: spline and penalty matrix use different bases");
  return omega.quadratic(f.coeffs);
}

/// Dense n x size() design matrix of basis values.
inline Eigen::MatrixXd design_matrix(const SplineBasis& basis, std::span<const double> x) {
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.size()), basis.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const BasisRow r = basis.row(x[i]);
    for (std::size_t j = 0; j < r.values.size(); ++j) b(static_cast<Eigen::Index>(i), r.first + j) = r.values[j];
  }
  return b;
}

/// Least-squares projection of (x, y) onto the basis, with an optional roughness penalty.
inline SplineFunction fit_least_squares(const BasisPtr& basis, std::span<const double> x, std::span<const double> y,
                                        double penalty = 0.0) {
  if (x.size() != y.size() || x.empty()) throw InvalidInput("fit_least_squares: bad sample");
  const Eigen::MatrixXd b = design_matrix(*basis, x);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  Eigen::MatrixXd lhs = b.transpose() * b;
  if (penalty > 0.0) lhs += penalty * penalty_matrix(basis).omega;
  Eigen::VectorXd c = lhs.completeOrthogonalDecomposition().solve(b.transpose() * yv);
  return {basis, std::move(c)};
}

}  // namespace pps
