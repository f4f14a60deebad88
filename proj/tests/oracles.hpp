#pragma once

// Test-side reference computations, written independently of the library
// code paths they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Least squares via the normal equations.
inline Eigen::VectorXd ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::MatrixXd xtx = x.transpose() * x;
  return xtx.llt().solve(x.transpose() * y);
}

/// Central-difference gradient.
inline Eigen::VectorXd gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& at, double h = 1e-5) {
  Eigen::VectorXd g(at.size());
  for (Eigen::Index k = 0; k < at.size(); ++k) {
    Eigen::VectorXd a = at, b = at;
    a(k) += h;
    b(k) -= h;
    g(k) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double logistic_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& b) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double eta = x.row(i).dot(b);
    ll += y(i) * eta - std::log1p(std::exp(eta));
  }
  return ll;
}

inline double beta_loglik(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                          const Eigen::VectorXd& b, double phi) {
  double ll = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = 1.0 / (1.0 + std::exp(-x.row(i).dot(b)));
    const double a = mu * phi, c = (1.0 - mu) * phi;
    ll += std::lgamma(phi) - std::lgamma(a) - std::lgamma(c) + (a - 1.0) * std::log(y(i)) +
          (c - 1.0) * std::log(1.0 - y(i));
  }
  return ll;
}

/// A discrete design problem written out point by point.
struct Instance {
  std::vector<double> p, lambda1, v1, v2, c2;
  double n = 0.0, n_e = 0.0, budget = 0.0, c0 = 0.0, c1 = 0.0;

  double outcome_budget() const { return budget - c0 - n_e * c1; }
  std::size_t size() const { return p.size(); }
};

/// Total expected cost C0 + n_e C1 + n sum p lambda1 lambda2 C2.
inline double cost(const Instance& s, const std::vector<double>& l2) {
  double e = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) e += s.p[k] * s.lambda1[k] * l2[k] * s.c2[k];
  return s.c0 + s.n_e * s.c1 + s.n * e;
}

/// Variance by definition:
/// Var(Y) + E[(1/l1 - 1) Var(Y|W0)] + E[(1/l2 - 1) v2 / l1], where every
/// support point carries its own W0 so Var(Y|W0) = v1 + v2.
inline double variance_by_definition(const Instance& s, const std::vector<double>& l2,
                                     double var_y) {
  double v = var_y;
  for (std::size_t k = 0; k < s.size(); ++k) {
    v += s.p[k] * (1.0 / s.lambda1[k] - 1.0) * (s.v1[k] + s.v2[k]);
    v += s.p[k] * (1.0 / l2[k] - 1.0) * s.v2[k] / s.lambda1[k];
  }
  return v;
}

/// Var(Y) implied by PVE and the conditional variances.
inline double implied_var_y(const Instance& s, double pve) {
  double e = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) e += s.p[k] * (s.v1[k] + s.v2[k]);
  return e / (1.0 - pve);
}

/// The design-dependent part of the variance, sum p v2 / (l1 l2).
inline double variance_part(const Instance& s, const std::vector<double>& l2) {
  double v = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) v += s.p[k] * s.v2[k] / (s.lambda1[k] * l2[k]);
  return v;
}

struct GridResult {
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> argmin;
  std::size_t evaluated = 0;
};

/// Exhaustive search over lambda2 in {step, 2 step, ..., 1} for all but the
/// last coordinate; the last is solved from the budget equation and must
/// also lie in (0, 1].
inline GridResult grid_search(const Instance& s, double step = 1e-3) {
  const std::size_t m = s.size();
  const int steps = static_cast<int>(std::lround(1.0 / step));
  std::vector<double> a(m);
  for (std::size_t k = 0; k < m; ++k) a[k] = s.n * s.p[k] * s.lambda1[k] * s.c2[k];
  const double total = s.outcome_budget();
  GridResult out;
  std::vector<double> l2(m);
  // partial sums let each level prune coordinates that already overspend
  std::function<void(std::size_t, double)> rec = [&](std::size_t level, double spent) {
    if (level == m - 1) {
      const double last = (total - spent) / a[m - 1];
      if (!(last > 0.0 && last <= 1.0)) return;
      l2[m - 1] = last;
      const double v = variance_part(s, l2);
      ++out.evaluated;
      if (v < out.best) {
        out.best = v;
        out.argmin = l2;
      }
      return;
    }
    // remaining coordinates need spend in (0, sum a]
    double rest_max = 0.0;
    for (std::size_t k = level + 1; k < m; ++k) rest_max += a[k];
    const double need = (total - spent - rest_max) / a[level];
    const int first = static_cast<int>(std::clamp(std::floor(need / step), 1.0, steps + 1.0));
    for (int i = first; i <= steps; ++i) {
      const double x = i * step;
      const double sp = spent + a[level] * x;
      if (sp >= total) break;
      if (total - sp > rest_max) continue;
      l2[level] = x;
      rec(level + 1, sp);
    }
  };
  rec(0, 0.0);
  return out;
}

/// Random instance generator: support size m, positive variances and costs,
/// with the outcome budget chosen so every lambda2* is at most `max_l2`.
inline Instance random_instance(std::mt19937_64& rng, std::size_t m, double max_l2 = 0.9,
                                bool constant_cost = false) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Instance s;
  double psum = 0.0;
  for (std::size_t k = 0; k < m; ++k) {
    s.p.push_back(0.2 + u(rng));
    psum += s.p.back();
    s.lambda1.push_back(0.2 + 0.8 * u(rng));
    s.v1.push_back(0.1 + 2.0 * u(rng));
    s.v2.push_back(0.1 + 5.0 * u(rng));
    s.c2.push_back(constant_cost ? 3.0 : 0.5 + 4.0 * u(rng));
  }
  for (double& p : s.p) p /= psum;
  s.n = std::floor(500.0 + 5000.0 * u(rng));
  s.n_e = std::floor(s.n * (0.2 + 0.6 * u(rng)));
  s.c0 = 100.0 * u(rng);
  s.c1 = 0.5 * u(rng);
  // lambda2*_k = sqrt(v2/c2) bud / (n l1 E''), so pick bud to cap the largest at max_l2
  double e2 = 0.0;
  for (std::size_t k = 0; k < m; ++k) e2 += s.p[k] * std::sqrt(s.c2[k] * s.v2[k]);
  double worst = 0.0;
  for (std::size_t k = 0; k < m; ++k)
    worst = std::max(worst, std::sqrt(s.v2[k] / s.c2[k]) / (s.n * s.lambda1[k] * e2));
  const double bud = max_l2 * (0.3 + 0.7 * u(rng)) / worst;
  s.budget = s.c0 + s.n_e * s.c1 + bud;
  return s;
}

}  // namespace oracle
