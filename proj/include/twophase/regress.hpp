#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "twophase/common.hpp"
#include "twophase/datamodel.hpp"

namespace twophase {

/// One regressor: covariate `column` raised to `power`.
struct Term {
  std::size_t column = 0;
  int power = 1;
  bool operator==(const Term&) const = default;
};

/// Covariate transform turning a raw covariate vector into a design row.
struct DesignSpec {
  bool intercept = true;
  std::vector<Term> terms;

  static DesignSpec intercept_only();
  /// 1, x1, ..., xk
  static DesignSpec linear(std::size_t dim);
  /// 1, x1, x1^2, ..., xk, xk^2
  static DesignSpec with_squares(std::size_t dim);

  std::size_t n_coef() const { return terms.size() + (intercept ? 1 : 0); }
  /// Smallest covariate dimension the spec can be applied to.
  std::size_t min_dim() const;
  std::vector<std::string> names() const;

  void fill_row(std::span<const double> x, double* out) const;
  Eigen::VectorXd row(std::span<const double> x) const;
  /// Rows of `x` are raw covariate vectors.
  Eigen::MatrixXd matrix(const Eigen::MatrixXd& x) const;

  bool operator==(const DesignSpec&) const = default;
};

/// Stacks covariate vectors into a row-per-observation matrix.
Eigen::MatrixXd stack_rows(std::span<const Covariates> rows);

enum class MeanMethod { least_squares, huber };

struct FitOptions {
  double tol = 1e-8;
  int max_iter = 100;
};

struct MeanFitOptions : FitOptions {
  MeanMethod method = MeanMethod::least_squares;
  double huber_k = 1.345;
};

struct MeanModelFit {
  DesignSpec spec;
  MeanMethod method = MeanMethod::least_squares;
  Eigen::VectorXd coefficients;
  /// Sampling covariance of the coefficients (OLS formula).
  Eigen::MatrixXd covariance;
  double residual_variance = 0.0;
  bool converged = true;
  int iterations = 0;

  double predict(std::span<const double> x) const;
};

MeanModelFit fit_mean(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const DesignSpec& spec,
                      const MeanFitOptions& options = {});

struct VarianceFitOptions : FitOptions {
  /// Inflate squared residuals by m/(m - p) before fitting.
  bool reml = false;
};

/// log Var(Y|x) = design(x)' gamma
struct VarianceModelFit {
  DesignSpec spec;
  Eigen::VectorXd coefficients;
  /// Inverse expected information, 2 (X'X)^-1.
  Eigen::MatrixXd covariance;
  bool converged = true;
  int iterations = 0;
  /// True when the linear predictor had to be clipped during fitting.
  bool clipped = false;

  double log_predict(std::span<const double> x) const;
  /// Always strictly positive; the linear predictor is clipped to [-700, 700].
  double predict(std::span<const double> x) const;
};

/// Squared residuals of y about `mean_fit` are modelled as exp(eta) * chi2_1.
VarianceModelFit fit_variance(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              const MeanModelFit& mean_fit, const DesignSpec& spec,
                              const VarianceFitOptions& options = {});
VarianceModelFit fit_variance_residuals(const Eigen::MatrixXd& x, const Eigen::VectorXd& sq_resid,
                                        const DesignSpec& spec,
                                        const VarianceFitOptions& options = {});

/// Gaussian log-likelihood (up to constants) of squared residuals under gamma.
double variance_log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& sq_resid,
                               const Eigen::VectorXd& gamma);

enum class GlmFamily { logistic, beta };

struct GlmOptions : FitOptions {
  /// Coefficient norm treated as divergence in binary regression.
  double separation_norm = 30.0;
  /// Apply (y (m - 1) + 0.5) / m to beta responses instead of refusing 0 and 1.
  bool compress_boundary = false;
  /// Upper bound on the beta precision; reached for (near-)constant responses.
  double max_precision = 1e8;
};

struct GlmFit {
  GlmFamily family = GlmFamily::logistic;
  DesignSpec spec;
  Eigen::VectorXd coefficients;
  /// Inverse Fisher information; for beta the last row/column is the precision.
  Eigen::MatrixXd covariance;
  /// Beta precision phi; zero for logistic.
  double dispersion = 0.0;
  bool converged = true;
  int iterations = 0;

  /// Mean response expit(design(x)' b).
  double predict(std::span<const double> x) const;
  double linear_predictor(std::span<const double> x) const;
};

GlmFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const DesignSpec& spec,
                    const GlmOptions& options = {});
GlmFit fit_beta(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const DesignSpec& spec,
                const GlmOptions& options = {});

double logistic_log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                               const Eigen::VectorXd& b);
double beta_log_likelihood(const Eigen::MatrixXd& design, const Eigen::VectorXd& y,
                           const Eigen::VectorXd& b, double phi);

/// Var[E(Y|W0)] / Var(Y), clipped to [0, 1]. Predictions are taken over all
/// frame rows. Var(Y) is `var_y` when given, otherwise estimated from the
/// pilot outcomes (or all observed outcomes when there is no pilot).
double compute_pve(const MeanModelFit& mean_w0, const PopulationFrame& frame,
                   std::optional<double> var_y = std::nullopt);

}  // namespace twophase
