#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include <Eigen/Dense>

#include "twophase/datamodel.hpp"
#include "twophase/design.hpp"
#include "twophase/regress.hpp"
#include "twophase/selection.hpp"

namespace twophase {

/// Everything the influence function needs besides the data.
struct InfluenceContext {
  /// When unset the per-row recorded lambda1 is used.
  std::optional<SelectionModel> selection;
  /// When empty the per-row recorded lambda2 is used.
  Lambda2Rule lambda2;
  MeanModelFit mean_w0;  // E(Y | W0)
  MeanModelFit mean_w1;  // E(Y | W̄1, R1 = 1)
  /// Source of the imputation term; std::nullopt means the frame itself,
  /// which must then be individual-level.
  std::optional<W0Source> w0_source;
};

double row_lambda1(const InfluenceContext& ctx, const Individual& ind);
double row_lambda2(const InfluenceContext& ctx, const Individual& ind);

/// U(Y, W̄1; beta) of one individual.
double influence(const InfluenceContext& ctx, const Individual& ind, double beta);

struct RrComponents {
  double imputation = 0.0;
  double augmentation = 0.0;  // phase-1 term
  double ipw = 0.0;           // phase-2 term
  double total() const { return imputation + augmentation + ipw; }
};

RrComponents rr_components(const InfluenceContext& ctx, const PopulationFrame& frame);
double rr_estimate(const InfluenceContext& ctx, const PopulationFrame& frame);

/// E[design_row(W0)] under the source (Gauss-Hermite for Gaussian W0).
Eigen::VectorXd expected_design_row(const DesignSpec& spec, const W0Source& source);
double impute_population_mean(const MeanModelFit& mean_w0, const W0Source& source);

/// Gauss-Hermite rule for E f(X), X ~ N(0, 1): nodes and weights summing to 1.
struct GaussHermite {
  std::vector<double> nodes;
  std::vector<double> weights;
};
const GaussHermite& gauss_hermite_64();

enum class FitSource { pilot, second_phase, pilot_and_second };

struct OutcomeModelSpec {
  DesignSpec w0 = DesignSpec::linear(1);
  DesignSpec w1 = DesignSpec::linear(2);
  MeanFitOptions options;
  FitSource source = FitSource::pilot;
};

struct OutcomeModels {
  MeanModelFit mean_w0;
  MeanModelFit mean_w1;
};

/// Fits both mean models on the rows selected by spec.source.
OutcomeModels fit_outcome_models(const PopulationFrame& frame, const OutcomeModelSpec& spec);
/// Fits on an explicit list of row indices (rows must carry y and w1).
OutcomeModels fit_outcome_models(const PopulationFrame& frame,
                                 std::span<const std::size_t> rows,
                                 const OutcomeModelSpec& spec);

struct BootstrapOptions {
  std::size_t n_boot = 1000;
  std::uint64_t seed = 0;
  /// Refit the mean models on every resample.
  bool refit = true;
  OutcomeModelSpec models;
  unsigned workers = 1;
  double level = 0.95;
};

struct EstimateResult {
  double beta_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double boot_var = 0.0;
  std::size_t n_boot = 0;
  RrComponents components;
  std::uint64_t seed = 0;
  /// Resamples discarded as degenerate.
  std::size_t retries = 0;
};

/// Percentile bootstrap over second-phase rows (and pilot rows when
/// refitting), with the design probabilities held fixed.
EstimateResult bootstrap_ci(const InfluenceContext& ctx, const PopulationFrame& frame,
                            const BootstrapOptions& options);

}  // namespace twophase
