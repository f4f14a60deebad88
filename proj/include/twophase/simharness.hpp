#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twophase/datamodel.hpp"
#include "twophase/estimator.hpp"
#include "twophase/regress.hpp"

namespace twophase {

enum class Approach {
  naive,          // "1": random draw, sample mean
  random_rr,      // "2": random draw, RR estimator
  optimal,        // "3a": optimal draw, fitted variance model
  misspecified,   // "3b": optimal draw, variance model without squares
  true_variance,  // "3c": optimal draw, true variance model
};

std::string approach_name(Approach a);
Approach parse_approach(std::string_view name);
inline constexpr std::array<Approach, 5> all_approaches{
    Approach::naive, Approach::random_rr, Approach::optimal, Approach::misspecified,
    Approach::true_variance};

enum class Lambda1Mode { known, direct, composed };
std::string lambda1_mode_name(Lambda1Mode m);
Lambda1Mode parse_lambda1_mode(std::string_view name);

/// Deliberate model errors for robustness experiments.
struct Perturbation {
  /// Multiplies every fitted mean-model coefficient.
  double mean_scale = 1.0;
  /// Logistic coefficients of the lambda1 used by design and estimator in
  /// place of the generating one.
  std::optional<std::vector<double>> lambda1_coefficients;
};

struct SimulationConfig {
  GenerationConfig generation;
  /// When set, the variance intercept is calibrated to this PVE.
  std::optional<double> pve_target;
  CostModel cost{100000.0, 50000.0, 0.01, OutcomeCost::constant(2000.0)};
  std::size_t n_reps = 2000;
  std::vector<Approach> approaches{all_approaches.begin(), all_approaches.end()};
  Lambda1Mode lambda1_mode = Lambda1Mode::known;
  ClipBounds clip{1e-3, 1.0};
  /// Inclusion probability of the external sample in composed mode.
  double external_fraction = 0.05;
  FitSource fit_source = FitSource::pilot;
  MeanMethod mean_method = MeanMethod::least_squares;
  bool reml = false;
  Perturbation perturbation;
  std::uint64_t seed = 1;
  unsigned workers = 0;

  void validate() const;
};

struct ReplicationRecord {
  std::size_t rep = 0;
  Approach approach = Approach::naive;
  double beta_hat = 0.0;
  bool feasible = true;
  std::uint64_t seed = 0;
  std::string failure;
  /// Expected total cost of the second-phase rule that was drawn from.
  double budget_spent = 0.0;
};

struct ApproachSummary {
  Approach approach;
  std::size_t successes = 0;
  double mean = 0.0;
  double variance = 0.0;
  double bias = 0.0;
};

struct StudyResult {
  std::vector<double> gamma;  // variance coefficients actually used
  double truth = 0.0;
  std::vector<ApproachSummary> summaries;
  std::vector<ReplicationRecord> records;
  std::size_t failed_replications = 0;
  /// Wall time in seconds; never written to files.
  double elapsed_seconds = 0.0;

  const ApproachSummary* summary(Approach a) const;
};

/// Runs every replication and aggregates. Throws Error when more than 5% of
/// replications fail.
StudyResult run_study(const SimulationConfig& config);

/// Intercept of the variance model giving the target PVE for W0, W1
/// distributed as in `generation` (other gamma entries held fixed).
std::vector<double> calibrate_gamma(double pve_target, const GenerationConfig& generation,
                                    std::uint64_t seed = 12345, std::size_t draws = 100000);
/// Monte Carlo PVE for the given generation parameters.
double monte_carlo_pve(const GenerationConfig& generation, std::uint64_t seed,
                       std::size_t draws = 100000);

struct RatioEstimate {
  double value = 0.0;
  double se = 0.0;  // jackknife
};

/// var(a) / var(b) over paired records with a jackknife standard error.
RatioEstimate variance_ratio(const std::vector<double>& a, const std::vector<double>& b);

struct ReTableRow {
  Approach approach;
  RatioEstimate vs_naive;
  std::optional<RatioEstimate> vs_random;
};

/// RE of every approach against approach 1 (and of 3x against 2).
std::vector<ReTableRow> compare_designs(const StudyResult& result);

/// Paired estimates of one approach across successful replications common to `other`.
std::pair<std::vector<double>, std::vector<double>> paired_estimates(const StudyResult& result,
                                                                     Approach a, Approach b);

}  // namespace twophase
