#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "twophase/datamodel.hpp"
#include "twophase/selection.hpp"

namespace twophase {

/// Maps w0 or w̄1 (= w0 followed by w1) to a real value.
using CovariateFn = std::function<double(std::span<const double>)>;

struct SupportPoint {
  Covariates wbar1;
  double prob = 0.0;
  std::int64_t id = -1;
};

struct DesignInputs {
  std::vector<SupportPoint> support;
  std::size_t w0_dim = 1;
  /// Var(Y | W̄1 = w̄1, R1 = 1)
  CovariateFn v2;
  /// Var(Y | W0) - E[v2 | W0]; only needed for variance and efficiency.
  CovariateFn v1;
  SelectionModel selection;
  CostModel cost;
  double n = 0.0;
  double n_e = 0.0;

  void validate() const;
  double outcome_budget() const { return cost.outcome_budget(n_e); }
};

/// Per-point quantities evaluated once; v2 already floored.
struct EvaluatedSupport {
  std::vector<double> prob, lambda1, v1, v2, c2;
  std::size_t size() const { return prob.size(); }
};

/// Floors v2 at max(v2, 1e-8 * mean v2); v1 left empty when inputs.v1 is unset.
EvaluatedSupport evaluate_support(const DesignInputs& inputs);

/// Second-phase rule on w̄1.
using Lambda2Rule = std::function<double(std::span<const double>)>;

struct DesignPoint {
  Covariates wbar1;
  std::int64_t id = -1;
  double prob = 0.0;
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double eta2 = 0.0;
  double c2 = 0.0;
  double v2 = 0.0;
};

struct NeRange {
  double n_min = 0.0;
  /// Exclusive bound; +inf when C1 = 0.
  double n_max = std::numeric_limits<double>::infinity();
  bool contains(double n_e) const { return n_e >= n_min && n_e < n_max; }
};

struct DesignSolution {
  std::vector<DesignPoint> points;
  /// Closed-form rule; valid for any w̄1, not only support points.
  Lambda2Rule lambda2;
  NeRange ne_range;
  bool feasible = false;
  /// Support points where lambda2 > 1 or eta2 > lambda1.
  std::vector<std::size_t> violations;
  double nu = 0.0;
  /// E[sqrt(C2 v2)]
  double e_root = 0.0;
  double outcome_budget = 0.0;
  double budget_spent = 0.0;

  std::size_t cap_violations() const { return violations.size(); }
};

/// C0 + n_e C1 + n sum p1 lambda1 lambda2 C2.
double expected_cost(const DesignInputs& inputs, std::span<const double> lambda2);
double expected_cost(const DesignInputs& inputs, const Lambda2Rule& lambda2);

/// Budget-optimal second-phase rule. Throws InfeasibleError when the outcome
/// budget is not positive or n_e is outside the feasible range; a rule with
/// lambda2 > 1 somewhere is returned with feasible = false.
DesignSolution optimal_lambda2(const DesignInputs& inputs);

NeRange feasible_ne_range(const DesignInputs& inputs);

/// The constant-eta2 baseline: lambda2 = budget / (n lambda1 E[C2]).
Lambda2Rule random_lambda2(const DesignInputs& inputs);
std::vector<double> random_lambda2_values(const DesignInputs& inputs);

/// PVE Var(Y) + sum p1 v1 / lambda1 + sum p1 v2 / (lambda1 lambda2).
double design_variance(const DesignInputs& inputs, std::span<const double> lambda2, double var_y,
                       double pve);
double design_variance(const DesignInputs& inputs, const Lambda2Rule& lambda2, double var_y,
                       double pve);

/// Closed-form efficiency of the optimal rule against the random baseline.
double relative_efficiency(const DesignInputs& inputs, double var_y, double pve);

/// Efficiency of a design on `alternative` (constant lambda1', n_e') against
/// random sampling under `original`.
double relative_efficiency_alternative(const DesignInputs& original,
                                       const DesignInputs& alternative, double var_y, double pve);

struct AlternativeOptions {
  /// Cells per W0 coordinate (equal-count bins of the EHR values).
  std::size_t bins = 5;
  double var_y = 0.0;
  double pve = 0.0;
  std::uint64_t seed = 0;
};

struct AlternativeDesign {
  std::vector<std::int64_t> ids;
  DesignInputs inputs;
  DesignSolution solution;
  double re_alt = 0.0;
  /// Target probability and realised subsample fraction of every W0 cell.
  std::vector<double> target_freq;
  std::vector<double> subsample_freq;
};

/// Draws an EHR subsample matching the target W0 distribution by
/// proportional allocation over W0 cells, then solves the design with the
/// constant lambda1' = n_e' / n.
AlternativeDesign alternative_design(const PopulationFrame& frame, const W0Source& target,
                                     std::size_t n_e_prime, const DesignInputs& inputs,
                                     const AlternativeOptions& options = {});

/// Bernoulli(lambda2(w̄1)) for every first-phase row; records lambda2.
PopulationFrame draw_second_phase(const PopulationFrame& frame, const DesignSolution& solution,
                                  std::uint64_t seed);
PopulationFrame draw_second_phase(const PopulationFrame& frame, const Lambda2Rule& lambda2,
                                  std::uint64_t seed);

/// Empirical support: every first-phase row with weight 1 / n_e.
std::vector<SupportPoint> empirical_support(const PopulationFrame& frame);

}  // namespace twophase
