#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "twophase/common.hpp"

namespace twophase {

using Covariates = std::vector<double>;

/// One member of the target population. Optional fields are absent, never
/// sentinel-valued.
struct Individual {
  std::int64_t id = 0;
  Covariates w0;                  // baseline covariates, known for everyone
  std::optional<Covariates> w1;   // first-phase (EHR) covariates
  std::optional<double> y;        // outcome
  bool r1 = false;                // in the first-phase sample
  bool r2 = false;                // in the second-phase sample
  bool pilot = false;             // in the pilot subsample
  std::optional<double> lambda1;  // first-phase inclusion probability
  std::optional<double> lambda2;  // second-phase inclusion probability

  /// (w0, w1) concatenated; requires w1.
  Covariates wbar1() const;
};

/// Checks the per-record invariants; `row` is used in the message.
void validate_individual(const Individual& ind, std::size_t row);

/// Immutable multi-phase sample. `n` is the target population size and may
/// exceed the number of stored rows when only first-phase rows are held.
class PopulationFrame {
 public:
  PopulationFrame() = default;
  PopulationFrame(std::size_t n, std::vector<Individual> rows);

  std::size_t n() const { return n_; }
  std::size_t n_e() const { return n_e_; }
  std::size_t n_s() const { return n_s_; }
  std::size_t size() const { return rows_.size(); }
  std::size_t w0_dim() const { return w0_dim_; }
  std::size_t w1_dim() const { return w1_dim_; }
  /// Row indices (not ids) of the pilot subsample.
  const std::vector<std::size_t>& pilot_ids() const { return pilot_; }
  std::span<const Individual> rows() const { return rows_; }
  const Individual& operator[](std::size_t i) const { return rows_[i]; }

  /// True when every target-population member is stored.
  bool individual_level() const { return rows_.size() == n_; }

  /// Moves the rows out for building a modified frame.
  std::vector<Individual> release_rows() && { return std::move(rows_); }

 private:
  std::size_t n_ = 0;
  std::vector<Individual> rows_;
  std::size_t n_e_ = 0;
  std::size_t n_s_ = 0;
  std::size_t w0_dim_ = 0;
  std::size_t w1_dim_ = 0;
  std::vector<std::size_t> pilot_;
};

// --- W0 availability scenarios ---------------------------------------------

/// W0 observed on every target member; the view must outlive its use.
struct IndividualLevel {
  std::span<const Individual> rows;
};

struct DiscretePmf {
  std::vector<Covariates> points;
  std::vector<double> probs;
};

/// Independent normal components.
struct GaussianW0 {
  std::vector<double> mean;
  std::vector<double> sd;
};

using KnownDistribution = std::variant<DiscretePmf, GaussianW0>;

/// External probability sample with known inclusion probabilities.
struct ExternalSample {
  std::vector<std::int64_t> ids;
  std::vector<Covariates> w0;
  std::vector<double> samp_prob;

  std::size_t size() const { return w0.size(); }
};

using W0Source = std::variant<IndividualLevel, KnownDistribution, ExternalSample>;

void validate_source(const W0Source& source);

// --- Costs -------------------------------------------------------------------

/// Per-individual outcome cost C2(w̄1).
class OutcomeCost {
 public:
  struct Constant {
    double value = 1.0;
  };
  struct Affine {
    double intercept = 0.0;
    std::vector<double> slopes;
  };
  /// Exact lookup of support points.
  struct Tabulated {
    std::vector<Covariates> points;
    std::vector<double> costs;
  };
  using Form = std::variant<Constant, Affine, Tabulated>;

  OutcomeCost() : form_(Constant{}) {}
  explicit OutcomeCost(Form form) : form_(std::move(form)) {}
  static OutcomeCost constant(double value) { return OutcomeCost(Constant{value}); }

  double operator()(std::span<const double> wbar1) const;
  const Form& form() const { return form_; }

 private:
  Form form_;
};

struct CostModel {
  double total_budget = 0.0;     // B
  double initial_cost = 0.0;     // C0
  double per_record_cost = 0.0;  // C1
  OutcomeCost outcome_cost;      // C2

  void validate() const;
  /// B - C0 - n_e C1, the money left for measuring outcomes.
  double outcome_budget(double n_e) const {
    return total_budget - initial_cost - n_e * per_record_cost;
  }
};

// --- Synthetic populations -------------------------------------------------

enum class SelectionMechanism {
  top_ne,     // the n_e largest lambda1 values are selected
  bernoulli,  // R1 ~ Bernoulli(lambda1)
};

/// lambda1(w0) = min(cap, expit(b0 + b1 w0)) or a constant.
struct Lambda1Form {
  struct Logistic {
    double intercept = 0.0;
    double slope = 1.0;
  };
  struct Constant {
    double value = 1.0;
  };
  std::variant<Logistic, Constant> form = Logistic{};
  double cap = 1.0;

  double operator()(double w0) const;
};

struct NormalParams {
  double mean = 3.3;
  double sd = 0.7071067811865476;  // variance 0.5
};

/// Parameters of the data-generating process.
struct GenerationConfig {
  std::size_t n = 10000;
  std::size_t n_e = 5000;
  std::size_t n_p = 200;
  std::vector<double> alpha{0.1, 3.0, 0.01};
  /// (g00, g0, g1, g2, g3): log Var(Y|w̄1) = g00 + g0 w0 + g1 w0^2 + g2 w1 + g3 w1^2.
  std::vector<double> gamma{-2.413, -0.2, 0.3, 0.01, 0.01};
  NormalParams w0;
  NormalParams w1;
  Lambda1Form lambda1;
  SelectionMechanism mechanism = SelectionMechanism::top_ne;

  void validate() const;
  double mean_outcome() const;
  double conditional_mean(double w0, double w1) const;
  double conditional_log_variance(double w0, double w1) const;
};

/// A generated frame plus the latent quantities a real study would not see.
struct GeneratedPopulation {
  PopulationFrame frame;
  std::vector<double> y_latent;       // outcome of every row
  std::vector<double> lambda1_true;   // configured lambda1 of every row
};

GeneratedPopulation generate_population(const GenerationConfig& config, std::uint64_t seed);

/// Copies latent outcomes into second-phase rows (the "measure Y" step).
PopulationFrame measure_outcomes(const PopulationFrame& frame, std::span<const double> y_latent);

}  // namespace twophase
