#pragma once

#include <functional>
#include <span>
#include <variant>
#include <vector>

#include "twophase/datamodel.hpp"
#include "twophase/regress.hpp"

namespace twophase {

struct ClipBounds {
  double lo = 1e-3;
  double hi = 1.0 - 1e-3;

  void validate() const;
  double apply(double p) const { return p < lo ? lo : (p > hi ? hi : p); }
};

/// First-phase inclusion probability lambda1(w0).
class SelectionModel {
 public:
  /// min(cap, expit(c0 + c'w0)); with no coefficients it is the constant `cap`.
  /// `custom`, when set, replaces the formula (and cannot be serialised).
  struct Known {
    std::vector<double> coefficients;
    double cap = 1.0;
    std::function<double(std::span<const double>)> custom;
  };
  struct DirectLogistic {
    GlmFit fit;
  };
  /// ext_fit: beta regression of external sampling probability on w0;
  /// pool_fit: logistic regression of EHR membership in the pooled sample.
  struct Composed {
    GlmFit ext_fit;
    GlmFit pool_fit;
  };
  using Variant = std::variant<Known, DirectLogistic, Composed>;

  SelectionModel() : model_(Known{}) {}
  SelectionModel(Variant model, std::size_t w0_dim, ClipBounds clip = {});

  static SelectionModel known_logistic(std::vector<double> coefficients, double cap = 1.0,
                                       ClipBounds clip = {});
  static SelectionModel known_constant(double value, ClipBounds clip = {});
  static SelectionModel known_function(std::function<double(std::span<const double>)> fn,
                                       std::size_t w0_dim, ClipBounds clip = {});

  /// Clipped probability; throws InputError on a dimension mismatch.
  double evaluate(std::span<const double> w0) const;
  /// Value before clipping (the composed estimate may exceed one).
  double raw(std::span<const double> w0) const;

  const Variant& model() const { return model_; }
  const ClipBounds& clip() const { return clip_; }
  std::size_t w0_dim() const { return w0_dim_; }
  /// Pooled rows whose composed value was >= 1 before clipping.
  std::size_t over_one_count() const { return over_one_; }
  void set_over_one_count(std::size_t count) { over_one_ = count; }

 private:
  Variant model_;
  std::size_t w0_dim_ = 1;
  ClipBounds clip_;
  std::size_t over_one_ = 0;
};

/// Logistic regression of R1 on W0 over an individual-level frame.
SelectionModel fit_direct(const PopulationFrame& frame, ClipBounds clip = {},
                          const GlmOptions& options = {});

struct ComposedOptions {
  ClipBounds clip;
  GlmOptions glm;
  bool squares_in_pool = false;
};

/// Composition of an external probability sample with the pooled
/// EHR-vs-external membership model: mu_ext(w0) p(w0) / (1 - p(w0)).
SelectionModel fit_composed(std::span<const Covariates> ehr_w0, const ExternalSample& external,
                            const ComposedOptions& options = {});

}  // namespace twophase
