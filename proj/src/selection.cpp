#include "twophase/selection.hpp"

#include <algorithm>
#include <cmath>

namespace twophase {

void ClipBounds::validate() const {
  if (!(lo > 0.0 && lo <= hi && hi <= 1.0))
    throw InputError("clip bounds must satisfy 0 < lo <= hi <= 1");
}

SelectionModel::SelectionModel(Variant model, std::size_t w0_dim, ClipBounds clip)
    : model_(std::move(model)), w0_dim_(w0_dim), clip_(clip) {
  clip_.validate();
  if (const auto* k = std::get_if<Known>(&model_)) {
    if (!k->custom && !k->coefficients.empty() && k->coefficients.size() != w0_dim_ + 1)
      throw InputError("known lambda1 needs " + std::to_string(w0_dim_ + 1) + " coefficients");
    if (!(k->cap > 0.0 && k->cap <= 1.0)) throw InputError("lambda1 cap must be in (0, 1]");
  }
}

SelectionModel SelectionModel::known_logistic(std::vector<double> coefficients, double cap,
                                              ClipBounds clip) {
  if (coefficients.size() < 2) throw InputError("logistic lambda1 needs at least 2 coefficients");
  const std::size_t dim = coefficients.size() - 1;
  return SelectionModel(Known{std::move(coefficients), cap, {}}, dim, clip);
}

SelectionModel SelectionModel::known_constant(double value, ClipBounds clip) {
  if (!(value > 0.0 && value <= 1.0)) throw InputError("constant lambda1 must be in (0, 1]");
  // dimension is irrelevant for a constant; 0 disables the check
  return SelectionModel(Known{{}, value, {}}, 0, clip);
}

SelectionModel SelectionModel::known_function(std::function<double(std::span<const double>)> fn,
                                              std::size_t w0_dim, ClipBounds clip) {
  return SelectionModel(Known{{}, 1.0, std::move(fn)}, w0_dim, clip);
}

double SelectionModel::raw(std::span<const double> w0) const {
  if (w0_dim_ != 0 && w0.size() != w0_dim_)
    throw InputError("selection model expects " + std::to_string(w0_dim_) +
                     " covariates, got " + std::to_string(w0.size()));
  return std::visit(
      [&](const auto& m) -> double {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, Known>) {
          if (m.custom) return m.custom(w0);
          if (m.coefficients.empty()) return m.cap;
          double eta = m.coefficients[0];
          for (std::size_t j = 0; j < w0.size(); ++j) eta += m.coefficients[j + 1] * w0[j];
          return std::min(m.cap, expit(eta));
        } else if constexpr (std::is_same_v<T, DirectLogistic>) {
          return m.fit.predict(w0);
        } else {
          const double mu = m.ext_fit.predict(w0);
          const double p = m.pool_fit.predict(w0);
          return mu * p / (1.0 - p);
        }
      },
      model_);
}

double SelectionModel::evaluate(std::span<const double> w0) const {
  const double p = raw(w0);
  if (std::isnan(p)) throw InputError("selection model produced NaN");
  return clip_.apply(p);
}

SelectionModel fit_direct(const PopulationFrame& frame, ClipBounds clip,
                          const GlmOptions& options) {
  if (!frame.individual_level())
    throw InputError("direct selection fitting needs W0 and R1 for the whole target population");
  if (frame.size() == 0) throw InputError("frame is empty");
  const std::size_t k = frame.w0_dim();
  Eigen::MatrixXd x(frame.size(), k);
  Eigen::VectorXd y(frame.size());
  for (std::size_t i = 0; i < frame.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) x(i, j) = frame[i].w0[j];
    y(i) = frame[i].r1 ? 1.0 : 0.0;
  }
  GlmFit fit = fit_logistic(x, y, DesignSpec::linear(k), options);
  return SelectionModel(SelectionModel::DirectLogistic{std::move(fit)}, k, clip);
}

SelectionModel fit_composed(std::span<const Covariates> ehr_w0, const ExternalSample& external,
                            const ComposedOptions& options) {
  if (external.size() == 0) throw InputError("external sample is empty");
  if (ehr_w0.empty()) throw InputError("no first-phase rows to compose with");
  validate_source(external);
  const std::size_t k = external.w0.front().size();
  const Eigen::MatrixXd xe = stack_rows(external.w0);
  Eigen::VectorXd pe(external.size());
  for (std::size_t i = 0; i < external.size(); ++i) pe(i) = external.samp_prob[i];
  GlmFit ext_fit = fit_beta(xe, pe, DesignSpec::linear(k), options.glm);

  const std::size_t total = ehr_w0.size() + external.size();
  Eigen::MatrixXd xp(total, k);
  Eigen::VectorXd yp(total);
  for (std::size_t i = 0; i < ehr_w0.size(); ++i) {
    if (ehr_w0[i].size() != k) throw InputError("EHR and external W0 dimensions differ");
    for (std::size_t j = 0; j < k; ++j) xp(i, j) = ehr_w0[i][j];
    yp(i) = 1.0;
  }
  for (std::size_t i = 0; i < external.size(); ++i) {
    for (std::size_t j = 0; j < k; ++j) xp(ehr_w0.size() + i, j) = external.w0[i][j];
    yp(ehr_w0.size() + i) = 0.0;
  }
  const DesignSpec pool_spec =
      options.squares_in_pool ? DesignSpec::with_squares(k) : DesignSpec::linear(k);
  GlmFit pool_fit = fit_logistic(xp, yp, pool_spec, options.glm);

  SelectionModel model(SelectionModel::Composed{std::move(ext_fit), std::move(pool_fit)}, k,
                       options.clip);
  std::size_t over = 0;
  for (const auto& w : ehr_w0) over += model.raw(w) >= 1.0;
  for (const auto& w : external.w0) over += model.raw(w) >= 1.0;
  model.set_over_one_count(over);
  return model;
}

}  // namespace twophase
