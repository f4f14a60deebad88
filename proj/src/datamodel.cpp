#include "twophase/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace twophase {

namespace {

void check_probability(const std::optional<double>& p, const char* name, std::size_t row) {
  if (p && !(*p > 0.0 && *p <= 1.0))
    throw InputError("row " + std::to_string(row) + ": " + name + " = " + format_double(*p) +
                     " is outside (0, 1]");
}

bool all_finite(const Covariates& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Covariates Individual::wbar1() const {
  if (!w1) throw InputError("individual " + std::to_string(id) + " has no first-phase covariates");
  Covariates out = w0;
  out.insert(out.end(), w1->begin(), w1->end());
  return out;
}

void validate_individual(const Individual& ind, std::size_t row) {
  const std::string where = "row " + std::to_string(row) + ": ";
  if (ind.r2 && !ind.r1) throw InputError(where + "r2 = 1 requires r1 = 1");
  if (ind.pilot && !ind.r1) throw InputError(where + "pilot rows must have r1 = 1");
  if (!ind.r1 && ind.w1) throw InputError(where + "w1 present on a row with r1 = 0");
  if (ind.r1 && !ind.w1) throw InputError(where + "w1 missing on a row with r1 = 1");
  if (!ind.r2 && !ind.pilot && ind.y)
    throw InputError(where + "y present outside the second-phase and pilot samples");
  if (ind.pilot && !ind.y) throw InputError(where + "pilot row without y");
  if (!all_finite(ind.w0) || (ind.w1 && !all_finite(*ind.w1)))
    throw InputError(where + "non-finite covariate");
  if (ind.y && !std::isfinite(*ind.y)) throw InputError(where + "non-finite y");
  check_probability(ind.lambda1, "lambda1", row);
  check_probability(ind.lambda2, "lambda2", row);
}

PopulationFrame::PopulationFrame(std::size_t n, std::vector<Individual> rows)
    : n_(n), rows_(std::move(rows)) {
  if (rows_.size() > n_)
    throw InputError("frame holds " + std::to_string(rows_.size()) +
                     " rows but the population size is " + std::to_string(n_));
  if (!rows_.empty()) w0_dim_ = rows_.front().w0.size();
  bool have_w1_dim = false;
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const Individual& ind = rows_[i];
    validate_individual(ind, i + 1);
    if (ind.w0.size() != w0_dim_)
      throw InputError("row " + std::to_string(i + 1) + ": w0 has " +
                       std::to_string(ind.w0.size()) + " entries, expected " +
                       std::to_string(w0_dim_));
    if (ind.w1) {
      if (!have_w1_dim) {
        w1_dim_ = ind.w1->size();
        have_w1_dim = true;
      } else if (ind.w1->size() != w1_dim_) {
        throw InputError("row " + std::to_string(i + 1) + ": inconsistent w1 dimension");
      }
    }
    n_e_ += ind.r1;
    n_s_ += ind.r2;
    if (ind.pilot) pilot_.push_back(i);
  }
}

void validate_source(const W0Source& source) {
  std::visit(
      [](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, IndividualLevel>) {
          if (s.rows.empty()) throw InputError("individual-level W0 source is empty");
        } else if constexpr (std::is_same_v<T, KnownDistribution>) {
          std::visit(
              [](const auto& d) {
                using D = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<D, DiscretePmf>) {
                  if (d.points.empty() || d.points.size() != d.probs.size())
                    throw InputError("pmf needs one probability per support point");
                  double total = 0.0;
                  for (double p : d.probs) {
                    if (!(p >= 0.0)) throw InputError("pmf has a negative probability");
                    total += p;
                  }
                  if (std::abs(total - 1.0) > 1e-12)
                    throw InputError("pmf sums to " + format_double(total) + ", not 1");
                } else {
                  if (d.mean.empty() || d.mean.size() != d.sd.size())
                    throw InputError("Gaussian W0 needs matching mean and sd vectors");
                  for (double s : d.sd)
                    if (!(s > 0.0)) throw InputError("Gaussian W0 sd must be positive");
                }
              },
              s);
        } else {
          if (s.size() == 0) throw InputError("external sample is empty");
          if (s.samp_prob.size() != s.size())
            throw InputError("external sample needs one probability per record");
          for (double p : s.samp_prob)
            if (!(p > 0.0 && p <= 1.0))
              throw InputError("external sampling probability " + format_double(p) +
                               " is outside (0, 1]");
        }
      },
      source);
}

double OutcomeCost::operator()(std::span<const double> wbar1) const {
  return std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Constant>) {
          return f.value;
        } else if constexpr (std::is_same_v<T, Affine>) {
          if (f.slopes.size() != wbar1.size())
            throw InputError("affine cost has " + std::to_string(f.slopes.size()) +
                             " slopes for " + std::to_string(wbar1.size()) + " covariates");
          double c = f.intercept;
          for (std::size_t j = 0; j < wbar1.size(); ++j) c += f.slopes[j] * wbar1[j];
          return c;
        } else {
          for (std::size_t k = 0; k < f.points.size(); ++k)
            if (std::equal(f.points[k].begin(), f.points[k].end(), wbar1.begin(), wbar1.end()))
              return f.costs[k];
          throw InputError("tabulated cost has no entry for the requested covariates");
        }
      },
      form_);
}

void CostModel::validate() const {
  if (!(total_budget > initial_cost))
    throw InputError("total budget must exceed the initial cost");
  if (!(per_record_cost >= 0.0)) throw InputError("per-record cost must be non-negative");
  if (const auto* c = std::get_if<OutcomeCost::Constant>(&outcome_cost.form()); c && !(c->value > 0.0))
    throw InputError("outcome cost must be positive");
  if (const auto* t = std::get_if<OutcomeCost::Tabulated>(&outcome_cost.form())) {
    if (t->points.size() != t->costs.size())
      throw InputError("tabulated cost needs one cost per point");
    for (double c : t->costs)
      if (!(c > 0.0)) throw InputError("outcome cost must be positive");
  }
}

double Lambda1Form::operator()(double w0) const {
  double p = std::visit(
      [&](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Logistic>)
          return expit(f.intercept + f.slope * w0);
        else
          return f.value;
      },
      form);
  return std::min(p, cap);
}

void GenerationConfig::validate() const {
  if (n == 0) throw InputError("population size must be positive");
  if (n_e > n) throw InputError("n_e exceeds n");
  if (n_p > n_e) throw InputError("n_p exceeds n_e");
  if (alpha.size() != 3) throw InputError("alpha needs 3 coefficients");
  if (gamma.size() != 5) throw InputError("gamma needs 5 coefficients");
  if (!(w0.sd > 0.0) || !(w1.sd > 0.0)) throw InputError("covariate sd must be positive");
  if (!(lambda1.cap > 0.0 && lambda1.cap <= 1.0)) throw InputError("lambda1 cap must be in (0, 1]");
  if (const auto* c = std::get_if<Lambda1Form::Constant>(&lambda1.form);
      c && !(c->value > 0.0 && c->value <= 1.0))
    throw InputError("constant lambda1 must be in (0, 1]");
}

double GenerationConfig::mean_outcome() const {
  return alpha[0] + alpha[1] * w0.mean + alpha[2] * w1.mean;
}

double GenerationConfig::conditional_mean(double a, double b) const {
  return alpha[0] + alpha[1] * a + alpha[2] * b;
}

double GenerationConfig::conditional_log_variance(double a, double b) const {
  return gamma[0] + gamma[1] * a + gamma[2] * a * a + gamma[3] * b + gamma[4] * b * b;
}

GeneratedPopulation generate_population(const GenerationConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = config.n;

  std::vector<double> w0(n), w1(n), lam(n), y(n);
  for (std::size_t i = 0; i < n; ++i) {
    w0[i] = config.w0.mean + config.w0.sd * z(rng);
    w1[i] = config.w1.mean + config.w1.sd * z(rng);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double lv = config.conditional_log_variance(w0[i], w1[i]);
    if (!(std::abs(lv) <= 700.0))
      throw InputError("log-variance " + format_double(lv) + " overflows; check gamma");
    y[i] = config.conditional_mean(w0[i], w1[i]) + std::exp(0.5 * lv) * z(rng);
    lam[i] = config.lambda1(w0[i]);
  }

  std::vector<char> r1(n, 0);
  if (config.mechanism == SelectionMechanism::top_ne) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return lam[a] > lam[b]; });
    for (std::size_t k = 0; k < config.n_e; ++k) r1[order[k]] = 1;
  } else {
    for (std::size_t i = 0; i < n; ++i) r1[i] = u(rng) < lam[i];
  }

  std::vector<std::size_t> ehr;
  for (std::size_t i = 0; i < n; ++i)
    if (r1[i]) ehr.push_back(i);
  if (config.n_p > ehr.size())
    throw InputError("pilot size " + std::to_string(config.n_p) + " exceeds the " +
                     std::to_string(ehr.size()) + " first-phase rows");
  // partial Fisher-Yates for the pilot
  std::vector<char> pilot(n, 0);
  for (std::size_t k = 0; k < config.n_p; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, ehr.size() - 1);
    std::swap(ehr[k], ehr[pick(rng)]);
    pilot[ehr[k]] = 1;
  }

  std::vector<Individual> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    Individual& ind = rows[i];
    ind.id = static_cast<std::int64_t>(i + 1);
    ind.w0 = {w0[i]};
    ind.r1 = r1[i];
    ind.pilot = pilot[i];
    if (ind.r1) ind.w1 = Covariates{w1[i]};
    if (ind.pilot) ind.y = y[i];
    ind.lambda1 = lam[i];
  }
  return {PopulationFrame(n, std::move(rows)), std::move(y), std::move(lam)};
}

PopulationFrame measure_outcomes(const PopulationFrame& frame, std::span<const double> y_latent) {
  if (y_latent.size() != frame.size())
    throw InputError("latent outcome vector does not match the frame");
  std::vector<Individual> rows(frame.rows().begin(), frame.rows().end());
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i].r2 || rows[i].pilot) rows[i].y = y_latent[i];
  return PopulationFrame(frame.n(), std::move(rows));
}

}  // namespace twophase
