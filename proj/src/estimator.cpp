#include "twophase/estimator.hpp"

#include <algorithm>
#include <cmath>

namespace twophase {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double row_lambda1(const InfluenceContext& ctx, const Individual& ind) {
  double l;
  if (ctx.selection) {
    l = ctx.selection->evaluate(ind.w0);
  } else if (ind.lambda1) {
    l = *ind.lambda1;
  } else {
    throw InputError("individual " + std::to_string(ind.id) + " has no lambda1");
  }
  if (!(l > 0.0)) throw InputError("lambda1 evaluated as 0 for individual " + std::to_string(ind.id));
  return l;
}

double row_lambda2(const InfluenceContext& ctx, const Individual& ind) {
  double l;
  if (ctx.lambda2) {
    l = ctx.lambda2(ind.wbar1());
  } else if (ind.lambda2) {
    l = *ind.lambda2;
  } else {
    throw InputError("individual " + std::to_string(ind.id) + " has no lambda2");
  }
  if (!(l > 0.0)) throw InputError("lambda2 evaluated as 0 for individual " + std::to_string(ind.id));
  return l;
}

double influence(const InfluenceContext& ctx, const Individual& ind, double beta) {
  const double l1 = row_lambda1(ctx, ind);
  const double m0 = ctx.mean_w0.predict(ind.w0);
  const double r1 = ind.r1 ? 1.0 : 0.0;
  double u = -((r1 - l1) / l1) * (m0 - beta);
  if (!ind.r1) return u;
  const double l2 = row_lambda2(ctx, ind);
  const double m1 = ctx.mean_w1.predict(ind.wbar1());
  const double r2 = ind.r2 ? 1.0 : 0.0;
  if (ind.r2) {
    if (!ind.y) throw InputError("second-phase individual " + std::to_string(ind.id) + " has no y");
    u += (*ind.y - beta) / (l1 * l2);
  }
  u -= ((r2 - l2) / (l1 * l2)) * (m1 - beta);
  return u;
}

RrComponents rr_components(const InfluenceContext& ctx, const PopulationFrame& frame) {
  if (frame.n_s() == 0) throw InputError("no second-phase rows to estimate from");
  const double n = static_cast<double>(frame.n());
  RrComponents c;
  if (ctx.w0_source) {
    c.imputation = impute_population_mean(ctx.mean_w0, *ctx.w0_source);
  } else {
    if (!frame.individual_level())
      throw InputError("frame is not individual-level; supply a W0 source for the imputation term");
    double s = 0.0;
    for (const auto& ind : frame.rows()) s += ctx.mean_w0.predict(ind.w0);
    c.imputation = s / n;
  }
  double aug = 0.0, ipw = 0.0;
  for (const auto& ind : frame.rows()) {
    if (!ind.r1) continue;
    const double l1 = row_lambda1(ctx, ind);
    const Covariates wbar1 = ind.wbar1();
    const double m1 = ctx.mean_w1.predict(wbar1);
    aug += (m1 - ctx.mean_w0.predict(ind.w0)) / l1;
    if (ind.r2) {
      if (!ind.y) throw InputError("second-phase individual " + std::to_string(ind.id) + " has no y");
      ipw += (*ind.y - m1) / (l1 * row_lambda2(ctx, ind));
    }
  }
  c.augmentation = aug / n;
  c.ipw = ipw / n;
  return c;
}

double rr_estimate(const InfluenceContext& ctx, const PopulationFrame& frame) {
  return rr_components(ctx, frame).total();
}

const GaussHermite& gauss_hermite_64() {
  static const GaussHermite rule = [] {
    constexpr int m = 64;
    // Jacobi matrix of the probabilists' Hermite polynomials
    MatrixXd j = MatrixXd::Zero(m, m);
    for (int k = 1; k < m; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(static_cast<double>(k));
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(j);
    GaussHermite g;
    for (int k = 0; k < m; ++k) {
      g.nodes.push_back(es.eigenvalues()(k));
      const double v = es.eigenvectors()(0, k);
      g.weights.push_back(v * v);
    }
    return g;
  }();
  return rule;
}

Eigen::VectorXd expected_design_row(const DesignSpec& spec, const W0Source& source) {
  validate_source(source);
  const auto p = static_cast<Eigen::Index>(spec.n_coef());
  return std::visit(
      [&](const auto& s) -> VectorXd {
        using T = std::decay_t<decltype(s)>;
        VectorXd acc = VectorXd::Zero(p);
        if constexpr (std::is_same_v<T, IndividualLevel>) {
          for (const auto& ind : s.rows) acc += spec.row(ind.w0);
          return acc / static_cast<double>(s.rows.size());
        } else if constexpr (std::is_same_v<T, ExternalSample>) {
          double total = 0.0;
          for (std::size_t i = 0; i < s.size(); ++i) {
            const double w = 1.0 / s.samp_prob[i];
            acc += w * spec.row(s.w0[i]);
            total += w;
          }
          return acc / total;
        } else {
          return std::visit(
              [&](const auto& d) -> VectorXd {
                using D = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<D, DiscretePmf>) {
                  for (std::size_t i = 0; i < d.points.size(); ++i)
                    acc += d.probs[i] * spec.row(d.points[i]);
                  return acc;
                } else {
                  if (d.mean.size() < spec.min_dim())
                    throw InputError("Gaussian W0 has fewer components than the model uses");
                  const GaussHermite& gh = gauss_hermite_64();
                  Eigen::Index k = 0;
                  if (spec.intercept) acc(k++) = 1.0;
                  for (const Term& t : spec.terms) {
                    double e = 0.0;
                    for (std::size_t q = 0; q < gh.nodes.size(); ++q) {
                      const double x = d.mean[t.column] + d.sd[t.column] * gh.nodes[q];
                      e += gh.weights[q] * std::pow(x, t.power);
                    }
                    acc(k++) = e;
                  }
                  return acc;
                }
              },
              s);
        }
      },
      source);
}

double impute_population_mean(const MeanModelFit& mean_w0, const W0Source& source) {
  return expected_design_row(mean_w0.spec, source).dot(mean_w0.coefficients);
}

// --- outcome models -------------------------------------------------------------

namespace {

std::vector<std::size_t> fit_rows(const PopulationFrame& frame, FitSource source) {
  std::vector<std::size_t> rows;
  if (source != FitSource::second_phase)
    rows.insert(rows.end(), frame.pilot_ids().begin(), frame.pilot_ids().end());
  if (source != FitSource::pilot)
    for (std::size_t i = 0; i < frame.size(); ++i)
      if (frame[i].r2 && frame[i].y) rows.push_back(i);
  std::sort(rows.begin(), rows.end());
  rows.erase(std::unique(rows.begin(), rows.end()), rows.end());
  return rows;
}

}  // namespace

OutcomeModels fit_outcome_models(const PopulationFrame& frame, std::span<const std::size_t> rows,
                                 const OutcomeModelSpec& spec) {
  if (rows.empty()) throw InputError("no rows with observed outcomes to fit the mean models");
  const std::size_t k = frame.w0_dim(), m = frame.w1_dim();
  MatrixXd x0(rows.size(), k), x1(rows.size(), k + m);
  VectorXd y(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Individual& ind = frame[rows[r]];
    if (!ind.y || !ind.w1) throw InputError("fitting rows need y and w1");
    for (std::size_t j = 0; j < k; ++j) x0(r, j) = x1(r, j) = ind.w0[j];
    for (std::size_t j = 0; j < m; ++j) x1(r, k + j) = (*ind.w1)[j];
    y(r) = *ind.y;
  }
  return {fit_mean(x0, y, spec.w0, spec.options), fit_mean(x1, y, spec.w1, spec.options)};
}

OutcomeModels fit_outcome_models(const PopulationFrame& frame, const OutcomeModelSpec& spec) {
  const auto rows = fit_rows(frame, spec.source);
  return fit_outcome_models(frame, rows, spec);
}

// --- bootstrap -------------------------------------------------------------------

EstimateResult bootstrap_ci(const InfluenceContext& ctx, const PopulationFrame& frame,
                            const BootstrapOptions& options) {
  if (options.n_boot < 100) throw InputError("the bootstrap needs at least 100 resamples");
  if (!(options.level > 0.0 && options.level < 1.0)) throw InputError("CI level must be in (0, 1)");

  EstimateResult result;
  result.components = rr_components(ctx, frame);
  result.beta_hat = result.components.total();
  result.n_boot = options.n_boot;
  result.seed = options.seed;

  const double n = static_cast<double>(frame.n());
  const DesignSpec& spec0 = ctx.mean_w0.spec;
  const DesignSpec& spec1 = ctx.mean_w1.spec;
  const VectorXd e0 = ctx.w0_source ? expected_design_row(spec0, *ctx.w0_source)
                                    : expected_design_row(spec0, IndividualLevel{frame.rows()});

  // sufficient statistics of the terms that do not involve outcomes
  VectorXd s0 = VectorXd::Zero(spec0.n_coef()), s1 = VectorXd::Zero(spec1.n_coef());
  std::vector<std::size_t> second;
  for (std::size_t i = 0; i < frame.size(); ++i) {
    const Individual& ind = frame[i];
    if (!ind.r1) continue;
    const double l1 = row_lambda1(ctx, ind);
    s0 += spec0.row(ind.w0) / l1;
    s1 += spec1.row(ind.wbar1()) / l1;
    if (ind.r2) second.push_back(i);
  }
  const std::size_t ns = second.size();
  MatrixXd x2(ns, spec1.n_coef());
  VectorXd y2(ns), w2(ns);
  for (std::size_t r = 0; r < ns; ++r) {
    const Individual& ind = frame[second[r]];
    x2.row(r) = spec1.row(ind.wbar1()).transpose();
    y2(r) = *ind.y;
    w2(r) = 1.0 / (row_lambda1(ctx, ind) * row_lambda2(ctx, ind));
  }
  const std::vector<std::size_t>& pilot = frame.pilot_ids();
  if (options.refit && options.models.source != FitSource::second_phase && pilot.empty())
    throw InputError("refitting on pilot data requires a pilot sample");

  auto estimate = [&](const VectorXd& a0, const VectorXd& a1, std::span<const std::size_t> draw) {
    double ipw = 0.0;
    for (std::size_t r : draw) ipw += w2(r) * (y2(r) - x2.row(r).dot(a1));
    return e0.dot(a0) + (s1.dot(a1) - s0.dot(a0)) / n + ipw / n;
  };

  std::vector<double> stats(options.n_boot);
  std::vector<std::size_t> retries(options.n_boot, 0);
  parallel_for(options.n_boot, options.workers, [&](std::size_t b) {
    Rng rng = make_rng(options.seed, b);
    std::uniform_int_distribution<std::size_t> pick2(0, ns - 1);
    for (std::size_t attempt = 0;; ++attempt) {
      if (attempt > 100)
        throw ConvergenceError("bootstrap resample " + std::to_string(b) +
                               " stayed degenerate after 100 retries");
      std::vector<std::size_t> draw(ns);
      for (auto& d : draw) d = pick2(rng);
      VectorXd a0 = ctx.mean_w0.coefficients, a1 = ctx.mean_w1.coefficients;
      if (options.refit) {
        std::vector<std::size_t> rows;
        if (options.models.source != FitSource::second_phase) {
          std::uniform_int_distribution<std::size_t> pickp(0, pilot.size() - 1);
          for (std::size_t k = 0; k < pilot.size(); ++k) rows.push_back(pilot[pickp(rng)]);
        }
        if (options.models.source != FitSource::pilot)
          for (std::size_t d : draw) rows.push_back(second[d]);
        try {
          OutcomeModelSpec ms = options.models;
          ms.w0 = spec0;
          ms.w1 = spec1;
          const OutcomeModels fits = fit_outcome_models(frame, rows, ms);
          a0 = fits.mean_w0.coefficients;
          a1 = fits.mean_w1.coefficients;
        } catch (const Error&) {
          ++retries[b];
          continue;
        }
      }
      stats[b] = estimate(a0, a1, draw);
      return;
    }
  });

  for (std::size_t r : retries) result.retries += r;
  const double alpha = 1.0 - options.level;
  result.ci_lo = quantile(stats, alpha / 2.0);
  result.ci_hi = quantile(stats, 1.0 - alpha / 2.0);
  result.boot_var = sample_variance(stats);
  return result;
}

}  // namespace twophase
