#include "twophase/simharness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>

#include "twophase/design.hpp"
#include "twophase/selection.hpp"

namespace twophase {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string approach_name(Approach a) {
  switch (a) {
    case Approach::naive: return "1";
    case Approach::random_rr: return "2";
    case Approach::optimal: return "3a";
    case Approach::misspecified: return "3b";
    case Approach::true_variance: return "3c";
  }
  return "?";
}

Approach parse_approach(std::string_view name) {
  for (Approach a : all_approaches)
    if (approach_name(a) == name) return a;
  throw InputError("unknown approach '" + std::string(name) + "' (expected 1, 2, 3a, 3b or 3c)");
}

std::string lambda1_mode_name(Lambda1Mode m) {
  switch (m) {
    case Lambda1Mode::known: return "known";
    case Lambda1Mode::direct: return "direct";
    case Lambda1Mode::composed: return "composed";
  }
  return "?";
}

Lambda1Mode parse_lambda1_mode(std::string_view name) {
  if (name == "known") return Lambda1Mode::known;
  if (name == "direct") return Lambda1Mode::direct;
  if (name == "composed") return Lambda1Mode::composed;
  throw InputError("unknown lambda1 mode '" + std::string(name) + "'");
}

void SimulationConfig::validate() const {
  generation.validate();
  cost.validate();
  clip.validate();
  if (n_reps < 1) throw InputError("n_reps must be at least 1");
  if (approaches.empty()) throw InputError("at least one approach is required");
  if (pve_target && !(*pve_target > 0.0 && *pve_target < 1.0))
    throw InputError("pve_target must lie in (0, 1)");
  if (!(external_fraction > 0.0 && external_fraction <= 1.0))
    throw InputError("external_fraction must lie in (0, 1]");
  if (perturbation.lambda1_coefficients && perturbation.lambda1_coefficients->size() != 2)
    throw InputError("perturbed lambda1 needs 2 coefficients");
}

const ApproachSummary* StudyResult::summary(Approach a) const {
  for (const auto& s : summaries)
    if (s.approach == a) return &s;
  return nullptr;
}

// --- calibration -----------------------------------------------------------------

namespace {

struct PveDraws {
  double var_mean_w0 = 0.0;   // Var[E(Y|W0)]
  double var_mean_w1 = 0.0;   // Var[E(Y|W̄1)]
  double mean_exp_rest = 0.0; // E exp(log-variance without the intercept)
};

PveDraws pve_draws(const GenerationConfig& g, std::uint64_t seed, std::size_t draws) {
  if (draws < 2) throw InputError("need at least two Monte Carlo draws");
  Rng rng = make_rng(seed, 3);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> m0(draws), m1(draws);
  double acc = 0.0;
  GenerationConfig shape = g;
  shape.gamma[0] = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const double a = g.w0.mean + g.w0.sd * z(rng);
    const double b = g.w1.mean + g.w1.sd * z(rng);
    m0[i] = g.alpha[0] + g.alpha[1] * a + g.alpha[2] * g.w1.mean;
    m1[i] = g.conditional_mean(a, b);
    acc += std::exp(shape.conditional_log_variance(a, b));
  }
  return {sample_variance(m0), sample_variance(m1), acc / static_cast<double>(draws)};
}

double pve_at(const PveDraws& d, double intercept) {
  return d.var_mean_w0 / (d.var_mean_w1 + std::exp(intercept) * d.mean_exp_rest);
}

}  // namespace

double monte_carlo_pve(const GenerationConfig& generation, std::uint64_t seed, std::size_t draws) {
  return pve_at(pve_draws(generation, seed, draws), generation.gamma[0]);
}

std::vector<double> calibrate_gamma(double pve_target, const GenerationConfig& generation,
                                    std::uint64_t seed, std::size_t draws) {
  if (!(pve_target > 0.0 && pve_target < 1.0)) throw InputError("pve_target must lie in (0, 1)");
  const PveDraws d = pve_draws(generation, seed, draws);
  double lo = -20.0, hi = 5.0;  // PVE decreases in the intercept
  if (pve_at(d, lo) < pve_target || pve_at(d, hi) > pve_target)
    throw InputError("PVE " + format_double(pve_target) +
                     " is unreachable with the variance intercept in [-20, 5]");
  for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
    const double mid = 0.5 * (lo + hi);
    (pve_at(d, mid) > pve_target ? lo : hi) = mid;
  }
  std::vector<double> gamma = generation.gamma;
  gamma[0] = 0.5 * (lo + hi);
  return gamma;
}

// --- one replication -------------------------------------------------------------

namespace {

struct RepOutcome {
  std::vector<ReplicationRecord> records;
  bool failed = false;
};

SelectionModel working_selection(const SimulationConfig& config, const GeneratedPopulation& pop,
                                 std::uint64_t rep_seed) {
  if (config.perturbation.lambda1_coefficients)
    return SelectionModel::known_logistic(*config.perturbation.lambda1_coefficients,
                                          config.generation.lambda1.cap, config.clip);
  switch (config.lambda1_mode) {
    case Lambda1Mode::known: {
      const Lambda1Form& f = config.generation.lambda1;
      if (const auto* l = std::get_if<Lambda1Form::Logistic>(&f.form))
        return SelectionModel::known_logistic({l->intercept, l->slope}, f.cap, config.clip);
      return SelectionModel::known_constant(
          std::min(std::get<Lambda1Form::Constant>(f.form).value, f.cap), config.clip);
    }
    case Lambda1Mode::direct:
      return fit_direct(pop.frame, config.clip);
    case Lambda1Mode::composed: {
      // the external survey is an independent draw from the same population law
      GenerationConfig ext_cfg = config.generation;
      ext_cfg.n_p = 0;
      ext_cfg.n_e = 0;
      ext_cfg.mechanism = SelectionMechanism::top_ne;
      const GeneratedPopulation other = generate_population(ext_cfg, derive_seed(rep_seed, 7));
      Rng rng = make_rng(rep_seed, 8);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      ExternalSample ext;
      for (const auto& ind : other.frame.rows())
        if (u(rng) < config.external_fraction) {
          ext.ids.push_back(ind.id);
          ext.w0.push_back(ind.w0);
          ext.samp_prob.push_back(config.external_fraction);
        }
      std::vector<Covariates> ehr;
      for (const auto& ind : pop.frame.rows())
        if (ind.r1) ehr.push_back(ind.w0);
      ComposedOptions opts;
      opts.clip = config.clip;
      return fit_composed(ehr, ext, opts);
    }
  }
  throw InputError("unknown lambda1 mode");
}

VarianceModelFit true_variance_model(const std::vector<double>& gamma) {
  VarianceModelFit fit;
  fit.spec = DesignSpec::with_squares(2);
  fit.coefficients = Eigen::Map<const VectorXd>(gamma.data(), static_cast<Eigen::Index>(gamma.size()));
  return fit;
}

RepOutcome run_replicate(const SimulationConfig& config, const std::vector<double>& gamma,
                         std::size_t rep) {
  RepOutcome out;
  const std::uint64_t rep_seed = derive_seed(config.seed, rep);
  auto record = [&](Approach a, double beta, bool ok, std::string why = {},
                    double spent = std::nan("")) {
    out.records.push_back({rep, a, beta, ok, rep_seed, std::move(why), spent});
    if (!ok) out.failed = true;
  };
  auto fail_all = [&](const std::string& why) {
    for (Approach a : config.approaches) record(a, std::nan(""), false, why);
  };

  GenerationConfig gen = config.generation;
  gen.gamma = gamma;
  GeneratedPopulation pop;
  SelectionModel selection;
  try {
    pop = generate_population(gen, rep_seed);
    selection = working_selection(config, pop, rep_seed);
  } catch (const Error& e) {
    fail_all(e.what());
    return out;
  }
  const PopulationFrame& frame = pop.frame;

  DesignInputs inputs;
  inputs.w0_dim = 1;
  inputs.selection = selection;
  inputs.cost = config.cost;
  inputs.n = static_cast<double>(frame.n());
  inputs.n_e = static_cast<double>(frame.n_e());

  // pilot models driving the design
  std::vector<VarianceModelFit> variance_fits(3);
  std::vector<std::string> variance_errors(3);
  {
    const auto& pilot = frame.pilot_ids();
    MatrixXd x(pilot.size(), 2);
    VectorXd y(pilot.size());
    for (std::size_t r = 0; r < pilot.size(); ++r) {
      x(r, 0) = frame[pilot[r]].w0[0];
      x(r, 1) = (*frame[pilot[r]].w1)[0];
      y(r) = *frame[pilot[r]].y;
    }
    VarianceFitOptions vopt;
    vopt.reml = config.reml;
    MeanFitOptions mopt;
    mopt.method = config.mean_method;
    try {
      const MeanModelFit m = fit_mean(x, y, DesignSpec::linear(2), mopt);
      try {
        variance_fits[0] = fit_variance(x, y, m, DesignSpec::with_squares(2), vopt);
      } catch (const Error& e) {
        variance_errors[0] = e.what();
      }
      try {
        variance_fits[1] = fit_variance(x, y, m, DesignSpec::linear(2), vopt);
      } catch (const Error& e) {
        variance_errors[1] = e.what();
      }
    } catch (const Error& e) {
      variance_errors[0] = variance_errors[1] = e.what();
    }
    variance_fits[2] = true_variance_model(gamma);
  }

  const std::uint64_t draw_seed = derive_seed(rep_seed, 11);
  OutcomeModelSpec models;
  models.source = config.fit_source;
  models.options.method = config.mean_method;

  auto estimate = [&](const PopulationFrame& drawn) {
    const PopulationFrame measured = measure_outcomes(drawn, pop.y_latent);
    OutcomeModels fits = fit_outcome_models(measured, models);
    fits.mean_w0.coefficients *= config.perturbation.mean_scale;
    fits.mean_w1.coefficients *= config.perturbation.mean_scale;
    InfluenceContext ctx;
    ctx.selection = selection;
    ctx.mean_w0 = std::move(fits.mean_w0);
    ctx.mean_w1 = std::move(fits.mean_w1);
    return rr_estimate(ctx, measured);
  };

  const bool want_random =
      std::any_of(config.approaches.begin(), config.approaches.end(),
                  [](Approach a) { return a == Approach::naive || a == Approach::random_rr; });
  std::optional<PopulationFrame> random_draw;
  std::string random_error;
  double random_spent = std::nan("");
  if (want_random) {
    try {
      inputs.support = empirical_support(frame);
      inputs.v2 = [](std::span<const double>) { return 1.0; };
      const Lambda2Rule rule = random_lambda2(inputs);
      random_spent = expected_cost(inputs, rule);
      random_draw = draw_second_phase(frame, rule, draw_seed);
    } catch (const Error& e) {
      random_error = e.what();
    }
  }

  for (Approach a : config.approaches) {
    try {
      switch (a) {
        case Approach::naive: {
          if (!random_draw) throw Error(random_error);
          double s = 0.0;
          std::size_t k = 0;
          for (std::size_t i = 0; i < frame.size(); ++i)
            if ((*random_draw)[i].r2) {
              s += pop.y_latent[i];
              ++k;
            }
          if (k == 0) throw InputError("no second-phase rows");
          record(a, s / static_cast<double>(k), true, {}, random_spent);
          break;
        }
        case Approach::random_rr: {
          if (!random_draw) throw Error(random_error);
          record(a, estimate(*random_draw), true, {}, random_spent);
          break;
        }
        default: {
          const std::size_t which =
              a == Approach::optimal ? 0 : (a == Approach::misspecified ? 1 : 2);
          if (!variance_errors[which].empty()) throw Error(variance_errors[which]);
          if (inputs.support.empty()) inputs.support = empirical_support(frame);
          const VarianceModelFit& vf = variance_fits[which];
          inputs.v2 = [&vf](std::span<const double> w) { return vf.predict(w); };
          const DesignSolution sol = optimal_lambda2(inputs);
          if (!sol.feasible)
            throw InfeasibleError(std::to_string(sol.cap_violations()) +
                                  " support points need lambda2 > 1");
          record(a, estimate(draw_second_phase(frame, sol, draw_seed)), true, {},
                 expected_cost(inputs, sol.lambda2));
          break;
        }
      }
    } catch (const Error& e) {
      record(a, std::nan(""), false, e.what());
    }
  }
  return out;
}

}  // namespace

StudyResult run_study(const SimulationConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  StudyResult result;
  result.gamma = config.pve_target ? calibrate_gamma(*config.pve_target, config.generation)
                                   : config.generation.gamma;
  result.truth = config.generation.mean_outcome();

  std::vector<RepOutcome> reps(config.n_reps);
  parallel_for(config.n_reps, config.workers, [&](std::size_t r) {
    reps[r] = run_replicate(config, result.gamma, r);
  });

  for (auto& r : reps) {
    result.failed_replications += r.failed;
    for (auto& rec : r.records) result.records.push_back(std::move(rec));
  }
  for (Approach a : config.approaches) {
    ApproachSummary s{a};
    std::vector<double> est;
    for (const auto& rec : result.records)
      if (rec.approach == a && rec.feasible) est.push_back(rec.beta_hat);
    s.successes = est.size();
    if (!est.empty()) {
      s.mean = mean(est);
      s.bias = s.mean - result.truth;
    }
    s.variance = est.size() >= 2 ? sample_variance(est) : std::nan("");
    result.summaries.push_back(s);
  }
  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const double failed_share =
      static_cast<double>(result.failed_replications) / static_cast<double>(config.n_reps);
  if (failed_share > 0.05) {
    std::string reason;
    for (const auto& rec : result.records)
      if (!rec.feasible) {
        reason = rec.failure;
        break;
      }
    throw Error(std::to_string(result.failed_replications) + " of " +
                std::to_string(config.n_reps) + " replications failed (first: " + reason + ")");
  }
  return result;
}

// --- comparisons -------------------------------------------------------------------

RatioEstimate variance_ratio(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InputError("variance ratio needs paired samples");
  const std::size_t r = a.size();
  if (r < 3) throw InputError("variance ratio needs at least three pairs");
  auto centred_sums = [](const std::vector<double>& v, double& s1, double& s2) {
    const double m = mean(v);
    s1 = s2 = 0.0;
    for (double x : v) {
      s1 += x - m;
      s2 += (x - m) * (x - m);
    }
    return m;
  };
  double a1, a2, b1, b2;
  const double ma = centred_sums(a, a1, a2);
  const double mb = centred_sums(b, b1, b2);
  const double rd = static_cast<double>(r);
  const double va = (a2 - a1 * a1 / rd) / (rd - 1.0);
  const double vb = (b2 - b1 * b1 / rd) / (rd - 1.0);
  if (!(vb > 0.0)) throw InputError("reference approach has zero Monte Carlo variance");
  RatioEstimate out;
  out.value = va / vb;
  std::vector<double> loo(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    const double sa1 = a1 - da, sa2 = a2 - da * da;
    const double sb1 = b1 - db, sb2 = b2 - db * db;
    const double via = (sa2 - sa1 * sa1 / (rd - 1.0)) / (rd - 2.0);
    const double vib = (sb2 - sb1 * sb1 / (rd - 1.0)) / (rd - 2.0);
    loo[i] = via / vib;
  }
  const double lm = mean(loo);
  double ss = 0.0;
  for (double v : loo) ss += (v - lm) * (v - lm);
  out.se = std::sqrt((rd - 1.0) / rd * ss);
  return out;
}

std::pair<std::vector<double>, std::vector<double>> paired_estimates(const StudyResult& result,
                                                                     Approach a, Approach b) {
  std::map<std::size_t, double> ea, eb;
  for (const auto& rec : result.records) {
    if (!rec.feasible) continue;
    if (rec.approach == a) ea[rec.rep] = rec.beta_hat;
    if (rec.approach == b) eb[rec.rep] = rec.beta_hat;
  }
  std::pair<std::vector<double>, std::vector<double>> out;
  for (const auto& [rep, v] : ea) {
    auto it = eb.find(rep);
    if (it == eb.end()) continue;
    out.first.push_back(v);
    out.second.push_back(it->second);
  }
  return out;
}

std::vector<ReTableRow> compare_designs(const StudyResult& result) {
  if (!result.summary(Approach::naive))
    throw InputError("relative efficiencies need approach 1 as the reference");
  std::vector<ReTableRow> table;
  const bool have_random = result.summary(Approach::random_rr) != nullptr;
  for (const auto& s : result.summaries) {
    if (s.successes < 30)
      throw InputError("approach " + approach_name(s.approach) + " has only " +
                       std::to_string(s.successes) + " successful replications (30 needed)");
    ReTableRow row{s.approach, {}, std::nullopt};
    const auto [x, ref] = paired_estimates(result, s.approach, Approach::naive);
    row.vs_naive = variance_ratio(x, ref);
    if (have_random && s.approach != Approach::naive && s.approach != Approach::random_rr) {
      const auto [y, ref2] = paired_estimates(result, s.approach, Approach::random_rr);
      row.vs_random = variance_ratio(y, ref2);
    }
    table.push_back(row);
  }
  return table;
}

}  // namespace twophase
