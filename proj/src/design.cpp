#include "twophase/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace twophase {

namespace {

std::span<const double> w0_part(const Covariates& wbar1, std::size_t w0_dim) {
  return std::span<const double>(wbar1.data(), w0_dim);
}

std::string point_list(const std::vector<std::size_t>& idx) {
  std::string s;
  for (std::size_t k = 0; k < idx.size() && k < 10; ++k) {
    if (!s.empty()) s += ", ";
    s += std::to_string(idx[k]);
  }
  if (idx.size() > 10) s += ", ...";
  return s;
}

double weighted_sum(const EvaluatedSupport& ev, const std::function<double(std::size_t)>& f) {
  double s = 0.0;
  for (std::size_t i = 0; i < ev.size(); ++i) s += ev.prob[i] * f(i);
  return s;
}

double root_mean(const EvaluatedSupport& ev) {
  return weighted_sum(ev, [&](std::size_t i) { return std::sqrt(ev.c2[i] * ev.v2[i]); });
}

double v2_floor_value(const DesignInputs& inputs) {
  double m = 0.0;
  for (const auto& pt : inputs.support) {
    const double v = inputs.v2(pt.wbar1);
    if (!(v >= 0.0)) throw InputError("v2 must be non-negative, got " + format_double(v));
    m += pt.prob * v;
  }
  if (!(m > 0.0)) throw InputError("v2 is zero on the whole support");
  return 1e-8 * m;
}

NeRange ne_range_from(const DesignInputs& inputs, const EvaluatedSupport& ev) {
  const double e_root = root_mean(ev);
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < ev.size(); ++i)
    lowest = std::min(lowest, inputs.n * ev.lambda1[i] * std::sqrt(ev.c2[i] / ev.v2[i]));
  const CostModel& c = inputs.cost;
  NeRange r;
  const double room = c.total_budget - c.initial_cost;
  if (c.per_record_cost > 0.0) {
    r.n_max = room / c.per_record_cost;
    r.n_min = std::max(0.0, (room - lowest * e_root) / c.per_record_cost);
  } else {
    r.n_min = room <= lowest * e_root ? 0.0 : std::numeric_limits<double>::infinity();
  }
  return r;
}

std::vector<double> rule_values(const DesignInputs& inputs, const Lambda2Rule& rule) {
  std::vector<double> out;
  out.reserve(inputs.support.size());
  for (const auto& pt : inputs.support) out.push_back(rule(pt.wbar1));
  return out;
}

}  // namespace

void DesignInputs::validate() const {
  if (support.empty()) throw InputError("design support is empty");
  if (!v2) throw InputError("design inputs need a v2 function");
  if (!(n > 0.0)) throw InputError("population size must be positive");
  if (!(n_e >= 0.0 && n_e <= n)) throw InputError("n_e must lie in [0, n]");
  double total = 0.0;
  for (const auto& pt : support) {
    if (pt.wbar1.size() < w0_dim) throw InputError("support point shorter than w0");
    if (!(pt.prob >= 0.0)) throw InputError("support probabilities must be non-negative");
    total += pt.prob;
  }
  if (std::abs(total - 1.0) > 1e-10)
    throw InputError("support probabilities sum to " + format_double(total));
  cost.validate();
}

EvaluatedSupport evaluate_support(const DesignInputs& inputs) {
  inputs.validate();
  const double floor = v2_floor_value(inputs);
  EvaluatedSupport ev;
  const std::size_t m = inputs.support.size();
  ev.prob.reserve(m);
  ev.lambda1.reserve(m);
  ev.v2.reserve(m);
  ev.c2.reserve(m);
  for (const auto& pt : inputs.support) {
    const auto w0 = w0_part(pt.wbar1, inputs.w0_dim);
    ev.prob.push_back(pt.prob);
    const double l1 = inputs.selection.evaluate(w0);
    if (!(l1 > 0.0 && l1 <= 1.0)) throw InputError("lambda1 outside (0, 1]");
    ev.lambda1.push_back(l1);
    ev.v2.push_back(std::max(inputs.v2(pt.wbar1), floor));
    const double c2 = inputs.cost.outcome_cost(pt.wbar1);
    if (!(c2 > 0.0)) throw InputError("outcome cost must be positive on the support");
    ev.c2.push_back(c2);
    if (inputs.v1) ev.v1.push_back(inputs.v1(w0));
  }
  return ev;
}

double expected_cost(const DesignInputs& inputs, std::span<const double> lambda2) {
  inputs.validate();
  if (lambda2.size() != inputs.support.size())
    throw InputError("one lambda2 value per support point is required");
  double s = 0.0;
  for (std::size_t i = 0; i < lambda2.size(); ++i) {
    const auto& pt = inputs.support[i];
    s += pt.prob * inputs.selection.evaluate(w0_part(pt.wbar1, inputs.w0_dim)) * lambda2[i] *
         inputs.cost.outcome_cost(pt.wbar1);
  }
  const CostModel& c = inputs.cost;
  return c.initial_cost + inputs.n_e * c.per_record_cost + inputs.n * s;
}

double expected_cost(const DesignInputs& inputs, const Lambda2Rule& lambda2) {
  return expected_cost(inputs, rule_values(inputs, lambda2));
}

NeRange feasible_ne_range(const DesignInputs& inputs) {
  return ne_range_from(inputs, evaluate_support(inputs));
}

DesignSolution optimal_lambda2(const DesignInputs& inputs) {
  const EvaluatedSupport ev = evaluate_support(inputs);
  const double budget = inputs.outcome_budget();
  DesignSolution sol;
  sol.ne_range = ne_range_from(inputs, ev);
  if (!(budget > 0.0))
    throw InfeasibleError("no budget left for outcomes: B - C0 - n_e C1 = " +
                          format_double(budget) + "; n_e must be below " +
                          format_double(sol.ne_range.n_max));
  sol.outcome_budget = budget;
  sol.e_root = root_mean(ev);
  sol.nu = (sol.e_root / budget) * (sol.e_root / budget);

  const double n = inputs.n;
  const double scale = budget / (n * sol.e_root);
  sol.points.reserve(ev.size());
  double spent = 0.0;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    DesignPoint p;
    p.wbar1 = inputs.support[i].wbar1;
    p.id = inputs.support[i].id;
    p.prob = ev.prob[i];
    p.lambda1 = ev.lambda1[i];
    p.c2 = ev.c2[i];
    p.v2 = ev.v2[i];
    p.lambda2 = std::sqrt(p.v2 / p.c2) * scale / p.lambda1;
    p.eta2 = p.lambda1 * p.lambda2;
    if (p.lambda2 > 1.0 || p.eta2 > p.lambda1) sol.violations.push_back(i);
    spent += p.prob * p.eta2 * p.c2;
    sol.points.push_back(std::move(p));
  }
  const CostModel& c = inputs.cost;
  sol.budget_spent = c.initial_cost + inputs.n_e * c.per_record_cost + n * spent;
  sol.feasible = sol.violations.empty();

  const double floor = v2_floor_value(inputs);
  sol.lambda2 = [selection = inputs.selection, cost = inputs.cost, v2 = inputs.v2,
                 w0_dim = inputs.w0_dim, floor, scale](std::span<const double> wbar1) {
    const double l1 = selection.evaluate(wbar1.subspan(0, w0_dim));
    return std::sqrt(std::max(v2(wbar1), floor) / cost.outcome_cost(wbar1)) * scale / l1;
  };
  return sol;
}

std::vector<double> random_lambda2_values(const DesignInputs& inputs) {
  const EvaluatedSupport ev = evaluate_support(inputs);
  const double budget = inputs.outcome_budget();
  if (!(budget > 0.0)) throw InfeasibleError("no budget left for outcomes");
  const double mean_c2 = weighted_sum(ev, [&](std::size_t i) { return ev.c2[i]; });
  std::vector<double> out(ev.size());
  for (std::size_t i = 0; i < ev.size(); ++i) out[i] = budget / (inputs.n * ev.lambda1[i] * mean_c2);
  return out;
}

Lambda2Rule random_lambda2(const DesignInputs& inputs) {
  const EvaluatedSupport ev = evaluate_support(inputs);
  const double budget = inputs.outcome_budget();
  if (!(budget > 0.0)) throw InfeasibleError("no budget left for outcomes");
  const double mean_c2 = weighted_sum(ev, [&](std::size_t i) { return ev.c2[i]; });
  const double scale = budget / (inputs.n * mean_c2);
  return [selection = inputs.selection, w0_dim = inputs.w0_dim,
          scale](std::span<const double> wbar1) {
    return scale / selection.evaluate(wbar1.subspan(0, w0_dim));
  };
}

double design_variance(const DesignInputs& inputs, std::span<const double> lambda2, double var_y,
                       double pve) {
  if (!inputs.v1) throw InputError("design variance needs a v1 function");
  const EvaluatedSupport ev = evaluate_support(inputs);
  if (lambda2.size() != ev.size()) throw InputError("one lambda2 value per support point is required");
  double v = pve * var_y;
  for (std::size_t i = 0; i < ev.size(); ++i) {
    if (!(lambda2[i] > 0.0))
      throw InputError("lambda2 must be positive on the support (point " + std::to_string(i) + ")");
    v += ev.prob[i] * ev.v1[i] / ev.lambda1[i];
    v += ev.prob[i] * ev.v2[i] / (ev.lambda1[i] * lambda2[i]);
  }
  return v;
}

double design_variance(const DesignInputs& inputs, const Lambda2Rule& lambda2, double var_y,
                       double pve) {
  return design_variance(inputs, rule_values(inputs, lambda2), var_y, pve);
}

namespace {

struct ReParts {
  double base = 0.0;     // PVE Var(Y) + E'
  double optimal = 0.0;  // n / budget * E''^2
  double random = 0.0;   // n / budget * E[C2] E[v2]
};

ReParts re_parts(const DesignInputs& inputs, double var_y, double pve) {
  if (!inputs.v1) throw InputError("relative efficiency needs a v1 function");
  const EvaluatedSupport ev = evaluate_support(inputs);
  const double budget = inputs.outcome_budget();
  if (!(budget > 0.0)) throw InfeasibleError("no budget left for outcomes");
  ReParts r;
  const double e_prime = weighted_sum(ev, [&](std::size_t i) { return ev.v1[i] / ev.lambda1[i]; });
  r.base = pve * var_y + e_prime;
  const double e_root = root_mean(ev);
  r.optimal = inputs.n / budget * e_root * e_root;
  r.random = inputs.n / budget * weighted_sum(ev, [&](std::size_t i) { return ev.c2[i]; }) *
             weighted_sum(ev, [&](std::size_t i) { return ev.v2[i]; });
  return r;
}

}  // namespace

double relative_efficiency(const DesignInputs& inputs, double var_y, double pve) {
  const ReParts r = re_parts(inputs, var_y, pve);
  const double den = r.base + r.random;
  if (!(den > 0.0)) throw InputError("relative efficiency denominator is not positive");
  return (r.base + r.optimal) / den;
}

double relative_efficiency_alternative(const DesignInputs& original,
                                       const DesignInputs& alternative, double var_y, double pve) {
  const ReParts num = re_parts(alternative, var_y, pve);
  const ReParts den = re_parts(original, var_y, pve);
  const double d = den.base + den.random;
  if (!(d > 0.0)) throw InputError("relative efficiency denominator is not positive");
  return (num.base + num.optimal) / d;
}

// --- alternative design --------------------------------------------------------

namespace {

struct CellGrid {
  std::vector<std::vector<double>> edges;  // interior edges per dimension
  std::size_t bins = 1;

  std::size_t cell(std::span<const double> w0) const {
    std::size_t id = 0;
    for (std::size_t d = 0; d < edges.size(); ++d) {
      const auto& e = edges[d];
      const auto b = static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), w0[d]) - e.begin());
      id = id * bins + b;
    }
    return id;
  }
  std::size_t count() const {
    std::size_t c = 1;
    for (std::size_t d = 0; d < edges.size(); ++d) c *= bins;
    return c;
  }
  std::string describe(std::size_t id) const {
    std::vector<std::size_t> parts(edges.size());
    for (std::size_t d = edges.size(); d-- > 0;) {
      parts[d] = id % bins;
      id /= bins;
    }
    std::string s = "(";
    for (std::size_t d = 0; d < parts.size(); ++d) {
      if (d) s += ",";
      s += std::to_string(parts[d]);
    }
    return s + ")";
  }
};

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::vector<double> target_cell_probs(const CellGrid& grid, const W0Source& target) {
  std::vector<double> probs(grid.count(), 0.0);
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, IndividualLevel>) {
          for (const auto& ind : s.rows) probs[grid.cell(ind.w0)] += 1.0;
          for (double& p : probs) p /= static_cast<double>(s.rows.size());
        } else if constexpr (std::is_same_v<T, ExternalSample>) {
          double total = 0.0;
          for (std::size_t i = 0; i < s.size(); ++i) {
            probs[grid.cell(s.w0[i])] += 1.0 / s.samp_prob[i];
            total += 1.0 / s.samp_prob[i];
          }
          for (double& p : probs) p /= total;
        } else {
          std::visit(
              [&](const auto& d) {
                using D = std::decay_t<decltype(d)>;
                if constexpr (std::is_same_v<D, DiscretePmf>) {
                  for (std::size_t i = 0; i < d.points.size(); ++i)
                    probs[grid.cell(d.points[i])] += d.probs[i];
                } else {
                  const std::size_t k = d.mean.size();
                  for (std::size_t id = 0; id < probs.size(); ++id) {
                    std::size_t rest = id;
                    double p = 1.0;
                    for (std::size_t dim = k; dim-- > 0;) {
                      const std::size_t b = rest % grid.bins;
                      rest /= grid.bins;
                      const auto& e = grid.edges[dim];
                      const double lo = b == 0 ? -INFINITY : e[b - 1];
                      const double hi = b == e.size() ? INFINITY : e[b];
                      p *= normal_cdf((hi - d.mean[dim]) / d.sd[dim]) -
                           normal_cdf((lo - d.mean[dim]) / d.sd[dim]);
                    }
                    probs[id] = p;
                  }
                }
              },
              s);
        }
      },
      target);
  return probs;
}

}  // namespace

AlternativeDesign alternative_design(const PopulationFrame& frame, const W0Source& target,
                                     std::size_t n_e_prime, const DesignInputs& inputs,
                                     const AlternativeOptions& options) {
  validate_source(target);
  if (options.bins == 0) throw InputError("at least one cell per dimension is required");
  std::vector<std::size_t> ehr;
  for (std::size_t i = 0; i < frame.size(); ++i)
    if (frame[i].r1) ehr.push_back(i);
  if (n_e_prime == 0) throw InputError("n_e' must be positive");
  if (n_e_prime > ehr.size())
    throw InputError("n_e' = " + std::to_string(n_e_prime) + " exceeds n_e = " +
                     std::to_string(ehr.size()));

  const std::size_t k = frame.w0_dim();
  CellGrid grid;
  grid.bins = options.bins;
  for (std::size_t d = 0; d < k; ++d) {
    std::vector<double> vals;
    vals.reserve(ehr.size());
    for (std::size_t i : ehr) vals.push_back(frame[i].w0[d]);
    std::vector<double> e;
    for (std::size_t b = 1; b < options.bins; ++b)
      e.push_back(quantile(vals, static_cast<double>(b) / static_cast<double>(options.bins)));
    e.erase(std::unique(e.begin(), e.end()), e.end());
    // pad so that every dimension has bins - 1 edges
    while (e.size() + 1 < options.bins) e.push_back(e.empty() ? INFINITY : e.back());
    grid.edges.push_back(std::move(e));
  }

  const std::vector<double> target_p = target_cell_probs(grid, target);
  std::vector<std::vector<std::size_t>> members(grid.count());
  for (std::size_t i : ehr) members[grid.cell(frame[i].w0)].push_back(i);

  std::vector<std::size_t> empty;
  for (std::size_t c = 0; c < members.size(); ++c)
    if (target_p[c] > 0.0 && members[c].empty()) empty.push_back(c);
  if (!empty.empty()) {
    std::string cells;
    for (std::size_t c : empty) cells += (cells.empty() ? "" : ", ") + grid.describe(c);
    throw InputError("target W0 cells without EHR support: " + cells);
  }

  // proportional allocation with largest remainders
  std::vector<std::size_t> quota(members.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const double exact = target_p[c] * static_cast<double>(n_e_prime);
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < n_e_prime && r < remainders.size(); ++r, ++assigned)
    ++quota[remainders[r].second];

  double achievable = INFINITY;
  for (std::size_t c = 0; c < members.size(); ++c)
    if (target_p[c] > 0.0)
      achievable = std::min(achievable, static_cast<double>(members[c].size()) / target_p[c]);
  for (std::size_t c = 0; c < members.size(); ++c)
    if (quota[c] > members[c].size())
      throw InputError("n_e' = " + std::to_string(n_e_prime) +
                       " exceeds the achievable matched size (about " +
                       std::to_string(static_cast<std::size_t>(achievable)) + ")");

  Rng rng = make_rng(options.seed, 2);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& m = members[c];
    for (std::size_t j = 0; j < quota[c]; ++j) {
      std::uniform_int_distribution<std::size_t> pick(j, m.size() - 1);
      std::swap(m[j], m[pick(rng)]);
      chosen.push_back(m[j]);
    }
  }
  std::sort(chosen.begin(), chosen.end());

  AlternativeDesign out;
  out.target_freq = target_p;
  out.subsample_freq.resize(quota.size());
  for (std::size_t c = 0; c < quota.size(); ++c)
    out.subsample_freq[c] = static_cast<double>(quota[c]) / static_cast<double>(n_e_prime);

  const double weight = 1.0 / static_cast<double>(n_e_prime);
  DesignInputs alt = inputs;
  alt.support.clear();
  for (std::size_t i : chosen) {
    out.ids.push_back(frame[i].id);
    alt.support.push_back({frame[i].wbar1(), weight, frame[i].id});
  }
  const double lambda1_prime = static_cast<double>(n_e_prime) / inputs.n;
  alt.selection = SelectionModel::known_constant(
      lambda1_prime, ClipBounds{std::min(1e-3, lambda1_prime), 1.0});
  alt.n_e = static_cast<double>(n_e_prime);
  out.solution = optimal_lambda2(alt);
  out.re_alt = inputs.v1 ? relative_efficiency_alternative(inputs, alt, options.var_y, options.pve)
                         : std::numeric_limits<double>::quiet_NaN();
  out.inputs = std::move(alt);
  return out;
}

// --- drawing ---------------------------------------------------------------------

PopulationFrame draw_second_phase(const PopulationFrame& frame, const Lambda2Rule& lambda2,
                                  std::uint64_t seed) {
  Rng rng = make_rng(seed, 1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Individual> rows(frame.rows().begin(), frame.rows().end());
  std::vector<std::size_t> bad;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Individual& ind = rows[i];
    if (!ind.r1) {
      ind.r2 = false;
      ind.lambda2.reset();
      continue;
    }
    const double l2 = lambda2(ind.wbar1());
    if (!(l2 > 0.0 && l2 <= 1.0)) {
      bad.push_back(i + 1);
      continue;
    }
    ind.r2 = u(rng) < l2;
    ind.lambda2 = l2;
    if (!ind.r2 && !ind.pilot) ind.y.reset();
  }
  if (!bad.empty())
    throw InfeasibleError("lambda2 outside (0, 1] at rows " + point_list(bad));
  return PopulationFrame(frame.n(), std::move(rows));
}

PopulationFrame draw_second_phase(const PopulationFrame& frame, const DesignSolution& solution,
                                  std::uint64_t seed) {
  if (!solution.feasible)
    throw InfeasibleError("cannot draw from an infeasible design (" +
                          std::to_string(solution.cap_violations()) + " points with lambda2 > 1)");
  return draw_second_phase(frame, solution.lambda2, seed);
}

std::vector<SupportPoint> empirical_support(const PopulationFrame& frame) {
  std::vector<SupportPoint> out;
  for (const auto& ind : frame.rows())
    if (ind.r1) out.push_back({ind.wbar1(), 0.0, ind.id});
  if (out.empty()) throw InputError("frame has no first-phase rows");
  const double w = 1.0 / static_cast<double>(out.size());
  for (auto& p : out) p.prob = w;
  return out;
}

}  // namespace twophase
