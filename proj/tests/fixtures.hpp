#pragma once

// Bridges oracle instances to library inputs.

#include <cmath>

#include "oracles.hpp"
#include "twophase/design.hpp"

namespace fixture {

/// Support point k is w̄1 = (k, 0); every per-point quantity is looked up by k.
inline twophase::DesignInputs to_inputs(const oracle::Instance& s) {
  using namespace twophase;
  DesignInputs in;
  in.w0_dim = 1;
  OutcomeCost::Tabulated tab;
  for (std::size_t k = 0; k < s.size(); ++k) {
    in.support.push_back({{static_cast<double>(k), 0.0}, s.p[k], static_cast<std::int64_t>(k + 1)});
    tab.points.push_back({static_cast<double>(k), 0.0});
    tab.costs.push_back(s.c2[k]);
  }
  auto at = [](std::span<const double> w) { return static_cast<std::size_t>(std::lround(w[0])); };
  const auto l1 = s.lambda1, v1 = s.v1, v2 = s.v2;
  in.selection = SelectionModel::known_function(
      [l1, at](std::span<const double> w) { return l1[at(w)]; }, 1, ClipBounds{1e-6, 1.0});
  in.v1 = [v1, at](std::span<const double> w) { return v1[at(w)]; };
  in.v2 = [v2, at](std::span<const double> w) { return v2[at(w)]; };
  in.cost = CostModel{s.budget, s.c0, s.c1, OutcomeCost(tab)};
  in.n = s.n;
  in.n_e = s.n_e;
  return in;
}

inline std::vector<double> lambda2_at_support(const twophase::DesignSolution& sol) {
  std::vector<double> out;
  for (const auto& pt : sol.points) out.push_back(pt.lambda2);
  return out;
}

}  // namespace fixture

#include <random>

#include "twophase/datamodel.hpp"

namespace fixture {

/// A world where the composed selection estimate is valid: lambda1 =
/// min(0.95, expit(W0)) with Bernoulli first-phase selection, and an
/// external survey that samples an independent copy of the population
/// uniformly with probability 0.05.
struct SelectionWorld {
  std::vector<twophase::Covariates> ehr_w0;
  twophase::ExternalSample external;
  twophase::Lambda1Form truth;
  twophase::GenerationConfig config;
};

/// Population size whose 5% external survey has about 6,700 people, the size
/// of a typical national health survey release.
inline constexpr std::size_t application_scale = 134000;

inline SelectionWorld selection_world(std::uint64_t seed, std::size_t n = 10000) {
  using namespace twophase;
  SelectionWorld world;
  GenerationConfig& g = world.config;
  g.n = n;
  g.n_e = n / 2;
  g.n_p = 0;
  g.mechanism = SelectionMechanism::bernoulli;
  g.lambda1.form = Lambda1Form::Logistic{0.0, 1.0};
  g.lambda1.cap = 0.95;
  world.truth = g.lambda1;
  const GeneratedPopulation pop = generate_population(g, derive_seed(seed, 0));
  for (const auto& ind : pop.frame.rows())
    if (ind.r1) world.ehr_w0.push_back(ind.w0);
  std::mt19937_64 rng(derive_seed(seed, 1));
  std::normal_distribution<double> w0(g.w0.mean, g.w0.sd);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = w0(rng);
    if (u(rng) < 0.05) {
      world.external.ids.push_back(static_cast<std::int64_t>(1000000 + i));
      world.external.w0.push_back({w});
      world.external.samp_prob.push_back(0.05);
    }
  }
  return world;
}

}  // namespace fixture
