// Writes the bundled synthetic data sets.
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "twophase/design.hpp"
#include "twophase/frame_io.hpp"
#include "twophase/selection.hpp"
#include "twophase/simharness.hpp"

namespace fs = std::filesystem;
using namespace twophase;

namespace {

/// EHR world: lambda1 = min(0.95, expit(W0)), Bernoulli selection, moderate PVE.
GenerationConfig ehr_world() {
  GenerationConfig g;
  g.n = 10000;
  g.n_p = 200;
  g.mechanism = SelectionMechanism::bernoulli;
  g.lambda1.form = Lambda1Form::Logistic{0.0, 1.0};
  g.lambda1.cap = 0.95;
  g.gamma = {-2.413, -0.2, 0.3, 0.01, 0.01};
  return g;
}

PopulationFrame first_phase_only(const PopulationFrame& frame) {
  std::vector<Individual> rows;
  for (const auto& ind : frame.rows())
    if (ind.r1) rows.push_back(ind);
  return PopulationFrame(frame.n(), std::move(rows));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Generate the bundled synthetic data"};
  std::string out_dir = "data";
  std::uint64_t seed = 20240501;
  app.add_option("--output", out_dir, "Output directory");
  app.add_option("--seed", seed, "Seed");
  CLI11_PARSE(app, argc, argv);

  try {
    fs::create_directories(out_dir);
    const GenerationConfig g = ehr_world();
    const GeneratedPopulation pop = generate_population(g, derive_seed(seed, 0));
    const PopulationFrame ehr = first_phase_only(pop.frame);
    write_frame(fs::path(out_dir) / "ehr_synthetic.csv", ehr);

    // external survey: independent draw from the same population law, pi = 0.05
    GenerationConfig eg = g;
    eg.n_p = 0;
    eg.n_e = 0;
    eg.mechanism = SelectionMechanism::top_ne;
    const GeneratedPopulation other = generate_population(eg, derive_seed(seed, 1));
    Rng rng = make_rng(seed, 2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ExternalSample ext;
    for (const auto& ind : other.frame.rows())
      if (u(rng) < 0.05) {
        ext.ids.push_back(1000000 + ind.id);
        ext.w0.push_back(ind.w0);
        ext.samp_prob.push_back(0.05);
      }
    {
      std::ofstream out(fs::path(out_dir) / "external_synthetic.csv", std::ios::binary);
      write_external(out, ext);
    }

    // a completed recruitment: composed selection, pilot variance model, optimal draw
    std::vector<Covariates> ehr_w0;
    for (const auto& ind : ehr.rows()) ehr_w0.push_back(ind.w0);
    DesignInputs inputs;
    inputs.selection = fit_composed(ehr_w0, ext);
    inputs.cost = CostModel{100000.0, 50000.0, 0.01, OutcomeCost::constant(2000.0)};
    inputs.n = static_cast<double>(ehr.n());
    inputs.n_e = static_cast<double>(ehr.n_e());
    inputs.support = empirical_support(ehr);
    std::vector<Covariates> x;
    Eigen::VectorXd y(ehr.pilot_ids().size());
    for (std::size_t r = 0; r < ehr.pilot_ids().size(); ++r) {
      x.push_back(ehr[ehr.pilot_ids()[r]].wbar1());
      y(r) = *ehr[ehr.pilot_ids()[r]].y;
    }
    const Eigen::MatrixXd xm = stack_rows(x);
    const MeanModelFit m = fit_mean(xm, y, DesignSpec::linear(2));
    const VarianceModelFit v = fit_variance(xm, y, m, DesignSpec::with_squares(2));
    inputs.v2 = [&v](std::span<const double> w) { return v.predict(w); };
    const DesignSolution sol = optimal_lambda2(inputs);
    const PopulationFrame drawn = draw_second_phase(ehr, sol, derive_seed(seed, 3));
    std::vector<double> y_ehr;
    for (const auto& ind : ehr.rows()) y_ehr.push_back(pop.y_latent[static_cast<std::size_t>(ind.id - 1)]);
    write_frame(fs::path(out_dir) / "ehr_recruited.csv", measure_outcomes(drawn, y_ehr));
    std::cout << "first phase " << ehr.n_e() << ", external " << ext.size() << ", second phase "
              << measure_outcomes(drawn, y_ehr).n_s() << ", truth " << g.mean_outcome() << '\n';
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 1;
  }
  return 0;
}
