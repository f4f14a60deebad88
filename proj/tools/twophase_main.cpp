#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "twophase/design.hpp"
#include "twophase/estimator.hpp"
#include "twophase/frame_io.hpp"
#include "twophase/selection.hpp"
#include "twophase/serialize.hpp"
#include "twophase/simharness.hpp"

#ifndef TWOPHASE_VERSION
#define TWOPHASE_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using namespace twophase;

namespace {

enum ExitCode { ok = 0, failure = 1, input_error = 2, infeasible = 3, no_convergence = 4 };

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string output = ".";
  unsigned workers = 0;
  bool emit_plot_data = false;
  std::optional<std::size_t> n_reps;
  std::string log_level = "info";
};

struct LoadedConfig {
  json body;
  fs::path base_dir;
};

LoadedConfig load_config(const std::string& path) {
  if (path.empty()) throw InputError("--config is required");
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path);
  LoadedConfig c;
  try {
    c.body = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw InputError("config " + path + ": " + e.what());
  }
  if (!c.body.is_object()) throw InputError("config " + path + " must hold a JSON object");
  c.base_dir = fs::absolute(path).parent_path();
  return c;
}

fs::path existing_path(const LoadedConfig& c, const std::string& key) {
  if (!c.body.contains(key)) throw InputError("config is missing '" + key + "'");
  fs::path p = c.body[key].get<std::string>();
  if (p.is_relative()) p = c.base_dir / p;
  if (!fs::exists(p)) throw InputError("'" + key + "' path does not exist: " + p.string());
  return p;
}

std::uint64_t resolve_seed(const GlobalOptions& g, const json& body) {
  if (g.seed) return *g.seed;
  return body.value("seed", std::uint64_t{1});
}

/// Hash of the effective configuration; output location and worker count are
/// excluded because they do not change results.
std::string config_hash(json effective) {
  effective.erase("workers");
  effective.erase("output");
  return hex64(fnv1a(effective.dump()));
}

json meta(const std::string& hash, std::uint64_t seed) {
  return {{"tool_version", TWOPHASE_VERSION}, {"config_hash", hash}, {"seed", seed}};
}

std::string csv_header(const std::string& hash, std::uint64_t seed) {
  return std::string("# tool_version=") + TWOPHASE_VERSION + " config_hash=" + hash +
         " seed=" + std::to_string(seed) + "\n";
}

fs::path output_dir(const GlobalOptions& g) {
  fs::path dir = g.output;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

void write_json(const fs::path& p, const json& j) {
  auto out = open_out(p);
  out << j.dump(2) << '\n';
  spdlog::info("wrote {}", p.string());
}

FrameSchema frame_schema(const json& body) {
  FrameSchema s;
  s.w0_dim = body.value("w0_dim", std::size_t{0});
  s.w1_dim = body.value("w1_dim", std::size_t{0});
  if (body.contains("population_size")) s.population_size = body["population_size"].get<std::size_t>();
  return s;
}

DesignSpec spec_from(const json& j, std::size_t dim) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s == "linear") return DesignSpec::linear(dim);
    if (s == "squares") return DesignSpec::with_squares(dim);
    if (s == "intercept") return DesignSpec::intercept_only();
    throw InputError("unknown model shorthand '" + s + "' (linear, squares, intercept)");
  }
  return design_spec_from_json(j);
}

ClipBounds clip_from_body(const json& body) {
  ClipBounds c;
  if (body.contains("clip")) {
    c.lo = body["clip"].value("lo", c.lo);
    c.hi = body["clip"].value("hi", c.hi);
  }
  c.validate();
  return c;
}

// --- simulate ----------------------------------------------------------------------

int cmd_simulate(const GlobalOptions& g) {
  LoadedConfig c = load_config(g.config);
  if (g.n_reps) c.body["n_reps"] = *g.n_reps;
  c.body["seed"] = resolve_seed(g, c.body);
  SimulationConfig config = simulation_config_from_json(c.body);
  config.workers = g.workers;

  const json effective = to_json(config);
  const std::string hash = config_hash(effective);
  spdlog::info("simulate: {} replications, seed {}, config {}", config.n_reps, config.seed, hash);

  const StudyResult result = run_study(config);
  spdlog::info("finished in {:.1f} s, {} failed replications", result.elapsed_seconds,
               result.failed_replications);

  bool ratios = true;
  const bool has_naive = std::find(config.approaches.begin(), config.approaches.end(),
                                   Approach::naive) != config.approaches.end();
  if (config.n_reps < 30 || !has_naive) {
    ratios = false;
    spdlog::warn("relative efficiencies suppressed: {}",
                 has_naive ? "fewer than 30 replications" : "approach 1 was not run");
  }

  const fs::path dir = output_dir(g);
  json doc = {{"meta", meta(hash, config.seed)}, {"config", effective}};
  doc["result"] = to_json(result, ratios);
  write_json(dir / "study.json", doc);
  {
    auto out = open_out(dir / "replications.csv");
    out << csv_header(hash, config.seed);
    write_records_csv(out, result);
    spdlog::info("wrote {}", (dir / "replications.csv").string());
  }
  if (g.emit_plot_data) {
    auto out = open_out(dir / "plot_data.csv");
    out << csv_header(hash, config.seed);
    out << "approach,re_vs_1,se_vs_1,re_vs_2,se_vs_2\n";
    if (ratios) {
      for (const auto& row : compare_designs(result)) {
        out << approach_name(row.approach) << ',' << format_double(row.vs_naive.value) << ','
            << format_double(row.vs_naive.se) << ',';
        if (row.vs_random)
          out << format_double(row.vs_random->value) << ',' << format_double(row.vs_random->se);
        else
          out << ',';
        out << '\n';
      }
    }
    spdlog::info("wrote {}", (dir / "plot_data.csv").string());
  }
  if (ratios)
    for (const auto& row : compare_designs(result))
      spdlog::info("RE({} vs 1) = {:.4f} (se {:.4f})", approach_name(row.approach),
                   row.vs_naive.value, row.vs_naive.se);
  return ok;
}

// --- select ------------------------------------------------------------------------

int cmd_select(const GlobalOptions& g) {
  LoadedConfig c = load_config(g.config);
  const std::uint64_t seed = resolve_seed(g, c.body);
  c.body["seed"] = seed;
  const std::string method = c.body.value("method", std::string("composed"));
  const ClipBounds clip = clip_from_body(c.body);
  const fs::path ehr_path = existing_path(c, "ehr");
  const PopulationFrame ehr = read_frame(ehr_path, frame_schema(c.body));

  SelectionModel model;
  std::size_t n_external = 0;
  if (method == "composed") {
    const ExternalSample ext = read_external(existing_path(c, "external"));
    n_external = ext.size();
    std::vector<Covariates> w0;
    for (const auto& ind : ehr.rows())
      if (ind.r1) w0.push_back(ind.w0);
    ComposedOptions opts;
    opts.clip = clip;
    opts.squares_in_pool = c.body.value("squares_in_pool", false);
    model = fit_composed(w0, ext, opts);
  } else if (method == "direct") {
    model = fit_direct(ehr, clip);
  } else {
    throw InputError("unknown selection method '" + method + "' (composed or direct)");
  }

  const std::string hash = config_hash(c.body);
  json diagnostics = {{"over_one_count", model.over_one_count()},
                      {"n_ehr", ehr.n_e()},
                      {"n_external", n_external}};
  const fs::path dir = output_dir(g);
  {
    auto out = open_out(dir / "lambda1_hat.csv");
    out << csv_header(hash, seed);
    bool have_truth = true;
    for (const auto& ind : ehr.rows()) have_truth = have_truth && ind.lambda1.has_value();
    out << (have_truth ? "id,lambda1_hat,lambda1_true\n" : "id,lambda1_hat\n");
    double abs_err = 0.0;
    std::size_t count = 0;
    for (const auto& ind : ehr.rows()) {
      if (!ind.r1) continue;
      const double est = model.evaluate(ind.w0);
      out << ind.id << ',' << format_double(est);
      if (have_truth) {
        out << ',' << format_double(*ind.lambda1);
        abs_err += std::abs(est - *ind.lambda1);
        ++count;
      }
      out << '\n';
    }
    if (have_truth && count > 0) {
      diagnostics["mae_vs_truth"] = abs_err / static_cast<double>(count);
      spdlog::info("mean absolute error against the lambda1 column: {:.4f}",
                   abs_err / static_cast<double>(count));
    }
    spdlog::info("wrote {}", (dir / "lambda1_hat.csv").string());
  }
  if (model.over_one_count() > 0)
    spdlog::warn("{} pooled rows had a composed value >= 1 before clipping",
                 model.over_one_count());
  write_json(dir / "selection.json", {{"meta", meta(hash, seed)},
                                      {"model", to_json(model)},
                                      {"diagnostics", diagnostics}});
  return ok;
}

SelectionModel selection_for(const LoadedConfig& c) {
  if (c.body.contains("selection")) {
    const json& s = c.body["selection"];
    if (s.is_string()) {
      fs::path p = s.get<std::string>();
      if (p.is_relative()) p = c.base_dir / p;
      if (!fs::exists(p)) throw InputError("selection file does not exist: " + p.string());
      std::ifstream in(p);
      json doc;
      try {
        doc = json::parse(in);
      } catch (const json::parse_error& e) {
        throw InputError("selection file " + p.string() + ": " + e.what());
      }
      return selection_from_json(doc.contains("model") ? doc["model"] : doc);
    }
    return selection_from_json(s);
  }
  throw InputError("config is missing 'selection'");
}

// --- design ------------------------------------------------------------------------

int cmd_design(const GlobalOptions& g) {
  LoadedConfig c = load_config(g.config);
  const std::uint64_t seed = resolve_seed(g, c.body);
  c.body["seed"] = seed;
  const PopulationFrame frame = read_frame(existing_path(c, "frame"), frame_schema(c.body));
  if (!c.body.contains("cost")) throw InputError("config is missing 'cost'");

  DesignInputs inputs;
  inputs.w0_dim = frame.w0_dim();
  inputs.selection = selection_for(c);
  inputs.cost = cost_from_json(c.body["cost"]);
  inputs.n = c.body.value("n", static_cast<double>(frame.n()));
  inputs.n_e = c.body.value("n_e", static_cast<double>(frame.n_e()));
  inputs.support = empirical_support(frame);

  VarianceModelFit vfit;
  if (c.body.contains("variance_model")) {
    vfit = variance_fit_from_json(c.body["variance_model"]);
  } else {
    // fit on the pilot: mean model first, then log-variance of its residuals
    const auto& pilot = frame.pilot_ids();
    if (pilot.empty()) throw InputError("no variance_model given and the frame has no pilot rows");
    const std::size_t dim = frame.w0_dim() + frame.w1_dim();
    std::vector<Covariates> x;
    Eigen::VectorXd y(pilot.size());
    for (std::size_t r = 0; r < pilot.size(); ++r) {
      x.push_back(frame[pilot[r]].wbar1());
      y(r) = *frame[pilot[r]].y;
    }
    const Eigen::MatrixXd xm = stack_rows(x);
    const json vs = c.body.value("variance_spec", json("squares"));
    VarianceFitOptions vopt;
    vopt.reml = c.body.value("reml", false);
    const MeanModelFit mfit = fit_mean(xm, y, spec_from(c.body.value("mean_spec", json("linear")), dim));
    vfit = fit_variance(xm, y, mfit, spec_from(vs, dim), vopt);
    spdlog::info("variance model fitted on {} pilot rows", pilot.size());
  }
  inputs.v2 = [&vfit](std::span<const double> w) { return vfit.predict(w); };

  const NeRange range = feasible_ne_range(inputs);
  if (!range.contains(inputs.n_e) || inputs.outcome_budget() <= 0.0) {
    spdlog::error("infeasible design: n_e = {} is outside the feasible range [{}, {})",
                  format_double(inputs.n_e), format_double(range.n_min), format_double(range.n_max));
    return infeasible;
  }
  const DesignSolution sol = optimal_lambda2(inputs);
  if (!sol.feasible) {
    spdlog::error("infeasible design: {} support points need lambda2 > 1; feasible n_e range [{}, {})",
                  sol.cap_violations(), format_double(range.n_min), format_double(range.n_max));
    return infeasible;
  }

  const std::string hash = config_hash(c.body);
  const fs::path dir = output_dir(g);
  json doc = {{"meta", meta(hash, seed)},
              {"n", inputs.n},
              {"n_e", inputs.n_e},
              {"selection", to_json(inputs.selection)},
              {"variance_model", to_json(vfit)},
              {"cost", to_json(inputs.cost)},
              {"solution", to_json(sol)}};
  write_json(dir / "design.json", doc);
  auto out = open_out(dir / "lambda2_star.csv");
  out << csv_header(hash, seed) << "id,lambda2_star\n";
  for (const auto& ind : frame.rows())
    if (ind.r1) out << ind.id << ',' << format_double(sol.lambda2(ind.wbar1())) << '\n';
  spdlog::info("wrote {}", (dir / "lambda2_star.csv").string());
  double expected_n2 = 0.0;
  for (const auto& pt : sol.points) expected_n2 += inputs.n * pt.prob * pt.lambda1 * pt.lambda2;
  spdlog::info("expected second-phase size {:.1f}, nu = {:.6g}", expected_n2, sol.nu);
  return ok;
}

// --- estimate ----------------------------------------------------------------------

std::optional<W0Source> population_source(const LoadedConfig& c, std::size_t w0_dim) {
  if (!c.body.contains("population")) return std::nullopt;
  const json& p = c.body["population"];
  const std::string type = p.value("type", std::string("frame"));
  if (type == "frame") return std::nullopt;
  if (type == "external") {
    fs::path path = p.at("path").get<std::string>();
    if (path.is_relative()) path = c.base_dir / path;
    if (!fs::exists(path)) throw InputError("population path does not exist: " + path.string());
    return W0Source{read_external(path)};
  }
  if (type == "gaussian") {
    GaussianW0 gw{p.at("mean").get<std::vector<double>>(), p.at("sd").get<std::vector<double>>()};
    if (gw.mean.size() != w0_dim) throw InputError("gaussian population dimension mismatch");
    return W0Source{KnownDistribution{gw}};
  }
  if (type == "pmf") {
    DiscretePmf pmf{p.at("points").get<std::vector<Covariates>>(),
                    p.at("probs").get<std::vector<double>>()};
    return W0Source{KnownDistribution{pmf}};
  }
  throw InputError("unknown population type '" + type + "'");
}

FitSource fit_source_named(const std::string& s) {
  if (s == "pilot") return FitSource::pilot;
  if (s == "second_phase") return FitSource::second_phase;
  if (s == "pilot_and_second") return FitSource::pilot_and_second;
  throw InputError("unknown fit source '" + s + "'");
}

int cmd_estimate(const GlobalOptions& g) {
  LoadedConfig c = load_config(g.config);
  const std::uint64_t seed = resolve_seed(g, c.body);
  c.body["seed"] = seed;
  PopulationFrame frame = read_frame(existing_path(c, "frame"), frame_schema(c.body));

  InfluenceContext ctx;
  std::map<std::int64_t, double> design_lambda2;
  if (c.body.contains("design")) {
    const fs::path p = existing_path(c, "design");
    std::ifstream in(p);
    json doc;
    try {
      doc = json::parse(in);
      ctx.selection = selection_from_json(doc.at("selection"));
      for (const auto& pt : doc.at("solution").at("points"))
        design_lambda2[pt.at("id").get<std::int64_t>()] = pt.at("lambda2").get<double>();
    } catch (const json::exception& e) {
      throw InputError("design file " + p.string() + ": " + e.what());
    }
  }
  if (c.body.contains("selection")) ctx.selection = selection_for(c);

  // second-phase probabilities: recorded column first, then the design artifact
  bool missing = false;
  for (const auto& ind : frame.rows()) missing = missing || (ind.r1 && !ind.lambda2);
  if (missing) {
    const std::size_t n = frame.n();
    std::vector<Individual> rows = std::move(frame).release_rows();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      Individual& ind = rows[i];
      if (!ind.r1 || ind.lambda2) continue;
      auto it = design_lambda2.find(ind.id);
      if (it == design_lambda2.end())
        throw InputError("row " + std::to_string(i + 1) + " (id " + std::to_string(ind.id) +
                         "): no lambda2 column value and no design entry");
      ind.lambda2 = it->second;
    }
    frame = PopulationFrame(n, std::move(rows));
  }
  ctx.w0_source = population_source(c, frame.w0_dim());

  BootstrapOptions bopt;
  bopt.seed = seed;
  bopt.workers = g.workers == 0 ? 1 : g.workers;
  const std::size_t dim1 = frame.w0_dim() + frame.w1_dim();
  if (c.body.contains("models")) {
    const json& m = c.body["models"];
    if (m.contains("w0")) bopt.models.w0 = spec_from(m["w0"], frame.w0_dim());
    if (m.contains("w1")) bopt.models.w1 = spec_from(m["w1"], dim1);
    if (m.contains("source")) bopt.models.source = fit_source_named(m["source"].get<std::string>());
    if (m.contains("method"))
      bopt.models.options.method =
          m["method"].get<std::string>() == "huber" ? MeanMethod::huber : MeanMethod::least_squares;
  } else {
    bopt.models.w0 = DesignSpec::linear(frame.w0_dim());
    bopt.models.w1 = DesignSpec::linear(dim1);
  }
  if (c.body.contains("bootstrap")) {
    const json& b = c.body["bootstrap"];
    bopt.n_boot = b.value("n_boot", bopt.n_boot);
    bopt.refit = b.value("refit", bopt.refit);
    bopt.level = b.value("level", bopt.level);
  }
  OutcomeModels fits = fit_outcome_models(frame, bopt.models);
  ctx.mean_w0 = std::move(fits.mean_w0);
  ctx.mean_w1 = std::move(fits.mean_w1);
  const EstimateResult est = bootstrap_ci(ctx, frame, bopt);
  spdlog::info("beta_hat = {} [{}, {}]", format_double(est.beta_hat), format_double(est.ci_lo),
               format_double(est.ci_hi));

  const std::string hash = config_hash(c.body);
  json doc = {{"meta", meta(hash, seed)},
              {"estimate", to_json(est)},
              {"mean_w0", to_json(ctx.mean_w0)},
              {"mean_w1", to_json(ctx.mean_w1)}};
  write_json(output_dir(g) / "estimate.json", doc);
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("twophase");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");

  CLI::App app{"Two-phase sampling design and estimation"};
  app.set_version_flag("--version", std::string(TWOPHASE_VERSION));
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  std::size_t n_reps = 0;
  app.add_option("--config", g.config, "Configuration file (JSON)")->envname("TWOPHASE_CONFIG");
  auto* seed_opt = app.add_option("--seed", seed, "Master seed")->envname("TWOPHASE_SEED");
  app.add_option("--output", g.output, "Output directory")->envname("TWOPHASE_OUTPUT");
  app.add_option("--workers", g.workers, "Worker threads (0 = all cores)")->envname("TWOPHASE_WORKERS");
  app.add_flag("--emit-plot-data", g.emit_plot_data, "Also write plot_data.csv")
      ->envname("TWOPHASE_EMIT_PLOT_DATA");
  auto* reps_opt =
      app.add_option("--n-reps", n_reps, "Override the replication count")->envname("TWOPHASE_N_REPS");
  app.add_option("--log-level", g.log_level, "trace, debug, info, warn, error or off")
      ->envname("TWOPHASE_LOG_LEVEL");
  app.fallthrough();

  auto* sim = app.add_subcommand("simulate", "Run a Monte Carlo design comparison");
  auto* sel = app.add_subcommand("select", "Estimate first-phase selection probabilities");
  auto* des = app.add_subcommand("design", "Compute the optimal second-phase probabilities");
  auto* est = app.add_subcommand("estimate", "Estimate the outcome mean with a bootstrap CI");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? ok : input_error;
  }
  if (*seed_opt) g.seed = seed;
  if (*reps_opt) g.n_reps = n_reps;
  spdlog::set_level(spdlog::level::from_str(g.log_level));

  try {
    if (*sim) return cmd_simulate(g);
    if (*sel) return cmd_select(g);
    if (*des) return cmd_design(g);
    if (*est) return cmd_estimate(g);
  } catch (const InputError& e) {
    spdlog::error("input error: {}", e.what());
    return input_error;
  } catch (const json::exception& e) {
    spdlog::error("input error: {}", e.what());
    return input_error;
  } catch (const InfeasibleError& e) {
    spdlog::error("infeasible: {}", e.what());
    return infeasible;
  } catch (const ConvergenceError& e) {
    spdlog::error("numerical failure: {}", e.what());
    return no_convergence;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return failure;
  }
  return failure;
}
