#include "twophase/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace twophase {

namespace {

json vec_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(i, k);
    rows.push_back(r);
  }
  return rows;
}

Eigen::MatrixXd mat_from(const json& j) {
  if (!j.is_array() || j.empty()) return {};
  const std::size_t r = j.size(), c = j[0].size();
  Eigen::MatrixXd m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (j[i].size() != c) throw InputError("ragged matrix in JSON");
    for (std::size_t k = 0; k < c; ++k) m(i, k) = j[i][k].get<double>();
  }
  return m;
}

/// JSON has no infinities or NaN; they are written as null.
json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

template <class F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw InputError(std::string("invalid ") + what + ": " + e.what());
  }
}

const char* method_name(MeanMethod m) {
  return m == MeanMethod::huber ? "huber" : "least_squares";
}

MeanMethod method_from(const std::string& s) {
  if (s == "least_squares") return MeanMethod::least_squares;
  if (s == "huber") return MeanMethod::huber;
  throw InputError("unknown mean method '" + s + "'");
}

json clip_json(const ClipBounds& c) { return {{"lo", c.lo}, {"hi", c.hi}}; }
ClipBounds clip_from(const json& j) {
  ClipBounds c;
  c.lo = j.value("lo", c.lo);
  c.hi = j.value("hi", c.hi);
  c.validate();
  return c;
}

}  // namespace

json to_json(const DesignSpec& spec) {
  json terms = json::array();
  for (const auto& t : spec.terms) terms.push_back({{"column", t.column}, {"power", t.power}});
  return {{"intercept", spec.intercept}, {"terms", terms}};
}

DesignSpec design_spec_from_json(const json& j) {
  return guarded("design spec", [&] {
    DesignSpec s;
    s.intercept = j.value("intercept", true);
    for (const auto& t : j.at("terms")) {
      const int power = t.value("power", 1);
      if (power < 1) throw InputError("term powers must be positive");
      s.terms.push_back({t.at("column").get<std::size_t>(), power});
    }
    return s;
  });
}

json to_json(const MeanModelFit& fit) {
  return {{"spec", to_json(fit.spec)},
          {"method", method_name(fit.method)},
          {"coefficients", vec_json(fit.coefficients)},
          {"covariance", mat_json(fit.covariance)},
          {"residual_variance", fit.residual_variance},
          {"converged", fit.converged},
          {"iterations", fit.iterations}};
}

MeanModelFit mean_fit_from_json(const json& j) {
  return guarded("mean model", [&] {
    MeanModelFit f;
    f.spec = design_spec_from_json(j.at("spec"));
    f.method = method_from(j.value("method", std::string("least_squares")));
    f.coefficients = vec_from(j.at("coefficients"));
    if (j.contains("covariance")) f.covariance = mat_from(j["covariance"]);
    f.residual_variance = j.value("residual_variance", 0.0);
    f.converged = j.value("converged", true);
    f.iterations = j.value("iterations", 0);
    if (static_cast<std::size_t>(f.coefficients.size()) != f.spec.n_coef())
      throw InputError("mean model coefficient count does not match its design");
    return f;
  });
}

json to_json(const VarianceModelFit& fit) {
  return {{"spec", to_json(fit.spec)},
          {"coefficients", vec_json(fit.coefficients)},
          {"covariance", mat_json(fit.covariance)},
          {"converged", fit.converged},
          {"iterations", fit.iterations},
          {"clipped", fit.clipped}};
}

VarianceModelFit variance_fit_from_json(const json& j) {
  return guarded("variance model", [&] {
    VarianceModelFit f;
    f.spec = design_spec_from_json(j.at("spec"));
    f.coefficients = vec_from(j.at("coefficients"));
    if (j.contains("covariance")) f.covariance = mat_from(j["covariance"]);
    f.converged = j.value("converged", true);
    f.iterations = j.value("iterations", 0);
    f.clipped = j.value("clipped", false);
    if (static_cast<std::size_t>(f.coefficients.size()) != f.spec.n_coef())
      throw InputError("variance model coefficient count does not match its design");
    return f;
  });
}

json to_json(const GlmFit& fit) {
  return {{"family", fit.family == GlmFamily::beta ? "beta" : "logistic"},
          {"spec", to_json(fit.spec)},
          {"coefficients", vec_json(fit.coefficients)},
          {"covariance", mat_json(fit.covariance)},
          {"dispersion", fit.dispersion},
          {"converged", fit.converged},
          {"iterations", fit.iterations}};
}

GlmFit glm_fit_from_json(const json& j) {
  return guarded("GLM", [&] {
    GlmFit f;
    const std::string fam = j.value("family", std::string("logistic"));
    if (fam == "beta")
      f.family = GlmFamily::beta;
    else if (fam != "logistic")
      throw InputError("unknown GLM family '" + fam + "'");
    f.spec = design_spec_from_json(j.at("spec"));
    f.coefficients = vec_from(j.at("coefficients"));
    if (j.contains("covariance")) f.covariance = mat_from(j["covariance"]);
    f.dispersion = j.value("dispersion", 0.0);
    f.converged = j.value("converged", true);
    f.iterations = j.value("iterations", 0);
    if (static_cast<std::size_t>(f.coefficients.size()) != f.spec.n_coef())
      throw InputError("GLM coefficient count does not match its design");
    return f;
  });
}

json to_json(const SelectionModel& model) {
  json j = std::visit(
      [](const auto& m) -> json {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, SelectionModel::Known>) {
          if (m.custom) throw InputError("a custom selection function cannot be serialised");
          return {{"type", "known"}, {"coefficients", m.coefficients}, {"cap", m.cap}};
        } else if constexpr (std::is_same_v<T, SelectionModel::DirectLogistic>) {
          return {{"type", "direct"}, {"fit", to_json(m.fit)}};
        } else {
          return {{"type", "composed"},
                  {"external_fit", to_json(m.ext_fit)},
                  {"pooled_fit", to_json(m.pool_fit)}};
        }
      },
      model.model());
  j["w0_dim"] = model.w0_dim();
  j["clip"] = clip_json(model.clip());
  j["over_one_count"] = model.over_one_count();
  return j;
}

SelectionModel selection_from_json(const json& j) {
  return guarded("selection model", [&] {
    const std::string type = j.at("type").get<std::string>();
    const ClipBounds clip = j.contains("clip") ? clip_from(j["clip"]) : ClipBounds{};
    SelectionModel out;
    if (type == "known") {
      const auto coef = j.value("coefficients", std::vector<double>{});
      const double cap = j.value("cap", 1.0);
      out = coef.empty() ? SelectionModel::known_constant(cap, clip)
                         : SelectionModel::known_logistic(coef, cap, clip);
    } else if (type == "direct") {
      GlmFit fit = glm_fit_from_json(j.at("fit"));
      const std::size_t dim = j.value("w0_dim", fit.spec.min_dim());
      out = SelectionModel(SelectionModel::DirectLogistic{std::move(fit)}, dim, clip);
    } else if (type == "composed") {
      GlmFit ext = glm_fit_from_json(j.at("external_fit"));
      GlmFit pool = glm_fit_from_json(j.at("pooled_fit"));
      const std::size_t dim = j.value("w0_dim", ext.spec.min_dim());
      out = SelectionModel(SelectionModel::Composed{std::move(ext), std::move(pool)}, dim, clip);
    } else {
      throw InputError("unknown selection model type '" + type + "'");
    }
    out.set_over_one_count(j.value("over_one_count", std::size_t{0}));
    return out;
  });
}

json to_json(const CostModel& cost) {
  json c2 = std::visit(
      [](const auto& f) -> json {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, OutcomeCost::Constant>) {
          return f.value;
        } else if constexpr (std::is_same_v<T, OutcomeCost::Affine>) {
          return {{"intercept", f.intercept}, {"slopes", f.slopes}};
        } else {
          return {{"points", f.points}, {"costs", f.costs}};
        }
      },
      cost.outcome_cost.form());
  return {{"B", cost.total_budget},
          {"C0", cost.initial_cost},
          {"C1", cost.per_record_cost},
          {"C2", c2}};
}

CostModel cost_from_json(const json& j) {
  return guarded("cost model", [&] {
    CostModel c;
    c.total_budget = j.at("B").get<double>();
    c.initial_cost = j.at("C0").get<double>();
    c.per_record_cost = j.at("C1").get<double>();
    const json& c2 = j.at("C2");
    if (c2.is_number()) {
      c.outcome_cost = OutcomeCost::constant(c2.get<double>());
    } else if (c2.contains("slopes")) {
      c.outcome_cost = OutcomeCost(OutcomeCost::Affine{c2.value("intercept", 0.0),
                                                       c2.at("slopes").get<std::vector<double>>()});
    } else {
      c.outcome_cost = OutcomeCost(
          OutcomeCost::Tabulated{c2.at("points").get<std::vector<Covariates>>(),
                                 c2.at("costs").get<std::vector<double>>()});
    }
    c.validate();
    return c;
  });
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw InputError(std::string(what) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw InputError(std::string("unknown key '") + key + "' in " + what);
  }
}

json normal_json(const NormalParams& p) { return {{"mean", p.mean}, {"sd", p.sd}}; }
NormalParams normal_from(const json& j, NormalParams base) {
  check_keys(j, {"mean", "sd"}, "normal parameters");
  base.mean = j.value("mean", base.mean);
  base.sd = j.value("sd", base.sd);
  return base;
}

const char* fit_source_name(FitSource s) {
  switch (s) {
    case FitSource::pilot: return "pilot";
    case FitSource::second_phase: return "second_phase";
    case FitSource::pilot_and_second: return "pilot_and_second";
  }
  return "?";
}

FitSource fit_source_from(const std::string& s) {
  if (s == "pilot") return FitSource::pilot;
  if (s == "second_phase") return FitSource::second_phase;
  if (s == "pilot_and_second") return FitSource::pilot_and_second;
  throw InputError("unknown fit source '" + s + "'");
}

}  // namespace

json to_json(const GenerationConfig& g) {
  json l1;
  if (const auto* l = std::get_if<Lambda1Form::Logistic>(&g.lambda1.form))
    l1 = {{"intercept", l->intercept}, {"slope", l->slope}};
  else
    l1 = {{"constant", std::get<Lambda1Form::Constant>(g.lambda1.form).value}};
  l1["cap"] = g.lambda1.cap;
  return {{"n", g.n},
          {"n_e", g.n_e},
          {"n_p", g.n_p},
          {"alpha", g.alpha},
          {"gamma", g.gamma},
          {"w0", normal_json(g.w0)},
          {"w1", normal_json(g.w1)},
          {"lambda1", l1},
          {"mechanism", g.mechanism == SelectionMechanism::bernoulli ? "bernoulli" : "top_ne"}};
}

GenerationConfig generation_from_json(const json& j, GenerationConfig g) {
  return guarded("generation settings", [&] {
    check_keys(j, {"n", "n_e", "n_p", "alpha", "gamma", "w0", "w1", "lambda1", "mechanism"},
               "generation");
    g.n = j.value("n", g.n);
    g.n_e = j.value("n_e", g.n_e);
    g.n_p = j.value("n_p", g.n_p);
    g.alpha = j.value("alpha", g.alpha);
    g.gamma = j.value("gamma", g.gamma);
    if (j.contains("w0")) g.w0 = normal_from(j["w0"], g.w0);
    if (j.contains("w1")) g.w1 = normal_from(j["w1"], g.w1);
    if (j.contains("lambda1")) {
      const json& l = j["lambda1"];
      check_keys(l, {"intercept", "slope", "constant", "cap"}, "lambda1");
      if (l.contains("constant")) {
        if (l.contains("intercept") || l.contains("slope"))
          throw InputError("lambda1 is either constant or logistic, not both");
        g.lambda1.form = Lambda1Form::Constant{l["constant"].get<double>()};
      } else if (l.contains("intercept") || l.contains("slope")) {
        Lambda1Form::Logistic lg;
        lg.intercept = l.value("intercept", lg.intercept);
        lg.slope = l.value("slope", lg.slope);
        g.lambda1.form = lg;
      }
      g.lambda1.cap = l.value("cap", g.lambda1.cap);
    }
    if (j.contains("mechanism")) {
      const std::string m = j["mechanism"].get<std::string>();
      if (m == "bernoulli")
        g.mechanism = SelectionMechanism::bernoulli;
      else if (m == "top_ne")
        g.mechanism = SelectionMechanism::top_ne;
      else
        throw InputError("unknown selection mechanism '" + m + "'");
    }
    g.validate();
    return g;
  });
}

json to_json(const SimulationConfig& c) {
  std::vector<std::string> approaches;
  for (Approach a : c.approaches) approaches.push_back(approach_name(a));
  json pert = {{"mean_scale", c.perturbation.mean_scale}};
  if (c.perturbation.lambda1_coefficients)
    pert["lambda1_coefficients"] = *c.perturbation.lambda1_coefficients;
  json j = {{"generation", to_json(c.generation)},
            {"cost", to_json(c.cost)},
            {"n_reps", c.n_reps},
            {"approaches", approaches},
            {"lambda1_mode", lambda1_mode_name(c.lambda1_mode)},
            {"clip", clip_json(c.clip)},
            {"external_fraction", c.external_fraction},
            {"fit_source", fit_source_name(c.fit_source)},
            {"mean_method", method_name(c.mean_method)},
            {"reml", c.reml},
            {"perturbation", pert},
            {"seed", c.seed}};
  j["pve_target"] = c.pve_target ? json(*c.pve_target) : json(nullptr);
  return j;
}

SimulationConfig simulation_config_from_json(const json& j) {
  return guarded("simulation config", [&] {
    check_keys(j,
               {"generation", "pve_target", "cost", "n_reps", "approaches", "lambda1_mode", "clip",
                "external_fraction", "fit_source", "mean_method", "reml", "perturbation", "seed",
                "workers"},
               "simulation config");
    SimulationConfig c;
    if (j.contains("generation")) c.generation = generation_from_json(j["generation"]);
    if (j.contains("pve_target") && !j["pve_target"].is_null())
      c.pve_target = j["pve_target"].get<double>();
    if (j.contains("cost")) c.cost = cost_from_json(j["cost"]);
    c.n_reps = j.value("n_reps", c.n_reps);
    if (j.contains("approaches")) {
      c.approaches.clear();
      for (const auto& a : j["approaches"]) c.approaches.push_back(parse_approach(a.get<std::string>()));
    }
    if (j.contains("lambda1_mode"))
      c.lambda1_mode = parse_lambda1_mode(j["lambda1_mode"].get<std::string>());
    if (j.contains("clip")) c.clip = clip_from(j["clip"]);
    c.external_fraction = j.value("external_fraction", c.external_fraction);
    if (j.contains("fit_source")) c.fit_source = fit_source_from(j["fit_source"].get<std::string>());
    if (j.contains("mean_method")) c.mean_method = method_from(j["mean_method"].get<std::string>());
    c.reml = j.value("reml", c.reml);
    if (j.contains("perturbation")) {
      const json& p = j["perturbation"];
      check_keys(p, {"mean_scale", "lambda1_coefficients"}, "perturbation");
      c.perturbation.mean_scale = p.value("mean_scale", 1.0);
      if (p.contains("lambda1_coefficients") && !p["lambda1_coefficients"].is_null())
        c.perturbation.lambda1_coefficients = p["lambda1_coefficients"].get<std::vector<double>>();
    }
    c.seed = j.value("seed", c.seed);
    c.workers = j.value("workers", c.workers);
    c.validate();
    return c;
  });
}

json to_json(const DesignSolution& solution) {
  json points = json::array();
  for (const auto& p : solution.points)
    points.push_back({{"id", p.id},
                      {"wbar1", p.wbar1},
                      {"prob", p.prob},
                      {"lambda1", p.lambda1},
                      {"lambda2", p.lambda2},
                      {"eta2", p.eta2},
                      {"c2", p.c2},
                      {"v2", p.v2}});
  return {{"feasible", solution.feasible},
          {"violations", solution.violations},
          {"n_min", number(solution.ne_range.n_min)},
          {"n_max", number(solution.ne_range.n_max)},
          {"nu", solution.nu},
          {"e_root", solution.e_root},
          {"outcome_budget", solution.outcome_budget},
          {"budget_spent", solution.budget_spent},
          {"points", points}};
}

json to_json(const EstimateResult& r) {
  return {{"beta_hat", r.beta_hat},
          {"ci", {number(r.ci_lo), number(r.ci_hi)}},
          {"boot_var", number(r.boot_var)},
          {"n_boot", r.n_boot},
          {"retries", r.retries},
          {"seed", r.seed},
          {"components",
           {{"imputation", r.components.imputation},
            {"augmentation", r.components.augmentation},
            {"ipw", r.components.ipw}}}};
}

json to_json(const StudyResult& result, bool include_ratios) {
  json summaries = json::array();
  for (const auto& s : result.summaries)
    summaries.push_back({{"approach", approach_name(s.approach)},
                         {"successes", s.successes},
                         {"mean", number(s.mean)},
                         {"variance", number(s.variance)},
                         {"bias", number(s.bias)}});
  json j = {{"gamma", result.gamma},
            {"truth", result.truth},
            {"failed_replications", result.failed_replications},
            {"summaries", summaries}};
  json failures = json::array();
  for (const auto& r : result.records)
    if (!r.feasible)
      failures.push_back({{"rep", r.rep}, {"approach", approach_name(r.approach)}, {"reason", r.failure}});
  j["failures"] = failures;
  if (include_ratios) {
    json table = json::array();
    for (const auto& row : compare_designs(result)) {
      json r = {{"approach", approach_name(row.approach)},
                {"re_vs_1", row.vs_naive.value},
                {"se_vs_1", row.vs_naive.se}};
      if (row.vs_random) {
        r["re_vs_2"] = row.vs_random->value;
        r["se_vs_2"] = row.vs_random->se;
      }
      table.push_back(r);
    }
    j["relative_efficiency"] = table;
  }
  return j;
}

void write_records_csv(std::ostream& out, const StudyResult& result) {
  out << "rep,approach,beta_hat,feasible,seed\n";
  for (const auto& r : result.records)
    out << r.rep << ',' << approach_name(r.approach) << ','
        << (r.feasible ? format_double(r.beta_hat) : std::string("NA")) << ','
        << (r.feasible ? 1 : 0) << ',' << r.seed << '\n';
}

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

}  // namespace twophase
