#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "json.hpp"

#include "twophase/design.hpp"
#include "twophase/estimator.hpp"
#include "twophase/regress.hpp"
#include "twophase/selection.hpp"
#include "twophase/simharness.hpp"

namespace twophase {

using json = nlohmann::json;

json to_json(const DesignSpec& spec);
DesignSpec design_spec_from_json(const json& j);

json to_json(const MeanModelFit& fit);
MeanModelFit mean_fit_from_json(const json& j);
json to_json(const VarianceModelFit& fit);
VarianceModelFit variance_fit_from_json(const json& j);
json to_json(const GlmFit& fit);
GlmFit glm_fit_from_json(const json& j);

/// Custom Known functions cannot be serialised and raise InputError.
json to_json(const SelectionModel& model);
SelectionModel selection_from_json(const json& j);

json to_json(const CostModel& cost);
CostModel cost_from_json(const json& j);

json to_json(const GenerationConfig& config);
GenerationConfig generation_from_json(const json& j, GenerationConfig base = {});
/// Unknown keys raise InputError so that typos do not silently fall back to defaults.
json to_json(const SimulationConfig& config);
SimulationConfig simulation_config_from_json(const json& j);

json to_json(const DesignSolution& solution);
json to_json(const EstimateResult& result);
json to_json(const StudyResult& result, bool include_ratios = true);

/// Flat CSV: rep,approach,beta_hat,feasible,seed
void write_records_csv(std::ostream& out, const StudyResult& result);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view data);
std::string hex64(std::uint64_t value);

}  // namespace twophase
