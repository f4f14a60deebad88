#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "twophase/datamodel.hpp"

namespace twophase {

/// Expected layout of a population CSV. Zero dimensions are inferred from
/// the header (`w0_1..w0_k`, `w1_1..w1_m`).
struct FrameSchema {
  std::size_t w0_dim = 0;
  std::size_t w1_dim = 0;
  /// Target population size; defaults to the number of rows.
  std::optional<std::size_t> population_size;
};

/// Columns: id,w0_1..w0_k,w1_1..w1_m,y,r1,r2,pilot[,lambda1][,lambda2].
/// Empty cells are missing values; lines starting with '#' are ignored.
PopulationFrame read_frame(std::istream& in, const FrameSchema& schema = {});
PopulationFrame read_frame(const std::filesystem::path& path, const FrameSchema& schema = {});

/// Writes 17 significant digits so that read_frame reproduces every value.
void write_frame(std::ostream& out, const PopulationFrame& frame);
void write_frame(const std::filesystem::path& path, const PopulationFrame& frame);

/// Columns: id,w0_1..w0_k,samp_prob.
ExternalSample read_external(std::istream& in);
ExternalSample read_external(const std::filesystem::path& path);
void write_external(std::ostream& out, const ExternalSample& sample);

}  // namespace twophase
