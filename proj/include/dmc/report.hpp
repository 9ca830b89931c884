#pragma once

#include "dmc/pipeline.hpp"

#include <filesystem>
#include <span>
#include <string>

namespace dmc {

enum class ReportFormat { Csv, Structured };

/// One row per (variant, seed, task): `task,seed,variant,R_k_1..R_k_K,A_b`.
/// Entries above the diagonal are left empty.
std::string per_seed_csv(std::span<const ExperimentResult> results);

/// `variant,A_bar_mean,A_bar_std,A_B_mean,A_B_std`, one row per variant.
std::string aggregate_csv(std::span<const ExperimentResult> results);

/// Same content as the two CSVs as one JSON document (full precision R).
std::string structured_report(std::span<const ExperimentResult> results);

/// Fixed-width comparison table for the terminal.
std::string comparison_table(std::span<const ExperimentResult> results);

/// Writes results.csv + aggregate.csv (Csv) or report.json (Structured)
/// into `dir`, creating it if needed. Files are replaced atomically.
void emit_report(std::span<const ExperimentResult> results, ReportFormat format,
                 const std::filesystem::path& dir);

}  // namespace dmc
