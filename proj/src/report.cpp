#include "dmc/report.hpp"

#include "dmc/binary_io.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <algorithm>

namespace dmc {

namespace {

std::string two_dp(double v) { return fmt::format("{:.2f}", v); }

std::size_t max_tasks(std::span<const ExperimentResult> results) {
  std::size_t k = 0;
  for (const auto& e : results) {
    for (const auto& run : e.runs) k = std::max(k, run.accuracy.tasks());
  }
  return k;
}

}  // namespace

std::string per_seed_csv(std::span<const ExperimentResult> results) {
  const std::size_t k_max = max_tasks(results);
  std::string out = "task,seed,variant,";
  for (std::size_t i = 1; i <= k_max; ++i) out += fmt::format("R_k_{},", i);
  out += "A_b\n";
  for (const auto& e : results) {
    for (const auto& run : e.runs) {
      for (std::size_t k = 0; k < run.accuracy.tasks(); ++k) {
        out += fmt::format("{},{},{},", k + 1, run.seed, to_string(run.variant));
        const auto& row = run.accuracy.rows[k];
        for (std::size_t i = 0; i < k_max; ++i) {
          if (i < row.size()) out += two_dp(row[i]);
          out += ',';
        }
        out += two_dp(stage_accuracy(run.accuracy, k)) + "\n";
      }
    }
  }
  return out;
}

std::string aggregate_csv(std::span<const ExperimentResult> results) {
  std::string out = "variant,A_bar_mean,A_bar_std,A_B_mean,A_B_std\n";
  for (const auto& e : results) {
    out += fmt::format("{},{},{},{},{}\n", to_string(e.variant), two_dp(e.average_accuracy.mean),
                       two_dp(e.average_accuracy.std), two_dp(e.final_accuracy.mean),
                       two_dp(e.final_accuracy.std));
  }
  return out;
}

std::string structured_report(std::span<const ExperimentResult> results) {
  nlohmann::json j;
  j["version"] = 1;
  j["variants"] = nlohmann::json::array();
  for (const auto& e : results) {
    nlohmann::json v;
    v["variant"] = to_string(e.variant);
    v["A_bar"] = {{"mean", e.average_accuracy.mean}, {"std", e.average_accuracy.std}};
    v["A_B"] = {{"mean", e.final_accuracy.mean}, {"std", e.final_accuracy.std}};
    v["runs"] = nlohmann::json::array();
    for (const auto& run : e.runs) {
      v["runs"].push_back({{"seed", run.seed},
                           {"R", run.accuracy.rows},
                           {"A_bar", run.metrics.average_accuracy},
                           {"A_B", run.metrics.final_accuracy}});
    }
    j["variants"].push_back(std::move(v));
  }
  return j.dump(2) + "\n";
}

std::string comparison_table(std::span<const ExperimentResult> results) {
  std::string out = fmt::format("{:<16} {:>16} {:>16}\n", "variant", "A_bar", "A_B");
  for (const auto& e : results) {
    out += fmt::format("{:<16} {:>16} {:>16}\n", to_string(e.variant),
                       two_dp(e.average_accuracy.mean) + " ± " + two_dp(e.average_accuracy.std),
                       two_dp(e.final_accuracy.mean) + " ± " + two_dp(e.final_accuracy.std));
  }
  return out;
}

void emit_report(std::span<const ExperimentResult> results, ReportFormat format,
                 const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw InvalidInput("cannot create output directory " + dir.string() + ": " + ec.message());
  if (format == ReportFormat::Csv) {
    write_file_atomic(dir / "results.csv", per_seed_csv(results));
    write_file_atomic(dir / "aggregate.csv", aggregate_csv(results));
  } else {
    write_file_atomic(dir / "report.json", structured_report(results));
  }
}

}  // namespace dmc
