// Command-line harness: run experiments, ablations, stream generation and
// the invariant self-check.

#include "dmc/checks.hpp"
#include "dmc/config.hpp"
#include "dmc/pipeline.hpp"
#include "dmc/report.hpp"
#include "dmc/serialize.hpp"
#include "dmc/stream.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>

namespace {

namespace fs = std::filesystem;

struct CommonOptions {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string variant;
  std::string out_dir = "out";
  std::string stream = "synthetic";
  std::string log_level = "warn";
  std::string format = "csv";
  std::string checkpoint_dir;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_variant) {
  cmd->add_option("--config", o.config_path, "Run configuration (versioned JSON)");
  cmd->add_option("--seed", o.seeds, "Run seed; repeat for several seeds")->take_all();
  if (with_variant) {
    cmd->add_option("--variant", o.variant,
                    "DMC_OT | DMC | NO_OT | ALT_OT | NO_TASK_PROMPT | SIMULTANEOUS");
  }
  cmd->add_option("--out", o.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--stream", o.stream, "'synthetic' or a feature manifest path")
      ->capture_default_str();
  cmd->add_option("--format", o.format, "Report format: csv | structured")->capture_default_str();
}

dmc::RunConfig load(const CommonOptions& o) {
  dmc::RunConfig config;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) {
      throw dmc::InvalidInput("config file not found: " + o.config_path);
    }
    config = dmc::load_config(o.config_path);
  }
  if (!o.seeds.empty()) config.seeds = o.seeds;
  if (!o.variant.empty()) config.variant = dmc::parse_variant(o.variant);
  config.validate();
  return config;
}

dmc::TaskStream load_stream(const CommonOptions& o, const dmc::RunConfig& config) {
  if (o.stream == "synthetic") return dmc::generate_stream(config.stream);
  return dmc::import_features(o.stream);
}

dmc::ReportFormat parse_format(const std::string& name) {
  if (name == "csv") return dmc::ReportFormat::Csv;
  if (name == "structured") return dmc::ReportFormat::Structured;
  throw dmc::InvalidInput("unknown report format: " + name);
}

int run_variants(const CommonOptions& o, std::span<const dmc::RunVariant> variants) {
  const dmc::RunConfig config = load(o);
  const dmc::TaskStream stream = load_stream(o, config);
  const auto format = parse_format(o.format);
  std::vector<dmc::ExperimentResult> results;
  const auto start = std::chrono::steady_clock::now();
  for (const dmc::RunVariant v : variants) {
    dmc::TaskCallback on_task;
    if (!o.checkpoint_dir.empty()) {
      fs::create_directories(o.checkpoint_dir);
      on_task = [&, v](const dmc::PipelineState& state, std::size_t k) {
        dmc::save_checkpoint(fs::path(o.checkpoint_dir) / fmt::format("{}_seed{}_task{}.ckpt",
                                                                     dmc::to_string(v), state.seed, k + 1),
                             state);
      };
    }
    spdlog::info("running {} over {} seed(s)", dmc::to_string(v), config.seeds.size());
    results.push_back(dmc::run_experiment(stream, config, v, config.seeds, on_task));
  }
  dmc::emit_report(results, format, o.out_dir);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << dmc::comparison_table(results);
  spdlog::info("finished in {:.1f} s; reports in {}", seconds, o.out_dir);
  return 0;
}

int generate(const CommonOptions& o) {
  const dmc::RunConfig config = load(o);
  dmc::export_stream(dmc::generate_stream(config.stream), o.out_dir);
  std::cout << "wrote " << (fs::path(o.out_dir) / "manifest.json").string() << "\n";
  return 0;
}

int check() {
  int failures = 0;
  for (const auto& r : dmc::run_invariant_checks()) {
    std::cout << (r.passed ? "[PASS] " : "[FAIL] ") << r.name;
    if (!r.passed) std::cout << ": " << r.detail;
    std::cout << "\n";
    failures += r.passed ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental prompt learning with calibrated Gaussian replay"};
  app.require_subcommand(1);
  CommonOptions opts;
  app.add_option("--log-level", opts.log_level, "trace | debug | info | warn | error | off")
      ->capture_default_str();

  auto* run = app.add_subcommand("run", "Run one variant over the stream for every seed");
  add_common(run, opts, /*with_variant=*/true);
  run->add_option("--checkpoint-dir", opts.checkpoint_dir, "Save the state after every task");

  auto* ablate = app.add_subcommand("ablate", "Run every variant on one stream and compare");
  add_common(ablate, opts, /*with_variant=*/false);

  auto* gen = app.add_subcommand("gen", "Write the configured synthetic stream to --out");
  gen->add_option("--config", opts.config_path, "Run configuration (versioned JSON)");
  gen->add_option("--out", opts.out_dir, "Output directory")->capture_default_str();

  app.add_subcommand("check", "Run the invariant self-check suite");

  // Accept --log-level after the subcommand too.
  for (auto* sub : app.get_subcommands([](const CLI::App*) { return true; })) {
    sub->add_option("--log-level", opts.log_level, "trace | debug | info | warn | error | off");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    spdlog::set_level(spdlog::level::from_str(opts.log_level));
    if (run->parsed()) {
      const dmc::RunVariant variants[] = {load(opts).variant};
      return run_variants(opts, variants);
    }
    if (ablate->parsed()) return run_variants(opts, dmc::kAllVariants);
    if (gen->parsed()) return generate(opts);
    return check();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
