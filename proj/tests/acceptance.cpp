// Acceptance suite: one PASS/FAIL line per criterion. The CLI path is passed
// as the first argument for the determinism check.

#include "oracles.hpp"

#include "dmc/binary_io.hpp"
#include "dmc/config.hpp"
#include "dmc/encoder_sim.hpp"
#include "dmc/ot_calibration.hpp"
#include "dmc/pipeline.hpp"
#include "dmc/prototype_model.hpp"
#include "dmc/serialize.hpp"
#include "dmc/stream.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>

using namespace dmc;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Outcome()>& body) {
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  std::cout << (o.passed ? "[PASS] " : "[FAIL] ") << id << ". " << name << " -- " << o.detail << std::endl;
  failures += o.passed ? 0 : 1;
}

GaussianStat random_stat(Eigen::Index d, Rng& rng) {
  return {oracle::gaussian_matrix(d, 1, rng).col(0), oracle::random_spd(d, rng, 0.05, 5.0), 1};
}

Outcome ot_exactness() {
  const auto start = Clock::now();
  double worst_w2 = 0.0, worst_mean = 0.0, worst_cov = 0.0;
  for (const Eigen::Index d : {2, 16, 64}) {
    Rng rng(1000 + static_cast<std::uint64_t>(d));
    for (int trial = 0; trial < 100; ++trial) {
      const GaussianStat a = random_stat(d, rng);
      const GaussianStat b = random_stat(d, rng);
      const GaussianStat pushed = apply_map_to_stat(ot_map(a, b), a);
      worst_w2 = std::max(worst_w2, w2_distance_sq(pushed, b));
      worst_mean = std::max(worst_mean, (pushed.mean - b.mean).norm() / std::max(1.0, b.mean.norm()));
      worst_cov = std::max(worst_cov, oracle::relative_error(pushed.covariance, b.covariance));
    }
  }
  const double t = seconds_since(start);
  return {worst_w2 < 1e-6 && worst_mean < 1e-6 && worst_cov < 1e-6 && t < 10.0,
          fmt::format("max W2^2 {:.2e}, mean rel {:.2e}, cov rel {:.2e}, {:.2f} s (limits 1e-6, 10 s)", worst_w2,
                      worst_mean, worst_cov, t)};
}

Outcome scalar_oracle() {
  auto s = [](double m, double v) { return GaussianStat{Vector::Constant(1, m), Matrix::Constant(1, 1, v), 1}; };
  const TransportMap map = ot_map(s(0, 1), s(2, 4));
  const double w2 = w2_distance_sq(s(0, 1), s(3, 1));
  const double err = std::max({std::abs(map.linear(0, 0) - 2.0), std::abs(map.offset(0) - 2.0), std::abs(w2 - 9.0)});
  return {err <= 1e-10, fmt::format("T = {:.12f}, b = {:.12f}, W2^2 = {:.12f}, max error {:.1e} (limit 1e-10)",
                                    map.linear(0, 0), map.offset(0), w2, err)};
}

Outcome gradient_suite() {
  const auto start = Clock::now();
  double worst_contrastive = 0.0, worst_ce = 0.0, worst_ortho = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto seed = static_cast<std::uint64_t>(trial);
    Rng rng(2000 + seed);
    // Contrastive loss w.r.t. encoder weights.
    {
      Encoder enc = init_encoder(10, 5, seed);
      AnchorSet anchors(5, seed);
      const std::vector<ClassId> classes{0, 1, 2, 3};
      anchors.ensure(classes);
      const Matrix x = oracle::gaussian_matrix(8, 10, rng);
      const std::vector<ClassId> labels{0, 1, 2, 3, 0, 1, 2, 3};
      const double tau = 0.2 + 0.05 * trial;
      const Matrix analytic = contrastive_loss_and_grad(enc, x, labels, anchors, tau).grad;
      const Matrix numeric = oracle::finite_difference(
          enc.weights, [&] { return contrastive_loss_and_grad(enc, x, labels, anchors, tau).loss; });
      worst_contrastive = std::max(worst_contrastive, oracle::relative_error(analytic, numeric));
    }
    // Cross-entropy through composition and the projector; orthogonality on task prompts.
    {
      PromptBank bank = PromptBank::create(6, 4, 0.1 + 0.05 * trial, seed);
      for (TaskId t = 0; t < 3; ++t) {
        const std::vector<ClassId> classes{2 * t, 2 * t + 1};
        bank.add_task(t, classes, rng);
      }
      const Matrix x = normalize_rows(oracle::gaussian_matrix(9, 6, rng));
      std::vector<ClassId> labels;
      for (int i = 0; i < 9; ++i) labels.push_back(i % 6);
      const double tau = 0.1 + 0.02 * trial;
      const PromptLoss ce = ce_loss_and_grad(bank, x, labels, tau);
      const PromptLoss ortho = ortho_loss_and_grad(bank);
      auto ce_fn = [&] { return ce_loss_and_grad(bank, x, labels, tau).loss; };
      auto ortho_fn = [&] { return ortho_loss_and_grad(bank).loss; };
      Matrix a_ce, n_ce, a_or, n_or;
      auto append = [](Matrix& acc, const Matrix& m) {
        Matrix flat = Eigen::Map<const Matrix>(m.data(), m.size(), 1);
        Matrix grown(acc.rows() + flat.rows(), 1);
        grown << acc, flat;
        acc = grown;
      };
      a_ce = n_ce = a_or = n_or = Matrix(0, 1);
      for (auto& [cls, tokens] : bank.class_prompts) {
        append(a_ce, ce.grad.class_tokens.at(cls));
        append(n_ce, oracle::finite_difference(tokens, ce_fn));
      }
      for (auto& [task, tokens] : bank.task_prompts) {
        append(a_ce, ce.grad.task_tokens.at(task));
        append(n_ce, oracle::finite_difference(tokens, ce_fn));
        append(a_or, ortho.grad.task_tokens.at(task));
        append(n_or, oracle::finite_difference(tokens, ortho_fn));
      }
      worst_ce = std::max(worst_ce, oracle::relative_error(a_ce, n_ce));
      worst_ortho = std::max(worst_ortho, oracle::relative_error(a_or, n_or));
    }
  }
  const double t = seconds_since(start);
  const double worst = std::max({worst_contrastive, worst_ce, worst_ortho});
  return {worst < 1e-4 && t < 30.0,
          fmt::format("max rel error: contrastive {:.1e}, cross-entropy {:.1e}, orthogonality {:.1e}; {:.2f} s "
                      "(limits 1e-4, 30 s)",
                      worst_contrastive, worst_ce, worst_ortho, t)};
}

Outcome metric_oracle() {
  const AccuracyMetrics m = final_and_average_accuracy({{{80.0}, {60.0, 70.0}}});
  return {m.final_accuracy == 65.0 && m.average_accuracy == 72.5,
          fmt::format("A_B = {}, A_bar = {} (expected 65, 72.5 exactly)", m.final_accuracy, m.average_accuracy)};
}

Outcome calibration_fidelity() {
  RunConfig config;
  config.stream.repeat_generators = true;
  config.stream.num_tasks = 2;
  const TaskStream stream = generate_stream(config.stream);
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PipelineState first = run_task(init_state(stream, config, seed), stream.tasks[0], config, RunVariant::DmcOt);
    TaskTrace trace;
    const PipelineState second = run_task(first, stream.tasks[1], config, RunVariant::DmcOt, &trace);
    const ClassMemory truth = extract_class_stats(second.encoder, stream.tasks[0].train);
    double calibrated = 0.0, stale = 0.0;
    for (const auto& [cls, stat] : truth) {
      calibrated += w2_distance_sq(second.memory.at(cls), stat);
      stale += w2_distance_sq(first.memory.at(cls), stat);
    }
    wins += calibrated < stale ? 1 : 0;
    per_seed += fmt::format("{}{:.3g}/{:.3g}", seed == 0 ? "" : " ", calibrated, stale);
  }
  return {wins >= 9, fmt::format("{}/10 seeds closer after calibration (need >= 9); W2^2 sums cal/uncal: {}", wins,
                                 per_seed)};
}

Outcome directional_ablations() {
  const RunConfig config;
  const TaskStream stream = generate_stream(config.stream);
  std::vector<std::uint64_t> seeds(10);
  std::iota(seeds.begin(), seeds.end(), 0);
  const auto start = Clock::now();
  std::map<RunVariant, double> mean;
  for (const RunVariant v : kAllVariants) mean[v] = run_experiment(stream, config, v, seeds).final_accuracy.mean;
  const double t = seconds_since(start);
  const double ot_gap = mean[RunVariant::DmcOt] - mean[RunVariant::NoOt];
  const double stage_gap = mean[RunVariant::Dmc] - mean[RunVariant::Simultaneous];
  const double prompt_gap = mean[RunVariant::DmcOt] - mean[RunVariant::NoTaskPrompt];
  return {ot_gap > 0.0 && stage_gap > 0.0 && prompt_gap >= 0.0 && t < 300.0,
          fmt::format("mean A_B gaps: DMC_OT-NO_OT {:+.2f} (need > 0), DMC-SIMULTANEOUS {:+.2f} (need > 0), "
                      "DMC_OT-NO_TASK_PROMPT {:+.2f} (need >= 0); full ablation {:.1f} s (limit 300 s)",
                      ot_gap, stage_gap, prompt_gap, t)};
}

Outcome cli_determinism(const std::string& cli) {
  const fs::path dir = fs::temp_directory_path() / "dmc_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  RunConfig config;
  config.stream.num_tasks = 3;
  save_config(dir / "c.json", config);
  auto run = [&](const std::string& out) {
    const std::string cmd = fmt::format("\"{}\" --log-level off run --config \"{}\" --seed 4 --out \"{}\" > /dev/null",
                                        cli, (dir / "c.json").string(), (dir / out).string());
    return std::system(cmd.c_str());
  };
  if (run("a") != 0 || run("b") != 0) return {false, "dmc run exited with an error"};
  const std::string a = read_file(dir / "a" / "results.csv");
  const std::string b = read_file(dir / "b" / "results.csv");
  const bool same = a == b && read_file(dir / "a" / "aggregate.csv") == read_file(dir / "b" / "aggregate.csv");
  return {same, fmt::format("results.csv hashes {:016x} / {:016x}", fnv1a(a), fnv1a(b))};
}

Outcome serialization() {
  RunConfig config;
  config.stream.num_tasks = 3;
  const TaskStream stream = generate_stream(config.stream);
  PipelineState state = init_state(stream, config, 7);
  for (const TaskSplit& t : stream.tasks) state = run_task(state, t, config, RunVariant::DmcOt);
  const std::string bytes = serialize_state(state);
  const std::uint64_t h_state = fnv1a(bytes);
  const std::uint64_t h_back = fnv1a(serialize_state(deserialize_state(bytes)));

  const fs::path dir = fs::temp_directory_path() / "dmc_acceptance_features";
  fs::remove_all(dir);
  export_stream(stream, dir);
  const std::string train = read_file(dir / "train.bin");
  const TaskStream back = import_features(dir / "manifest.json");
  export_stream(back, dir / "again");
  const std::uint64_t h_file = fnv1a(train);
  const std::uint64_t h_file_back = fnv1a(read_file(dir / "again" / "train.bin"));
  bool features_equal = true;
  for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
    features_equal &= same_values(stream.tasks[k].train.features, back.tasks[k].train.features);
    features_equal &= same_values(stream.tasks[k].eval.features, back.tasks[k].eval.features);
  }
  return {h_state == h_back && h_file == h_file_back && features_equal,
          fmt::format("state {:016x} -> {:016x}; feature file {:016x} -> {:016x}", h_state, h_back, h_file,
                      h_file_back)};
}

Outcome degenerate_cases() {
  std::vector<std::string> failed;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failed.push_back(what);
  };
  RunConfig base;
  base.stream.num_tasks = 3;
  base.stream.classes_per_task = 2;
  base.stream.train_per_class = 20;
  base.stream.eval_per_class = 20;

  // First task: empty memory, no calibration, empty replay.
  {
    const TaskStream stream = generate_stream(base.stream);
    const PipelineState s0 = init_state(stream, base, 1);
    Rng rng(1);
    expect(build_replay_batch(s0.memory, base.replay_per_class, rng).empty(), "first-task replay not empty");
    TaskTrace trace;
    const PipelineState s1 = run_task(s0, stream.tasks[0], base, RunVariant::DmcOt, &trace);
    expect(!trace.map.has_value(), "first task calibrated");
    expect(s1.memory.size() == 2, "first-task memory size");
  }
  // Single-class tasks, every variant.
  {
    RunConfig c = base;
    c.stream.classes_per_task = 1;
    const TaskStream stream = generate_stream(c.stream);
    for (const RunVariant v : kAllVariants) {
      const RunResult r = run_single(stream, c, v, 2);
      expect(r.accuracy.tasks() == 3, "single-class run incomplete");
    }
    PromptBank bank = PromptBank::create(4, 3, 0.1, 2);
    Rng rng(2);
    const std::vector<ClassId> one{0};
    bank.add_task(0, one, rng);
    const Matrix x = normalize_rows(oracle::gaussian_matrix(5, 4, rng));
    const std::vector<ClassId> labels(5, 0);
    expect(ce_loss_and_grad(bank, x, labels, 1.0).loss == 0.0, "single-class loss not 0");
  }
  // Single-sample classes.
  {
    RunConfig c = base;
    c.stream.train_per_class = 1;
    c.stream.eval_per_class = 1;
    const TaskStream stream = generate_stream(c.stream);
    for (const RunVariant v : kAllVariants) {
      const RunResult r = run_single(stream, c, v, 3);
      expect(r.accuracy.tasks() == 3, "single-sample run incomplete");
    }
    Vector v(3);
    v << 1, 2, 3;
    const GaussianStat s = estimate_gaussian(v.transpose());
    expect(s.mean == v && ledoit_wolf_weight(v.transpose()) == 1.0, "single-sample statistic");
  }
  // Zero learning rates.
  {
    RunConfig c = base;
    c.stage1.lr = 0.0;
    c.stage2.lr = 0.0;
    const TaskStream stream = generate_stream(c.stream);
    const PipelineState s0 = init_state(stream, c, 4);
    const PipelineState s1 = run_task(s0, stream.tasks[0], c, RunVariant::DmcOt);
    TaskTrace trace;
    const PipelineState s2 = run_task(s1, stream.tasks[1], c, RunVariant::DmcOt, &trace);
    expect(s2.encoder.weights == s0.encoder.weights, "zero-lr encoder moved");
    expect(s2.encoder.version == 2, "zero-lr version not incremented");
    expect(trace.map && (trace.map->linear - Matrix::Identity(c.stream.feature_dim, c.stream.feature_dim)).norm() < 1e-6 &&
               trace.map->offset.norm() < 1e-6,
           "zero-lr map not identity");
    for (const auto& [cls, tokens] : s1.bank.class_prompts) {
      expect(s2.bank.class_prompts.at(cls) == tokens, "zero-lr prompts moved");
    }
    for (const RunVariant v : kAllVariants) expect(run_single(stream, c, v, 5).accuracy.tasks() == 3, "zero-lr run");
  }
  std::string detail = "first task, single-class, single-sample and zero-lr cases";
  for (const auto& f : failed) detail += "; " + f;
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::off);
  const std::string cli = argc > 1 ? argv[1] : "dmc";
  report(1, "OT exactness suite", ot_exactness);
  report(2, "Closed-form scalar oracle", scalar_oracle);
  report(3, "Gradient suite", gradient_suite);
  report(4, "Metric oracle", metric_oracle);
  report(5, "Calibration fidelity (diagnostic stream)", calibration_fidelity);
  report(6, "Directional ablations (reference stream, 10 seeds)", directional_ablations);
  report(7, "Determinism of `run`", [&] { return cli_determinism(cli); });
  report(8, "Serialization round trips", serialization);
  report(9, "Degenerate-case suite", degenerate_cases);
  std::cout << (failures == 0 ? "all criteria passed" : fmt::format("{} criterion(s) failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
