#pragma once

#include "dmc/config.hpp"
#include "dmc/encoder_sim.hpp"
#include "dmc/ot_calibration.hpp"
#include "dmc/prototype_model.hpp"
#include "dmc/stream.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace dmc {

/// Everything a run carries from one task to the next.
struct PipelineState {
  Encoder encoder;
  PromptBank bank;
  ClassMemory memory;  // calibrated to the current encoder
  std::vector<TaskId> seen_tasks;
  AnchorSet anchors;
  std::uint64_t seed = 0;
};

PipelineState init_state(const TaskStream& stream, const RunConfig& config, std::uint64_t seed);

/// Intermediate products of one task, for diagnostics and tests.
struct TaskTrace {
  ClassMemory pre_stats;
  ClassMemory post_stats;
  std::optional<TransportMap> map;
  Encoder adapted_encoder;
};

/// One pass of the training pipeline on one task: pre-stats, encoder
/// adaptation, post-stats, memory calibration, prompt training with replay,
/// and storing the new class statistics.
PipelineState run_task(const PipelineState& state, const TaskSplit& task, const RunConfig& config,
                       RunVariant variant, TaskTrace* trace = nullptr);

/// `per_class` unit-renormalized samples from every stored Gaussian.
FeatureBatch build_replay_batch(const ClassMemory& memory, std::size_t per_class, Rng& rng,
                                const std::map<ClassId, TaskId>& class_task = {});

/// Accuracy (percent) on each eval set with the unified classifier over
/// every class in the bank.
std::vector<double> evaluate(const PipelineState& state, std::span<const FeatureBatch> eval_sets);

/// Row k holds R_{k,1..k}; entries above the diagonal do not exist.
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;

  std::size_t tasks() const { return rows.size(); }
  void validate() const;
  bool operator==(const AccuracyMatrix&) const = default;
};

struct AccuracyMetrics {
  double final_accuracy = 0.0;    // A_B
  double average_accuracy = 0.0;  // Ā
};

/// Stage-wise average accuracy A_b = mean of row b.
double stage_accuracy(const AccuracyMatrix& r, std::size_t b);

AccuracyMetrics final_and_average_accuracy(const AccuracyMatrix& r);

struct RunResult {
  std::uint64_t seed = 0;
  RunVariant variant = RunVariant::DmcOt;
  AccuracyMatrix accuracy;
  AccuracyMetrics metrics;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Population mean and standard deviation.
MeanStd mean_std(std::span<const double> values);

struct ExperimentResult {
  RunVariant variant = RunVariant::DmcOt;
  std::vector<RunResult> runs;
  MeanStd average_accuracy;
  MeanStd final_accuracy;
};

/// Called after each completed task with the new state and the task index.
using TaskCallback = std::function<void(const PipelineState&, std::size_t)>;

/// Full run over every task for a single seed.
RunResult run_single(const TaskStream& stream, const RunConfig& config, RunVariant variant,
                     std::uint64_t seed, const TaskCallback& on_task = {});

ExperimentResult run_experiment(const TaskStream& stream, const RunConfig& config,
                                RunVariant variant, std::span<const std::uint64_t> seeds,
                                const TaskCallback& on_task = {});

}  // namespace dmc
