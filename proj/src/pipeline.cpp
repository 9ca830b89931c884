#include "dmc/pipeline.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dmc {

namespace {

// Independent random streams of one task.
enum StreamId : std::uint64_t {
  kEncoderInit = 1,
  kProjector = 2,
  kAnchors = 3,
  kStage1 = 4,
  kStage2 = 5,
  kReplay = 6,
  kPromptInit = 7,
};

std::uint64_t task_seed(std::uint64_t seed, StreamId id, std::uint64_t task_index) {
  return mix_seed(mix_seed(seed, id), task_index);
}

std::vector<GaussianStat> values_of(const ClassMemory& m) {
  std::vector<GaussianStat> out;
  out.reserve(m.size());
  for (const auto& [cls, stat] : m) out.push_back(stat);
  return out;
}

FeatureBatch encoded(const Encoder& enc, const FeatureBatch& raw) {
  return {encode(enc, raw.features), raw.labels, raw.task_ids};
}

}  // namespace

PipelineState init_state(const TaskStream& stream, const RunConfig& config, std::uint64_t seed) {
  stream.validate();
  PipelineState state;
  state.seed = seed;
  state.encoder = init_encoder(stream.input_dim, stream.feature_dim, mix_seed(seed, kEncoderInit));
  state.bank = PromptBank::create(stream.feature_dim, config.prompt_len, config.beta,
                                  mix_seed(seed, kProjector));
  state.anchors = AnchorSet(stream.feature_dim, mix_seed(seed, kAnchors));
  return state;
}

PipelineState run_task(const PipelineState& state, const TaskSplit& task, const RunConfig& config,
                       RunVariant variant, TaskTrace* trace) {
  task.train.validate();
  const std::vector<ClassId> classes = task.train.classes();
  if (std::find(state.seen_tasks.begin(), state.seen_tasks.end(), task.task) !=
      state.seen_tasks.end()) {
    throw InvalidInput("not class-incremental: task " + std::to_string(task.task) + " already seen");
  }
  for (const ClassId c : classes) {
    if (state.bank.class_prompts.contains(c) || state.memory.contains(c)) {
      throw InvalidInput("not class-incremental: class " + std::to_string(c) + " already seen");
    }
  }

  const VariantTraits traits = traits_of(variant);
  const std::uint64_t k = state.seen_tasks.size();

  PipelineState next = state;
  next.anchors.ensure(classes);
  next.bank.beta = traits.task_prompts ? config.beta : 0.0;
  Rng init_rng(task_seed(state.seed, kPromptInit, k));
  next.bank.add_task(task.task, classes, init_rng);

  const ClassMemory pre = extract_class_stats(state.encoder, task.train);

  const EncoderTrainingConfig stage1{config.stage1, config.tau, task_seed(state.seed, kStage1, k)};
  const PromptTrainingConfig stage2{config.stage2, config.tau,
                                    traits.task_prompts ? config.lambda_ortho : 0.0,
                                    config.replay_fraction, task_seed(state.seed, kStage2, k)};
  Rng replay_rng(task_seed(state.seed, kReplay, k));
  std::optional<TransportMap> map;

  if (!traits.simultaneous) {
    next.encoder = adapt_encoder(state.encoder, task.train, next.anchors, stage1);
    const ClassMemory post = extract_class_stats(next.encoder, task.train);

    if (traits.calibrate && !state.memory.empty()) {
      map = traits.per_class_map ? ot_map_per_class_averaged(values_of(pre), values_of(post))
                                 : ot_map(average_stats(values_of(pre)), average_stats(values_of(post)));
      next.memory = calibrate_memory(*map, state.memory);
    }
    const FeatureBatch replay =
        build_replay_batch(next.memory, config.replay_per_class, replay_rng, next.bank.class_task);
    next.bank = train_prompts(next.bank, encoded(next.encoder, task.train), replay, stage2);
    for (const auto& [cls, stat] : post) next.memory.emplace(cls, stat);
    if (trace) *trace = {pre, post, map, next.encoder};
    next.seen_tasks.push_back(task.task);
    return next;
  }

  // Joint single-stage training: encoder steps interleaved with prompt steps
  // on features from the encoder as it currently is.
  if (config.stage2.steps == 0) throw InvalidInput("schedule has zero steps");
  const FeatureBatch replay =
      build_replay_batch(next.memory, config.replay_per_class, replay_rng, next.bank.class_task);
  const Matrix replay_features = replay.empty() ? Matrix() : normalize_rows(replay.features);
  EncoderTrainer encoder_trainer(state.encoder, task.train, next.anchors, stage1);
  PromptTrainer prompt_trainer(next.bank, task.task, stage2);
  const MixedBatchSampler sampler(task.train, replay, config.stage2.batch_size,
                                  config.replay_fraction);
  Rng batch_rng(stage2.seed);
  // Both schedules are spread evenly over one loop so the encoder keeps
  // moving while the prompts train.
  const std::size_t total = std::max(config.stage1.steps, config.stage2.steps);
  const auto due = [total](std::size_t steps, std::size_t s) {
    return (s + 1) * steps / total - s * steps / total;
  };
  for (std::size_t s = 0; s < total; ++s) {
    for (std::size_t e = due(config.stage1.steps, s); e > 0; --e) encoder_trainer.step();
    if (due(config.stage2.steps, s) == 0) continue;
    const auto [real_idx, replay_idx] = sampler.next(batch_rng);
    Matrix raw(static_cast<Eigen::Index>(real_idx.size()), task.train.dim());
    std::vector<ClassId> labels;
    for (std::size_t i = 0; i < real_idx.size(); ++i) {
      raw.row(static_cast<Eigen::Index>(i)) = task.train.features.row(real_idx[i]);
      labels.push_back(task.train.labels[static_cast<std::size_t>(real_idx[i])]);
    }
    const Matrix real_features = encode(encoder_trainer.encoder(), raw);
    Matrix batch(static_cast<Eigen::Index>(real_idx.size() + replay_idx.size()), real_features.cols());
    batch.topRows(real_features.rows()) = real_features;
    for (std::size_t i = 0; i < replay_idx.size(); ++i) {
      batch.row(real_features.rows() + static_cast<Eigen::Index>(i)) = replay_features.row(replay_idx[i]);
      labels.push_back(replay.labels[static_cast<std::size_t>(replay_idx[i])]);
    }
    prompt_trainer.step(batch, labels);
  }
  next.encoder = encoder_trainer.release();
  if (!next.encoder.weights.allFinite()) throw NumericalError("encoder weights diverged");
  ++next.encoder.version;
  next.bank = prompt_trainer.release();
  const ClassMemory post = extract_class_stats(next.encoder, task.train);
  for (const auto& [cls, stat] : post) next.memory.emplace(cls, stat);
  if (trace) *trace = {pre, post, std::nullopt, next.encoder};
  next.seen_tasks.push_back(task.task);
  return next;
}

FeatureBatch build_replay_batch(const ClassMemory& memory, std::size_t per_class, Rng& rng,
                                const std::map<ClassId, TaskId>& class_task) {
  FeatureBatch batch;
  if (memory.empty() || per_class == 0) return batch;
  const Eigen::Index d = memory.begin()->second.dim();
  batch.features.resize(static_cast<Eigen::Index>(memory.size() * per_class), d);
  Eigen::Index row = 0;
  for (const auto& [cls, stat] : memory) {
    const Matrix samples = normalize_rows(sample_gaussian(stat, per_class, rng));
    batch.features.middleRows(row, samples.rows()) = samples;
    row += samples.rows();
    const auto owner = class_task.find(cls);
    const TaskId task = owner == class_task.end() ? -1 : owner->second;
    batch.labels.insert(batch.labels.end(), per_class, cls);
    batch.task_ids.insert(batch.task_ids.end(), per_class, task);
  }
  return batch;
}

std::vector<double> evaluate(const PipelineState& state, std::span<const FeatureBatch> eval_sets) {
  const SoftEmbeddingSet embeddings = build_embeddings(state.bank);
  std::vector<double> out;
  out.reserve(eval_sets.size());
  for (const FeatureBatch& set : eval_sets) {
    if (set.empty()) throw InvalidInput("empty eval set");
    const std::vector<ClassId> predicted = predict_batch(encode(state.encoder, set.features), embeddings);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) correct += predicted[i] == set.labels[i];
    out.push_back(100.0 * static_cast<double>(correct) / static_cast<double>(set.size()));
  }
  return out;
}

void AccuracyMatrix::validate() const {
  if (rows.empty()) throw InvalidInput("incomplete accuracy matrix");
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k].size() != k + 1) throw InvalidInput("incomplete accuracy matrix");
    for (const double v : rows[k]) {
      if (!(v >= 0.0 && v <= 100.0)) throw InvalidInput("accuracy outside [0, 100]");
    }
  }
}

double stage_accuracy(const AccuracyMatrix& r, std::size_t b) {
  const auto& row = r.rows.at(b);
  return std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
}

AccuracyMetrics final_and_average_accuracy(const AccuracyMatrix& r) {
  r.validate();
  AccuracyMetrics m;
  m.final_accuracy = stage_accuracy(r, r.tasks() - 1);
  double sum = 0.0;
  for (std::size_t b = 0; b < r.tasks(); ++b) sum += stage_accuracy(r, b);
  m.average_accuracy = sum / static_cast<double>(r.tasks());
  return m;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) return {};
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (const double v : values) var += (v - mean) * (v - mean);
  return {mean, std::sqrt(var / n)};
}

RunResult run_single(const TaskStream& stream, const RunConfig& config, RunVariant variant,
                     std::uint64_t seed, const TaskCallback& on_task) {
  PipelineState state = init_state(stream, config, seed);
  RunResult result;
  result.seed = seed;
  result.variant = variant;
  std::vector<FeatureBatch> eval_sets;
  for (const TaskSplit& task : stream.tasks) {
    state = run_task(state, task, config, variant);
    if (on_task) on_task(state, result.accuracy.tasks());
    eval_sets.push_back(task.eval);
    result.accuracy.rows.push_back(evaluate(state, eval_sets));
    spdlog::debug("{} seed {} task {}: A_b = {:.2f}", to_string(variant), seed, task.task,
                  stage_accuracy(result.accuracy, result.accuracy.tasks() - 1));
  }
  result.metrics = final_and_average_accuracy(result.accuracy);
  return result;
}

ExperimentResult run_experiment(const TaskStream& stream, const RunConfig& config,
                                RunVariant variant, std::span<const std::uint64_t> seeds,
                                const TaskCallback& on_task) {
  if (seeds.empty()) throw InvalidInput("at least one seed is required");
  ExperimentResult out;
  out.variant = variant;
  std::vector<double> a_bar;
  std::vector<double> a_final;
  for (const std::uint64_t seed : seeds) {
    out.runs.push_back(run_single(stream, config, variant, seed, on_task));
    a_bar.push_back(out.runs.back().metrics.average_accuracy);
    a_final.push_back(out.runs.back().metrics.final_accuracy);
  }
  out.average_accuracy = mean_std(a_bar);
  out.final_accuracy = mean_std(a_final);
  return out;
}

}  // namespace dmc
