#include "oracles.hpp"

#include "dmc/pipeline.hpp"
#include "dmc/serialize.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace dmc;

namespace {

RunConfig toy_config(std::size_t tasks = 3, std::size_t per_task = 2) {
  RunConfig c;
  c.stream.num_tasks = tasks;
  c.stream.classes_per_task = per_task;
  c.stream.input_dim = 8;
  c.stream.feature_dim = 4;
  c.stream.train_per_class = 20;
  c.stream.eval_per_class = 20;
  c.stream.within_class_scale = 0.1;
  c.stage1.steps = 10;
  c.stage2.steps = 20;
  c.replay_per_class = 8;
  return c;
}

std::string prompts_of_task(const PromptBank& bank, TaskId task) {
  PromptBank only = PromptBank::create(bank.dim, bank.prompt_len, bank.beta, bank.projector_seed);
  only.task_prompts.emplace(task, bank.task_prompts.at(task));
  for (const auto& [cls, owner] : bank.class_task) {
    if (owner != task) continue;
    only.class_prompts.emplace(cls, bank.class_prompts.at(cls));
    only.class_task.emplace(cls, owner);
  }
  return serialize_bank(only);
}

}  // namespace

TEST_SUITE("cil-pipeline") {

TEST_CASE("run_task: first task has no calibration and stores its stats") {
  const RunConfig config = toy_config();
  const TaskStream stream = generate_stream(config.stream);
  const PipelineState state = init_state(stream, config, 1);
  TaskTrace trace;
  const PipelineState next = run_task(state, stream.tasks[0], config, RunVariant::DmcOt, &trace);
  CHECK_FALSE(trace.map.has_value());
  CHECK(next.memory.size() == 2);
  CHECK(next.seen_tasks == std::vector<TaskId>{0});
  CHECK(next.bank.class_prompts.size() == 2);
  CHECK(next.encoder.version == 1);
  // Stored stats are the post-adaptation stats of the raw task data.
  for (const auto& [cls, stat] : trace.post_stats) CHECK(next.memory.at(cls).mean == stat.mean);
}

TEST_CASE("run_task: per-task bookkeeping is observable across tasks") {
  const RunConfig config = toy_config(4, 3);
  const TaskStream stream = generate_stream(config.stream);
  for (const RunVariant v : kAllVariants) {
    PipelineState state = init_state(stream, config, 2);
    for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
      const PipelineState next = run_task(state, stream.tasks[k], config, v);
      CHECK(next.memory.size() == 3 * (k + 1));
      CHECK(next.bank.class_prompts.size() == 3 * (k + 1));
      CHECK(next.bank.task_prompts.size() == k + 1);
      if (v != RunVariant::Simultaneous) CHECK(next.encoder.version == state.encoder.version + 1);
      state = next;
    }
  }
}

TEST_CASE("run_task: zero-lr adaptation gives the identity map and leaves memory unchanged") {
  RunConfig config = toy_config();
  config.stage1.lr = 0.0;
  const TaskStream stream = generate_stream(config.stream);
  PipelineState state = run_task(init_state(stream, config, 3), stream.tasks[0], config, RunVariant::DmcOt);
  TaskTrace trace;
  const PipelineState next = run_task(state, stream.tasks[1], config, RunVariant::DmcOt, &trace);
  REQUIRE(trace.map.has_value());
  CHECK((trace.map->linear - Matrix::Identity(4, 4)).norm() < 1e-6);
  CHECK(trace.map->offset.norm() < 1e-6);
  for (const auto& [cls, stat] : state.memory) {
    CHECK((next.memory.at(cls).mean - stat.mean).norm() < 1e-6);
    CHECK((next.memory.at(cls).covariance - stat.covariance).norm() < 1e-6);
  }
}

TEST_CASE("run_task: DMC and DMC_OT adapt the encoder identically") {
  const RunConfig config = toy_config(2, 2);
  const TaskStream stream = generate_stream(config.stream);
  PipelineState plain = init_state(stream, config, 4);
  PipelineState calibrated = plain;
  bool memory_differs = false;
  for (const TaskSplit& task : stream.tasks) {
    TaskTrace tp, tc;
    const PipelineState np = run_task(plain, task, config, RunVariant::Dmc, &tp);
    const PipelineState nc = run_task(calibrated, task, config, RunVariant::DmcOt, &tc);
    CHECK(tp.adapted_encoder.weights == tc.adapted_encoder.weights);
    CHECK(np.encoder.weights == nc.encoder.weights);
    for (const auto& [cls, stat] : np.memory) memory_differs |= !same_values(stat.mean, nc.memory.at(cls).mean);
    plain = np;
    calibrated = nc;
  }
  CHECK(memory_differs);
}

TEST_CASE("run_task: prompts of earlier tasks are frozen") {
  const RunConfig config = toy_config(3, 2);
  const TaskStream stream = generate_stream(config.stream);
  for (const RunVariant v : {RunVariant::DmcOt, RunVariant::Simultaneous}) {
    PipelineState state = init_state(stream, config, 5);
    for (std::size_t k = 0; k < stream.tasks.size(); ++k) {
      std::vector<std::string> before;
      for (std::size_t j = 0; j < k; ++j) before.push_back(prompts_of_task(state.bank, stream.tasks[j].task));
      state = run_task(state, stream.tasks[k], config, v);
      for (std::size_t j = 0; j < k; ++j) CHECK(prompts_of_task(state.bank, stream.tasks[j].task) == before[j]);
    }
  }
}

TEST_CASE("run_task: class overlap is rejected") {
  const RunConfig config = toy_config();
  const TaskStream stream = generate_stream(config.stream);
  const PipelineState state = run_task(init_state(stream, config, 6), stream.tasks[0], config, RunVariant::DmcOt);
  CHECK_THROWS_WITH_AS(run_task(state, stream.tasks[0], config, RunVariant::DmcOt),
                       doctest::Contains("not class-incremental"), InvalidInput);
  TaskSplit clash = stream.tasks[1];
  clash.train.labels[0] = stream.tasks[0].train.labels[0];
  CHECK_THROWS_WITH_AS(run_task(state, clash, config, RunVariant::DmcOt),
                       doctest::Contains("not class-incremental"), InvalidInput);
}

TEST_CASE("run_task: degenerate tasks complete") {
  SUBCASE("single-class tasks") {
    RunConfig config = toy_config(3, 1);
    const TaskStream stream = generate_stream(config.stream);
    for (const RunVariant v : kAllVariants) CHECK_NOTHROW(run_single(stream, config, v, 7));
  }
  SUBCASE("single-sample classes") {
    RunConfig config = toy_config(3, 2);
    config.stream.train_per_class = 1;
    config.stream.eval_per_class = 1;
    const TaskStream stream = generate_stream(config.stream);
    for (const RunVariant v : kAllVariants) CHECK_NOTHROW(run_single(stream, config, v, 8));
  }
  SUBCASE("zero learning rates") {
    RunConfig config = toy_config(3, 2);
    config.stage1.lr = 0.0;
    config.stage2.lr = 0.0;
    const TaskStream stream = generate_stream(config.stream);
    for (const RunVariant v : kAllVariants) {
      const RunResult r = run_single(stream, config, v, 9);
      CHECK(r.accuracy.tasks() == 3);
    }
  }
}

TEST_CASE("build_replay_batch: counting, balance, unit rows, determinism") {
  Rng rng(10);
  CHECK(build_replay_batch({}, 16, rng).size() == 0);
  ClassMemory memory;
  for (ClassId c : {2, 5, 9}) {
    memory[c] = {oracle::gaussian_matrix(6, 1, rng).col(0), oracle::random_spd(6, rng, 0.01, 0.1), 10};
  }
  Rng a(11), b(11);
  const FeatureBatch batch = build_replay_batch(memory, 16, a);
  CHECK(batch.size() == 48);
  for (ClassId c : {2, 5, 9}) CHECK(std::count(batch.labels.begin(), batch.labels.end(), c) == 16);
  for (Eigen::Index i = 0; i < batch.features.rows(); ++i) {
    CHECK(std::abs(batch.features.row(i).norm() - 1.0) < 1e-10);
  }
  CHECK(build_replay_batch(memory, 16, b).features == batch.features);
  CHECK(build_replay_batch(memory, 0, b).size() == 0);
}

TEST_CASE("evaluate: engineered, chance-level, permutation, unified head") {
  const RunConfig config = toy_config(2, 3);
  const TaskStream stream = generate_stream(config.stream);
  PipelineState state = init_state(stream, config, 12);
  Rng rng(12);
  const std::vector<ClassId> t0{0, 1, 2}, t1{3, 4, 5};
  state.bank.add_task(0, t0, rng);
  state.bank.add_task(1, t1, rng);

  // Features equal to the embeddings of their classes.
  const SoftEmbeddingSet set = build_embeddings(state.bank);
  state.encoder = {Matrix::Identity(4, 8), 1, 0};
  std::vector<FeatureBatch> eval(2);
  for (std::size_t i = 0; i < set.class_ids.size(); ++i) {
    FeatureBatch& e = eval[i / 3];
    const ClassId c = set.class_ids[i];
    Matrix row = Matrix::Zero(1, 8);
    row.leftCols(4) = set.class_embeddings.row(static_cast<Eigen::Index>(i));
    e = FeatureBatch::concat(e.empty() ? FeatureBatch{Matrix(0, 8), {}, {}} : e,
                             FeatureBatch{row, {c}, {static_cast<TaskId>(i / 3)}});
  }
  const std::vector<double> perfect = evaluate(state, eval);
  CHECK(perfect == std::vector<double>{100.0, 100.0});

  // A task-0 sample placed on a task-1 embedding is counted wrong.
  FeatureBatch crossed = eval[0];
  crossed.features.row(0) = eval[1].features.row(0);
  const std::vector<FeatureBatch> one{crossed};
  CHECK(evaluate(state, one)[0] == doctest::Approx(200.0 / 3.0));

  // Random embeddings over C = 6 classes: accuracy near 100/6.
  const Encoder random_enc = init_encoder(8, 4, 99);
  state.encoder = random_enc;
  const int n = 6000;
  Matrix x = oracle::gaussian_matrix(n, 8, rng);
  FeatureBatch big{x, {}, {}};
  std::uniform_int_distribution<int> label(0, 5);
  for (int i = 0; i < n; ++i) {
    big.labels.push_back(label(rng));
    big.task_ids.push_back(0);
  }
  const std::vector<FeatureBatch> sets{big};
  const double acc = evaluate(state, sets)[0];
  const double p = 1.0 / 6.0;
  CHECK(std::abs(acc / 100.0 - p) < 3.0 * std::sqrt(p * (1 - p) / n));

  FeatureBatch reversed = big;
  for (int i = 0; i < n; ++i) {
    reversed.features.row(i) = big.features.row(n - 1 - i);
    reversed.labels[static_cast<std::size_t>(i)] = big.labels[static_cast<std::size_t>(n - 1 - i)];
  }
  const std::vector<FeatureBatch> rsets{reversed};
  CHECK(evaluate(state, rsets)[0] == acc);

  const std::vector<FeatureBatch> empty{FeatureBatch{Matrix(0, 8), {}, {}}};
  CHECK_THROWS_AS(evaluate(state, empty), InvalidInput);
}

TEST_CASE("final_and_average_accuracy: hand-computed values") {
  const AccuracyMetrics full = final_and_average_accuracy({{{100}, {100, 100}}});
  CHECK(full.final_accuracy == 100.0);
  CHECK(full.average_accuracy == 100.0);
  const AccuracyMetrics k2 = final_and_average_accuracy({{{80}, {60, 70}}});
  CHECK(k2.final_accuracy == 65.0);
  CHECK(k2.average_accuracy == 72.5);
  const AccuracyMetrics k1 = final_and_average_accuracy({{{42.5}}});
  CHECK(k1.final_accuracy == 42.5);
  CHECK(k1.average_accuracy == 42.5);
  CHECK_THROWS_WITH_AS(final_and_average_accuracy({{{80}, {60}}}), "incomplete accuracy matrix", InvalidInput);
  CHECK_THROWS_AS(final_and_average_accuracy({}), InvalidInput);
}

TEST_CASE("run_experiment: aggregation and determinism") {
  const RunConfig config = toy_config();
  const TaskStream stream = generate_stream(config.stream);
  const std::uint64_t one[] = {3};
  const ExperimentResult single = run_experiment(stream, config, RunVariant::DmcOt, one);
  CHECK(single.final_accuracy.mean == single.runs[0].metrics.final_accuracy);
  CHECK(single.average_accuracy.mean == single.runs[0].metrics.average_accuracy);
  CHECK(single.final_accuracy.std == 0.0);

  const std::uint64_t twice[] = {3, 3};
  const ExperimentResult doubled = run_experiment(stream, config, RunVariant::DmcOt, twice);
  CHECK(doubled.final_accuracy.std == 0.0);
  CHECK(doubled.average_accuracy.std == 0.0);
  CHECK(doubled.runs[0].accuracy == single.runs[0].accuracy);
  CHECK(doubled.runs[1].accuracy == single.runs[0].accuracy);
  CHECK_THROWS_AS(run_experiment(stream, config, RunVariant::DmcOt, {}), InvalidInput);
}

TEST_CASE("mean_std: population formula") {
  const double v[] = {1.0, 3.0};
  const MeanStd m = mean_std(v);
  CHECK(m.mean == 2.0);
  CHECK(m.std == 1.0);
}

}  // TEST_SUITE
