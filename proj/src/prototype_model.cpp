#include "dmc/prototype_model.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dmc {

namespace {

constexpr double kTokenInitStd = 0.02;

int class_slot(ClassId cls) { return 2 * cls; }
int task_slot(TaskId task) { return 2 * task + 1; }

// Projection through the stand-in text encoder before normalization.
Vector project_tokens(const Matrix& tokens, const Matrix& projector) {
  if (tokens.rows() == 0 || tokens.cols() != projector.cols()) {
    throw InvalidInput("token block does not match projector width");
  }
  if (!tokens.allFinite()) throw InvalidInput("non-finite prompt tokens");
  return projector * tokens.colwise().mean().transpose();
}

// Gradient of v/‖v‖ w.r.t. v, applied to `grad_unit`.
Vector normalize_backward(const Vector& unit, double norm, const Vector& grad_unit) {
  return (grad_unit - unit * unit.dot(grad_unit)) / norm;
}

struct ComposedClass {
  Vector class_unit;
  Vector task_unit;
  Vector sum;
  double sum_norm = 0.0;
  Vector embedding;
};

ComposedClass compose_forward(const Matrix& class_tokens, const Matrix& task_tokens, double beta,
                              const Matrix& projector) {
  ComposedClass c;
  c.class_unit = encode_prompt(class_tokens, projector);
  c.task_unit = encode_prompt(task_tokens, projector);
  c.sum = c.class_unit + beta * c.task_unit;
  c.sum_norm = c.sum.norm();
  if (!(c.sum_norm >= 1e-12)) throw NumericalError("cancelled embedding");
  c.embedding = c.sum / c.sum_norm;
  return c;
}

std::vector<std::size_t> label_indices(std::span<const ClassId> labels,
                                       const std::vector<ClassId>& class_ids) {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (const ClassId y : labels) {
    const auto it = std::lower_bound(class_ids.begin(), class_ids.end(), y);
    if (it == class_ids.end() || *it != y) {
      throw InvalidInput("unknown label " + std::to_string(y));
    }
    out.push_back(static_cast<std::size_t>(it - class_ids.begin()));
  }
  return out;
}

}  // namespace

Matrix random_orthonormal_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  if (rows < 1 || cols < rows) throw InvalidInput("orthonormal rows need 1 <= rows <= cols");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(cols, rows);
  for (Eigen::Index j = 0; j < rows; ++j) {
    for (Eigen::Index i = 0; i < cols; ++i) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(cols, rows);
  // Fix the column signs so the factorization is unique.
  const Matrix r = qr.matrixQR().topRows(rows).triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < rows; ++j) {
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  }
  return q.transpose();
}

PromptBank PromptBank::create(Eigen::Index dim, std::size_t prompt_len, double beta,
                              std::uint64_t projector_seed) {
  if (dim < 1) throw InvalidInput("prompt dimension must be positive");
  if (prompt_len < 1) throw InvalidInput("prompt length must be positive");
  if (!(beta >= 0.0)) throw InvalidInput("beta must be nonnegative");
  PromptBank bank;
  bank.prompt_len = prompt_len;
  bank.dim = dim;
  bank.beta = beta;
  bank.projector_seed = projector_seed;
  bank.projector = random_orthonormal_rows(dim, dim, projector_seed);
  return bank;
}

void PromptBank::add_task(TaskId task, std::span<const ClassId> classes, Rng& rng) {
  if (task_prompts.contains(task)) throw InvalidInput("task already has prompts");
  for (const ClassId c : classes) {
    if (class_prompts.contains(c)) throw InvalidInput("not class-incremental");
  }
  std::normal_distribution<double> normal(0.0, kTokenInitStd);
  const auto rows = static_cast<Eigen::Index>(prompt_len);
  auto draw = [&] {
    Matrix m(rows, dim);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < dim; ++j) m(i, j) = normal(rng);
    }
    return m;
  };
  task_prompts.emplace(task, draw());
  for (const ClassId c : classes) {
    class_prompts.emplace(c, draw());
    class_task.emplace(c, task);
  }
}

void PromptBank::validate() const {
  if (!(beta >= 0.0)) throw InvalidInput("beta must be nonnegative");
  if (projector.rows() != dim || projector.cols() != dim) {
    throw InvalidInput("projector shape mismatch");
  }
  const auto rows = static_cast<Eigen::Index>(prompt_len);
  auto check_block = [&](const Matrix& m) {
    if (m.rows() != rows || m.cols() != dim) throw InvalidInput("token block shape mismatch");
  };
  for (const auto& [cls, tokens] : class_prompts) {
    check_block(tokens);
    const auto owner = class_task.find(cls);
    if (owner == class_task.end() || !task_prompts.contains(owner->second)) {
      throw InvalidInput("class " + std::to_string(cls) + " has no task prompt");
    }
  }
  for (const auto& [task, tokens] : task_prompts) check_block(tokens);
}

bool PromptBank::operator==(const PromptBank& o) const {
  auto same_blocks = [](const auto& a, const auto& b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(), [](const auto& x, const auto& y) {
             return x.first == y.first && same_values(x.second, y.second);
           });
  };
  return prompt_len == o.prompt_len && dim == o.dim && beta == o.beta &&
         projector_seed == o.projector_seed && same_values(projector, o.projector) &&
         class_task == o.class_task && same_blocks(class_prompts, o.class_prompts) &&
         same_blocks(task_prompts, o.task_prompts);
}

void PromptGradients::add(const PromptGradients& other, double scale) {
  for (const auto& [cls, g] : other.class_tokens) {
    auto [it, inserted] = class_tokens.try_emplace(cls, scale * g);
    if (!inserted) it->second += scale * g;
  }
  for (const auto& [task, g] : other.task_tokens) {
    auto [it, inserted] = task_tokens.try_emplace(task, scale * g);
    if (!inserted) it->second += scale * g;
  }
}

Vector encode_prompt(const Matrix& tokens, const Matrix& projector) {
  const Vector p = project_tokens(tokens, projector);
  const double norm = p.norm();
  if (!(norm >= 1e-12)) throw NumericalError("degenerate prompt");
  return p / norm;
}

Matrix encode_prompt_backward(const Matrix& tokens, const Matrix& projector,
                              const Vector& grad_output) {
  const Vector p = project_tokens(tokens, projector);
  const double norm = p.norm();
  if (!(norm >= 1e-12)) throw NumericalError("degenerate prompt");
  const Vector grad_p = normalize_backward(p / norm, norm, grad_output);
  const Vector grad_mean = projector.transpose() * grad_p;
  // Every token row contributes 1/M of the pooled mean.
  return (grad_mean / static_cast<double>(tokens.rows())).transpose().replicate(tokens.rows(), 1);
}

Vector compose_embedding(const Matrix& class_tokens, const Matrix& task_tokens, double beta,
                         const Matrix& projector) {
  if (class_tokens.rows() != task_tokens.rows() || class_tokens.cols() != task_tokens.cols()) {
    throw InvalidInput("class and task token blocks differ in shape");
  }
  return compose_forward(class_tokens, task_tokens, beta, projector).embedding;
}

SoftEmbeddingSet build_embeddings(const PromptBank& bank) {
  SoftEmbeddingSet set;
  set.class_embeddings.resize(static_cast<Eigen::Index>(bank.class_prompts.size()), bank.dim);
  Eigen::Index row = 0;
  for (const auto& [cls, tokens] : bank.class_prompts) {
    const Matrix& task_tokens = bank.task_prompts.at(bank.class_task.at(cls));
    set.class_ids.push_back(cls);
    set.class_embeddings.row(row++) =
        compose_embedding(tokens, task_tokens, bank.beta, bank.projector).transpose();
  }
  for (const auto& [task, tokens] : bank.task_prompts) {
    set.task_embeddings.emplace(task, encode_prompt(tokens, bank.projector));
  }
  return set;
}

PromptLoss ce_loss_and_grad(const PromptBank& bank, const Matrix& features,
                            std::span<const ClassId> labels, double tau) {
  if (!(tau > 0.0)) throw InvalidInput("tau must be positive");
  if (static_cast<std::size_t>(features.rows()) != labels.size() || labels.empty()) {
    throw InvalidInput("features and labels differ in length");
  }
  if (features.cols() != bank.dim) throw InvalidInput("feature width does not match prompts");

  std::vector<ClassId> ids;
  std::vector<ComposedClass> composed;
  for (const auto& [cls, tokens] : bank.class_prompts) {
    ids.push_back(cls);
    composed.push_back(compose_forward(tokens, bank.task_prompts.at(bank.class_task.at(cls)),
                                       bank.beta, bank.projector));
  }
  const auto target = label_indices(labels, ids);
  const auto n_classes = static_cast<Eigen::Index>(ids.size());
  Matrix embeddings(n_classes, bank.dim);
  for (Eigen::Index c = 0; c < n_classes; ++c) embeddings.row(c) = composed[c].embedding.transpose();

  const double n = static_cast<double>(labels.size());
  Matrix logits = (features * embeddings.transpose()) / tau;
  PromptLoss out;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double top = logits.row(i).maxCoeff();
    logits.row(i).array() = (logits.row(i).array() - top).exp();
    const double z = logits.row(i).sum();
    const auto t = static_cast<Eigen::Index>(target[i]);
    // logits now holds softmax probabilities after this division.
    logits.row(i) /= z;
    out.loss -= std::log(logits(i, t));
    logits(i, t) -= 1.0;
  }
  out.loss /= n;

  const Matrix grad_embeddings = (logits.transpose() * features) / (n * tau);

  std::map<TaskId, Vector> task_grad_unit;
  for (Eigen::Index c = 0; c < n_classes; ++c) {
    const ComposedClass& cc = composed[c];
    const Vector grad_sum =
        normalize_backward(cc.embedding, cc.sum_norm, grad_embeddings.row(c).transpose());
    const ClassId cls = ids[c];
    out.grad.class_tokens.emplace(
        cls, encode_prompt_backward(bank.class_prompts.at(cls), bank.projector, grad_sum));
    auto [it, inserted] = task_grad_unit.try_emplace(bank.class_task.at(cls), bank.beta * grad_sum);
    if (!inserted) it->second += bank.beta * grad_sum;
  }
  for (const auto& [task, tokens] : bank.task_prompts) {
    const auto g = task_grad_unit.find(task);
    if (g == task_grad_unit.end()) {
      out.grad.task_tokens.emplace(task, Matrix::Zero(tokens.rows(), tokens.cols()));
    } else {
      out.grad.task_tokens.emplace(task, encode_prompt_backward(tokens, bank.projector, g->second));
    }
  }
  return out;
}

PromptLoss ortho_loss_and_grad(const PromptBank& bank, std::span<const TaskId> trainable) {
  PromptLoss out;
  const auto k = bank.task_prompts.size();
  std::vector<TaskId> tasks;
  std::vector<Vector> units;
  for (const auto& [task, tokens] : bank.task_prompts) {
    tasks.push_back(task);
    units.push_back(encode_prompt(tokens, bank.projector));
  }
  auto wanted = [&](TaskId t) {
    return trainable.empty() || std::find(trainable.begin(), trainable.end(), t) != trainable.end();
  };
  if (k < 2) {
    for (const auto& [task, tokens] : bank.task_prompts) {
      if (wanted(task)) out.grad.task_tokens.emplace(task, Matrix::Zero(tokens.rows(), tokens.cols()));
    }
    return out;
  }

  const double norm = 1.0 / static_cast<double>(k * (k - 1));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      const double dot = units[i].dot(units[j]);
      out.loss += dot * dot;
    }
  }
  out.loss *= norm;

  for (std::size_t i = 0; i < k; ++i) {
    if (!wanted(tasks[i])) continue;
    // Each unordered pair appears twice in the ordered sum.
    Vector g = Vector::Zero(bank.dim);
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) g += (4.0 * norm * units[i].dot(units[j])) * units[j];
    }
    out.grad.task_tokens.emplace(
        tasks[i], encode_prompt_backward(bank.task_prompts.at(tasks[i]), bank.projector, g));
  }
  return out;
}

ClassId predict(const Vector& feature, const SoftEmbeddingSet& embeddings) {
  if (embeddings.empty()) throw InvalidInput("empty embedding set");
  if (feature.size() != embeddings.class_embeddings.cols()) {
    throw InvalidInput("feature width does not match embeddings");
  }
  const Vector sims = embeddings.class_embeddings * feature;
  // class_ids are ascending, so the first maximum is the lowest id.
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < sims.size(); ++c) {
    if (sims[c] > sims[best]) best = c;
  }
  return embeddings.class_ids[static_cast<std::size_t>(best)];
}

std::vector<ClassId> predict_batch(const Matrix& features, const SoftEmbeddingSet& embeddings) {
  std::vector<ClassId> out;
  out.reserve(static_cast<std::size_t>(features.rows()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    out.push_back(predict(features.row(i).transpose(), embeddings));
  }
  return out;
}

PromptTrainer::PromptTrainer(PromptBank bank, TaskId task, PromptTrainingConfig config)
    : bank_(std::move(bank)),
      task_(task),
      config_(config),
      optimizer_(config.schedule.optimizer, config.schedule.lr) {
  bank_.validate();
  if (!bank_.task_prompts.contains(task_)) throw InvalidInput("task has no prompts to train");
  if (!(config_.tau > 0.0)) throw InvalidInput("tau must be positive");
  if (!(config_.lambda_ortho >= 0.0)) throw InvalidInput("lambda_ortho must be nonnegative");
  for (const auto& [cls, owner] : bank_.class_task) {
    if (owner == task_) trainable_classes_.push_back(cls);
  }
}

double PromptTrainer::loss(const Matrix& features, std::span<const ClassId> labels) const {
  const double ce = ce_loss_and_grad(bank_, features, labels, config_.tau).loss;
  const double ortho = config_.lambda_ortho > 0.0 ? ortho_loss_and_grad(bank_).loss : 0.0;
  return total_loss(ce, ortho, config_.lambda_ortho);
}

double PromptTrainer::step(const Matrix& features, std::span<const ClassId> labels) {
  PromptLoss ce = ce_loss_and_grad(bank_, features, labels, config_.tau);
  double ortho = 0.0;
  if (config_.lambda_ortho > 0.0) {
    const TaskId only[] = {task_};
    PromptLoss o = ortho_loss_and_grad(bank_, only);
    ortho = o.loss;
    ce.grad.add(o.grad, config_.lambda_ortho);
  }
  for (const ClassId cls : trainable_classes_) {
    optimizer_.step(class_slot(cls), bank_.class_prompts.at(cls), ce.grad.class_tokens.at(cls));
  }
  optimizer_.step(task_slot(task_), bank_.task_prompts.at(task_), ce.grad.task_tokens.at(task_));
  return total_loss(ce.loss, ortho, config_.lambda_ortho);
}

MixedBatchSampler::MixedBatchSampler(const FeatureBatch& real, const FeatureBatch& replay,
                                     std::size_t batch_size, double replay_fraction)
    : real_rows_(real.size()) {
  if (batch_size == 0) throw InvalidInput("batch size must be positive");
  if (real.empty()) throw InvalidInput("no samples");
  if (!(replay_fraction >= 0.0 && replay_fraction < 1.0)) {
    throw InvalidInput("replay fraction must lie in [0, 1)");
  }
  n_replay_ = replay.empty()
                  ? 0
                  : static_cast<std::size_t>(std::lround(replay_fraction * static_cast<double>(batch_size)));
  n_real_ = std::max<std::size_t>(1, batch_size - std::min(n_replay_, batch_size));
  for (auto& [cls, rows] : replay.rows_by_class()) replay_groups_.push_back(std::move(rows));
}

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> MixedBatchSampler::next(
    Rng& rng) const {
  std::vector<Eigen::Index> real_idx(n_real_);
  std::uniform_int_distribution<std::size_t> pick_real(0, real_rows_ - 1);
  for (auto& r : real_idx) r = static_cast<Eigen::Index>(pick_real(rng));
  std::vector<Eigen::Index> replay_idx;
  if (n_replay_ > 0) {
    std::uniform_int_distribution<std::size_t> pick_class(0, replay_groups_.size() - 1);
    replay_idx.resize(n_replay_);
    for (auto& r : replay_idx) {
      const auto& group = replay_groups_[pick_class(rng)];
      std::uniform_int_distribution<std::size_t> pick_row(0, group.size() - 1);
      r = group[pick_row(rng)];
    }
  }
  return {std::move(real_idx), std::move(replay_idx)};
}

PromptBank train_prompts(const PromptBank& bank, const FeatureBatch& real,
                         const FeatureBatch& replay, const PromptTrainingConfig& config) {
  if (config.schedule.steps == 0) throw InvalidInput("schedule has zero steps");
  real.validate();
  replay.validate(/*allow_empty=*/true);
  const TaskId task = real.task_ids.front();
  if (std::any_of(real.task_ids.begin(), real.task_ids.end(), [&](TaskId t) { return t != task; })) {
    throw InvalidInput("real batch must come from a single task");
  }

  const Matrix real_features = normalize_rows(real.features);
  const Matrix replay_features = replay.empty() ? Matrix() : normalize_rows(replay.features);

  PromptTrainer trainer(bank, task, config);
  const MixedBatchSampler sampler(real, replay, config.schedule.batch_size, config.replay_fraction);
  Rng rng(config.seed);

  Matrix mix_features = real_features;
  std::vector<ClassId> mix_labels = real.labels;
  if (!replay.empty()) {
    mix_features.conservativeResize(real_features.rows() + replay_features.rows(), Eigen::NoChange);
    mix_features.bottomRows(replay_features.rows()) = replay_features;
    mix_labels.insert(mix_labels.end(), replay.labels.begin(), replay.labels.end());
  }
  const std::size_t epoch = std::max<std::size_t>(
      1, (mix_labels.size() + config.schedule.batch_size - 1) / config.schedule.batch_size);
  double previous = trainer.loss(mix_features, mix_labels);

  for (std::size_t s = 0; s < config.schedule.steps; ++s) {
    const auto [real_idx, replay_idx] = sampler.next(rng);
    Matrix batch(static_cast<Eigen::Index>(real_idx.size() + replay_idx.size()), real.dim());
    std::vector<ClassId> labels;
    labels.reserve(real_idx.size() + replay_idx.size());
    Eigen::Index row = 0;
    for (const auto i : real_idx) {
      batch.row(row++) = real_features.row(i);
      labels.push_back(real.labels[static_cast<std::size_t>(i)]);
    }
    for (const auto i : replay_idx) {
      batch.row(row++) = replay_features.row(i);
      labels.push_back(replay.labels[static_cast<std::size_t>(i)]);
    }
    trainer.step(batch, labels);

    if ((s + 1) % epoch == 0) {
      const double current = trainer.loss(mix_features, mix_labels);
      // Minibatch noise moves the full-set loss by small amounts.
      if (current > previous * 1.01 + 1e-12) {
        spdlog::warn("prompt loss rose from {:.6f} to {:.6f} at step {}", previous, current, s + 1);
      } else if (current > previous) {
        spdlog::debug("prompt loss rose from {:.6f} to {:.6f} at step {}", previous, current, s + 1);
      }
      previous = current;
    }
  }
  return trainer.release();
}

}  // namespace dmc
