#pragma once

#include "dmc/feature_batch.hpp"
#include "dmc/optimizer.hpp"
#include "dmc/types.hpp"

#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace dmc {

/// Random matrix with orthonormal rows (rows ≤ cols), deterministic in seed.
Matrix random_orthonormal_rows(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed);

/// Learnable prompt tokens plus the frozen text-side projector.
///
/// Every class prompt is an M×d block owned by exactly one task; each task
/// has one shared M×d task prompt. The projector is a d×d orthogonal matrix
/// regenerated from `projector_seed`.
struct PromptBank {
  std::size_t prompt_len = 10;
  Eigen::Index dim = 0;
  double beta = 0.1;
  std::uint64_t projector_seed = 0;
  Matrix projector;
  std::map<ClassId, Matrix> class_prompts;
  std::map<ClassId, TaskId> class_task;
  std::map<TaskId, Matrix> task_prompts;

  static PromptBank create(Eigen::Index dim, std::size_t prompt_len, double beta,
                           std::uint64_t projector_seed);

  /// Adds a task prompt and one prompt per class, tokens ~ N(0, 0.02²).
  void add_task(TaskId task, std::span<const ClassId> classes, Rng& rng);

  void validate() const;

  bool operator==(const PromptBank&) const;
};

/// Unit class embeddings (rows, ordered by ascending class id) and the
/// encoded task prompts.
struct SoftEmbeddingSet {
  std::vector<ClassId> class_ids;
  Matrix class_embeddings;
  std::map<TaskId, Vector> task_embeddings;

  bool empty() const { return class_ids.empty(); }
};

/// Gradients keyed like the bank's token blocks.
struct PromptGradients {
  std::map<ClassId, Matrix> class_tokens;
  std::map<TaskId, Matrix> task_tokens;

  void add(const PromptGradients& other, double scale = 1.0);
};

struct PromptLoss {
  double loss = 0.0;
  PromptGradients grad;
};

/// Mean-pool the token rows, project, L2-normalize.
Vector encode_prompt(const Matrix& tokens, const Matrix& projector);

/// Vector-Jacobian product of encode_prompt: gradient w.r.t. the tokens
/// given the gradient w.r.t. the unit output.
Matrix encode_prompt_backward(const Matrix& tokens, const Matrix& projector,
                              const Vector& grad_output);

/// (f(class) + beta·f(task)) / ‖·‖.
Vector compose_embedding(const Matrix& class_tokens, const Matrix& task_tokens, double beta,
                         const Matrix& projector);

SoftEmbeddingSet build_embeddings(const PromptBank& bank);

/// Cross-entropy of cosine-similarity logits / tau over every class in the
/// bank, averaged over rows. Gradients reach every class and task block.
PromptLoss ce_loss_and_grad(const PromptBank& bank, const Matrix& features,
                            std::span<const ClassId> labels, double tau);

/// Mean squared pairwise inner product of the encoded task prompts.
/// Gradients are returned only for tasks listed in `trainable`; pass an
/// empty span for all tasks.
PromptLoss ortho_loss_and_grad(const PromptBank& bank, std::span<const TaskId> trainable = {});

inline double total_loss(double ce, double ortho, double lambda_ortho) {
  return ce + lambda_ortho * ortho;
}

/// Highest cosine similarity wins; ties go to the lowest class id.
ClassId predict(const Vector& feature, const SoftEmbeddingSet& embeddings);

std::vector<ClassId> predict_batch(const Matrix& features, const SoftEmbeddingSet& embeddings);

struct PromptTrainingConfig {
  Schedule schedule;
  double tau = 0.01;
  double lambda_ortho = 0.1;
  /// Share of each minibatch drawn from the replay set when it is non-empty.
  double replay_fraction = 0.5;
  std::uint64_t seed = 0;
};

/// Stepwise trainer for the prompts of one task. Only the class prompts of
/// `task` and its task prompt move; every other block stays bitwise fixed.
class PromptTrainer {
 public:
  PromptTrainer(PromptBank bank, TaskId task, PromptTrainingConfig config);

  /// One optimizer step on cross-entropy plus weighted orthogonality over the minibatch.
  /// Returns the minibatch loss before the update.
  double step(const Matrix& features, std::span<const ClassId> labels);

  /// Loss over a full mix (no update).
  double loss(const Matrix& features, std::span<const ClassId> labels) const;

  const PromptBank& bank() const { return bank_; }
  PromptBank release() { return std::move(bank_); }

 private:
  PromptBank bank_;
  TaskId task_;
  PromptTrainingConfig config_;
  Optimizer optimizer_;
  std::vector<ClassId> trainable_classes_;
};

/// Gradient descent on cross-entropy + lambda·orthogonality over minibatches
/// mixing `real` (one task) and `replay` (features of earlier classes).
/// Features are renormalized to unit length.
PromptBank train_prompts(const PromptBank& bank, const FeatureBatch& real,
                         const FeatureBatch& replay, const PromptTrainingConfig& config);

/// Minibatch sampler shared by the prompt stage: `replay_fraction` of each
/// batch from replay (class drawn uniformly, then a row), the rest uniformly
/// from real.
class MixedBatchSampler {
 public:
  MixedBatchSampler(const FeatureBatch& real, const FeatureBatch& replay, std::size_t batch_size,
                    double replay_fraction);

  /// Row indices into real and replay for the next minibatch.
  std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>> next(Rng& rng) const;

 private:
  std::size_t real_rows_;
  std::size_t n_real_;
  std::size_t n_replay_;
  std::vector<std::vector<Eigen::Index>> replay_groups_;
};

}  // namespace dmc
