#pragma once

#include "dmc/feature_batch.hpp"
#include "dmc/optimizer.hpp"
#include "dmc/ot_calibration.hpp"

#include <cstdint>
#include <map>
#include <span>

namespace dmc {

/// Linear vision-encoder stand-in: features are W·x scaled to unit norm.
struct Encoder {
  Matrix weights;  // d_out × d_in
  std::uint64_t version = 0;
  std::uint64_t seed = 0;

  Eigen::Index input_dim() const { return weights.cols(); }
  Eigen::Index output_dim() const { return weights.rows(); }
};

/// Frozen per-class unit vectors playing the role of hard-prompt text
/// embeddings. One anchor per class, derived from (seed, class id) so the
/// set can grow without disturbing existing anchors.
class AnchorSet {
 public:
  AnchorSet() = default;
  AnchorSet(Eigen::Index dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}

  /// Creates anchors for classes not yet present; existing ones are kept.
  void ensure(std::span<const ClassId> classes);

  const Vector& at(ClassId cls) const;
  bool contains(ClassId cls) const { return anchors_.contains(cls); }
  std::size_t size() const { return anchors_.size(); }
  Eigen::Index dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  const std::map<ClassId, Vector>& all() const { return anchors_; }

  /// Restores a serialized set verbatim.
  static AnchorSet from_parts(Eigen::Index dim, std::uint64_t seed,
                              std::map<ClassId, Vector> anchors);

 private:
  Eigen::Index dim_ = 0;
  std::uint64_t seed_ = 0;
  std::map<ClassId, Vector> anchors_;
};

Encoder init_encoder(Eigen::Index d_in, Eigen::Index d_out, std::uint64_t seed);

/// Unit-norm rows W·x/‖W·x‖. Throws "degenerate input" on a zero projection.
Matrix encode(const Encoder& enc, const Matrix& inputs);

struct ContrastiveLoss {
  double loss = 0.0;
  Matrix grad;  // same shape as the encoder weights
};

/// Symmetric image/text InfoNCE over a batch where row i is paired with the
/// anchor of labels[i]. Needs at least two rows.
ContrastiveLoss contrastive_loss_and_grad(const Encoder& enc, const Matrix& inputs,
                                          std::span<const ClassId> labels,
                                          const AnchorSet& anchors, double tau);

struct EncoderTrainingConfig {
  Schedule schedule;
  double tau = 0.01;
  std::uint64_t seed = 0;
};

/// Minibatch trainer on the contrastive loss; anchors never change.
class EncoderTrainer {
 public:
  EncoderTrainer(Encoder enc, const FeatureBatch& data, const AnchorSet& anchors,
                 EncoderTrainingConfig config);

  /// One minibatch update; returns the minibatch loss before the update.
  double step();

  const Encoder& encoder() const { return enc_; }
  Encoder release() { return std::move(enc_); }

 private:
  Encoder enc_;
  const FeatureBatch& data_;
  const AnchorSet& anchors_;
  EncoderTrainingConfig config_;
  Optimizer optimizer_;
  Rng rng_;
  std::vector<Eigen::Index> order_;
  std::size_t cursor_ = 0;
};

/// Runs the full stage-1 schedule and bumps the version once.
Encoder adapt_encoder(const Encoder& enc, const FeatureBatch& task_data, const AnchorSet& anchors,
                      const EncoderTrainingConfig& config);

/// Encodes `data` and estimates one Gaussian per label.
ClassMemory extract_class_stats(const Encoder& enc, const FeatureBatch& data);

}  // namespace dmc
