#include "dmc/encoder_sim.hpp"

#include "dmc/prototype_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dmc {

void AnchorSet::ensure(std::span<const ClassId> classes) {
  for (const ClassId cls : classes) {
    if (anchors_.contains(cls)) continue;
    Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(static_cast<std::uint32_t>(cls))));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(dim_);
    do {
      for (Eigen::Index i = 0; i < dim_; ++i) v[i] = normal(rng);
    } while (v.norm() < 1e-12);
    anchors_.emplace(cls, v.normalized());
  }
}

const Vector& AnchorSet::at(ClassId cls) const {
  const auto it = anchors_.find(cls);
  if (it == anchors_.end()) throw InvalidInput("no anchor for class " + std::to_string(cls));
  return it->second;
}

AnchorSet AnchorSet::from_parts(Eigen::Index dim, std::uint64_t seed,
                                std::map<ClassId, Vector> anchors) {
  AnchorSet set(dim, seed);
  set.anchors_ = std::move(anchors);
  return set;
}

Encoder init_encoder(Eigen::Index d_in, Eigen::Index d_out, std::uint64_t seed) {
  if (d_out < 1 || d_in < d_out) throw InvalidInput("encoder needs d_in >= d_out >= 1");
  Encoder enc;
  enc.weights = random_orthonormal_rows(d_out, d_in, seed);
  enc.seed = seed;
  return enc;
}

Matrix encode(const Encoder& enc, const Matrix& inputs) {
  if (inputs.cols() != enc.input_dim()) throw InvalidInput("input width does not match encoder");
  if (!inputs.allFinite()) throw InvalidInput("invalid feature");
  return normalize_rows(inputs * enc.weights.transpose());
}

ContrastiveLoss contrastive_loss_and_grad(const Encoder& enc, const Matrix& inputs,
                                          std::span<const ClassId> labels,
                                          const AnchorSet& anchors, double tau) {
  const auto b = static_cast<Eigen::Index>(labels.size());
  if (b < 2) throw InvalidInput("contrastive loss undefined");
  if (inputs.rows() != b) throw InvalidInput("inputs and labels differ in length");
  if (!(tau > 0.0)) throw InvalidInput("tau must be positive");

  const Matrix projected = inputs * enc.weights.transpose();
  const Vector norms = projected.rowwise().norm();
  if (!(norms.minCoeff() > 1e-12)) throw InvalidInput("degenerate input");
  const Matrix z = projected.array().colwise() / norms.array();
  Matrix text(b, enc.output_dim());
  for (Eigen::Index i = 0; i < b; ++i) text.row(i) = anchors.at(labels[i]).transpose();

  const Matrix logits = (z * text.transpose()) / tau;
  Matrix row_soft(b, b);
  Matrix col_soft(b, b);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const double top = logits.row(i).maxCoeff();
    row_soft.row(i) = (logits.row(i).array() - top).exp();
    const double z_row = row_soft.row(i).sum();
    row_soft.row(i) /= z_row;
    loss -= logits(i, i) - top - std::log(z_row);
  }
  for (Eigen::Index j = 0; j < b; ++j) {
    const double top = logits.col(j).maxCoeff();
    col_soft.col(j) = (logits.col(j).array() - top).exp();
    const double z_col = col_soft.col(j).sum();
    col_soft.col(j) /= z_col;
    loss -= logits(j, j) - top - std::log(z_col);
  }
  const double scale = 1.0 / (2.0 * static_cast<double>(b));

  Matrix grad_logits = row_soft + col_soft;
  grad_logits.diagonal().array() -= 2.0;
  grad_logits *= scale;

  const Matrix grad_z = (grad_logits * text) / tau;
  Matrix grad_projected(b, enc.output_dim());
  for (Eigen::Index i = 0; i < b; ++i) {
    const double along = z.row(i).dot(grad_z.row(i));
    grad_projected.row(i) = (grad_z.row(i) - along * z.row(i)) / norms[i];
  }
  return {loss * scale, grad_projected.transpose() * inputs};
}

EncoderTrainer::EncoderTrainer(Encoder enc, const FeatureBatch& data, const AnchorSet& anchors,
                               EncoderTrainingConfig config)
    : enc_(std::move(enc)),
      data_(data),
      anchors_(anchors),
      config_(config),
      optimizer_(config.schedule.optimizer, config.schedule.lr),
      rng_(config.seed) {
  if (data_.empty()) throw InvalidInput("empty task data");
  data_.validate();
  if (data_.dim() != enc_.input_dim()) throw InvalidInput("input width does not match encoder");
  if (config_.schedule.batch_size == 0) throw InvalidInput("batch size must be positive");
  for (const ClassId c : data_.labels) {
    if (!anchors_.contains(c)) throw InvalidInput("no anchor for class " + std::to_string(c));
  }
  order_.resize(data_.size());
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
}

double EncoderTrainer::step() {
  const std::size_t n = data_.size();
  const std::size_t batch = std::max<std::size_t>(2, std::min(config_.schedule.batch_size, n));
  std::vector<Eigen::Index> rows;
  rows.reserve(batch);
  while (rows.size() < batch) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    rows.push_back(order_[cursor_++]);
  }
  Matrix inputs(static_cast<Eigen::Index>(batch), data_.dim());
  std::vector<ClassId> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    inputs.row(static_cast<Eigen::Index>(i)) = data_.features.row(rows[i]);
    labels[i] = data_.labels[static_cast<std::size_t>(rows[i])];
  }
  const ContrastiveLoss result =
      contrastive_loss_and_grad(enc_, inputs, labels, anchors_, config_.tau);
  optimizer_.step(0, enc_.weights, result.grad);
  return result.loss;
}

Encoder adapt_encoder(const Encoder& enc, const FeatureBatch& task_data, const AnchorSet& anchors,
                      const EncoderTrainingConfig& config) {
  EncoderTrainer trainer(enc, task_data, anchors, config);
  for (std::size_t s = 0; s < config.schedule.steps; ++s) trainer.step();
  Encoder out = trainer.release();
  if (!out.weights.allFinite()) throw NumericalError("encoder weights diverged");
  ++out.version;
  return out;
}

ClassMemory extract_class_stats(const Encoder& enc, const FeatureBatch& data) {
  data.validate();
  const Matrix features = encode(enc, data.features);
  ClassMemory stats;
  for (const auto& [cls, rows] : data.rows_by_class()) {
    Matrix block(static_cast<Eigen::Index>(rows.size()), features.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      block.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
    }
    stats.emplace(cls, estimate_gaussian(block));
  }
  return stats;
}

}  // namespace dmc
