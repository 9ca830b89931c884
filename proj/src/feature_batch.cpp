#include "dmc/feature_batch.hpp"

#include <algorithm>
#include <set>

namespace dmc {

void FeatureBatch::validate(bool allow_empty) const {
  if (labels.empty() && !allow_empty) throw InvalidInput("no samples");
  if (static_cast<std::size_t>(features.rows()) != labels.size() ||
      task_ids.size() != labels.size()) {
    throw InvalidInput("feature, label and task-id counts differ");
  }
  if (!features.allFinite()) throw InvalidInput("invalid feature");
  std::map<ClassId, TaskId> owner;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = owner.emplace(labels[i], task_ids[i]);
    if (!inserted && it->second != task_ids[i]) {
      throw InvalidInput("not class-incremental: class " + std::to_string(labels[i]) +
                         " appears in tasks " + std::to_string(it->second) + " and " +
                         std::to_string(task_ids[i]));
    }
  }
}

std::vector<ClassId> FeatureBatch::classes() const {
  const std::set<ClassId> unique(labels.begin(), labels.end());
  return {unique.begin(), unique.end()};
}

std::map<ClassId, std::vector<Eigen::Index>> FeatureBatch::rows_by_class() const {
  std::map<ClassId, std::vector<Eigen::Index>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    groups[labels[i]].push_back(static_cast<Eigen::Index>(i));
  }
  return groups;
}

FeatureBatch FeatureBatch::concat(const FeatureBatch& a, const FeatureBatch& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  if (a.dim() != b.dim()) throw InvalidInput("cannot concatenate batches of different width");
  FeatureBatch out;
  out.features.resize(a.features.rows() + b.features.rows(), a.dim());
  out.features << a.features, b.features;
  out.labels = a.labels;
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.task_ids = a.task_ids;
  out.task_ids.insert(out.task_ids.end(), b.task_ids.begin(), b.task_ids.end());
  return out;
}

Matrix normalize_rows(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double norm = out.row(i).norm();
    if (!(norm > 1e-12)) throw InvalidInput("degenerate input");
    out.row(i) /= norm;
  }
  return out;
}

}  // namespace dmc
