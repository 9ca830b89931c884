#pragma once

#include "dmc/types.hpp"

#include <map>
#include <vector>

namespace dmc {

/// Labeled rows (raw inputs or encoded features) with the owning task of
/// each row.
struct FeatureBatch {
  Matrix features;
  std::vector<ClassId> labels;
  std::vector<TaskId> task_ids;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Shape and finiteness checks, plus the class → task uniqueness rule.
  void validate(bool allow_empty = false) const;

  /// Sorted distinct labels.
  std::vector<ClassId> classes() const;

  /// Rows grouped by label.
  std::map<ClassId, std::vector<Eigen::Index>> rows_by_class() const;

  /// Concatenates two batches of equal width (either may be empty).
  static FeatureBatch concat(const FeatureBatch& a, const FeatureBatch& b);
};

/// Rows scaled to unit Euclidean norm. Throws InvalidInput on a zero row.
Matrix normalize_rows(const Matrix& m);

}  // namespace dmc
