#pragma once

#include "dmc/feature_batch.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace dmc {

/// Train and held-out rows of one task.
struct TaskSplit {
  TaskId task = 0;
  FeatureBatch train;
  FeatureBatch eval;
};

/// Ordered tasks with disjoint class sets.
struct TaskStream {
  std::vector<TaskSplit> tasks;
  Eigen::Index input_dim = 0;
  /// Width of the encoder output used on this stream.
  Eigen::Index feature_dim = 0;

  void validate() const;
};

/// Parameters of the synthetic task-stream generator.
struct StreamSpec {
  std::size_t num_tasks = 10;
  std::size_t classes_per_task = 5;
  Eigen::Index input_dim = 32;
  Eigen::Index feature_dim = 16;
  double class_separation = 1.0;
  double within_class_scale = 0.1;
  /// Length of one latent offset added to every class center; models the
  /// large component that all inputs of one domain share.
  double shared_offset = 0.5;
  std::size_t train_per_class = 100;
  std::size_t eval_per_class = 100;
  /// Every task reuses the latent generators of task 0 under fresh labels.
  bool repeat_generators = false;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const StreamSpec&) const = default;
};

/// Latent class centers at radius `class_separation` in random directions,
/// isotropic within-class noise of scale `within_class_scale`. Values are
/// rounded to float precision so the stream survives a file round trip.
TaskStream generate_stream(const StreamSpec& spec);

/// Self-describing binary feature file: 16-byte header, u32 n, u32 d, n·d
/// float32 rows and n int32 labels, all little-endian.
void write_feature_file(const std::filesystem::path& path, const Matrix& features,
                        const std::vector<ClassId>& labels);

struct FeatureFile {
  Matrix features;
  std::vector<ClassId> labels;
};

FeatureFile read_feature_file(const std::filesystem::path& path);

/// Class → task table plus the feature files of each split.
struct Manifest {
  std::vector<std::pair<TaskId, std::vector<ClassId>>> tasks;
  std::filesystem::path train_file;
  std::filesystem::path eval_file;
  Eigen::Index feature_dim = 0;  // 0: use the file width
  /// Rows are encoder outputs and must be unit norm.
  bool unit_norm = true;
};

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Reads the manifest's train and eval files (paths relative to the
/// manifest) and splits them by task. For unit-norm manifests, rows whose
/// norm is off by more than 1e-3 are renormalized with a warning.
TaskStream import_features(const std::filesystem::path& manifest_path);

/// Writes train.bin, eval.bin and manifest.json for `stream` into `dir`.
void export_stream(const TaskStream& stream, const std::filesystem::path& dir);

}  // namespace dmc
