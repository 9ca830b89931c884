#include "dmc/stream.hpp"

#include "dmc/binary_io.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dmc {

namespace {

constexpr std::string_view kFeatureMagic{"DMCFEATURES\0", 12};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr int kManifestVersion = 1;

Matrix draw_rows(const Vector& center, double scale, std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(static_cast<Eigen::Index>(n), center.size());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) = static_cast<double>(static_cast<float>(center[j] + scale * normal(rng)));
    }
  }
  return out;
}

void append_rows(FeatureBatch& batch, const Matrix& rows, ClassId cls, TaskId task) {
  const Eigen::Index start = batch.features.rows();
  batch.features.conservativeResize(start + rows.rows(), rows.cols());
  batch.features.bottomRows(rows.rows()) = rows;
  batch.labels.insert(batch.labels.end(), static_cast<std::size_t>(rows.rows()), cls);
  batch.task_ids.insert(batch.task_ids.end(), static_cast<std::size_t>(rows.rows()), task);
}

FeatureBatch select_task(const FeatureFile& file, const std::map<ClassId, TaskId>& owner,
                         TaskId task) {
  FeatureBatch out;
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < file.labels.size(); ++i) {
    if (owner.at(file.labels[i]) == task) rows.push_back(static_cast<Eigen::Index>(i));
  }
  out.features.resize(static_cast<Eigen::Index>(rows.size()), file.features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = file.features.row(rows[i]);
    out.labels.push_back(file.labels[static_cast<std::size_t>(rows[i])]);
    out.task_ids.push_back(task);
  }
  return out;
}

void check_unit_norms(Matrix& features, const std::string& what) {
  std::size_t fixed = 0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    const double norm = features.row(i).norm();
    if (!(norm > 0.0)) throw InvalidInput(what + ": zero feature row " + std::to_string(i));
    if (std::abs(norm - 1.0) > 1e-3) {
      features.row(i) /= norm;
      ++fixed;
    }
  }
  if (fixed > 0) spdlog::warn("{}: renormalized {} rows that were not unit norm", what, fixed);
}

}  // namespace

void TaskStream::validate() const {
  if (tasks.empty()) throw InvalidInput("stream has no tasks");
  if (feature_dim < 1 || input_dim < feature_dim) {
    throw InvalidInput("stream needs input_dim >= feature_dim >= 1");
  }
  std::map<ClassId, TaskId> owner;
  std::set<TaskId> task_ids;
  for (const TaskSplit& t : tasks) {
    if (!task_ids.insert(t.task).second) throw InvalidInput("duplicate task id in stream");
    t.train.validate();
    t.eval.validate();
    if (t.train.dim() != input_dim || t.eval.dim() != input_dim) {
      throw InvalidInput("dimension mismatch in task " + std::to_string(t.task));
    }
    for (const auto* batch : {&t.train, &t.eval}) {
      for (const ClassId c : batch->labels) {
        const auto [it, inserted] = owner.emplace(c, t.task);
        if (!inserted && it->second != t.task) throw InvalidInput("not class-incremental");
      }
    }
  }
}

TaskStream generate_stream(const StreamSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::size_t n_classes = spec.num_tasks * spec.classes_per_task;
  const std::size_t n_centers = spec.repeat_generators ? spec.classes_per_task : n_classes;
  std::vector<Vector> centers;
  for (std::size_t c = 0; c < n_centers; ++c) {
    Vector v(spec.input_dim);
    for (Eigen::Index j = 0; j < v.size(); ++j) v[j] = normal(rng);
    centers.push_back(spec.class_separation * v.normalized());
  }
  if (spec.shared_offset > 0.0) {
    Rng offset_rng(mix_seed(spec.seed, 1));
    Vector offset(spec.input_dim);
    for (Eigen::Index j = 0; j < offset.size(); ++j) offset[j] = normal(offset_rng);
    offset *= spec.shared_offset / offset.norm();
    for (Vector& c : centers) c += offset;
  }

  TaskStream stream;
  stream.input_dim = spec.input_dim;
  stream.feature_dim = spec.feature_dim;
  for (std::size_t k = 0; k < spec.num_tasks; ++k) {
    TaskSplit split;
    split.task = static_cast<TaskId>(k);
    for (std::size_t j = 0; j < spec.classes_per_task; ++j) {
      const auto cls = static_cast<ClassId>(k * spec.classes_per_task + j);
      const Vector& center = centers[spec.repeat_generators ? j : static_cast<std::size_t>(cls)];
      append_rows(split.train, draw_rows(center, spec.within_class_scale, spec.train_per_class, rng),
                  cls, split.task);
      append_rows(split.eval, draw_rows(center, spec.within_class_scale, spec.eval_per_class, rng),
                  cls, split.task);
    }
    stream.tasks.push_back(std::move(split));
  }
  return stream;
}

void write_feature_file(const std::filesystem::path& path, const Matrix& features,
                        const std::vector<ClassId>& labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw InvalidInput("features and labels differ in length");
  }
  ByteWriter w;
  w.bytes(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(features.rows()));
  w.u32(static_cast<std::uint32_t>(features.cols()));
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    for (Eigen::Index j = 0; j < features.cols(); ++j) w.f32(static_cast<float>(features(i, j)));
  }
  for (const ClassId y : labels) w.i32(y);
  write_file_atomic(path, w.data());
}

FeatureFile read_feature_file(const std::filesystem::path& path) {
  const std::string raw = read_file(path);
  ByteReader r(raw, "feature file " + path.string());
  if (raw.size() < 16 || r.bytes(kFeatureMagic.size()) != kFeatureMagic) {
    throw InvalidInput("feature file " + path.string() + ": malformed header");
  }
  const std::uint32_t version = r.u32();
  if (version != kFeatureVersion) {
    throw InvalidInput("feature file " + path.string() + ": unsupported version " +
                       std::to_string(version));
  }
  const std::uint64_t n = r.u32();
  const std::uint64_t d = r.u32();
  const std::uint64_t expected = 24 + n * d * 4 + n * 4;
  if (raw.size() != expected) {
    throw InvalidInput("feature file " + path.string() + ": expected " + std::to_string(expected) +
                       " bytes but found " + std::to_string(raw.size()));
  }
  FeatureFile out;
  out.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < out.features.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.features.cols(); ++j) out.features(i, j) = r.f32();
  }
  out.labels.resize(n);
  for (auto& y : out.labels) y = r.i32();
  if (!out.features.allFinite()) throw InvalidInput("feature file " + path.string() + ": invalid feature");
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("manifest " + path.string() + ": " + e.what());
  }
  try {
    if (j.value("version", 0) != kManifestVersion) {
      throw InvalidInput("manifest " + path.string() + ": unsupported version");
    }
    Manifest m;
    m.train_file = j.at("splits").at("train").get<std::string>();
    m.eval_file = j.at("splits").at("eval").get<std::string>();
    m.feature_dim = j.value("feature_dim", Eigen::Index{0});
    m.unit_norm = j.value("unit_norm", true);
    std::map<ClassId, TaskId> owner;
    std::set<TaskId> seen_tasks;
    for (const auto& t : j.at("tasks")) {
      const auto task = t.at("id").get<TaskId>();
      if (!seen_tasks.insert(task).second) {
        throw InvalidInput("manifest " + path.string() + ": duplicate task " + std::to_string(task));
      }
      auto classes = t.at("classes").get<std::vector<ClassId>>();
      for (const ClassId c : classes) {
        if (!owner.emplace(c, task).second) {
          throw InvalidInput("not class-incremental: class " + std::to_string(c) +
                             " assigned to more than one task");
        }
      }
      m.tasks.emplace_back(task, std::move(classes));
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput("manifest " + path.string() + ": " + e.what());
  }
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  nlohmann::json j;
  j["version"] = kManifestVersion;
  j["splits"] = {{"train", m.train_file.generic_string()}, {"eval", m.eval_file.generic_string()}};
  j["feature_dim"] = m.feature_dim;
  j["unit_norm"] = m.unit_norm;
  j["tasks"] = nlohmann::json::array();
  for (const auto& [task, classes] : m.tasks) j["tasks"].push_back({{"id", task}, {"classes", classes}});
  write_file_atomic(path, j.dump(2) + "\n");
}

TaskStream import_features(const std::filesystem::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  FeatureFile train = read_feature_file(base / m.train_file);
  FeatureFile eval = read_feature_file(base / m.eval_file);
  if (train.features.cols() != eval.features.cols()) {
    throw InvalidInput("dimension mismatch between train and eval feature files");
  }
  std::map<ClassId, TaskId> owner;
  for (const auto& [task, classes] : m.tasks) {
    for (const ClassId c : classes) owner.emplace(c, task);
  }
  for (const auto* file : {&train, &eval}) {
    for (const ClassId y : file->labels) {
      if (!owner.contains(y)) {
        throw InvalidInput("label " + std::to_string(y) + " is not listed in the manifest");
      }
    }
  }
  if (m.unit_norm) {
    check_unit_norms(train.features, "train features");
    check_unit_norms(eval.features, "eval features");
  }

  TaskStream stream;
  stream.input_dim = train.features.cols();
  stream.feature_dim = m.feature_dim > 0 ? m.feature_dim : stream.input_dim;
  if (stream.feature_dim > stream.input_dim) {
    throw InvalidInput("dimension mismatch: manifest feature_dim exceeds file width");
  }
  for (const auto& [task, classes] : m.tasks) {
    stream.tasks.push_back({task, select_task(train, owner, task), select_task(eval, owner, task)});
  }
  stream.validate();
  return stream;
}

void export_stream(const TaskStream& stream, const std::filesystem::path& dir) {
  stream.validate();
  std::filesystem::create_directories(dir);
  Manifest m;
  m.train_file = "train.bin";
  m.eval_file = "eval.bin";
  m.feature_dim = stream.feature_dim;
  m.unit_norm = false;
  FeatureBatch train;
  FeatureBatch eval;
  for (const TaskSplit& t : stream.tasks) {
    m.tasks.emplace_back(t.task, t.train.classes());
    train = FeatureBatch::concat(train, t.train);
    eval = FeatureBatch::concat(eval, t.eval);
  }
  write_feature_file(dir / m.train_file, train.features, train.labels);
  write_feature_file(dir / m.eval_file, eval.features, eval.labels);
  write_manifest(dir / "manifest.json", m);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write file: " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw InvalidInput("cannot write file: " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw InvalidInput("cannot write file: " + path.string() + ": " + ec.message());
}

}  // namespace dmc
