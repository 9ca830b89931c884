#include "dmc/config.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <sstream>

namespace dmc {

using nlohmann::json;

namespace {

struct VariantName {
  RunVariant variant;
  std::string_view name;
};

constexpr VariantName kVariantNames[] = {
    {RunVariant::DmcOt, "DMC_OT"},
    {RunVariant::Dmc, "DMC"},
    {RunVariant::Simultaneous, "SIMULTANEOUS"},
    {RunVariant::NoTaskPrompt, "NO_TASK_PROMPT"},
    {RunVariant::AltOt, "ALT_OT"},
    {RunVariant::NoOt, "NO_OT"},
};

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidInput("invalid config: " + what);
}

void validate_schedule(const Schedule& s, const std::string& stage, bool allow_zero_steps) {
  require(allow_zero_steps || s.steps > 0, stage + "_steps must be positive");
  require(s.lr >= 0.0, stage + "_lr must be nonnegative");
  require(s.batch_size > 0, stage + "_batch must be positive");
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  return it == j.end() ? fallback : it->get<T>();
}

}  // namespace

std::string_view to_string(RunVariant variant) {
  for (const auto& v : kVariantNames) {
    if (v.variant == variant) return v.name;
  }
  return "UNKNOWN";
}

RunVariant parse_variant(std::string_view name) {
  for (const auto& v : kVariantNames) {
    if (v.name == name) return v.variant;
  }
  throw InvalidInput("unknown variant: " + std::string(name));
}

VariantTraits traits_of(RunVariant variant) {
  switch (variant) {
    case RunVariant::DmcOt: return {.calibrate = true, .task_prompts = true};
    case RunVariant::Dmc: return {};
    case RunVariant::Simultaneous: return {.simultaneous = true};
    case RunVariant::NoTaskPrompt: return {.calibrate = true};
    case RunVariant::AltOt: return {.calibrate = true, .per_class_map = true, .task_prompts = true};
    case RunVariant::NoOt: return {.task_prompts = true};
  }
  throw InvalidInput("unknown variant");
}

void StreamSpec::validate() const {
  require(num_tasks >= 1, "num_tasks must be >= 1");
  require(classes_per_task >= 1, "classes_per_task must be >= 1");
  require(feature_dim >= 1 && input_dim >= feature_dim, "need input_dim >= feature_dim >= 1");
  require(class_separation > 0.0, "class_separation must be positive");
  require(within_class_scale > 0.0, "within_class_scale must be positive");
  require(shared_offset >= 0.0, "shared_offset must be nonnegative");
  require(train_per_class >= 1 && eval_per_class >= 1, "per-class sample counts must be >= 1");
}

void RunConfig::validate() const {
  require(prompt_len >= 1, "prompt_len must be >= 1");
  require(beta >= 0.0, "beta must be nonnegative");
  require(lambda_ortho >= 0.0, "lambda_ortho must be nonnegative");
  require(tau > 0.0, "tau must be positive");
  validate_schedule(stage1, "stage1", /*allow_zero_steps=*/true);
  validate_schedule(stage2, "stage2", /*allow_zero_steps=*/false);
  require(replay_fraction >= 0.0 && replay_fraction < 1.0, "replay_fraction must lie in [0, 1)");
  require(!seeds.empty(), "at least one seed");
  stream.validate();
}

std::string emit_config(const RunConfig& c) {
  json j = json::object();
  j["version"] = RunConfig::kVersion;
  j["prompt_len"] = c.prompt_len;
  j["beta"] = c.beta;
  j["lambda_ortho"] = c.lambda_ortho;
  j["tau"] = c.tau;
  j["stage1_steps"] = c.stage1.steps;
  j["stage1_lr"] = c.stage1.lr;
  j["stage1_batch"] = c.stage1.batch_size;
  j["stage1_optimizer"] = to_string(c.stage1.optimizer);
  j["stage2_steps"] = c.stage2.steps;
  j["stage2_lr"] = c.stage2.lr;
  j["stage2_batch"] = c.stage2.batch_size;
  j["stage2_optimizer"] = to_string(c.stage2.optimizer);
  j["replay_per_class"] = c.replay_per_class;
  j["replay_fraction"] = c.replay_fraction;
  j["variant"] = to_string(c.variant);
  j["seeds"] = c.seeds;
  j["num_tasks"] = c.stream.num_tasks;
  j["classes_per_task"] = c.stream.classes_per_task;
  j["input_dim"] = c.stream.input_dim;
  j["feature_dim"] = c.stream.feature_dim;
  j["class_separation"] = c.stream.class_separation;
  j["within_class_scale"] = c.stream.within_class_scale;
  j["shared_offset"] = c.stream.shared_offset;
  j["train_per_class"] = c.stream.train_per_class;
  j["eval_per_class"] = c.stream.eval_per_class;
  j["repeat_generators"] = c.stream.repeat_generators;
  j["stream_seed"] = c.stream.seed;
  return j.dump(2) + "\n";
}

RunConfig parse_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), "top level must be an object");
  const int version = get_or<int>(j, "version", 0);
  require(version == RunConfig::kVersion, "unsupported version " + std::to_string(version));

  static const std::vector<std::string> known = {
      "version",          "prompt_len",      "beta",           "lambda_ortho",
      "tau",              "stage1_steps",    "stage1_lr",      "stage1_batch",
      "stage1_optimizer", "stage2_steps",    "stage2_lr",      "stage2_batch",
      "stage2_optimizer", "replay_per_class", "replay_fraction", "variant",
      "seeds",            "num_tasks",       "classes_per_task", "input_dim",
      "feature_dim",      "class_separation", "within_class_scale", "shared_offset", "train_per_class",
      "eval_per_class",   "repeat_generators", "stream_seed"};
  for (const auto& [key, value] : j.items()) {
    require(std::find(known.begin(), known.end(), key) != known.end(), "unknown key '" + key + "'");
  }

  RunConfig c;
  try {
    c.prompt_len = get_or(j, "prompt_len", c.prompt_len);
    c.beta = get_or(j, "beta", c.beta);
    c.lambda_ortho = get_or(j, "lambda_ortho", c.lambda_ortho);
    c.tau = get_or(j, "tau", c.tau);
    c.stage1.steps = get_or(j, "stage1_steps", c.stage1.steps);
    c.stage1.lr = get_or(j, "stage1_lr", c.stage1.lr);
    c.stage1.batch_size = get_or(j, "stage1_batch", c.stage1.batch_size);
    c.stage1.optimizer = parse_optimizer(
        get_or<std::string>(j, "stage1_optimizer", std::string(to_string(c.stage1.optimizer))));
    c.stage2.steps = get_or(j, "stage2_steps", c.stage2.steps);
    c.stage2.lr = get_or(j, "stage2_lr", c.stage2.lr);
    c.stage2.batch_size = get_or(j, "stage2_batch", c.stage2.batch_size);
    c.stage2.optimizer = parse_optimizer(
        get_or<std::string>(j, "stage2_optimizer", std::string(to_string(c.stage2.optimizer))));
    c.replay_per_class = get_or(j, "replay_per_class", c.replay_per_class);
    c.replay_fraction = get_or(j, "replay_fraction", c.replay_fraction);
    c.variant = parse_variant(get_or<std::string>(j, "variant", std::string(to_string(c.variant))));
    c.seeds = get_or(j, "seeds", c.seeds);
    c.stream.num_tasks = get_or(j, "num_tasks", c.stream.num_tasks);
    c.stream.classes_per_task = get_or(j, "classes_per_task", c.stream.classes_per_task);
    c.stream.input_dim = get_or(j, "input_dim", c.stream.input_dim);
    c.stream.feature_dim = get_or(j, "feature_dim", c.stream.feature_dim);
    c.stream.class_separation = get_or(j, "class_separation", c.stream.class_separation);
    c.stream.within_class_scale = get_or(j, "within_class_scale", c.stream.within_class_scale);
    c.stream.shared_offset = get_or(j, "shared_offset", c.stream.shared_offset);
    c.stream.train_per_class = get_or(j, "train_per_class", c.stream.train_per_class);
    c.stream.eval_per_class = get_or(j, "eval_per_class", c.stream.eval_per_class);
    c.stream.repeat_generators = get_or(j, "repeat_generators", c.stream.repeat_generators);
    c.stream.seed = get_or(j, "stream_seed", c.stream.seed);
  } catch (const json::type_error& e) {
    throw InvalidInput(std::string("invalid config: wrong value type: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config file: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str());
}

void save_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw InvalidInput("cannot write config file: " + path.string());
  out << emit_config(config);
}

}  // namespace dmc
