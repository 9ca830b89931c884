#pragma once

#include "dmc/optimizer.hpp"
#include "dmc/stream.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dmc {

enum class RunVariant { DmcOt, Dmc, Simultaneous, NoTaskPrompt, AltOt, NoOt };

inline constexpr RunVariant kAllVariants[] = {RunVariant::DmcOt,        RunVariant::Dmc,
                                              RunVariant::NoOt,         RunVariant::AltOt,
                                              RunVariant::NoTaskPrompt, RunVariant::Simultaneous};

std::string_view to_string(RunVariant variant);
RunVariant parse_variant(std::string_view name);

/// What each variant switches on.
struct VariantTraits {
  bool calibrate = false;
  bool per_class_map = false;
  bool task_prompts = false;
  bool simultaneous = false;
};

VariantTraits traits_of(RunVariant variant);

struct RunConfig {
  static constexpr int kVersion = 1;

  std::size_t prompt_len = 10;
  double beta = 0.1;
  double lambda_ortho = 0.1;
  double tau = 0.01;
  Schedule stage1{.steps = 20, .lr = 0.005, .batch_size = 32, .optimizer = OptimizerKind::Sgd};
  Schedule stage2{.steps = 600, .lr = 0.01, .batch_size = 32, .optimizer = OptimizerKind::Sgd};
  std::size_t replay_per_class = 64;
  double replay_fraction = 0.5;
  RunVariant variant = RunVariant::DmcOt;
  std::vector<std::uint64_t> seeds{0};
  StreamSpec stream;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// Flat, versioned JSON object; one key per field.
std::string emit_config(const RunConfig& config);
RunConfig parse_config(std::string_view text);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace dmc
