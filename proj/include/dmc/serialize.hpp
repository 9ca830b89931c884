#pragma once

#include "dmc/encoder_sim.hpp"
#include "dmc/pipeline.hpp"
#include "dmc/prototype_model.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace dmc {

// Versioned little-endian binary dumps. Doubles are stored as raw IEEE-754
// bits, so every round trip is bit-exact.

std::string serialize_encoder(const Encoder& enc);
Encoder deserialize_encoder(std::string_view bytes);

std::string serialize_bank(const PromptBank& bank);
PromptBank deserialize_bank(std::string_view bytes);

std::string serialize_state(const PipelineState& state);
PipelineState deserialize_state(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const PipelineState& state);
PipelineState load_checkpoint(const std::filesystem::path& path);

/// FNV-1a 64-bit; used to compare dumps in tests and logs.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace dmc
