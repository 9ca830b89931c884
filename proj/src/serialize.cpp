#include "dmc/serialize.hpp"

#include "dmc/binary_io.hpp"

namespace dmc {

namespace {

constexpr std::string_view kEncoderMagic{"DMCENC\0\0", 8};
constexpr std::string_view kBankMagic{"DMCBANK\0", 8};
constexpr std::string_view kStateMagic{"DMCSTATE", 8};
constexpr std::uint32_t kFormatVersion = 1;

void expect_header(ByteReader& r, std::string_view magic, const char* what) {
  if (r.bytes(magic.size()) != magic) throw InvalidInput(std::string(what) + ": bad magic");
  const auto version = r.u32();
  if (version != kFormatVersion) {
    throw InvalidInput(std::string(what) + ": unsupported version " + std::to_string(version));
  }
}

void write_encoder(ByteWriter& w, const Encoder& enc) {
  w.bytes(kEncoderMagic);
  w.u32(kFormatVersion);
  w.u64(enc.version);
  w.u64(enc.seed);
  w.matrix(enc.weights);
}

Encoder read_encoder(ByteReader& r) {
  expect_header(r, kEncoderMagic, "encoder");
  Encoder enc;
  enc.version = r.u64();
  enc.seed = r.u64();
  enc.weights = r.matrix();
  return enc;
}

void write_bank(ByteWriter& w, const PromptBank& bank) {
  w.bytes(kBankMagic);
  w.u32(kFormatVersion);
  w.u64(bank.prompt_len);
  w.u64(static_cast<std::uint64_t>(bank.dim));
  w.f64(bank.beta);
  w.u64(bank.projector_seed);
  w.u64(bank.task_prompts.size());
  for (const auto& [task, tokens] : bank.task_prompts) {
    w.i32(task);
    w.matrix(tokens);
  }
  w.u64(bank.class_prompts.size());
  for (const auto& [cls, tokens] : bank.class_prompts) {
    w.i32(cls);
    w.i32(bank.class_task.at(cls));
    w.matrix(tokens);
  }
}

PromptBank read_bank(ByteReader& r) {
  expect_header(r, kBankMagic, "prompt bank");
  const auto prompt_len = r.u64();
  const auto dim = static_cast<Eigen::Index>(r.u64());
  const double beta = r.f64();
  const auto projector_seed = r.u64();
  PromptBank bank = PromptBank::create(dim, prompt_len, beta, projector_seed);
  const auto n_tasks = r.u64();
  for (std::uint64_t i = 0; i < n_tasks; ++i) {
    const TaskId task = r.i32();
    bank.task_prompts.emplace(task, r.matrix());
  }
  const auto n_classes = r.u64();
  for (std::uint64_t i = 0; i < n_classes; ++i) {
    const ClassId cls = r.i32();
    bank.class_task.emplace(cls, r.i32());
    bank.class_prompts.emplace(cls, r.matrix());
  }
  bank.validate();
  return bank;
}

}  // namespace

std::string serialize_encoder(const Encoder& enc) {
  ByteWriter w;
  write_encoder(w, enc);
  return w.data();
}

Encoder deserialize_encoder(std::string_view bytes) {
  ByteReader r(bytes, "encoder");
  return read_encoder(r);
}

std::string serialize_bank(const PromptBank& bank) {
  ByteWriter w;
  write_bank(w, bank);
  return w.data();
}

PromptBank deserialize_bank(std::string_view bytes) {
  ByteReader r(bytes, "prompt bank");
  return read_bank(r);
}

std::string serialize_state(const PipelineState& state) {
  ByteWriter w;
  w.bytes(kStateMagic);
  w.u32(kFormatVersion);
  w.u64(state.seed);
  write_encoder(w, state.encoder);
  write_bank(w, state.bank);
  w.u64(state.memory.size());
  for (const auto& [cls, stat] : state.memory) {
    w.i32(cls);
    w.u64(stat.count);
    w.vector(stat.mean);
    w.matrix(stat.covariance);
  }
  w.u64(state.seen_tasks.size());
  for (const TaskId t : state.seen_tasks) w.i32(t);
  w.u64(static_cast<std::uint64_t>(state.anchors.dim()));
  w.u64(state.anchors.seed());
  w.u64(state.anchors.size());
  for (const auto& [cls, v] : state.anchors.all()) {
    w.i32(cls);
    w.vector(v);
  }
  return w.data();
}

PipelineState deserialize_state(std::string_view bytes) {
  ByteReader r(bytes, "checkpoint");
  expect_header(r, kStateMagic, "checkpoint");
  PipelineState state;
  state.seed = r.u64();
  state.encoder = read_encoder(r);
  state.bank = read_bank(r);
  const auto n_memory = r.u64();
  for (std::uint64_t i = 0; i < n_memory; ++i) {
    const ClassId cls = r.i32();
    GaussianStat stat;
    stat.count = r.u64();
    stat.mean = r.vector();
    stat.covariance = r.matrix();
    state.memory.emplace(cls, std::move(stat));
  }
  const auto n_tasks = r.u64();
  for (std::uint64_t i = 0; i < n_tasks; ++i) state.seen_tasks.push_back(r.i32());
  const auto dim = static_cast<Eigen::Index>(r.u64());
  const auto anchor_seed = r.u64();
  const auto n_anchors = r.u64();
  std::map<ClassId, Vector> anchors;
  for (std::uint64_t i = 0; i < n_anchors; ++i) {
    const ClassId cls = r.i32();
    anchors.emplace(cls, r.vector());
  }
  state.anchors = AnchorSet::from_parts(dim, anchor_seed, std::move(anchors));
  if (r.remaining() != 0) throw InvalidInput("checkpoint: trailing bytes");
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const PipelineState& state) {
  write_file_atomic(path, serialize_state(state));
}

PipelineState load_checkpoint(const std::filesystem::path& path) {
  return deserialize_state(read_file(path));
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace dmc
