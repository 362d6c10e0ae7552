#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "json.hpp"

#include "gradet/model.hpp"
#include "gradet/tokenizer.hpp"

namespace gradet {

/// Optimizer position saved alongside the parameters so a stage can resume.
struct TrainState {
  std::string stage;
  std::int64_t epochs_completed = 0;
  std::int64_t step = 0;
  AdamState<Real> adam;
};

struct Checkpoint {
  ModelParams<Real> params;
  TokenizerKind tokenizer_kind = TokenizerKind::Grapheme;
  std::string tokenizer_data;  // vocab or BPE model file text
  std::optional<TrainState> train;

  std::unique_ptr<Tokenizer> tokenizer() const { return deserialize_tokenizer(tokenizer_kind, tokenizer_data); }
};

/// The checkpoint references a tensor that is missing or has the wrong shape.
class CheckpointMismatch : public FormatError {
 public:
  CheckpointMismatch(const std::string& tensor, const std::string& what)
      : FormatError("checkpoint tensor '" + tensor + "': " + what), tensor_(tensor) {}
  const std::string& tensor() const { return tensor_; }

 private:
  std::string tensor_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (all integers little-endian):
///   "GDTCKPT\0" | u32 version | u64 header length | header JSON
///   | u64 tensor count | per tensor: u32 name length, name, u8 dtype (1 = f32, 2 = f64),
///     u32 rank, u64 dims[rank], IEEE-754 payload
/// The header carries the model config, the tokenizer kind and file text, and the
/// training state; Adam moments are stored as tensors named adam.m.<param> / adam.v.<param>.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

/// Validates that every tensor the config implies is present with the right shape.
/// With `expected`, the stored config must also equal it; otherwise the error names the
/// first tensor whose shape differs.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected = {});

}  // namespace gradet
