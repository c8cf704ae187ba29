#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cunet/model/cunet.hpp"

namespace cunet::model {

// Layout (little-endian):
//   "CUNT" u32 version
//   u32 len + model config text
//   i32 epoch, f64 val_dice, u64 seed
//   u32 len + training config text
//   u32 entry count, then per entry:
//     u16 len + name, u8 bits (32|64), u8 rank, u32 dims[rank], payload
//   u32 CRC-32 of everything before it
// Entries cover trainable parameters and batch-norm running statistics
// ("<norm>.running_mean", "<norm>.running_var").

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::int32_t epoch = 0;  // 1-based epoch the weights come from
  double val_dice = 0;
  std::uint64_t seed = 0;
  std::string train_config;
};

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::uint8_t bits = 32;       // payload element width
  std::vector<double> values;   // widened for storage in memory
};

struct Checkpoint {
  CUNetConfig config;
  CheckpointMeta meta;
  std::vector<CheckpointEntry> entries;

  const CheckpointEntry* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, version, checksum or truncation.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes via a temporary file and rename.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Captures parameters and running statistics at the model's precision.
template <typename T>
Checkpoint snapshot(const CUNet<T>& model, const CheckpointMeta& meta);

/// Copies every entry into `model`. Missing, extra or misshapen entries
/// throw CheckpointError naming the entry.
template <typename T>
void restore(CUNet<T>& model, const Checkpoint& ckpt);

/// Builds a model from the checkpoint's config and restores it.
template <typename T>
CUNet<T> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace cunet::model
