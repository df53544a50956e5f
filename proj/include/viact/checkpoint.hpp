#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "viact/tensor.hpp"

namespace viact {

/// Graph a checkpoint was written from.
enum class CheckpointKind : uint32_t { classifier = 0, pretrain = 1 };

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Parameter file: magic "VIAC", u32 version, u32 kind, u32-length UTF-8
/// metadata (JSON model config), u32 tensor count, then per tensor a
/// u32-length UTF-8 name, u32 rank, u64 extents and float32 values, all
/// little-endian and row-major.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;

  CheckpointKind kind = CheckpointKind::classifier;
  std::string metadata;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
/// Loads values as float32 tensors, converted to the current default dtype.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace viact
