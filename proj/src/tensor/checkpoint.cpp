#include "viact/checkpoint.hpp"

#include <fstream>

#include "viact/detail/binary_io.hpp"

namespace viact {

namespace {
constexpr char kMagic[5] = "VIAC";
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  detail::write_le(os, Checkpoint::kVersion);
  detail::write_le(os, static_cast<uint32_t>(checkpoint.kind));
  detail::write_string(os, checkpoint.metadata);
  detail::write_le(os, static_cast<uint32_t>(checkpoint.tensors.size()));
  for (const auto& [name, value] : checkpoint.tensors) {
    detail::write_string(os, name);
    detail::write_le(os, static_cast<uint32_t>(value.rank()));
    for (auto e : value.shape()) detail::write_le(os, static_cast<uint64_t>(e));
    detail::dispatch(value.dtype(), [&]<typename T>() {
      for (T v : value.values<T>()) detail::write_f32(os, static_cast<float>(v));
    });
  }
  if (!os) throw Error("failed writing checkpoint: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open checkpoint: " + path.string());
  detail::expect_magic(is, kMagic, "checkpoint " + path.string());
  const auto version = detail::read_le<uint32_t>(is);
  if (version != Checkpoint::kVersion) {
    throw IngestionError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const auto kind = detail::read_le<uint32_t>(is);
  if (kind > 1) throw IngestionError("unknown checkpoint kind " + std::to_string(kind));
  ck.kind = static_cast<CheckpointKind>(kind);
  ck.metadata = detail::read_string(is);
  const auto count = detail::read_le<uint32_t>(is);
  for (uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name = detail::read_string(is, 4096);
    const auto rank = detail::read_le<uint32_t>(is);
    if (rank > 8) throw IngestionError("tensor " + nt.name + ": rank " + std::to_string(rank) + " too large");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<int64_t>(detail::read_le<uint64_t>(is));
    std::vector<float> values(static_cast<size_t>(shape_numel(shape)));
    for (auto& v : values) v = detail::read_f32(is);
    nt.value = Tensor::from(std::span<const float>(values), shape);
    ck.tensors.push_back(std::move(nt));
  }
  return ck;
}

}  // namespace viact
