#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stackgen/tensor.hpp"

namespace stackgen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensorF {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// On-disk layout (all integers little-endian):
//   "CKPT" | u32 version
//   u32 config_len | config bytes (canonical key=value text)
//   u32 epoch (completed epochs)
//   u32 rng_len | rng state bytes
//   u32 entry_count
//   per entry: u16 name_len | name | u8 rank | u32 dims[rank] | f32 payload
// Entries are written sorted by name, so save -> load -> save is
// byte-identical.
struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string config_text;
  std::uint32_t epoch = 0;
  std::string rng_state;
  std::vector<NamedTensorF> entries;

  const NamedTensorF* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, Checkpoint ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies checkpoint entries into same-named tensors; missing or
// shape-mismatched entries raise errors naming the tensor.
template <typename Named>
void restore_named_tensors(const Checkpoint& ckpt, Named&& named, const std::string& what) {
  for (auto& [name, tensor] : named) {
    const NamedTensorF* e = ckpt.find(name);
    if (!e) throw FormatError(what + ": checkpoint is missing tensor '" + name + "'");
    if (e->shape != tensor.shape())
      throw ConfigError(what + ": tensor '" + name + "' has shape " + shape_str(e->shape) +
                        " but the model expects " + shape_str(tensor.shape()));
    std::copy(e->data.begin(), e->data.end(), tensor.data().begin());
  }
}

}  // namespace stackgen
