#pragma once

#include "vmae/config.hpp"
#include "vmae/errors.hpp"
#include "vmae/pretrainer.hpp"

#include <filesystem>
#include <optional>

namespace vmae {

// Layout:
//   VMAE1\n
//   version <n>\n
//   index_bytes <n>\n
//   <index: `meta`, `config` and `tensor <name> <dtype> <rows> <cols> <offset>` lines, then `end`>
//   <tensor data, little-endian, offsets relative to the end of the index>
// Tensors are stored as f64 so a reload reproduces training bit for bit;
// f32 tensors are accepted on load.
inline constexpr int kCheckpointVersion = 1;

class CheckpointLoadError : public CheckpointError {
 public:
  enum class Kind { bad_magic, bad_version, truncated, malformed, shape_mismatch };
  CheckpointLoadError(Kind kind, const std::string& message) : CheckpointError(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Atomic: writes a temporary sibling and renames it over `path`.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);

// With `expected` set, the stored tensors must have the shapes `expected`
// implies; the first disagreeing tensor is named in the error.
TrainState load_checkpoint(const std::filesystem::path& path,
                           const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace vmae
