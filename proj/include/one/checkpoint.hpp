#pragma once

// Binary checkpoint format, little-endian throughout:
//
//   "ONECKPT1"  magic, 8 bytes
//   u32         format version (1)
//   u8          kind: 0 = multi-branch model, 1 = stripped single net
//   u8          no_gating flag
//   u8          no_sharing flag
//   u8          trainer state present flag
//   u64         FNV-1a hash of the architecture description
//   u32         m (auxiliary branch count, 0 for single nets)
//   u32         class count
//   u32 + u32[] input feature dims
//   str         trunk block spec          (str = u32 length + bytes)
//   str         branch block spec
//   u32 + blobs named tensors: str name, u64 element count, f32[] data
//   [trainer]   u32 next_epoch, u32 + blobs momentum buffers
//
// Parameter and buffer bytes round-trip exactly; loading rebuilds the model
// from the header and overwrites every named tensor, rejecting files with
// missing, unknown, or mis-sized entries.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "one/model.hpp"

namespace one {

struct TrainerState {
  int next_epoch = 0;
  std::vector<std::pair<std::string, std::vector<float>>> velocities;
};

enum class CheckpointKind : std::uint8_t { Multi = 0, Single = 1 };

struct CheckpointMeta {
  CheckpointKind kind;
  ModelOptions options;
  bool has_trainer_state = false;
  std::uint64_t arch_hash = 0;
  int m = 0;
  int classes = 0;
  FeatDims input_dims;
  std::string trunk_spec, branch_spec;
};

// Stable hash of the architecture description. Two checkpoints with equal
// hashes were produced by structurally identical networks.
std::uint64_t arch_hash(CheckpointKind kind, const std::string& trunk_spec,
                        const std::string& branch_spec, int m, int classes,
                        const FeatDims& input_dims, const ModelOptions& opts);

void save_checkpoint(const std::string& path, MultiBranchModel& model,
                     const TrainerState* state = nullptr);
void save_checkpoint(const std::string& path, SingleNet& net, const TrainerState* state = nullptr);

// Header only, cheap.
CheckpointMeta peek_checkpoint(const std::string& path);

MultiBranchModel load_multi_checkpoint(const std::string& path, TrainerState* state = nullptr);
SingleNet load_single_checkpoint(const std::string& path, TrainerState* state = nullptr);

}  // namespace one
