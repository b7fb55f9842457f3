#pragma once

// Versioned little-endian binary checkpoint:
//
//   magic "SGLCKPT1" | u32 version | payload | u64 FNV-1a of everything before
//
// The payload holds the config hash, run seed, group state (per learner:
// id, seed, A, V, W, Adam moments and step, generator state) and the data
// stream's sampler positions.

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sgl/datasets.hpp"
#include "sgl/engine.hpp"

namespace sgl {

inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
  std::uint64_t config_hash = 0;
  std::uint64_t run_seed = 0;
  GroupState group;
  MinibatchSampler::State train;
  std::vector<MinibatchSampler::State> val;
  MinibatchSampler::State unlabeled;
  double best_val_loss = std::numeric_limits<double>::infinity();
  std::uint64_t steps_since_best = 0;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
// Throws CheckpointError on a bad magic, version, length or checksum, or when
// the parameter sizes do not fit `net`.
Checkpoint decode_checkpoint(const std::string& bytes, const Network& net);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
// Refuses a checkpoint whose config hash differs from `expected_hash`.
Checkpoint load_checkpoint(const std::filesystem::path& path, const Network& net,
                           std::optional<std::uint64_t> expected_hash);

}  // namespace sgl
