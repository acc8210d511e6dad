// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "bgic/dataset.hpp"
#include "bgic/split_flow.hpp"

namespace bgic {

// Checkpoint header: magic "BGFW", version, training stage, build seed and
// an architecture config echo, followed by parameter tensors in canonical
// module order. Same build + same parameters = byte-identical file.
struct CheckpointMeta {
  std::uint32_t stage = 0;  // 0 = initialization, N = after stage N
  std::uint64_t seed = 0;
  std::string config_json;
  RoleLayout roles;
  std::uint64_t parameter_count = 0;
};

void save_checkpoint(const std::string& path, SplitFlow& flow, std::uint32_t stage,
                     std::uint64_t seed);

CheckpointMeta peek_checkpoint(const std::string& path);

// Rebuilds the architecture from the stored config/seed and restores the
// parameters. The layout must agree with the stored role counts.
std::unique_ptr<SplitFlow> load_checkpoint(const std::string& path,
                                           const CoordinateLayout& layout,
                                           CheckpointMeta* meta = nullptr);

}  // namespace bgic
