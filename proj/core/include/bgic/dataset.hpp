// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bgic/coords.hpp"

namespace bgic {

// Counts per coordinate role in a stored frame vector. The coordinate order
// inside a frame is [backbone angles | backbone dihedrals | side-chain
// dihedrals | linear], matching CoordinateLayout.
struct RoleLayout {
  std::uint32_t backbone_angles = 0;
  std::uint32_t backbone_dihedrals = 0;
  std::uint32_t sidechain_dihedrals = 0;
  std::uint32_t linear = 0;

  std::uint32_t total() const {
    return backbone_angles + backbone_dihedrals + sidechain_dihedrals + linear;
  }
  bool operator==(const RoleLayout&) const = default;

  static RoleLayout from_layout(const CoordinateLayout& layout);
};

// Binary trajectory of reduced-coordinate frames, magic "BGIC", version 1,
// little-endian float64 payload.
class TrajectoryDataset {
 public:
  RoleLayout layout;
  std::vector<double> values;  // frame-major, frame_count * layout.total()

  std::size_t frame_count() const {
    return layout.total() == 0 ? 0 : values.size() / layout.total();
  }
  std::size_t width() const { return layout.total(); }

  std::vector<double> frame(std::size_t i) const;
  void append(const std::vector<double>& frame);

  void save(const std::string& path) const;
  static TrajectoryDataset load(const std::string& path);

  // Frames restricted to [begin, end).
  TrajectoryDataset slice_frames(std::size_t begin, std::size_t end) const;
};

}  // namespace bgic
