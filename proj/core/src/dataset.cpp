// SPDX-License-Identifier: Apache-2.0
#include "bgic/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "bgic/errors.hpp"

namespace bgic {

namespace {

constexpr char kMagic[4] = {'B', 'G', 'I', 'C'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("trajectory: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw FormatError("trajectory: truncated header");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

RoleLayout RoleLayout::from_layout(const CoordinateLayout& layout) {
  RoleLayout r;
  for (const CoordInfo& c : layout.coords) {
    switch (c.role) {
      case CoordRole::kBackboneAngle: ++r.backbone_angles; break;
      case CoordRole::kBackboneDihedral: ++r.backbone_dihedrals; break;
      case CoordRole::kSidechainDihedral: ++r.sidechain_dihedrals; break;
      default: ++r.linear; break;
    }
  }
  return r;
}

std::vector<double> TrajectoryDataset::frame(std::size_t i) const {
  const std::size_t w = width();
  if (i >= frame_count()) throw NumericError("trajectory frame index out of range");
  return std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(i * w),
                             values.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
}

void TrajectoryDataset::append(const std::vector<double>& frame) {
  if (frame.size() != width()) throw NumericError("trajectory frame has wrong width");
  values.insert(values.end(), frame.begin(), frame.end());
}

void TrajectoryDataset::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write trajectory file '" + path + "'");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u64(out, frame_count());
  write_u32(out, layout.total());
  write_u32(out, layout.backbone_angles);
  write_u32(out, layout.backbone_dihedrals);
  write_u32(out, layout.sidechain_dihedrals);
  write_u32(out, layout.linear);
  std::vector<unsigned char> payload(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &values[i], 8);
    for (int b = 0; b < 8; ++b) {
      payload[8 * i + static_cast<std::size_t>(b)] =
          static_cast<unsigned char>((bits >> (8 * b)) & 0xff);
    }
  }
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw FormatError("trajectory: write failed for '" + path + "'");
}

TrajectoryDataset TrajectoryDataset::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open trajectory file '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("trajectory: bad magic in '" + path + "'");
  }
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw FormatError("trajectory: unsupported version " + std::to_string(version));
  }
  const std::uint64_t frames = read_u64(in);
  const std::uint32_t width = read_u32(in);
  TrajectoryDataset ds;
  ds.layout.backbone_angles = read_u32(in);
  ds.layout.backbone_dihedrals = read_u32(in);
  ds.layout.sidechain_dihedrals = read_u32(in);
  ds.layout.linear = read_u32(in);
  if (ds.layout.total() != width) throw FormatError("trajectory: inconsistent role layout");
  ds.values.resize(frames * width);
  std::vector<unsigned char> payload(ds.values.size() * 8);
  in.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!in) throw FormatError("trajectory: truncated payload in '" + path + "'");
  for (std::size_t i = 0; i < ds.values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(payload[8 * i + static_cast<std::size_t>(b)]) << (8 * b);
    }
    std::memcpy(&ds.values[i], &bits, 8);
  }
  return ds;
}

TrajectoryDataset TrajectoryDataset::slice_frames(std::size_t begin, std::size_t end) const {
  if (begin > end || end > frame_count()) throw NumericError("trajectory slice out of range");
  TrajectoryDataset out;
  out.layout = layout;
  const std::size_t w = width();
  out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(begin * w),
                    values.begin() + static_cast<std::ptrdiff_t>(end * w));
  return out;
}

}  // namespace bgic
