// SPDX-License-Identifier: Apache-2.0
#include "bgic/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "bgic/errors.hpp"

namespace bgic {

namespace {

constexpr char kMagic[4] = {'B', 'G', 'F', 'W'};
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

void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw FormatError("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw FormatError("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

double read_f64(std::istream& in) {
  std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

std::string read_string(std::istream& in) {
  const std::uint64_t len = read_u64(in);
  if (len > (1u << 20)) throw FormatError("checkpoint: implausible string length");
  std::string s(len, '\0');
  in.read(s.data(), static_cast<std::streamsize>(len));
  if (!in) throw FormatError("checkpoint: truncated file");
  return s;
}

CheckpointMeta read_header(std::istream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic in '" + path + "'");
  }
  const std::uint32_t version = read_u32(in);
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  CheckpointMeta meta;
  meta.stage = read_u32(in);
  meta.seed = read_u64(in);
  meta.config_json = read_string(in);
  meta.roles.backbone_angles = read_u32(in);
  meta.roles.backbone_dihedrals = read_u32(in);
  meta.roles.sidechain_dihedrals = read_u32(in);
  meta.roles.linear = read_u32(in);
  meta.parameter_count = read_u64(in);
  return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, SplitFlow& flow, std::uint32_t stage,
                     std::uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
  out.write(kMagic, 4);
  write_u32(out, kVersion);
  write_u32(out, stage);
  write_u64(out, seed);
  write_string(out, flow.config().to_json_string());
  const RoleLayout roles = RoleLayout::from_layout(flow.layout());
  write_u32(out, roles.backbone_angles);
  write_u32(out, roles.backbone_dihedrals);
  write_u32(out, roles.sidechain_dihedrals);
  write_u32(out, roles.linear);
  const auto params = flow.parameters();
  write_u64(out, params.size());
  for (const ad::Parameter* p : params) {
    write_string(out, p->name);
    write_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) write_u64(out, d);
    for (double v : p->value.data()) write_f64(out, v);
  }
  if (!out) throw FormatError("checkpoint: write failed for '" + path + "'");
}

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  return read_header(in, path);
}

std::unique_ptr<SplitFlow> load_checkpoint(const std::string& path,
                                           const CoordinateLayout& layout,
                                           CheckpointMeta* meta_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
  CheckpointMeta meta = read_header(in, path);
  if (meta.roles != RoleLayout::from_layout(layout)) {
    throw ConfigError("checkpoint '" + path + "' does not match the coordinate layout");
  }
  SplitFlowConfig config = SplitFlowConfig::from_json_string(meta.config_json);
  auto flow = build_split_flow(layout, config, meta.seed);
  const auto params = flow->parameters();
  if (params.size() != meta.parameter_count) {
    throw ConfigError("checkpoint '" + path + "' parameter table does not match architecture");
  }
  for (ad::Parameter* p : params) {
    const std::string name = read_string(in);
    if (name != p->name) {
      throw ConfigError("checkpoint parameter order mismatch: expected '" + p->name +
                        "', found '" + name + "'");
    }
    const std::uint32_t rank = read_u32(in);
    ad::Shape shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = read_u64(in);
    if (shape != p->value.shape()) {
      throw ConfigError("checkpoint parameter '" + name + "' has unexpected shape");
    }
    for (double& v : p->value.data()) v = read_f64(in);
  }
  if (meta_out) *meta_out = meta;
  return flow;
}

}  // namespace bgic
