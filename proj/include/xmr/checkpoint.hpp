#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xmr/binary_io.hpp"
#include "xmr/encoder.hpp"

namespace xmr {

// Checkpoint layout (little-endian), see docs/FORMATS.md:
//   "XMRCKPT1" | u32 version | u32 scalar bytes (8)
//   u64 vocab, hidden, bottleneck, layers, output_dim | u8 stage
//   u32 language count, then per language: u32 len, name bytes, u8 post_hoc
//   float64 parameter blocks in parameter_groups() order
inline constexpr std::string_view kCheckpointMagic = "XMRCKPT1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> serialize_checkpoint(const ModularEncoderParams<double>& p) {
  io::Writer w;
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(sizeof(double));
  w.u64(p.shape.vocab_size);
  w.u64(p.shape.hidden);
  w.u64(p.shape.bottleneck);
  w.u64(p.shape.layers);
  w.u64(p.shape.output_dim);
  w.u8(static_cast<std::uint8_t>(p.stage));
  w.u32(static_cast<std::uint32_t>(p.adapters.size()));
  for (const auto& lang : p.adapters) {
    w.string(lang.language);
    w.u8(lang.post_hoc ? 1 : 0);
  }
  for (const auto& g : parameter_groups(p)) w.array(g.values);
  return w.buffer();
}

inline ModularEncoderParams<double> deserialize_checkpoint(std::span<const std::uint8_t> data,
                                                           const std::string& source = "checkpoint") {
  io::Reader r(data, source);
  r.expect_magic(kCheckpointMagic);
  const auto version = r.u32();
  require(version == kCheckpointVersion, ErrorCode::Format,
          source + ": unsupported checkpoint version " + std::to_string(version));
  require(r.u32() == sizeof(double), ErrorCode::Format, source + ": expected float64 parameters");
  EncoderShape shape;
  shape.vocab_size = r.u64();
  shape.hidden = r.u64();
  shape.bottleneck = r.u64();
  shape.layers = r.u64();
  shape.output_dim = r.u64();
  shape.validate();
  const auto stage = r.u8();
  require(stage <= static_cast<std::uint8_t>(Stage::Extend), ErrorCode::Format, source + ": bad stage");
  const auto n_lang = r.u32();
  std::vector<std::pair<Language, bool>> langs;
  for (std::uint32_t i = 0; i < n_lang; ++i) {
    auto name = r.string();
    const bool post_hoc = r.u8() != 0;
    langs.emplace_back(std::move(name), post_hoc);
  }

  auto p = init_params<double>(shape, {}, 0);
  for (const auto& [name, post_hoc] : langs) {
    add_language(p, name, 0);
    p.adapters.back().post_hoc = post_hoc;
  }
  p.stage = static_cast<Stage>(stage);
  for (auto& g : parameter_groups(p)) r.array(g.values);
  r.expect_end();
  return p;
}

inline void save_checkpoint(const ModularEncoderParams<double>& p, const std::filesystem::path& path) {
  io::write_file(path, serialize_checkpoint(p));
}

inline ModularEncoderParams<double> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  return deserialize_checkpoint(bytes, path.string());
}

}  // namespace xmr
