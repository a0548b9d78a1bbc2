// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout (little-endian):
//   "P2PCKPT\0" | u32 version | u32 flags (bit 0: end-frame conditioning) |
//   u64 D, Dh, Z, H, posterior layers, prior layers, generator layers |
//   u64 parameter count | f64 parameters in registration order |
//   u64 FNV-1a checksum of every preceding byte
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "p2p/binary_io.hpp"
#include "p2p/errors.hpp"
#include "p2p/model.hpp"

namespace p2p {

inline constexpr std::string_view kCheckpointMagic{"P2PCKPT\0", 8};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline Bytes encode_checkpoint(const P2PModel& model) {
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(model.conditioned() ? 1U : 0U);
  const ModelDims& d = model.dims();
  for (std::size_t v : {d.frame, d.feature, d.latent, d.hidden, d.posterior_layers, d.prior_layers, d.generator_layers}) {
    w.u64(v);
  }
  w.u64(model.parameters().total_size());
  for (const auto& p : model.parameters().entries())
    for (double v : p.value.data()) w.f64(v);
  const std::uint64_t checksum = fnv1a64(w.bytes());
  w.u64(checksum);
  return w.take();
}

/// Reads only the architecture header.
inline std::pair<ModelDims, bool> peek_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  r.expect(kCheckpointMagic);
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
  const bool conditioned = (r.u32("flags") & 1U) != 0;
  ModelDims d;
  d.frame = r.u64("D");
  d.feature = r.u64("Dh");
  d.latent = r.u64("Z");
  d.hidden = r.u64("H");
  d.posterior_layers = r.u64("posterior layers");
  d.prior_layers = r.u64("prior layers");
  d.generator_layers = r.u64("generator layers");
  return {d, conditioned};
}

/// Rebuilds a model. Rejects checksum failures and, when `expected` is given,
/// any architecture that differs from it.
inline P2PModel decode_checkpoint(std::span<const std::uint8_t> bytes, std::optional<ModelDims> expected = std::nullopt) {
  if (bytes.size() < 8) throw ParseError("checkpoint: truncated (" + std::to_string(bytes.size()) + " bytes)");
  const auto body = bytes.first(bytes.size() - 8);
  ByteReader tail(bytes.subspan(bytes.size() - 8), "checkpoint");
  if (tail.u64("checksum") != fnv1a64(body)) throw ParseError("checkpoint: checksum mismatch");

  const auto [dims, conditioned] = peek_checkpoint(body);
  if (expected && !(*expected == dims)) throw DimensionError("checkpoint architecture does not match the expected dims");
  dims.validate();
  P2PModel model(dims, conditioned, 0);
  ByteReader r(body, "checkpoint");
  r.expect(kCheckpointMagic);
  r.u32("version");
  r.u32("flags");
  for (int i = 0; i < 7; ++i) r.u64("dims");
  const std::uint64_t count = r.u64("parameter count");
  if (count != model.parameters().total_size()) {
    throw DimensionError("checkpoint holds " + std::to_string(count) + " parameters, architecture needs " +
                         std::to_string(model.parameters().total_size()));
  }
  for (auto& p : model.parameters().entries()) {
    Tensor value = p.value;
    for (double& v : value.mutable_data()) v = r.f64("parameter");
  }
  if (r.remaining() != 0) throw ParseError("checkpoint: trailing bytes at offset " + std::to_string(r.offset()));
  return model;
}

inline void save_checkpoint(const std::filesystem::path& path, const P2PModel& model) {
  write_file(path, encode_checkpoint(model));
}

inline P2PModel load_checkpoint(const std::filesystem::path& path, std::optional<ModelDims> expected = std::nullopt) {
  return decode_checkpoint(read_file(path), expected);
}

}  // namespace p2p
