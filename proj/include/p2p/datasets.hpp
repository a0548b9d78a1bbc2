// SPDX-License-Identifier: Apache-2.0
//
// Synthetic low-dimensional sequence generators and the on-disk sequence file.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <array>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "p2p/binary_io.hpp"
#include "p2p/errors.hpp"
#include "p2p/rng.hpp"
#include "p2p/tensor.hpp"

namespace p2p {

/// Sequences of flat frames; sequence i holds length(i) * frame_dim values.
struct SequenceBatch {
  std::size_t frame_dim = 0;
  std::vector<std::vector<double>> sequences;

  std::size_t count() const { return sequences.size(); }
  std::size_t length(std::size_t i) const { return sequences.at(i).size() / frame_dim; }

  std::span<const double> frame(std::size_t i, std::size_t t) const {
    return std::span<const double>(sequences.at(i)).subspan(t * frame_dim, frame_dim);
  }

  void add(std::vector<double> seq) {
    if (frame_dim == 0 || seq.size() % frame_dim != 0) throw DimensionError("sequence size is not a multiple of D");
    sequences.push_back(std::move(seq));
  }

  bool operator==(const SequenceBatch&) const = default;
};

/// Frames t = first..first+length-1 of the selected sequences, one [rows x D]
/// tensor per timestep.
inline std::vector<Tensor> frame_window(const SequenceBatch& data, std::span<const std::size_t> rows, std::size_t first,
                                        std::size_t length) {
  std::vector<Tensor> frames;
  for (std::size_t t = 0; t < length; ++t) {
    Tensor f(Shape{rows.size(), data.frame_dim});
    auto d = f.mutable_data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (first + length > data.length(rows[r])) throw DimensionError("sequence shorter than requested window");
      const auto src = data.frame(rows[r], first + t);
      std::copy(src.begin(), src.end(), d.begin() + r * data.frame_dim);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

enum class Split { kTrain, kTest };

/// Per-sequence seeds. The top bit encodes the split, so train and test
/// seed ranges can never overlap.
inline std::uint64_t split_seed(Split split, std::uint64_t index, std::uint64_t base_seed) {
  constexpr std::uint64_t kTestBit = 1ULL << 63;
  const std::uint64_t h = mix_seed(mix_seed(base_seed) ^ index) & ~kTestBit;
  return split == Split::kTest ? (h | kTestBit) : h;
}

struct BouncingPointConfig {
  std::size_t n_points = 1;
  double speed_scale = 1.0;
  /// Per-axis speed magnitude range, in box widths per step.
  double min_speed = 0.05;
  double max_speed = 0.15;
  std::size_t length = 12;

  std::size_t frame_dim() const { return 2 * n_points; }
};

namespace detail {

inline double sample_speed(const BouncingPointConfig& cfg, Rng& rng) {
  return cfg.speed_scale * rng.uniform(cfg.min_speed, cfg.max_speed);
}

inline double random_sign(Rng& rng) { return rng.bernoulli(0.5) ? 1.0 : -1.0; }

}  // namespace detail

/// Points move in straight lines inside the unit square. When a point crosses a
/// wall its position is reflected back inside and its whole velocity vector is
/// re-sampled, pointing away from the wall that was hit.
inline std::vector<double> gen_bouncing_sequence(const BouncingPointConfig& cfg, Rng& rng) {
  if (cfg.n_points < 1 || cfg.n_points > 2) throw std::invalid_argument("n_points must be 1 or 2");
  const std::size_t dim = cfg.frame_dim();
  std::vector<double> pos(dim), vel(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    pos[i] = rng.uniform(0.0, 1.0);
    vel[i] = detail::random_sign(rng) * detail::sample_speed(cfg, rng);
  }
  std::vector<double> out;
  out.reserve(cfg.length * dim);
  for (std::size_t t = 0; t < cfg.length; ++t) {
    out.insert(out.end(), pos.begin(), pos.end());
    for (std::size_t p = 0; p < cfg.n_points; ++p) {
      bool hit = false;
      std::array<double, 2> inward{0.0, 0.0};
      for (std::size_t a = 0; a < 2; ++a) {
        double& x = pos[2 * p + a];
        x += vel[2 * p + a];
        if (x < 0.0) {
          x = -x;
          hit = true;
          inward[a] = 1.0;
        } else if (x > 1.0) {
          x = 2.0 - x;
          hit = true;
          inward[a] = -1.0;
        }
        x = std::clamp(x, 0.0, 1.0);
      }
      if (hit) {
        for (std::size_t a = 0; a < 2; ++a) {
          const double sign = inward[a] != 0.0 ? inward[a] : detail::random_sign(rng);
          vel[2 * p + a] = sign * detail::sample_speed(cfg, rng);
        }
      }
    }
  }
  return out;
}

inline SequenceBatch gen_bouncing(const BouncingPointConfig& cfg, std::size_t count, Rng& rng) {
  SequenceBatch batch{cfg.frame_dim(), {}};
  for (std::size_t i = 0; i < count; ++i) batch.add(gen_bouncing_sequence(cfg, rng));
  return batch;
}

/// Sequences first_index .. first_index+count-1 of a split; each sequence has its own seed.
inline SequenceBatch bouncing_split(const BouncingPointConfig& cfg, Split split, std::uint64_t first_index,
                                    std::size_t count, std::uint64_t base_seed) {
  SequenceBatch batch{cfg.frame_dim(), {}};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(split_seed(split, first_index + i, base_seed));
    batch.add(gen_bouncing_sequence(cfg, rng));
  }
  return batch;
}

/// Planar articulated chain rooted at the origin. Relative joint angles follow
/// a per-sequence oscillation (the "action regime") plus a random walk.
struct ToySkeletonConfig {
  std::size_t joints = 5;
  double noise = 0.02;  // random-walk step std, radians
  double min_freq = 0.02, max_freq = 0.12;  // cycles per frame
  double min_amp = 0.1, max_amp = 0.6;      // radians
  std::size_t length = 12;

  std::size_t frame_dim() const { return 2 * joints; }
};

inline std::vector<double> gen_skeleton_sequence(const ToySkeletonConfig& cfg, Rng& rng) {
  if (cfg.joints < 2) throw std::invalid_argument("a skeleton needs at least 2 joints");
  const std::size_t bones = cfg.joints - 1;
  const double reach = 0.95 / static_cast<double>(bones);
  std::vector<double> bone_len(bones), base(bones), amp(bones), freq(bones), phase(bones), walk(bones, 0.0);
  for (std::size_t j = 0; j < bones; ++j) {
    bone_len[j] = reach * rng.uniform(0.6, 1.0);
    base[j] = j == 0 ? rng.uniform(-std::numbers::pi, std::numbers::pi) : rng.uniform(-0.8, 0.8);
    amp[j] = cfg.max_amp > 0.0 ? rng.uniform(cfg.min_amp, cfg.max_amp) : 0.0;
    freq[j] = cfg.max_freq > 0.0 ? rng.uniform(cfg.min_freq, cfg.max_freq) : 0.0;
    phase[j] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  std::vector<double> out;
  out.reserve(cfg.length * cfg.frame_dim());
  for (std::size_t t = 0; t < cfg.length; ++t) {
    double x = 0.0, y = 0.0, angle = 0.0;
    out.push_back(x);
    out.push_back(y);
    for (std::size_t j = 0; j < bones; ++j) {
      if (t > 0 && cfg.noise > 0.0) walk[j] += cfg.noise * rng.normal();
      angle += base[j] + amp[j] * std::sin(2.0 * std::numbers::pi * freq[j] * static_cast<double>(t) + phase[j]) + walk[j];
      x += bone_len[j] * std::cos(angle);
      y += bone_len[j] * std::sin(angle);
      out.push_back(x);
      out.push_back(y);
    }
  }
  return out;
}

inline SequenceBatch gen_skeleton(const ToySkeletonConfig& cfg, std::size_t count, Rng& rng) {
  SequenceBatch batch{cfg.frame_dim(), {}};
  for (std::size_t i = 0; i < count; ++i) batch.add(gen_skeleton_sequence(cfg, rng));
  return batch;
}

inline SequenceBatch skeleton_split(const ToySkeletonConfig& cfg, Split split, std::uint64_t first_index,
                                    std::size_t count, std::uint64_t base_seed) {
  SequenceBatch batch{cfg.frame_dim(), {}};
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(split_seed(split, first_index + i, base_seed));
    batch.add(gen_skeleton_sequence(cfg, rng));
  }
  return batch;
}

// Sequence file layout (little-endian):
//   "P2PSEQ\0\0" | u32 version | u32 reserved | u64 D | u64 count |
//   u64 length[count] | f64 frames (sequence-major, then time, then feature)
inline constexpr std::string_view kSequenceMagic{"P2PSEQ\0\0", 8};
inline constexpr std::uint32_t kSequenceVersion = 1;

inline Bytes encode_sequences(const SequenceBatch& batch) {
  ByteWriter w;
  w.raw(kSequenceMagic);
  w.u32(kSequenceVersion);
  w.u32(0);
  w.u64(batch.frame_dim);
  w.u64(batch.count());
  for (std::size_t i = 0; i < batch.count(); ++i) w.u64(batch.length(i));
  for (const auto& seq : batch.sequences)
    for (double v : seq) w.f64(v);
  return w.take();
}

inline SequenceBatch decode_sequences(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "sequence file");
  r.expect(kSequenceMagic);
  const std::uint32_t version = r.u32("version");
  if (version != kSequenceVersion) {
    throw ParseError("sequence file: unsupported version " + std::to_string(version) + " at offset 8");
  }
  r.u32("reserved");
  SequenceBatch batch;
  batch.frame_dim = r.u64("frame dimension");
  const std::uint64_t count = r.u64("sequence count");
  if (batch.frame_dim == 0 || batch.frame_dim > bytes.size()) {
    throw ParseError("sequence file: invalid frame dimension " + std::to_string(batch.frame_dim) + " at offset 16");
  }
  r.need_items(count, 8, "length table");
  std::vector<std::uint64_t> lengths(count);
  for (auto& len : lengths) len = r.u64("length");
  std::uint64_t values = 0;
  for (auto len : lengths) {
    r.need_items(len, 8 * batch.frame_dim, "payload");
    values += len * batch.frame_dim;
    r.need_items(values, 8, "payload");
  }
  for (auto len : lengths) {
    std::vector<double> seq(len * batch.frame_dim);
    for (double& v : seq) v = r.f64("frame value");
    batch.sequences.push_back(std::move(seq));
  }
  if (r.remaining() != 0) throw ParseError("sequence file: trailing bytes at offset " + std::to_string(r.offset()));
  return batch;
}

inline void write_sequences(const std::filesystem::path& path, const SequenceBatch& batch) {
  write_file(path, encode_sequences(batch));
}

inline SequenceBatch read_sequences(const std::filesystem::path& path) { return decode_sequences(read_file(path)); }

}  // namespace p2p
