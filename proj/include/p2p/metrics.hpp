// SPDX-License-Identifier: Apache-2.0
//
// Frame similarity metrics and the sample-set aggregates built on them.
//
// Aggregates take a set of generated sequences for one test sequence:
//   S-CPC  mean over samples of metric(generated end frame, targeted end frame)
//   S-Best best over samples of the sample's mean per-frame score
//   S-Div  spread of the samples around the ground truth
// Per-sample scores average over the generated frames t = 2..T; frame 1 is
// the given start frame and is identical in every sample.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2p/errors.hpp"

namespace p2p {

using Frame = std::vector<double>;
using FrameSequence = std::vector<Frame>;

enum class MetricKind { kSSIM, kPSNR, kMSE };

inline std::string to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::kSSIM: return "ssim";
    case MetricKind::kPSNR: return "psnr";
    case MetricKind::kMSE: return "mse";
  }
  return "?";
}

inline MetricKind parse_metric_kind(const std::string& name) {
  if (name == "ssim" || name == "SSIM") return MetricKind::kSSIM;
  if (name == "psnr" || name == "PSNR") return MetricKind::kPSNR;
  if (name == "mse" || name == "MSE") return MetricKind::kMSE;
  throw std::invalid_argument("unknown metric kind '" + name + "'");
}

/// Larger is better for SSIM and PSNR, smaller for MSE.
inline bool higher_is_better(MetricKind kind) { return kind != MetricKind::kMSE; }

inline constexpr double kPsnrCeiling = 100.0;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

namespace detail {

inline void require_equal_size(std::span<const double> a, std::span<const double> b, const char* op) {
  if (a.size() != b.size() || a.empty()) {
    throw DimensionError(std::string(op) + ": frames of size " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  }
}

}  // namespace detail

inline double mse(std::span<const double> a, std::span<const double> b) {
  detail::require_equal_size(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

/// 10·log10(range² / mse), capped at 100 dB for identical frames.
inline double psnr(std::span<const double> a, std::span<const double> b, double range = 1.0) {
  const double e = mse(a, b);
  if (e == 0.0) return kPsnrCeiling;
  return std::min(kPsnrCeiling, 10.0 * std::log10(range * range / e));
}

/// SSIM of one window given its statistics.
inline double ssim_from_stats(double mean_a, double mean_b, double var_a, double var_b, double cov, double range = 1.0) {
  const double c1 = (kSsimK1 * range) * (kSsimK1 * range);
  const double c2 = (kSsimK2 * range) * (kSsimK2 * range);
  return ((2.0 * mean_a * mean_b + c1) * (2.0 * cov + c2)) /
         ((mean_a * mean_a + mean_b * mean_b + c1) * (var_a + var_b + c2));
}

/// Single-window SSIM over the whole frame (the mode used for vector data).
inline double ssim(std::span<const double> a, std::span<const double> b, double range = 1.0) {
  detail::require_equal_size(a, b, "ssim");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0.0, vb = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
    cov += (a[i] - ma) * (b[i] - mb);
  }
  return ssim_from_stats(ma, mb, va / n, vb / n, cov / n, range);
}

/// Mean SSIM over all square windows of a rows x cols grid (uniform weights).
/// A window at least as large as the grid reduces to the global form.
inline double ssim_grid(std::span<const double> a, std::span<const double> b, std::size_t rows, std::size_t cols,
                        std::size_t window = 7, double range = 1.0) {
  detail::require_equal_size(a, b, "ssim");
  if (rows * cols != a.size()) throw DimensionError("ssim: grid shape does not match frame size");
  const std::size_t wr = std::min(window, rows), wc = std::min(window, cols);
  if (wr == 0 || wc == 0) throw DimensionError("ssim: empty window");
  if (wr == rows && wc == cols) return ssim(a, b, range);
  double total = 0.0;
  std::size_t windows = 0;
  std::vector<double> wa, wb;
  for (std::size_t r = 0; r + wr <= rows; ++r) {
    for (std::size_t c = 0; c + wc <= cols; ++c) {
      wa.clear();
      wb.clear();
      for (std::size_t i = 0; i < wr; ++i)
        for (std::size_t j = 0; j < wc; ++j) {
          wa.push_back(a[(r + i) * cols + c + j]);
          wb.push_back(b[(r + i) * cols + c + j]);
        }
      total += ssim(wa, wb, range);
      ++windows;
    }
  }
  return total / static_cast<double>(windows);
}

inline double frame_metric(MetricKind kind, std::span<const double> a, std::span<const double> b) {
  switch (kind) {
    case MetricKind::kSSIM: return ssim(a, b);
    case MetricKind::kPSNR: return psnr(a, b);
    case MetricKind::kMSE: return mse(a, b);
  }
  throw std::invalid_argument("unknown metric kind");
}

namespace detail {

inline void check_samples(const std::vector<FrameSequence>& samples, const char* op) {
  if (samples.empty()) throw std::invalid_argument(std::string(op) + ": no samples");
  for (const auto& s : samples) {
    if (s.size() != samples.front().size() || s.empty()) {
      throw DimensionError(std::string(op) + ": samples differ in length");
    }
  }
}

inline void check_against(const std::vector<FrameSequence>& samples, const FrameSequence& truth, const char* op) {
  check_samples(samples, op);
  if (truth.size() != samples.front().size()) {
    throw DimensionError(std::string(op) + ": ground truth length " + std::to_string(truth.size()) +
                         " differs from sample length " + std::to_string(samples.front().size()));
  }
}

inline double population_variance(std::span<const double> values) {
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double s = 0.0;
  for (double v : values) s += (v - m) * (v - m);
  return s / static_cast<double>(values.size());
}

}  // namespace detail

/// Mean metric over generated frames 2..T (all frames when T == 1).
inline double sequence_score(const FrameSequence& sample, const FrameSequence& truth, MetricKind kind) {
  if (sample.size() != truth.size() || sample.empty()) throw DimensionError("sequence_score: length mismatch");
  const std::size_t first = sample.size() > 1 ? 1 : 0;
  double s = 0.0;
  for (std::size_t t = first; t < sample.size(); ++t) s += frame_metric(kind, sample[t], truth[t]);
  return s / static_cast<double>(sample.size() - first);
}

inline double s_cpc(const std::vector<FrameSequence>& samples, std::span<const double> target_end, MetricKind kind) {
  detail::check_samples(samples, "s_cpc");
  double s = 0.0;
  for (const auto& sample : samples) s += frame_metric(kind, sample.back(), target_end);
  return s / static_cast<double>(samples.size());
}

inline double s_best(const std::vector<FrameSequence>& samples, const FrameSequence& truth, MetricKind kind) {
  detail::check_against(samples, truth, "s_best");
  double best = higher_is_better(kind) ? -std::numeric_limits<double>::infinity()
                                       : std::numeric_limits<double>::infinity();
  for (const auto& sample : samples) {
    const double score = sequence_score(sample, truth, kind);
    best = higher_is_better(kind) ? std::max(best, score) : std::min(best, score);
  }
  return best;
}

/// SSIM/PSNR: population variance of per-sample scores. MSE: mean over
/// coordinates of the across-sample population variance of (x̂ - x).
inline double s_div(const std::vector<FrameSequence>& samples, const FrameSequence& truth, MetricKind kind) {
  detail::check_against(samples, truth, "s_div");
  if (samples.size() < 2) throw std::invalid_argument("s_div needs at least 2 samples");
  if (kind != MetricKind::kMSE) {
    std::vector<double> scores;
    for (const auto& sample : samples) scores.push_back(sequence_score(sample, truth, kind));
    return detail::population_variance(scores);
  }
  const std::size_t first = truth.size() > 1 ? 1 : 0;
  double total = 0.0;
  std::size_t coords = 0;
  std::vector<double> diffs(samples.size());
  for (std::size_t t = first; t < truth.size(); ++t) {
    for (std::size_t i = 0; i < truth[t].size(); ++i) {
      for (std::size_t s = 0; s < samples.size(); ++s) diffs[s] = samples[s][t].at(i) - truth[t][i];
      total += detail::population_variance(diffs);
      ++coords;
    }
  }
  return total / static_cast<double>(coords);
}

/// S-Div restricted to one timestep (0-based index).
inline double s_div_at(const std::vector<FrameSequence>& samples, const FrameSequence& truth, std::size_t t,
                       MetricKind kind) {
  detail::check_against(samples, truth, "s_div_at");
  if (samples.size() < 2) throw std::invalid_argument("s_div needs at least 2 samples");
  if (t >= truth.size()) throw std::out_of_range("timestep beyond sequence length");
  std::vector<double> values(samples.size());
  if (kind != MetricKind::kMSE) {
    for (std::size_t s = 0; s < samples.size(); ++s) values[s] = frame_metric(kind, samples[s][t], truth[t]);
    return detail::population_variance(values);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < truth[t].size(); ++i) {
    for (std::size_t s = 0; s < samples.size(); ++s) values[s] = samples[s][t].at(i) - truth[t][i];
    total += detail::population_variance(values);
  }
  return total / static_cast<double>(truth[t].size());
}

/// Best per-frame score at one timestep (0-based index).
inline double s_best_at(const std::vector<FrameSequence>& samples, const FrameSequence& truth, std::size_t t,
                        MetricKind kind) {
  detail::check_against(samples, truth, "s_best_at");
  double best = higher_is_better(kind) ? -std::numeric_limits<double>::infinity()
                                       : std::numeric_limits<double>::infinity();
  for (const auto& sample : samples) {
    const double v = frame_metric(kind, sample[t], truth[t]);
    best = higher_is_better(kind) ? std::max(best, v) : std::min(best, v);
  }
  return best;
}

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;  // 95% normal-approximation half width
};

/// mean ± 1.96·s/√n with the sample (n-1) standard deviation.
inline Interval confidence_interval(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("confidence interval needs at least 2 values");
  const double n = static_cast<double>(values.size());
  double m = 0.0;
  for (double v : values) m += v;
  m /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  const double sd = std::sqrt(ss / (n - 1.0));
  return {m, 1.96 * sd / std::sqrt(n)};
}

}  // namespace p2p
