// SPDX-License-Identifier: Apache-2.0
//
// Evaluation protocol: for every test sequence, draw n prior samples
// bracketed by its first and last frame plus n posterior reconstructions,
// score them, and summarize per-sequence values with 95% intervals.
#pragma once

#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "p2p/datasets.hpp"
#include "p2p/metrics.hpp"
#include "p2p/model.hpp"
#include "p2p/rng.hpp"

namespace p2p {

struct EvalOptions {
  std::size_t n_samples = 100;
  MetricKind kind = MetricKind::kMSE;
  std::uint64_t seed = 1;
  bool with_reconstruction = true;
};

struct MetricsReport {
  MetricKind kind = MetricKind::kMSE;
  std::size_t n_samples = 0;
  std::size_t n_test_sequences = 0;
  std::size_t length = 0;
  Interval s_best;
  std::optional<Interval> s_div;  // absent when n_samples < 2
  Interval s_cpc;
  std::optional<Interval> r_best;
  /// Per-timestep S-Div and S-Best averaged over test sequences (index t-1).
  std::vector<double> div_through_time;
  std::vector<double> best_through_time;
  /// 95% half-widths of the two profiles across test sequences.
  std::vector<double> div_through_time_ci;
  std::vector<double> best_through_time_ci;
};

inline constexpr int kReportSchemaVersion = 1;

namespace detail {

inline std::vector<FrameSequence> batch_to_samples(const std::vector<Tensor>& frames) {
  std::vector<FrameSequence> samples(frames.front().rows());
  for (std::size_t s = 0; s < samples.size(); ++s)
    for (const Tensor& f : frames) samples[s].push_back(row_of(f, s));
  return samples;
}

inline Interval summarize(const std::vector<double>& values) {
  if (values.size() >= 2) return confidence_interval(values);
  return {values.empty() ? 0.0 : values.front(), 0.0};
}

}  // namespace detail

/// Draws n prior samples for one (start, end) pair and returns them as sequences.
inline std::vector<FrameSequence> draw_samples(const P2PModel& model, std::span<const double> start,
                                               std::span<const double> end, std::size_t length, std::size_t n, Rng& rng) {
  NoGradScope no_grad;
  return detail::batch_to_samples(sample_batch(model, replicate_rows(start, n), replicate_rows(end, n), length, rng));
}

inline std::vector<FrameSequence> draw_reconstructions(const P2PModel& model, const FrameSequence& truth, std::size_t n,
                                                       Rng& rng) {
  std::vector<Tensor> frames;
  for (const auto& f : truth) frames.push_back(replicate_rows(f, n));
  return detail::batch_to_samples(reconstruct_batch(model, frames, rng));
}

/// Best-of-n over posterior reconstructions.
inline double r_best(const P2PModel& model, const FrameSequence& truth, std::size_t n, Rng& rng, MetricKind kind) {
  return s_best(draw_reconstructions(model, truth, n, rng), truth, kind);
}

inline FrameSequence sequence_prefix(const SequenceBatch& data, std::size_t i, std::size_t length) {
  if (data.length(i) < length) throw DimensionError("test sequence shorter than the evaluation length");
  FrameSequence out;
  for (std::size_t t = 0; t < length; ++t) {
    const auto f = data.frame(i, t);
    out.emplace_back(f.begin(), f.end());
  }
  return out;
}

/// Evaluates on the first `length` frames of every test sequence. Each test
/// sequence gets its own rng stream derived from (seed, index).
inline MetricsReport evaluate(const P2PModel& model, const SequenceBatch& test, std::size_t length,
                              const EvalOptions& opts) {
  if (opts.n_samples == 0) throw std::invalid_argument("evaluation needs at least one sample");
  if (test.count() == 0) throw std::invalid_argument("empty test set");
  if (test.frame_dim != model.dims().frame) throw DimensionError("test data frame width does not match the model");
  MetricsReport report;
  report.kind = opts.kind;
  report.n_samples = opts.n_samples;
  report.n_test_sequences = test.count();
  report.length = length;
  std::vector<double> best, div, cpc, rbest;
  std::vector<std::vector<double>> div_t(length), best_t(length);
  for (std::size_t i = 0; i < test.count(); ++i) {
    const FrameSequence truth = sequence_prefix(test, i, length);
    Rng rng(mix_seed(opts.seed) ^ mix_seed(i + 1));
    const auto samples = draw_samples(model, truth.front(), truth.back(), length, opts.n_samples, rng);
    best.push_back(s_best(samples, truth, opts.kind));
    cpc.push_back(s_cpc(samples, truth.back(), opts.kind));
    if (opts.n_samples >= 2) div.push_back(s_div(samples, truth, opts.kind));
    for (std::size_t t = 0; t < length; ++t) {
      if (opts.n_samples >= 2) div_t[t].push_back(s_div_at(samples, truth, t, opts.kind));
      best_t[t].push_back(s_best_at(samples, truth, t, opts.kind));
    }
    if (opts.with_reconstruction) rbest.push_back(r_best(model, truth, opts.n_samples, rng, opts.kind));
  }
  for (std::size_t t = 0; t < length; ++t) {
    const Interval b = detail::summarize(best_t[t]);
    report.best_through_time.push_back(b.mean);
    report.best_through_time_ci.push_back(b.half_width);
    if (!div_t[t].empty()) {
      const Interval d = detail::summarize(div_t[t]);
      report.div_through_time.push_back(d.mean);
      report.div_through_time_ci.push_back(d.half_width);
    }
  }
  report.s_best = detail::summarize(best);
  report.s_cpc = detail::summarize(cpc);
  if (!div.empty()) report.s_div = detail::summarize(div);
  if (!rbest.empty()) report.r_best = detail::summarize(rbest);
  return report;
}

inline nlohmann::json interval_json(const std::optional<Interval>& v) {
  if (!v) return nullptr;
  return {{"mean", v->mean}, {"ci95", v->half_width}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return {
      {"schema_version", kReportSchemaVersion},
      {"metric", to_string(r.kind)},
      {"n_samples", r.n_samples},
      {"n_test_sequences", r.n_test_sequences},
      {"length", r.length},
      {"s_best", interval_json(r.s_best)},
      {"s_div", interval_json(r.s_div)},
      {"s_cpc", interval_json(r.s_cpc)},
      {"r_best", interval_json(r.r_best)},
      {"div_through_time", r.div_through_time},
      {"best_through_time", r.best_through_time},
      {"div_through_time_ci", r.div_through_time_ci},
      {"best_through_time_ci", r.best_through_time_ci},
  };
}

inline std::string csv_header() {
  return "schema_version,metric,n_samples,n_test_sequences,length,s_best,s_best_ci,s_div,s_div_ci,s_cpc,s_cpc_ci,r_best,"
         "r_best_ci";
}

inline std::string to_csv_row(const MetricsReport& r) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  auto pair = [&](const std::optional<Interval>& v) { return v ? num(v->mean) + "," + num(v->half_width) : std::string(","); };
  return std::to_string(kReportSchemaVersion) + "," + to_string(r.kind) + "," + std::to_string(r.n_samples) + "," +
         std::to_string(r.n_test_sequences) + "," + std::to_string(r.length) + "," + pair(r.s_best) + "," +
         pair(r.s_div) + "," + pair(r.s_cpc) + "," + pair(r.r_best);
}

}  // namespace p2p
