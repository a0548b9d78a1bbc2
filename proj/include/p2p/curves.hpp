// SPDX-License-Identifier: Apache-2.0
//
// Curve analyses over trained models. Each returns a table whose first
// column is the x value (or variant name) followed by (mean, ci95) pairs.
#pragma once

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "p2p/eval.hpp"
#include "p2p/trainer.hpp"

namespace p2p {

enum class CurveKind { kCpcVsLength, kDivThroughTime, kQualityThroughTime, kCpcWeightSweep };

inline std::string to_string(CurveKind k) {
  switch (k) {
    case CurveKind::kCpcVsLength: return "cpc_vs_length";
    case CurveKind::kDivThroughTime: return "div_through_time";
    case CurveKind::kQualityThroughTime: return "quality_through_time";
    case CurveKind::kCpcWeightSweep: return "cpc_weight_sweep";
  }
  return "?";
}

inline CurveKind parse_curve_kind(const std::string& name) {
  for (CurveKind k : {CurveKind::kCpcVsLength, CurveKind::kDivThroughTime, CurveKind::kQualityThroughTime,
                      CurveKind::kCpcWeightSweep}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown analysis '" + name +
                              "' (expected cpc_vs_length, div_through_time, quality_through_time or cpc_weight_sweep)");
}

struct CurveTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string to_csv() const {
    std::ostringstream os;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
      os << "\n";
    };
    line(header);
    for (const auto& r : rows) line(r);
    return os.str();
  }
};

struct NamedModel {
  std::string label;
  const P2PModel* model = nullptr;
};

/// One model of the CPC weight sweep.
struct SweepModel {
  bool on_posterior = false;
  double weight = 0.0;
  const P2PModel* model = nullptr;
};

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <typename T>
void require_increasing(const std::vector<T>& grid, const char* what) {
  if (grid.empty()) throw std::invalid_argument(std::string(what) + " grid is empty");
  for (std::size_t i = 1; i < grid.size(); ++i) {
    if (!(grid[i - 1] < grid[i])) throw std::invalid_argument(std::string(what) + " grid must be strictly increasing");
  }
}

inline void require_models(const std::vector<NamedModel>& models) {
  if (models.empty()) throw std::invalid_argument("no models given");
  for (const auto& m : models) {
    if (m.model == nullptr) throw std::invalid_argument("missing model '" + m.label + "'");
  }
}

inline std::vector<std::string> variant_header(const std::string& x, const std::vector<NamedModel>& models) {
  std::vector<std::string> h{x};
  for (const auto& m : models) {
    h.push_back(m.label);
    h.push_back(m.label + "_ci");
  }
  return h;
}

inline CurveTable profile(const std::vector<NamedModel>& models, const SequenceBatch& test, std::size_t length,
                          EvalOptions opts, bool diversity) {
  require_models(models);
  opts.with_reconstruction = false;
  if (diversity && opts.n_samples < 2) throw std::invalid_argument("diversity needs at least two samples");
  CurveTable table{variant_header("t", models), {}};
  table.rows.assign(length, {});
  for (std::size_t t = 0; t < length; ++t) table.rows[t].push_back(std::to_string(t + 1));
  for (const auto& m : models) {
    const MetricsReport r = evaluate(*m.model, test, length, opts);
    const auto& mean = diversity ? r.div_through_time : r.best_through_time;
    const auto& ci = diversity ? r.div_through_time_ci : r.best_through_time_ci;
    for (std::size_t t = 0; t < length; ++t) {
      table.rows[t].push_back(num(mean[t]));
      table.rows[t].push_back(num(ci[t]));
    }
  }
  return table;
}

}  // namespace detail

/// S-CPC of every model at each generation length; test sequences are the
/// first `n_test` of the dataset's test split generated at that length.
inline CurveTable cpc_vs_length(const std::vector<NamedModel>& models, const DatasetSpec& dataset, std::size_t n_test,
                                const std::vector<std::size_t>& lengths, EvalOptions opts) {
  detail::require_models(models);
  detail::require_increasing(lengths, "length");
  opts.with_reconstruction = false;
  CurveTable table{detail::variant_header("length", models), {}};
  for (std::size_t length : lengths) {
    const SequenceBatch test = dataset.generate(Split::kTest, 0, n_test, length);
    std::vector<std::string> row{std::to_string(length)};
    for (const auto& m : models) {
      const MetricsReport r = evaluate(*m.model, test, length, opts);
      row.push_back(detail::num(r.s_cpc.mean));
      row.push_back(detail::num(r.s_cpc.half_width));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// Per-timestep S-Div; one row per t = 1..length.
inline CurveTable div_through_time(const std::vector<NamedModel>& models, const SequenceBatch& test, std::size_t length,
                                   const EvalOptions& opts) {
  return detail::profile(models, test, length, opts, true);
}

/// Per-timestep S-Best; one row per t = 1..length.
inline CurveTable quality_through_time(const std::vector<NamedModel>& models, const SequenceBatch& test,
                                       std::size_t length, const EvalOptions& opts) {
  return detail::profile(models, test, length, opts, false);
}

/// S-Best of prior- and posterior-consistency variants; one row per variant
/// and one (mean, ci) column pair per weight.
inline CurveTable cpc_weight_sweep(const std::vector<SweepModel>& models, const SequenceBatch& test, std::size_t length,
                                   EvalOptions opts) {
  if (models.empty()) throw std::invalid_argument("no models given");
  std::map<bool, std::map<double, const P2PModel*>> grid;
  for (const auto& m : models) {
    if (m.model == nullptr) throw std::invalid_argument("missing sweep model");
    if (!grid[m.on_posterior].emplace(m.weight, m.model).second) throw std::invalid_argument("duplicate sweep entry");
  }
  std::vector<double> weights;
  for (const auto& [w, unused] : grid.begin()->second) weights.push_back(w);
  for (const auto& [path, by_weight] : grid) {
    std::vector<double> ws;
    for (const auto& [w, unused] : by_weight) ws.push_back(w);
    if (ws != weights) throw std::invalid_argument("prior and posterior variants must share one weight grid");
  }
  opts.with_reconstruction = false;
  CurveTable table{{"variant"}, {}};
  for (double w : weights) {
    table.header.push_back("w" + detail::num(w));
    table.header.push_back("w" + detail::num(w) + "_ci");
  }
  for (const auto& [on_posterior, by_weight] : grid) {
    std::vector<std::string> row{on_posterior ? "posterior" : "prior"};
    for (const auto& [w, model] : by_weight) {
      const MetricsReport r = evaluate(*model, test, length, opts);
      row.push_back(detail::num(r.s_best.mean));
      row.push_back(detail::num(r.s_best.half_width));
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace p2p
