// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "p2p/checkpoint.hpp"
#include "p2p/datasets.hpp"
#include "p2p/errors.hpp"
#include "p2p/model.hpp"
#include "p2p/objective.hpp"
#include "p2p/rng.hpp"
#include "p2p/tensor.hpp"

namespace p2p {

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moments shaped like the parameters they track.
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<double>> first;
  std::vector<std::vector<double>> second;
  std::uint64_t step = 0;

  AdamState(const ParameterSet& params, AdamConfig cfg) : config(cfg) {
    for (const auto& p : params.entries()) {
      first.emplace_back(p.value.size(), 0.0);
      second.emplace_back(p.value.size(), 0.0);
    }
  }
};

/// Bias-corrected Adam update using each parameter's accumulated grad.
/// Parameters without a grad buffer are treated as having zero gradient.
inline void adam_step(ParameterSet& params, AdamState& state) {
  const auto& entries = params.entries();
  if (entries.size() != state.first.size()) throw DimensionError("Adam state does not match the parameter set");
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (!entries[k].value.has_grad()) continue;
    for (double g : entries[k].value.grad()) {
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter '" + entries[k].name + "'");
    }
  }
  ++state.step;
  const AdamConfig& c = state.config;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor value = entries[k].value;
    auto w = value.mutable_data();
    const auto g = value.grad();
    const bool has = value.has_grad();
    auto& m = state.first[k];
    auto& v = state.second[k];
    if (m.size() != w.size()) throw DimensionError("Adam moment shape mismatch for '" + entries[k].name + "'");
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
    }
  }
}

/// Rescales all gradients so their joint L2 norm is at most max_norm. Returns the pre-clip norm.
inline double clip_grad_norm(ParameterSet& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.entries())
    for (double g : p.value.grad()) sq += g * g;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& p : params.entries()) {
      auto& grad = p.value.impl()->grad;
      for (double& g : grad) g *= factor;
    }
  }
  return norm;
}

struct LengthRange {
  std::size_t min = 10;
  std::size_t max = 14;
};

/// Uniform integer in [min, max].
inline std::size_t sample_training_length(const LengthRange& range, Rng& rng) {
  if (range.min < 2 || range.max < range.min) throw std::invalid_argument("invalid training length range");
  return static_cast<std::size_t>(rng.uniform_int(static_cast<long>(range.min), static_cast<long>(range.max)));
}

enum class Ablation { kBaseline, kC, kCA, kFull };

inline std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::kBaseline: return "baseline";
    case Ablation::kC: return "c";
    case Ablation::kCA: return "ca";
    case Ablation::kFull: return "full";
  }
  return "?";
}

inline Ablation parse_ablation(const std::string& name) {
  if (name == "baseline") return Ablation::kBaseline;
  if (name == "c") return Ablation::kC;
  if (name == "ca") return Ablation::kCA;
  if (name == "full") return Ablation::kFull;
  throw std::invalid_argument("unknown ablation '" + name + "' (expected baseline, c, ca or full)");
}

/// Enables the terms of one ablation rung, keeping the nominal weights of
/// the enabled terms and zeroing the rest:
///   baseline: learned prior only; c: + end conditioning and consistency;
///   ca: + alignment; full: + skip-frame training.
inline ObjectiveConfig apply_ablation(ObjectiveConfig nominal, Ablation ablation) {
  ObjectiveConfig cfg = nominal;
  const bool cond = ablation != Ablation::kBaseline;
  const bool align = ablation == Ablation::kCA || ablation == Ablation::kFull;
  const bool skip = ablation == Ablation::kFull;
  cfg.condition_on_end = cond;
  cfg.use_cpc = cond && nominal.cpc_weight > 0.0;
  cfg.cpc_weight = cfg.use_cpc ? nominal.cpc_weight : 0.0;
  cfg.use_align = align && nominal.align_weight > 0.0;
  cfg.align_weight = cfg.use_align ? nominal.align_weight : 0.0;
  cfg.use_skip = skip && nominal.skip_prob > 0.0;
  cfg.skip_prob = cfg.use_skip ? nominal.skip_prob : 0.0;
  if (!cfg.use_cpc) cfg.cpc_on_posterior = false;
  return cfg;
}

struct DatasetSpec {
  std::string kind = "bouncing";  // bouncing | skeleton
  std::size_t n_points = 1;
  double speed_scale = 1.0;
  std::size_t joints = 5;
  std::uint64_t seed = 1;
  std::size_t train_pool = 0;  // > 0: cycle through the first train_pool training sequences

  std::size_t frame_dim() const { return kind == "skeleton" ? 2 * joints : 2 * n_points; }

  /// Sequences first..first+count-1 of a split, each `length` frames long.
  SequenceBatch generate(Split split, std::uint64_t first, std::size_t count, std::size_t length) const {
    if (kind == "bouncing") {
      BouncingPointConfig c;
      c.n_points = n_points;
      c.speed_scale = speed_scale;
      c.length = length;
      return bouncing_split(c, split, first, count, seed);
    }
    if (kind == "skeleton") {
      ToySkeletonConfig c;
      c.joints = joints;
      c.length = length;
      return skeleton_split(c, split, first, count, seed);
    }
    throw std::invalid_argument("unknown dataset kind '" + kind + "'");
  }
};

struct RunConfig {
  DatasetSpec dataset;
  ModelDims dims;  // dims.frame is derived from the dataset
  ObjectiveConfig objective;  // nominal weights; the ablation decides which are active
  Ablation ablation = Ablation::kFull;
  double lr = 0.002;
  std::size_t batch_size = 16;
  std::size_t steps = 5000;
  LengthRange lengths;
  std::uint64_t seed = 7;
  double grad_clip = 5.0;
  std::size_t checkpoint_every = 1000;

  ModelDims model_dims() const {
    ModelDims d = dims;
    d.frame = dataset.frame_dim();
    return d;
  }
  ObjectiveConfig effective_objective() const { return apply_ablation(objective, ablation); }
};

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Canonical key = value rendering (also the input of the config digest).
inline std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  const auto b = [](bool v) { return v ? "true" : "false"; };
  os << "dataset = " << c.dataset.kind << "\n"
     << "n_points = " << c.dataset.n_points << "\n"
     << "speed_scale = " << detail::fmt_double(c.dataset.speed_scale) << "\n"
     << "joints = " << c.dataset.joints << "\n"
     << "data_seed = " << c.dataset.seed << "\n"
     << "train_pool = " << c.dataset.train_pool << "\n"
     << "feature_dim = " << c.dims.feature << "\n"
     << "latent_dim = " << c.dims.latent << "\n"
     << "hidden_dim = " << c.dims.hidden << "\n"
     << "beta = " << detail::fmt_double(c.objective.beta) << "\n"
     << "cpc_weight = " << detail::fmt_double(c.objective.cpc_weight) << "\n"
     << "align_weight = " << detail::fmt_double(c.objective.align_weight) << "\n"
     << "skip_prob = " << detail::fmt_double(c.objective.skip_prob) << "\n"
     << "cpc_on_posterior = " << b(c.objective.cpc_on_posterior) << "\n"
     << "cpc_rollout = " << to_string(c.objective.cpc_rollout) << "\n"
     << "ablation = " << to_string(c.ablation) << "\n"
     << "lr = " << detail::fmt_double(c.lr) << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "steps = " << c.steps << "\n"
     << "min_length = " << c.lengths.min << "\n"
     << "max_length = " << c.lengths.max << "\n"
     << "seed = " << c.seed << "\n"
     << "grad_clip = " << detail::fmt_double(c.grad_clip) << "\n"
     << "checkpoint_every = " << c.checkpoint_every << "\n";
  return os.str();
}

inline std::uint64_t config_digest(const RunConfig& c) { return fnv1a64(to_text(c)); }

inline std::string hex_digest(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

/// Applies one key/value pair. Throws std::invalid_argument on an unknown key or bad value.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  std::size_t used = 0;
  auto as_size = [&] {
    if (value.empty() || value[0] == '-') throw std::invalid_argument("expected a non-negative integer");
    const auto v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::size_t>(v);
  };
  auto as_double = [&] {
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  };
  auto as_bool = [&] {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw std::invalid_argument("expected true or false");
  };
  const std::map<std::string, std::function<void()>> setters = {
      {"dataset", [&] { c.dataset.kind = value; }},
      {"n_points", [&] { c.dataset.n_points = as_size(); }},
      {"speed_scale", [&] { c.dataset.speed_scale = as_double(); }},
      {"joints", [&] { c.dataset.joints = as_size(); }},
      {"data_seed", [&] { c.dataset.seed = as_size(); }},
      {"train_pool", [&] { c.dataset.train_pool = as_size(); }},
      {"feature_dim", [&] { c.dims.feature = as_size(); }},
      {"latent_dim", [&] { c.dims.latent = as_size(); }},
      {"hidden_dim", [&] { c.dims.hidden = as_size(); }},
      {"beta", [&] { c.objective.beta = as_double(); }},
      {"cpc_weight", [&] { c.objective.cpc_weight = as_double(); }},
      {"align_weight", [&] { c.objective.align_weight = as_double(); }},
      {"skip_prob", [&] { c.objective.skip_prob = as_double(); }},
      {"cpc_on_posterior", [&] { c.objective.cpc_on_posterior = as_bool(); }},
      {"cpc_rollout", [&] { c.objective.cpc_rollout = parse_end_rollout(value); }},
      {"ablation", [&] { c.ablation = parse_ablation(value); }},
      {"lr", [&] { c.lr = as_double(); }},
      {"batch_size", [&] { c.batch_size = as_size(); }},
      {"steps", [&] { c.steps = as_size(); }},
      {"min_length", [&] { c.lengths.min = as_size(); }},
      {"max_length", [&] { c.lengths.max = as_size(); }},
      {"seed", [&] { c.seed = as_size(); }},
      {"grad_clip", [&] { c.grad_clip = as_double(); }},
      {"checkpoint_every", [&] { c.checkpoint_every = as_size(); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw std::invalid_argument("unknown key '" + key + "'");
  it->second();
}

inline void validate(const RunConfig& c) {
  if (c.lengths.min < 2 || c.lengths.max < c.lengths.min) throw ContractError("length range must satisfy 2 <= min <= max");
  if (c.batch_size == 0) throw ContractError("batch_size must be positive");
  if (!(c.lr > 0.0)) throw ContractError("lr must be positive");
  if (c.dataset.kind != "bouncing" && c.dataset.kind != "skeleton") throw ContractError("unknown dataset kind");
  c.model_dims().validate();
  c.effective_objective().validate();
}

/// Parses `key = value` lines; '#' starts a comment. Errors name the line.
inline RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config line " + std::to_string(number) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      set_config_value(c, key, value);
    } catch (const std::exception& e) {
      throw ParseError("config line " + std::to_string(number) + ": " + key + ": " + e.what());
    }
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline constexpr const char* kTelemetryHeader = "step,recon,kl,align,cpc,total";

struct TrainOutputs {
  std::filesystem::path checkpoint;  // final checkpoint; empty to skip writing
  std::filesystem::path telemetry;   // CSV log; empty to skip
};

struct TelemetryRow {
  std::size_t step = 0;
  LossBreakdown losses;
};

/// Raised when training meets a non-finite loss or gradient; the last
/// periodic checkpoint on disk is left untouched.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::size_t step) : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

/// One optimization step on a fresh batch; returns the loss breakdown.
inline LossBreakdown train_step(P2PModel& model, AdamState& adam, const RunConfig& cfg, const ObjectiveConfig& objective,
                                std::size_t step, Rng& rng) {
  const std::size_t length = sample_training_length(cfg.lengths, rng);
  SequenceBatch data{cfg.dataset.frame_dim(), {}};
  if (cfg.dataset.train_pool == 0) {
    data = cfg.dataset.generate(Split::kTrain, step * cfg.batch_size, cfg.batch_size, length);
  } else {
    for (std::size_t i = 0; i < cfg.batch_size; ++i) {
      const std::uint64_t index = (step * cfg.batch_size + i) % cfg.dataset.train_pool;
      data.add(cfg.dataset.generate(Split::kTrain, index, 1, length).sequences.front());
    }
  }
  std::vector<std::size_t> rows(cfg.batch_size);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const std::vector<Tensor> frames = frame_window(data, rows, 0, length);
  const auto masks = objective.use_skip ? skip_masks(length, cfg.batch_size, objective.skip_prob, rng)
                                        : all_kept_masks(length, cfg.batch_size);
  Tape tape;
  TapeScope scope(tape);
  model.parameters().zero_grad();
  const GenerationCondition cond = make_condition(model, frames.back(), length);
  const RolloutRecord record = train_unroll(model, frames, cond, masks, rng, objective.end_rollout());
  LossBreakdown losses = full_objective(record, objective);
  backward(losses.objective);
  clip_grad_norm(model.parameters(), cfg.grad_clip);
  adam_step(model.parameters(), adam);
  return losses;
}

/// Runs the training loop; `on_step` (optional) observes every telemetry row.
inline P2PModel train(const RunConfig& cfg, const TrainOutputs& outputs = {},
                      const std::function<void(const TelemetryRow&)>& on_step = {}) {
  validate(cfg);
  const ObjectiveConfig objective = cfg.effective_objective();
  P2PModel model(cfg.model_dims(), objective.condition_on_end, cfg.seed);
  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  AdamState adam(model.parameters(), adam_cfg);
  Rng rng(mix_seed(cfg.seed) ^ 0x5eedULL);

  std::ofstream log;
  if (!outputs.telemetry.empty()) {
    if (outputs.telemetry.has_parent_path()) std::filesystem::create_directories(outputs.telemetry.parent_path());
    log.open(outputs.telemetry, std::ios::trunc);
    if (!log) throw std::runtime_error("cannot open telemetry file " + outputs.telemetry.string());
    log << kTelemetryHeader << "\n" << std::setprecision(17);
  }

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    LossBreakdown losses;
    try {
      losses = train_step(model, adam, cfg, objective, step, rng);
    } catch (const NonFiniteError& e) {
      throw TrainingAborted("training aborted at step " + std::to_string(step) + ": " + e.what(), step);
    }
    if (log) {
      log << step << ',' << losses.recon << ',' << losses.kl << ',' << losses.align << ',' << losses.cpc << ','
          << losses.total << '\n';
    }
    if (on_step) on_step({step, losses});
    if (!outputs.checkpoint.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) {
      save_checkpoint(outputs.checkpoint, model);
    }
  }
  if (!outputs.checkpoint.empty()) save_checkpoint(outputs.checkpoint, model);
  return model;
}

}  // namespace p2p
