// SPDX-License-Identifier: Apache-2.0
//
// Loss terms of the training objective, written as quantities to minimize:
//
//   total = recon + beta * kl + align_weight * align + cpc_weight * cpc
//
// recon, kl and align are averaged over the kept (M_t = 1) predicted steps of
// each sequence and then over the batch. The consistency term compares the
// end frame generated from a prior-sampled z_T against the targeted end frame.
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/model.hpp"
#include "p2p/rng.hpp"
#include "p2p/tensor.hpp"

namespace p2p {

struct ObjectiveConfig {
  double beta = 1e-4;
  double cpc_weight = 100.0;
  double align_weight = 0.5;
  double skip_prob = 0.5;
  bool use_cpc = true;
  bool use_align = true;
  bool use_skip = true;
  bool condition_on_end = true;
  /// Route the consistency term through the posterior z_T instead of the prior.
  bool cpc_on_posterior = false;
  /// How the prior end frame is produced; kNone is not a valid choice here.
  EndFrameRollout cpc_rollout = EndFrameRollout::kTeacherForced;

  void validate() const {
    if (!(beta >= 0.0) || !(cpc_weight >= 0.0) || !(align_weight >= 0.0)) {
      throw ContractError("objective weights must be non-negative");
    }
    if (!(skip_prob >= 0.0 && skip_prob < 1.0)) throw ContractError("skip probability must lie in [0, 1)");
    if (use_cpc != (cpc_weight > 0.0)) throw ContractError("use_cpc must be set exactly when cpc_weight > 0");
    if (use_align != (align_weight > 0.0)) throw ContractError("use_align must be set exactly when align_weight > 0");
    if (use_skip != (skip_prob > 0.0)) throw ContractError("use_skip must be set exactly when skip_prob > 0");
    if (use_cpc && !condition_on_end) throw ContractError("the consistency term requires end-frame conditioning");
    if (cpc_rollout == EndFrameRollout::kNone) throw ContractError("cpc_rollout must name a rollout mode");
  }

  EndFrameRollout end_rollout() const {
    if (!use_cpc || cpc_on_posterior) return EndFrameRollout::kNone;
    return cpc_rollout;
  }
};

struct LossBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double align = 0.0;
  double cpc = 0.0;
  double total = 0.0;
  Tensor objective;  // differentiable total
};

namespace detail {

inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

/// Per-row mean squared error over the feature dimension, [batch].
inline Tensor row_mse(const Tensor& prediction, const Tensor& target) {
  detail::require_same(prediction, target, "reconstruction_loss");
  detail::require_matrix(prediction, "reconstruction_loss");
  return mean(square(prediction - target), 1);
}

/// Mean squared error per frame, averaged over the batch.
inline Tensor reconstruction_loss(const Tensor& prediction, const Tensor& target) {
  return mean(row_mse(prediction, target));
}

/// KL(q || p) of diagonal Gaussians summed over latent dimensions, [batch].
inline Tensor kl_rows(const Tensor& mean_q, const Tensor& logvar_q, const Tensor& mean_p, const Tensor& logvar_p) {
  detail::require_same(mean_q, logvar_q, "kl_gaussians");
  detail::require_same(mean_q, mean_p, "kl_gaussians");
  detail::require_same(mean_q, logvar_p, "kl_gaussians");
  detail::require_matrix(mean_q, "kl_gaussians");
  const Tensor ratio = (exp(logvar_q) + square(mean_q - mean_p)) * exp(negate(logvar_p));
  const Tensor per_dim = logvar_p - logvar_q + ratio - Tensor::scalar(1.0);
  return scale(sum(per_dim, 1), 0.5);
}

inline Tensor kl_gaussians(const Tensor& mean_q, const Tensor& logvar_q, const Tensor& mean_p, const Tensor& logvar_p) {
  return mean(kl_rows(mean_q, logvar_q, mean_p, logvar_p));
}

/// Euclidean distance between encoder features and generator latents, [batch].
inline Tensor align_rows(const Tensor& features, const Tensor& latents) {
  detail::require_same(features, latents, "alignment_loss");
  detail::require_matrix(features, "alignment_loss");
  return sqrt(sum(square(features - latents), 1));
}

inline Tensor alignment_loss(const Tensor& features, const Tensor& latents) { return mean(align_rows(features, latents)); }

/// End-frame consistency on the prior path; same MSE convention as reconstruction.
inline Tensor cpc_loss(const EndFrame& generated, const Tensor& target_end) {
  if (generated.path != LatentPath::kPrior) {
    throw ContractError("consistency loss requires an end frame generated from the prior");
  }
  if (!generated.frame.defined()) throw ContractError("rollout did not produce a prior end frame");
  return reconstruction_loss(generated.frame, target_end);
}

/// The posterior-path variant, used only to compare against the prior placement.
inline Tensor posterior_cpc_loss(const EndFrame& generated, const Tensor& target_end) {
  if (generated.path != LatentPath::kPosterior) throw ContractError("expected a posterior-path end frame");
  return reconstruction_loss(generated.frame, target_end);
}

/// M_1 = M_T = 1; interior steps kept independently with probability 1 - p_skip.
inline std::vector<char> skip_mask_sample(std::size_t length, double skip_prob, Rng& rng) {
  if (length < 2) throw std::invalid_argument("skip mask needs T >= 2");
  if (!(skip_prob >= 0.0 && skip_prob < 1.0)) throw std::invalid_argument("skip probability must lie in [0, 1)");
  std::vector<char> mask(length, 1);
  for (std::size_t t = 1; t + 1 < length; ++t) mask[t] = skip_prob > 0.0 ? !rng.bernoulli(skip_prob) : 1;
  return mask;
}

/// Independent masks per sequence, returned step-major ([T][batch]).
inline std::vector<std::vector<char>> skip_masks(std::size_t length, std::size_t batch, double skip_prob, Rng& rng) {
  std::vector<std::vector<char>> masks(length, std::vector<char>(batch, 1));
  for (std::size_t b = 0; b < batch; ++b) {
    const auto m = skip_mask_sample(length, skip_prob, rng);
    for (std::size_t t = 0; t < length; ++t) masks[t][b] = m[t];
  }
  return masks;
}

inline LossBreakdown full_objective(const RolloutRecord& record, const ObjectiveConfig& cfg) {
  cfg.validate();
  if (record.steps.size() < 2) throw ContractError("rollout record has no predicted steps");
  const std::size_t batch = record.batch();

  std::vector<double> kept(batch, 0.0);
  for (const auto& step : record.steps) {
    if (!step.predicted) continue;
    for (std::size_t b = 0; b < batch; ++b) kept[b] += step.mask[b] ? 1.0 : 0.0;
  }
  for (double k : kept) {
    if (k == 0.0) throw ContractError("a sequence has no kept predicted steps");
  }

  Tensor recon = Tensor::scalar(0.0), kl = Tensor::scalar(0.0), align = Tensor::scalar(0.0);
  for (const auto& step : record.steps) {
    if (!step.predicted) continue;
    Tensor weights(Shape{batch});
    auto w = weights.mutable_data();
    for (std::size_t b = 0; b < batch; ++b) w[b] = step.mask[b] ? 1.0 / (kept[b] * static_cast<double>(batch)) : 0.0;
    recon = recon + sum(row_mse(step.frame, step.target) * weights);
    kl = kl + sum(kl_rows(step.posterior_mean, step.posterior_logvar, step.prior_mean, step.prior_logvar) * weights);
    if (cfg.use_align) align = align + sum(align_rows(step.features, step.latent) * weights);
  }

  Tensor cpc = Tensor::scalar(0.0);
  if (cfg.use_cpc) {
    const Tensor& target = record.steps.back().target;
    cpc = cfg.cpc_on_posterior ? posterior_cpc_loss(record.posterior_end, target) : cpc_loss(record.prior_end, target);
  }

  LossBreakdown out;
  out.objective = recon + scale(kl, cfg.beta);
  if (cfg.use_align) out.objective = out.objective + scale(align, cfg.align_weight);
  if (cfg.use_cpc) out.objective = out.objective + scale(cpc, cfg.cpc_weight);
  out.recon = recon.item();
  out.kl = kl.item();
  out.align = align.item();
  out.cpc = cpc.item();
  out.total = out.objective.item();
  if (!std::isfinite(out.total)) throw NonFiniteError("objective is not finite");
  return out;
}

/// Learned-prior sequence bound without masks, conditioning terms or the
/// consistency term, evaluated directly on the record's values: mean over
/// predicted steps and batch of MSE(x̂_t, x_t) + beta * KL_t.
inline double baseline_objective(const RolloutRecord& record, double beta) {
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& step : record.steps) {
    if (!step.predicted) continue;
    ++steps;
    const std::size_t batch = step.target.rows(), width = step.target.cols(), latent = step.z.cols();
    double step_sum = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      double se = 0.0;
      for (std::size_t i = 0; i < width; ++i) {
        const double d = step.frame.at(b, i) - step.target.at(b, i);
        se += d * d;
      }
      double kl = 0.0;
      for (std::size_t j = 0; j < latent; ++j) {
        const double mq = step.posterior_mean.at(b, j), lq = step.posterior_logvar.at(b, j);
        const double mp = step.prior_mean.at(b, j), lp = step.prior_logvar.at(b, j);
        kl += 0.5 * (lp - lq + (std::exp(lq) + (mq - mp) * (mq - mp)) / std::exp(lp) - 1.0);
      }
      step_sum += se / static_cast<double>(width) + beta * kl;
    }
    total += step_sum / static_cast<double>(batch);
  }
  if (steps == 0) throw ContractError("rollout record has no predicted steps");
  return total / static_cast<double>(steps);
}

}  // namespace p2p
