// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>

#include "p2p/model.hpp"
#include "p2p/objective.hpp"
#include "support/finite_diff.hpp"

using namespace p2p;
using p2p::testing::max_relative_error;
using p2p::testing::numeric_grad;
using p2p::testing::random_tensor;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.frame = 2;
  d.feature = 4;
  d.latent = 2;
  d.hidden = 5;
  return d;
}

std::vector<Tensor> random_frames(std::size_t length, std::size_t batch, Rng& rng) {
  std::vector<Tensor> frames;
  for (std::size_t t = 0; t < length; ++t) frames.push_back(random_tensor({batch, 2}, rng, 0.0, 1.0));
  return frames;
}

std::vector<std::size_t> time_steps(std::size_t length) {
  std::vector<std::size_t> times(length);
  for (std::size_t t = 0; t < length; ++t) times[t] = t + 1;
  return times;
}

ObjectiveConfig baseline_config() {
  ObjectiveConfig cfg;
  cfg.cpc_weight = cfg.align_weight = cfg.skip_prob = 0.0;
  cfg.use_cpc = cfg.use_align = cfg.use_skip = cfg.condition_on_end = false;
  return cfg;
}

}  // namespace

TEST(Reconstruction, Examples) {
  EXPECT_DOUBLE_EQ(reconstruction_loss(Tensor::matrix(1, 2, {0, 0}), Tensor::matrix(1, 2, {1, 1})).item(), 1.0);
  EXPECT_DOUBLE_EQ(reconstruction_loss(Tensor::matrix(2, 2, {0, 0, 1, 1}), Tensor::matrix(2, 2, {0, 2, 1, 1})).item(), 1.0);
  EXPECT_DOUBLE_EQ(reconstruction_loss(Tensor::matrix(1, 2, {3, 4}), Tensor::matrix(1, 2, {3, 4})).item(), 0.0);
  EXPECT_THROW(reconstruction_loss(Tensor(Shape{1, 2}), Tensor(Shape{1, 3})), DimensionError);
}

TEST(KL, UnitShiftIsOneHalf) {
  const double kl = kl_gaussians(Tensor::matrix(1, 1, {1.0}), Tensor::matrix(1, 1, {0.0}), Tensor::matrix(1, 1, {0.0}),
                                 Tensor::matrix(1, 1, {0.0}))
                        .item();
  EXPECT_NEAR(kl, 0.5, 1e-9);
}

TEST(KL, ZeroForIdenticalAndNonNegativeOtherwise) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Tensor mq = random_tensor({3, 4}, rng, -2, 2), lq = random_tensor({3, 4}, rng, -3, 2);
    const Tensor mp = random_tensor({3, 4}, rng, -2, 2), lp = random_tensor({3, 4}, rng, -3, 2);
    EXPECT_NEAR(kl_gaussians(mq, lq, mq, lq).item(), 0.0, 1e-12);
    const Tensor kl = kl_rows(mq, lq, mp, lp);
    for (double v : kl.data()) EXPECT_GE(v, 0.0);
  }
}

TEST(KL, MatchesMonteCarloEstimate) {
  Rng rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const double mq = rng.uniform(-1, 1), lq = rng.uniform(-1, 1), mp = rng.uniform(-1, 1), lp = rng.uniform(-1, 1);
    const double closed = kl_gaussians(Tensor::matrix(1, 1, {mq}), Tensor::matrix(1, 1, {lq}), Tensor::matrix(1, 1, {mp}),
                                       Tensor::matrix(1, 1, {lp}))
                              .item();
    // E_q[log q(z) - log p(z)] with z drawn from q.
    const std::size_t n = 200000;
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = mq + std::exp(0.5 * lq) * rng.normal();
      const double log_q = -0.5 * (lq + (z - mq) * (z - mq) / std::exp(lq));
      const double log_p = -0.5 * (lp + (z - mp) * (z - mp) / std::exp(lp));
      s += log_q - log_p;
      ss += (log_q - log_p) * (log_q - log_p);
    }
    const double m = s / n, se = std::sqrt((ss / n - m * m) / n);
    EXPECT_NEAR(closed, m, 4.0 * se) << "trial " << trial;
  }
}

TEST(KL, GradientCheck) {
  Rng rng(3);
  Tensor mq = p2p::testing::random_parameter({2, 3}, rng), lq = p2p::testing::random_parameter({2, 3}, rng);
  Tensor mp = p2p::testing::random_parameter({2, 3}, rng), lp = p2p::testing::random_parameter({2, 3}, rng);
  auto f = [&] { return kl_gaussians(mq, lq, mp, lp); };
  {
    Tape tape;
    TapeScope scope(tape);
    backward(f());
  }
  for (Tensor* p : {&mq, &lq, &mp, &lp}) {
    EXPECT_LT(max_relative_error(p->grad(), numeric_grad(*p, [&] { return f().item(); })), 1e-6);
  }
}

TEST(Alignment, ThreeFourFive) {
  EXPECT_DOUBLE_EQ(alignment_loss(Tensor::matrix(1, 2, {0, 0}), Tensor::matrix(1, 2, {3, 4})).item(), 5.0);
  EXPECT_DOUBLE_EQ(alignment_loss(Tensor::matrix(2, 2, {1, 1, 0, 0}), Tensor::matrix(2, 2, {1, 1, 0, 2})).item(), 1.0);
}

TEST(SkipMask, EndpointsAlwaysKept) {
  Rng rng(4);
  for (int draw = 0; draw < 10000; ++draw) {
    const auto m = skip_mask_sample(2 + rng.uniform_int(0, 12), 0.9, rng);
    EXPECT_EQ(m.front(), 1);
    EXPECT_EQ(m.back(), 1);
  }
}

TEST(SkipMask, InteriorKeepRateMatchesProbability) {
  Rng rng(5);
  const double p = 0.3;
  std::size_t kept = 0, total = 0;
  while (total < 100000) {
    const auto m = skip_mask_sample(12, p, rng);
    for (std::size_t t = 1; t + 1 < m.size(); ++t) {
      kept += m[t];
      ++total;
    }
  }
  const double rate = static_cast<double>(kept) / total;
  EXPECT_NEAR(rate, 1.0 - p, 3.0 * std::sqrt(p * (1 - p) / total));
}

TEST(SkipMask, ZeroProbabilityKeepsEverythingAndBadInputsThrow) {
  Rng rng(6);
  for (char v : skip_mask_sample(9, 0.0, rng)) EXPECT_EQ(v, 1);
  EXPECT_THROW(skip_mask_sample(1, 0.5, rng), std::invalid_argument);
  EXPECT_THROW(skip_mask_sample(5, 1.0, rng), std::invalid_argument);
  EXPECT_THROW(skip_mask_sample(5, -0.1, rng), std::invalid_argument);
}

TEST(ObjectiveConfig, Validation) {
  ObjectiveConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.use_cpc = false;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = ObjectiveConfig{};
  cfg.condition_on_end = false;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = ObjectiveConfig{};
  cfg.beta = -1.0;
  EXPECT_THROW(cfg.validate(), ContractError);
  EXPECT_NO_THROW(baseline_config().validate());
}

TEST(ConsistencyLoss, RequiresPriorEndFrame) {
  const Tensor f = Tensor::matrix(1, 2, {0.5, 0.5});
  EXPECT_THROW(cpc_loss({f, LatentPath::kPosterior}, f), ContractError);
  EXPECT_THROW(cpc_loss({Tensor(), LatentPath::kPrior}, f), ContractError);
  EXPECT_DOUBLE_EQ(cpc_loss({f, LatentPath::kPrior}, Tensor::matrix(1, 2, {0.5, 1.5})).item(), 0.5);
  EXPECT_THROW(posterior_cpc_loss({f, LatentPath::kPrior}, f), ContractError);
}

TEST(FullObjective, ReducesToBaselineBound) {
  const P2PModel model(tiny_dims(), false, 1);
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t length = 2 + rng.uniform_int(0, 8), batch = 1 + rng.uniform_int(0, 4);
    const auto frames = random_frames(length, batch, rng);
    NoGradScope no_grad;
    const auto record = train_unroll(model, frames, make_condition(model, frames.back(), length),
                                     all_kept_masks(length, batch), rng, EndFrameRollout::kNone);
    const double beta = rng.uniform(0.0, 0.1);
    ObjectiveConfig cfg = baseline_config();
    cfg.beta = beta;
    EXPECT_NEAR(full_objective(record, cfg).total, baseline_objective(record, beta), 1e-12);
  }
}

TEST(FullObjective, AveragesOverKeptStepsPerSequence) {
  const P2PModel model(tiny_dims(), true, 2);
  Rng rng(8);
  const auto frames = random_frames(6, 2, rng);
  auto masks = all_kept_masks(6, 2);
  masks[2][0] = masks[3][0] = 0;
  masks[4][1] = 0;
  NoGradScope no_grad;
  const auto record = train_unroll(model, frames, make_condition(model, frames.back(), 6), masks, rng);
  ObjectiveConfig cfg;
  const auto loss = full_objective(record, cfg);
  double recon = 0.0;
  for (std::size_t b = 0; b < 2; ++b) {
    double s = 0.0, n = 0.0;
    for (std::size_t t = 1; t < 6; ++t) {
      if (!masks[t][b]) continue;
      const Tensor pred = slice(record.steps[t].frame, 0, b, b + 1), target = slice(frames[t], 0, b, b + 1);
      s += reconstruction_loss(pred, target).item();
      n += 1.0;
    }
    recon += s / n / 2.0;
  }
  EXPECT_NEAR(loss.recon, recon, 1e-14);
  EXPECT_NEAR(loss.total, loss.recon + cfg.beta * loss.kl + cfg.align_weight * loss.align + cfg.cpc_weight * loss.cpc,
              1e-12);
}

TEST(FullObjective, LinearInConsistencyWeight) {
  const P2PModel model(tiny_dims(), true, 3);
  Rng rng(9);
  const auto frames = random_frames(5, 3, rng);
  const auto masks = skip_masks(5, 3, 0.5, rng);
  const auto noise = draw_rollout_noise(5, 3, 2, rng);
  NoGradScope no_grad;
  const auto record = unroll_at_times(model, frames, time_steps(5), make_condition(model, frames.back(), 5), masks, noise,
                                      EndFrameRollout::kTeacherForced);
  ObjectiveConfig a;
  ObjectiveConfig b = a;
  b.cpc_weight = 2.0 * a.cpc_weight;
  const auto la = full_objective(record, a), lb = full_objective(record, b);
  const double rest = la.total - a.cpc_weight * la.cpc;
  EXPECT_NEAR(lb.total - rest, 2.0 * (la.total - rest), 1e-10);
}

TEST(FullObjective, GradientCheckOnSmallModel) {
  P2PModel model(tiny_dims(), true, 4);
  Rng rng(10);
  for (auto& p : model.parameters().entries()) {
    Tensor t = p.value;
    for (double& v : t.mutable_data()) v = rng.uniform(-0.5, 0.5);
  }
  const auto frames = random_frames(4, 2, rng);
  const auto masks = skip_masks(4, 2, 0.5, rng);
  const auto noise = draw_rollout_noise(4, 2, 2, rng);
  ObjectiveConfig cfg;
  cfg.cpc_rollout = EndFrameRollout::kPriorPath;
  auto loss = [&] {
    const auto record = unroll_at_times(model, frames, time_steps(4), make_condition(model, frames.back(), 4), masks,
                                        noise, cfg.end_rollout());
    return full_objective(record, cfg).objective;
  };
  {
    Tape tape;
    TapeScope scope(tape);
    backward(loss());
  }
  for (auto& p : model.parameters().entries()) {
    EXPECT_LT(max_relative_error(p.value.grad(), numeric_grad(p.value, [&] { return loss().item(); })), 1e-4) << p.name;
  }
}

TEST(FullObjective, RejectsMissingEndFrame) {
  const P2PModel model(tiny_dims(), true, 5);
  Rng rng(11);
  const auto frames = random_frames(4, 1, rng);
  NoGradScope no_grad;
  const auto record = train_unroll(model, frames, make_condition(model, frames.back(), 4), all_kept_masks(4, 1), rng,
                                   EndFrameRollout::kNone);
  EXPECT_THROW(full_objective(record, ObjectiveConfig{}), ContractError);
}
