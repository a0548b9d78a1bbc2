// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "p2p/checkpoint.hpp"
#include "p2p/datasets.hpp"
#include "p2p/model.hpp"
#include "p2p/objective.hpp"
#include "support/finite_diff.hpp"

using namespace p2p;
using p2p::testing::random_tensor;

namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.frame = 2;
  d.feature = 5;
  d.latent = 3;
  d.hidden = 6;
  return d;
}

std::vector<Tensor> random_frames(std::size_t length, std::size_t batch, std::size_t width, Rng& rng) {
  std::vector<Tensor> frames;
  for (std::size_t t = 0; t < length; ++t) frames.push_back(random_tensor({batch, width}, rng, 0.0, 1.0));
  return frames;
}

Tensor row(const Tensor& t, std::size_t r) { return slice(t, 0, r, r + 1); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  EXPECT_EQ(a.shape(), b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double state_diff(const std::vector<LSTMState>& a, const std::vector<LSTMState>& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    worst = std::max({worst, max_abs_diff(a[k].h, b[k].h), max_abs_diff(a[k].c, b[k].c)});
  }
  return worst;
}

std::vector<LSTMState> row_state(const std::vector<LSTMState>& s, std::size_t r) {
  std::vector<LSTMState> out;
  for (const auto& layer : s) out.push_back({row(layer.h, r), row(layer.c, r)});
  return out;
}

std::size_t linear_size(std::size_t in, std::size_t out) { return in * out + out; }
std::size_t lstm_size(std::size_t in, std::size_t h) { return linear_size(in + h, 4 * h); }
std::size_t mlp_size(std::size_t in, std::size_t h, std::size_t out) {
  return linear_size(in, h) + 2 * linear_size(h, h) + linear_size(h, out);
}

}  // namespace

TEST(TimeCounter, Examples) {
  EXPECT_DOUBLE_EQ(time_counter(1, 10), 0.1);
  EXPECT_DOUBLE_EQ(time_counter(10, 10), 1.0);
  EXPECT_DOUBLE_EQ(time_counter(5, 20), 0.25);
  EXPECT_THROW(time_counter(0, 10), std::out_of_range);
  EXPECT_THROW(time_counter(11, 10), std::out_of_range);
}

TEST(TimeCounter, MonotoneInT) {
  for (std::size_t len = 2; len < 40; ++len)
    for (std::size_t t = 2; t <= len; ++t) EXPECT_LT(time_counter(t - 1, len), time_counter(t, len));
}

TEST(Model, ParameterCountMatchesArchitecture) {
  ModelDims d;
  d.feature = 7;
  d.latent = 3;
  d.hidden = 11;
  d.generator_layers = 2;
  const P2PModel model(d, true, 1);
  const std::size_t f = d.feature, h = d.hidden, z = d.latent, x = d.frame;
  const std::size_t expected = mlp_size(x, h, f) + mlp_size(f, h, x) + 2 * (lstm_size(2 * f + 1, h) + 2 * linear_size(h, z)) +
                               lstm_size(f + z + 1, h) + lstm_size(h, h) + linear_size(h, f);
  EXPECT_EQ(model.parameters().total_size(), expected);
}

TEST(Model, SameSeedSameParameters) {
  const P2PModel a(tiny_dims(), true, 42), b(tiny_dims(), true, 42), c(tiny_dims(), true, 43);
  bool any_diff = false;
  for (std::size_t k = 0; k < a.parameters().count(); ++k) {
    const auto pa = a.parameters().entries()[k].value.data(), pb = b.parameters().entries()[k].value.data();
    const auto pc = c.parameters().entries()[k].value.data();
    for (std::size_t i = 0; i < pa.size(); ++i) {
      EXPECT_EQ(pa[i], pb[i]);
      any_diff |= pa[i] != pc[i];
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, DescriptorIsDeterministicAndDependsOnEndFrame) {
  const P2PModel model(tiny_dims(), true, 3);
  const Tensor end = Tensor::matrix(1, 2, {0.2, 0.9});
  EXPECT_EQ(max_abs_diff(global_descriptor(model, end), global_descriptor(model, end)), 0.0);
  EXPECT_GT(max_abs_diff(global_descriptor(model, end), global_descriptor(model, Tensor::matrix(1, 2, {0.8, 0.1}))), 0.0);
  EXPECT_EQ(model.descriptor_reads(), 4u);
}

TEST(Model, UnconditionedModelNeverReadsDescriptor) {
  const P2PModel model(tiny_dims(), false, 3);
  const GenerationCondition cond = make_condition(model, Tensor::matrix(1, 2, {0.2, 0.9}), 6);
  EXPECT_FALSE(cond.active);
  for (double v : cond.descriptor.data()) EXPECT_EQ(v, 0.0);
  Rng rng(1);
  sample_sequence(model, std::vector<double>{0.1, 0.1}, std::vector<double>{0.5, 0.5}, 5, rng);
  EXPECT_EQ(model.descriptor_reads(), 0u);
}

TEST(Model, GeneratorRespondsToCounter) {
  const P2PModel model(tiny_dims(), true, 5);
  Rng rng(2);
  const Tensor prev = random_tensor({1, 5}, rng);
  const Tensor z = random_tensor({1, 3}, rng);
  const GenerationCondition short_cond = make_condition(model, Tensor::matrix(1, 2, {0.3, 0.3}), 4);
  const GenerationCondition long_cond = make_condition(model, Tensor::matrix(1, 2, {0.3, 0.3}), 16);
  const auto state = model.generator_rnn.zero_state(1);
  const auto a = generator_step(model, state, prev, z, short_cond, 2);
  const auto b = generator_step(model, state, prev, z, long_cond, 2);
  EXPECT_GT(max_abs_diff(a.frame, b.frame), 0.0);
}

TEST(Model, ShapeErrors) {
  const P2PModel model(tiny_dims(), true, 5);
  EXPECT_THROW(model.encode(Tensor(Shape{1, 3})), DimensionError);
  const GenerationCondition cond = make_condition(model, Tensor(Shape{2, 2}), 4);
  const auto state = model.generator_rnn.zero_state(2);
  EXPECT_THROW(generator_step(model, state, Tensor(Shape{2, 5}), Tensor(Shape{2, 4}), cond, 2), DimensionError);
  EXPECT_THROW(prior_step(model, model.prior_rnn.zero_state(2), Tensor(Shape{1, 5}), cond, 2), DimensionError);
  EXPECT_THROW(make_condition(model, Tensor(Shape{2, 2}), 1), std::invalid_argument);
  EXPECT_THROW(P2PModel(ModelDims{.latent = 0}, true, 1), DimensionError);
}

TEST(Rollout, FullObjectiveReachesEveryParameter) {
  const P2PModel model(tiny_dims(), true, 6);
  Rng rng(3);
  const auto frames = random_frames(5, 3, 2, rng);
  ObjectiveConfig cfg;
  Tape tape;
  TapeScope scope(tape);
  const auto cond = make_condition(model, frames.back(), frames.size());
  const auto record = train_unroll(model, frames, cond, all_kept_masks(5, 3), rng, cfg.end_rollout());
  backward(full_objective(record, cfg).objective);
  for (const auto& p : model.parameters().entries()) {
    double norm = 0.0;
    for (double g : p.value.grad()) norm += g * g;
    EXPECT_GT(norm, 0.0) << p.name;
  }
}

TEST(Rollout, StepOneIsTheGivenFrame) {
  const P2PModel model(tiny_dims(), true, 6);
  Rng rng(4);
  const auto frames = random_frames(4, 2, 2, rng);
  NoGradScope no_grad;
  const auto record =
      train_unroll(model, frames, make_condition(model, frames.back(), 4), all_kept_masks(4, 2), rng);
  ASSERT_EQ(record.steps.size(), 4u);
  EXPECT_FALSE(record.steps[0].predicted);
  EXPECT_EQ(max_abs_diff(record.steps[0].frame, frames[0]), 0.0);
  for (std::size_t t = 1; t < 4; ++t) EXPECT_TRUE(record.steps[t].predicted);
  EXPECT_DOUBLE_EQ(record.steps[3].tau, 1.0);
}

TEST(Rollout, RejectsMaskedEndpoints) {
  const P2PModel model(tiny_dims(), true, 6);
  Rng rng(4);
  const auto frames = random_frames(4, 1, 2, rng);
  auto masks = all_kept_masks(4, 1);
  masks[3][0] = 0;
  const auto cond = make_condition(model, frames.back(), 4);
  EXPECT_THROW(train_unroll(model, frames, cond, masks, rng), ContractError);
  masks[3][0] = 1;
  masks[0][0] = 0;
  EXPECT_THROW(train_unroll(model, frames, cond, masks, rng), ContractError);
}

// A step masked for one row must leave that row exactly as if the frame had
// never been in its sequence: same states, same predictions at later steps.
TEST(Rollout, MaskedStepEqualsDeletedFrame) {
  const P2PModel model(tiny_dims(), true, 7);
  Rng rng(11);
  for (int draw = 0; draw < 100; ++draw) {
    const std::size_t length = 4 + rng.uniform_int(0, 6), batch = 3;
    const auto frames = random_frames(length, batch, 2, rng);
    const auto masks = skip_masks(length, batch, 0.5, rng);
    const auto noise = draw_rollout_noise(length, batch, model.dims().latent, rng);
    std::vector<std::size_t> times(length);
    for (std::size_t t = 0; t < length; ++t) times[t] = t + 1;
    NoGradScope no_grad;
    const auto cond = make_condition(model, frames.back(), length);
    const auto masked = unroll_at_times(model, frames, times, cond, masks, noise, EndFrameRollout::kTeacherForced);

    for (std::size_t r = 0; r < batch; ++r) {
      std::vector<Tensor> kept_frames;
      std::vector<std::size_t> kept_times, kept_index;
      RolloutNoise row_noise;
      row_noise.posterior.resize(length + 1);
      row_noise.prior.resize(length + 1);
      for (std::size_t k = 0; k < length; ++k) {
        if (k > 0) {
          row_noise.posterior[k + 1] = row(noise.posterior[k + 1], r);
          row_noise.prior[k + 1] = row(noise.prior[k + 1], r);
        }
        if (!masks[k][r]) continue;
        kept_frames.push_back(row(frames[k], r));
        kept_times.push_back(k + 1);
        kept_index.push_back(k);
      }
      const GenerationCondition row_cond{row(cond.descriptor, r), length, true};
      const auto deleted = unroll_at_times(model, kept_frames, kept_times, row_cond, all_kept_masks(kept_frames.size(), 1),
                                           row_noise, EndFrameRollout::kTeacherForced);
      double worst = 0.0;
      for (std::size_t j = 1; j < kept_index.size(); ++j) {
        const auto& a = masked.steps[kept_index[j]];
        const auto& b = deleted.steps[j];
        worst = std::max({worst, max_abs_diff(row(a.frame, r), b.frame), state_diff(row_state(a.posterior_state, r), b.posterior_state),
                          state_diff(row_state(a.prior_state, r), b.prior_state),
                          state_diff(row_state(a.generator_state, r), b.generator_state)});
      }
      worst = std::max(worst, max_abs_diff(row(masked.prior_end.frame, r), deleted.prior_end.frame));
      ASSERT_LE(worst, 1e-12) << "draw " << draw << " row " << r;
    }
  }
}

TEST(Rollout, ConsistencyTermLeavesPosteriorParametersUntouched) {
  P2PModel model(tiny_dims(), true, 8);
  Rng rng(5);
  for (EndFrameRollout mode : {EndFrameRollout::kTeacherForced, EndFrameRollout::kPriorPath, EndFrameRollout::kFreeRunning}) {
    const auto frames = random_frames(6, 2, 2, rng);
    model.parameters().zero_grad();
    Tape tape;
    TapeScope scope(tape);
    const auto record = train_unroll(model, frames, make_condition(model, frames.back(), 6),
                                     skip_masks(6, 2, 0.5, rng), rng, mode);
    backward(cpc_loss(record.prior_end, frames.back()));
    double prior_norm = 0.0;
    for (const auto& p : model.parameters().entries()) {
      double norm = 0.0;
      for (double g : p.value.grad()) norm += g * g;
      if (p.name.starts_with("posterior.")) {
        EXPECT_EQ(norm, 0.0) << p.name << " mode " << to_string(mode);
      }
      if (p.name.starts_with("prior.")) prior_norm += norm;
    }
    EXPECT_GT(prior_norm, 0.0);
  }
}

TEST(Sampling, FirstFrameIsCopiedAndSeedsReproduce) {
  const P2PModel model(tiny_dims(), true, 9);
  const std::vector<double> start{0.25, 0.75}, end{0.6, 0.4};
  Rng a(17), b(17), c(18);
  const auto x = sample_sequence(model, start, end, 7, a);
  const auto y = sample_sequence(model, start, end, 7, b);
  const auto w = sample_sequence(model, start, end, 7, c);
  ASSERT_EQ(x.size(), 7u);
  EXPECT_EQ(x.front(), start);
  EXPECT_EQ(x, y);
  EXPECT_NE(x, w);
  EXPECT_THROW(sample_sequence(model, start, end, 1, a), std::invalid_argument);
  EXPECT_THROW(sample_sequence(model, std::vector<double>{1.0}, end, 4, a), DimensionError);
}

TEST(Sampling, StitchEmitsEachControlPointOnce) {
  const P2PModel model(tiny_dims(), true, 9);
  const std::vector<Frame> points{{0.1, 0.1}, {0.9, 0.2}, {0.5, 0.8}};
  Rng rng(2);
  const auto out = stitch_generate(model, points, {4, 6}, rng);
  ASSERT_EQ(out.frames.size(), 4u + 6u - 1u);
  EXPECT_EQ(out.control_indices, (std::vector<std::size_t>{0, 3, 8}));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.frames[out.control_indices[i]], points[i]);
  EXPECT_THROW(stitch_generate(model, points, {4}, rng), std::invalid_argument);
  EXPECT_THROW(stitch_generate(model, points, {4, 1}, rng), std::invalid_argument);
}

TEST(Sampling, TwoPointStitchMatchesSampleExceptEndFrame) {
  const P2PModel model(tiny_dims(), true, 9);
  const std::vector<Frame> points{{0.1, 0.1}, {0.9, 0.2}};
  Rng a(3), b(3);
  const auto stitched = stitch_generate(model, points, {5}, a);
  const auto sampled = sample_sequence(model, points[0], points[1], 5, b);
  for (std::size_t t = 0; t + 1 < 5; ++t) EXPECT_EQ(stitched.frames[t], sampled[t]);
  EXPECT_EQ(stitched.frames.back(), points[1]);
}

TEST(Sampling, LoopStartsAtTheFrame) {
  const P2PModel model(tiny_dims(), true, 9);
  const std::vector<double> f{0.4, 0.6};
  Rng rng(4);
  const auto out = loop_generate(model, f, 6, rng);
  EXPECT_EQ(out.size(), 6u);
  EXPECT_EQ(out.front(), f);
  EXPECT_THROW(loop_generate(model, f, 2, rng), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsByteIdentical) {
  const P2PModel model(tiny_dims(), true, 12);
  const Bytes bytes = encode_checkpoint(model);
  const P2PModel loaded = decode_checkpoint(bytes);
  EXPECT_EQ(loaded.dims(), model.dims());
  EXPECT_TRUE(loaded.conditioned());
  EXPECT_EQ(encode_checkpoint(loaded), bytes);
  const auto [dims, conditioned] = peek_checkpoint(bytes);
  EXPECT_EQ(dims, model.dims());
  EXPECT_TRUE(conditioned);

  const auto path = std::filesystem::temp_directory_path() / "p2p_test_model.ckpt";
  save_checkpoint(path, model);
  EXPECT_EQ(encode_checkpoint(load_checkpoint(path)), bytes);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptionTruncationAndDimensionMismatch) {
  const P2PModel model(tiny_dims(), false, 12);
  Bytes bytes = encode_checkpoint(model);
  EXPECT_FALSE(peek_checkpoint(bytes).second);

  Bytes truncated(bytes.begin(), bytes.end() - 9);
  EXPECT_THROW(decode_checkpoint(truncated), ParseError);

  Bytes flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_THROW(decode_checkpoint(flipped), ParseError);

  Bytes bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic), ParseError);

  Bytes trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), ParseError);

  ModelDims other = tiny_dims();
  other.hidden = 7;
  EXPECT_THROW(decode_checkpoint(bytes, other), DimensionError);
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/model.ckpt"), std::runtime_error);
}
