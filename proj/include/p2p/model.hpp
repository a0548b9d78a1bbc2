// SPDX-License-Identifier: Apache-2.0
//
// The point-to-point sequence model: a shared frame encoder/decoder, a
// posterior and a learned prior (one Gaussian LSTM each) and a generator
// LSTM. Both distributions see the global descriptor of the targeted end
// frame and the time counter t/T at every step.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/layers.hpp"
#include "p2p/rng.hpp"
#include "p2p/tensor.hpp"

namespace p2p {

struct ModelDims {
  std::size_t frame = 2;     // D, frame vector width
  std::size_t feature = 64;  // width of encoder features h_t and generator output g_t
  std::size_t latent = 8;    // width of z_t
  std::size_t hidden = 128;  // recurrent and MLP hidden width
  std::size_t posterior_layers = 1;
  std::size_t prior_layers = 1;
  std::size_t generator_layers = 2;

  bool operator==(const ModelDims&) const = default;

  void validate() const {
    if (frame == 0 || feature == 0 || latent == 0 || hidden == 0 || posterior_layers == 0 || prior_layers == 0 ||
        generator_layers == 0) {
      throw DimensionError("model dimensions must all be positive");
    }
  }
};

class P2PModel {
 public:
  /// Builds the architecture and initializes every parameter from `seed`.
  /// An unconditioned model feeds zeros in place of (descriptor, counter),
  /// which is the learned-prior baseline without end-frame control.
  P2PModel(ModelDims dims, bool condition_on_end, std::uint64_t seed) : dims_(dims), conditioned_(condition_on_end) {
    dims_.validate();
    const std::size_t cond_width = dims_.feature + 1;
    encoder = ResidualMLP(params_, "encoder", dims_.frame, dims_.hidden, dims_.feature, true);
    decoder = ResidualMLP(params_, "decoder", dims_.feature, dims_.hidden, dims_.frame, false);
    posterior_rnn = LSTMStack(params_, "posterior.lstm", dims_.feature + cond_width, dims_.hidden, dims_.posterior_layers);
    posterior_head = GaussianHead(params_, "posterior.head", dims_.hidden, dims_.latent);
    prior_rnn = LSTMStack(params_, "prior.lstm", dims_.feature + cond_width, dims_.hidden, dims_.prior_layers);
    prior_head = GaussianHead(params_, "prior.head", dims_.hidden, dims_.latent);
    generator_rnn =
        LSTMStack(params_, "generator.lstm", dims_.feature + dims_.latent + 1, dims_.hidden, dims_.generator_layers);
    generator_out = Linear(params_, "generator.output", dims_.hidden, dims_.feature);

    Rng rng(seed);
    init_params(encoder, rng);
    init_params(decoder, rng);
    init_params(posterior_rnn, rng);
    init_params(posterior_head, rng);
    init_params(prior_rnn, rng);
    init_params(prior_head, rng);
    init_params(generator_rnn, rng);
    init_params(generator_out, rng);
  }

  P2PModel(const P2PModel&) = delete;
  P2PModel& operator=(const P2PModel&) = delete;
  P2PModel(P2PModel&&) = default;
  P2PModel& operator=(P2PModel&&) = default;

  const ModelDims& dims() const { return dims_; }
  bool conditioned() const { return conditioned_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  /// Encodes every row of `frames` ([rows x D]) into features ([rows x Dh]).
  Tensor encode(const Tensor& frames) const {
    if (frames.rank() != 2 || frames.dim(1) != dims_.frame) {
      throw DimensionError("encoder expects frames of width " + std::to_string(dims_.frame) + ", got " +
                           shape_str(frames.shape()));
    }
    return encoder(frames);
  }

  Tensor decode(const Tensor& g) const { return decoder(g); }

  /// Number of global-descriptor evaluations since construction.
  std::size_t descriptor_reads() const { return descriptor_reads_; }
  void note_descriptor_read() const { ++descriptor_reads_; }

  ResidualMLP encoder;
  ResidualMLP decoder;
  LSTMStack posterior_rnn;
  GaussianHead posterior_head;
  LSTMStack prior_rnn;
  GaussianHead prior_head;
  LSTMStack generator_rnn;
  Linear generator_out;

 private:
  ModelDims dims_;
  bool conditioned_;
  ParameterSet params_;
  mutable std::size_t descriptor_reads_ = 0;
};

/// Counter value t/T.
inline double time_counter(std::size_t t, std::size_t length) {
  if (t < 1 || t > length) {
    throw std::out_of_range("time step " + std::to_string(t) + " outside 1.." + std::to_string(length));
  }
  return static_cast<double>(t) / static_cast<double>(length);
}

/// h_T = Enc(x_T).
inline Tensor global_descriptor(const P2PModel& model, const Tensor& end_frames) {
  model.note_descriptor_read();
  return model.encode(end_frames);
}

struct GenerationCondition {
  Tensor descriptor;  // [batch x Dh]; zeros for an unconditioned model
  std::size_t length = 0;
  bool active = true;

  std::size_t batch() const { return descriptor.rows(); }
};

inline GenerationCondition make_condition(const P2PModel& model, const Tensor& end_frames, std::size_t length) {
  if (length < 2) throw std::invalid_argument("sequence length must be at least 2");
  if (end_frames.rank() != 2 || end_frames.dim(1) != model.dims().frame) {
    throw DimensionError("end frame width does not match the model");
  }
  if (!model.conditioned()) {
    return {Tensor(Shape{end_frames.dim(0), model.dims().feature}), length, false};
  }
  return {global_descriptor(model, end_frames), length, true};
}

namespace detail {

inline Tensor counter_column(const GenerationCondition& cond, std::size_t t) {
  return Tensor(Shape{cond.batch(), 1}, cond.active ? time_counter(t, cond.length) : 0.0);
}

inline void check_features(const P2PModel& model, const Tensor& h, const GenerationCondition& cond, const char* what) {
  if (h.rank() != 2 || h.dim(1) != model.dims().feature || h.dim(0) != cond.batch()) {
    throw DimensionError(std::string(what) + ": features of shape [" + std::to_string(cond.batch()) + "x" +
                         std::to_string(model.dims().feature) + "] expected, got " + shape_str(h.shape()));
  }
}

}  // namespace detail

struct GaussianStep {
  Gaussian dist;
  std::vector<LSTMState> state;
};

/// q(z_t | x_t, c): consumes Enc(x_t) of the current ground-truth frame.
inline GaussianStep posterior_step(const P2PModel& model, const std::vector<LSTMState>& state, const Tensor& features,
                                   const GenerationCondition& cond, std::size_t t) {
  detail::check_features(model, features, cond, "posterior_step");
  auto next = model.posterior_rnn.step(concat({features, cond.descriptor, detail::counter_column(cond, t)}, 1), state);
  Gaussian dist = model.posterior_head(next.back().h);
  return {std::move(dist), std::move(next)};
}

/// p(z_t | x_{1:t-1}, c): consumes Enc(x_{t-1}) of the previous frame.
inline GaussianStep prior_step(const P2PModel& model, const std::vector<LSTMState>& state, const Tensor& prev_features,
                               const GenerationCondition& cond, std::size_t t) {
  detail::check_features(model, prev_features, cond, "prior_step");
  auto next = model.prior_rnn.step(concat({prev_features, cond.descriptor, detail::counter_column(cond, t)}, 1), state);
  Gaussian dist = model.prior_head(next.back().h);
  return {std::move(dist), std::move(next)};
}

struct GeneratorStep {
  Tensor latent;  // g_t, pre-decoder features [batch x Dh]
  Tensor frame;   // x̂_t = Dec(g_t); undefined when decoding was not requested
  std::vector<LSTMState> state;
};

inline GeneratorStep generator_step(const P2PModel& model, const std::vector<LSTMState>& state,
                                    const Tensor& prev_features, const Tensor& z, const GenerationCondition& cond,
                                    std::size_t t, bool decode = true) {
  detail::check_features(model, prev_features, cond, "generator_step");
  if (z.rank() != 2 || z.dim(1) != model.dims().latent || z.dim(0) != cond.batch()) {
    throw DimensionError("generator_step: latent of width " + std::to_string(model.dims().latent) + " expected, got " +
                         shape_str(z.shape()));
  }
  auto next = model.generator_rnn.step(concat({prev_features, z, detail::counter_column(cond, t)}, 1), state);
  Tensor g = tanh(model.generator_out(next.back().h));
  Tensor x = decode ? model.decode(g) : Tensor();
  return {std::move(g), std::move(x), std::move(next)};
}

enum class LatentPath { kPrior, kPosterior };

/// A generated end frame tagged with the distribution its z_T came from.
struct EndFrame {
  Tensor frame;
  LatentPath path = LatentPath::kPrior;
};

/// One timestep of a training rollout. Step 1 holds the given start frame and
/// carries no loss terms (`predicted == false`).
struct RolloutStep {
  std::size_t time = 1;
  double tau = 0.0;
  std::vector<char> mask;  // M_t per batch row
  bool predicted = false;
  Tensor target;    // x_t
  Tensor features;  // h_t = Enc(x_t)
  Tensor posterior_mean, posterior_logvar;
  Tensor prior_mean, prior_logvar;
  Tensor z;
  Tensor latent;  // g_t
  Tensor frame;   // x̂_t
  std::vector<LSTMState> posterior_state, prior_state, generator_state;
};

struct RolloutRecord {
  std::size_t length = 0;  // T of the time counter
  std::vector<RolloutStep> steps;
  EndFrame prior_end;      // x̂_T decoded from a prior-sampled z_T
  EndFrame posterior_end;  // x̂_T decoded from the posterior z_T

  std::size_t batch() const { return steps.empty() ? 0 : steps.front().target.rows(); }
};

/// How the prior-driven end frame used by the consistency term is produced.
enum class EndFrameRollout {
  kNone,          // not computed
  kTeacherForced, // ground-truth frames; z_t from the posterior (held constant) for t < T, z_T ~ prior
  kPriorPath,     // ground-truth frames; z_t ~ prior at every kept step
  kFreeRunning,   // prior and generator advanced on their own generated frames
};

inline std::string to_string(EndFrameRollout r) {
  switch (r) {
    case EndFrameRollout::kNone: return "none";
    case EndFrameRollout::kTeacherForced: return "teacher_forced";
    case EndFrameRollout::kPriorPath: return "prior_path";
    case EndFrameRollout::kFreeRunning: return "free_running";
  }
  return "?";
}

inline EndFrameRollout parse_end_rollout(const std::string& name) {
  if (name == "teacher_forced") return EndFrameRollout::kTeacherForced;
  if (name == "prior_path") return EndFrameRollout::kPriorPath;
  if (name == "free_running") return EndFrameRollout::kFreeRunning;
  throw std::invalid_argument("unknown cpc rollout '" + name + "'");
}

/// Pre-drawn standard normals indexed by time step (1..T), [batch x Z] each.
/// Indexing by time keeps draws aligned when steps are skipped.
struct RolloutNoise {
  std::vector<Tensor> posterior;
  std::vector<Tensor> prior;
};

inline RolloutNoise draw_rollout_noise(std::size_t length, std::size_t batch, std::size_t latent, Rng& rng) {
  RolloutNoise noise;
  noise.posterior.resize(length + 1);
  noise.prior.resize(length + 1);
  for (std::size_t t = 2; t <= length; ++t) {
    noise.posterior[t] = standard_normal(Shape{batch, latent}, rng);
    noise.prior[t] = standard_normal(Shape{batch, latent}, rng);
  }
  return noise;
}

namespace detail {

inline bool all_kept(const std::vector<char>& mask) {
  for (char m : mask) {
    if (!m) return false;
  }
  return true;
}

inline std::vector<LSTMState> freeze(const std::vector<char>& mask, const std::vector<LSTMState>& next,
                                     const std::vector<LSTMState>& prev) {
  if (all_kept(mask)) return next;
  std::vector<LSTMState> out;
  out.reserve(next.size());
  for (std::size_t k = 0; k < next.size(); ++k) {
    out.push_back({select_rows(mask, next[k].h, prev[k].h), select_rows(mask, next[k].c, prev[k].c)});
  }
  return out;
}

inline Tensor stack_rows(const std::vector<Tensor>& parts) { return concat(parts, 0); }

}  // namespace detail

/// Teacher-forced rollout over frames observed at explicit time indices.
/// `times` must start at 1 and be strictly increasing; the counter uses
/// cond.length. Rows with mask 0 at a step keep all three recurrent states
/// and their last-seen frame untouched.
inline RolloutRecord unroll_at_times(const P2PModel& model, const std::vector<Tensor>& frames,
                                     const std::vector<std::size_t>& times, const GenerationCondition& cond,
                                     const std::vector<std::vector<char>>& masks, const RolloutNoise& noise,
                                     EndFrameRollout end_rollout) {
  const std::size_t n = frames.size();
  if (n < 2) throw std::invalid_argument("rollout needs at least 2 frames");
  if (times.size() != n || masks.size() != n) throw DimensionError("frames, times and masks must have equal length");
  if (times.front() != 1) throw std::invalid_argument("rollout must start at time step 1");
  const std::size_t batch = frames.front().rows();
  for (std::size_t k = 0; k < n; ++k) {
    if (frames[k].rank() != 2 || frames[k].dim(0) != batch || frames[k].dim(1) != model.dims().frame) {
      throw DimensionError("frame batch at step " + std::to_string(k + 1) + " has shape " +
                           shape_str(frames[k].shape()));
    }
    if (masks[k].size() != batch) throw DimensionError("mask width does not match batch size");
    if (k > 0 && times[k] <= times[k - 1]) throw std::invalid_argument("time indices must increase");
    if (times[k] > cond.length) throw std::out_of_range("time index beyond sequence length");
  }
  if (!detail::all_kept(masks.front()) || !detail::all_kept(masks.back())) {
    throw ContractError("first and last steps must be kept (M_1 = M_T = 1)");
  }
  if (cond.batch() != batch) throw DimensionError("condition batch differs from frame batch");

  const Tensor all_features = model.encode(detail::stack_rows(frames));
  std::vector<Tensor> features;
  for (std::size_t k = 0; k < n; ++k) features.push_back(slice(all_features, 0, k * batch, (k + 1) * batch));

  RolloutRecord record;
  record.length = cond.length;
  RolloutStep first;
  first.time = times.front();
  first.tau = cond.active ? time_counter(first.time, cond.length) : 0.0;
  first.mask = masks.front();
  first.target = frames.front();
  first.features = features.front();
  first.frame = frames.front();
  first.posterior_state = model.posterior_rnn.zero_state(batch);
  first.prior_state = model.prior_rnn.zero_state(batch);
  first.generator_state = model.generator_rnn.zero_state(batch);
  record.steps.push_back(first);

  auto post_state = first.posterior_state;
  auto prior_state = first.prior_state;
  auto gen_state = first.generator_state;
  auto prior_gen_state = first.generator_state;
  Tensor last_features = features.front();

  for (std::size_t k = 1; k < n; ++k) {
    const std::size_t t = times[k];
    const auto& mask = masks[k];
    const bool last = k + 1 == n;
    if (noise.posterior.size() <= t || !noise.posterior[t].defined()) {
      throw DimensionError("noise table does not cover time step " + std::to_string(t));
    }

    GaussianStep post = posterior_step(model, post_state, features[k], cond, t);
    GaussianStep prior = prior_step(model, prior_state, last_features, cond, t);
    Tensor z = reparam_sample(post.dist.mean, post.dist.logvar, noise.posterior[t]);
    GeneratorStep gen = generator_step(model, gen_state, last_features, z, cond, t);

    if (end_rollout == EndFrameRollout::kTeacherForced || end_rollout == EndFrameRollout::kPriorPath) {
      Tensor z_drive = (last || end_rollout == EndFrameRollout::kPriorPath)
                           ? reparam_sample(prior.dist.mean, prior.dist.logvar, noise.prior[t])
                           : z.detach();
      GeneratorStep prior_gen = generator_step(model, prior_gen_state, last_features, z_drive, cond, t, last);
      prior_gen_state = detail::freeze(mask, prior_gen.state, prior_gen_state);
      if (last) record.prior_end = {prior_gen.frame, LatentPath::kPrior};
    }

    post_state = detail::freeze(mask, post.state, post_state);
    prior_state = detail::freeze(mask, prior.state, prior_state);
    gen_state = detail::freeze(mask, gen.state, gen_state);
    last_features = detail::all_kept(mask) ? features[k] : select_rows(mask, features[k], last_features);

    RolloutStep step;
    step.time = t;
    step.tau = cond.active ? time_counter(t, cond.length) : 0.0;
    step.mask = mask;
    step.predicted = true;
    step.target = frames[k];
    step.features = features[k];
    step.posterior_mean = post.dist.mean;
    step.posterior_logvar = post.dist.logvar;
    step.prior_mean = prior.dist.mean;
    step.prior_logvar = prior.dist.logvar;
    step.z = z;
    step.latent = gen.latent;
    step.frame = gen.frame;
    step.posterior_state = post_state;
    step.prior_state = prior_state;
    step.generator_state = gen_state;
    record.steps.push_back(std::move(step));
  }
  record.posterior_end = {record.steps.back().frame, LatentPath::kPosterior};

  if (end_rollout == EndFrameRollout::kFreeRunning) {
    auto p_state = model.prior_rnn.zero_state(batch);
    auto g_state = model.generator_rnn.zero_state(batch);
    Tensor prev = features.front();
    for (std::size_t k = 1; k < n; ++k) {
      const std::size_t t = times[k];
      GaussianStep prior = prior_step(model, p_state, prev, cond, t);
      Tensor z_prior = reparam_sample(prior.dist.mean, prior.dist.logvar, noise.prior[t]);
      GeneratorStep gen = generator_step(model, g_state, prev, z_prior, cond, t);
      p_state = std::move(prior.state);
      g_state = std::move(gen.state);
      if (k + 1 == n) {
        record.prior_end = {gen.frame, LatentPath::kPrior};
      } else {
        prev = model.encode(gen.frame);
      }
    }
  }
  return record;
}

/// Teacher-forced training rollout over frames x_1..x_T ([batch x D] each).
/// Noise is drawn from `rng` for every time step, kept or not.
inline RolloutRecord train_unroll(const P2PModel& model, const std::vector<Tensor>& frames,
                                  const GenerationCondition& cond, const std::vector<std::vector<char>>& masks, Rng& rng,
                                  EndFrameRollout end_rollout = EndFrameRollout::kTeacherForced) {
  const std::size_t length = frames.size();
  if (length < 2) throw std::invalid_argument("train_unroll needs T >= 2");
  if (masks.size() != length) throw DimensionError("mask length does not match sequence length");
  if (cond.length != length) throw DimensionError("condition length does not match sequence length");
  std::vector<std::size_t> times(length);
  for (std::size_t t = 0; t < length; ++t) times[t] = t + 1;
  const RolloutNoise noise = draw_rollout_noise(length, frames.front().rows(), model.dims().latent, rng);
  return unroll_at_times(model, frames, times, cond, masks, noise, end_rollout);
}

inline std::vector<std::vector<char>> all_kept_masks(std::size_t length, std::size_t batch) {
  return std::vector<std::vector<char>>(length, std::vector<char>(batch, 1));
}

/// Free-running generation from the learned prior. Row r of the result's
/// frames is a sample bracketed by start_frames[r] and end_frames[r].
/// The first frame is the start frame verbatim; the end frame reaches the
/// model only through the global descriptor.
inline std::vector<Tensor> sample_batch(const P2PModel& model, const Tensor& start_frames, const Tensor& end_frames,
                                        std::size_t length, Rng& rng) {
  if (length < 2) throw std::invalid_argument("sample length must be at least 2");
  if (start_frames.shape() != end_frames.shape()) throw DimensionError("start and end frame batches differ");
  const GenerationCondition cond = make_condition(model, end_frames, length);
  const std::size_t batch = start_frames.rows();
  std::vector<Tensor> out{start_frames.detach()};
  auto p_state = model.prior_rnn.zero_state(batch);
  auto g_state = model.generator_rnn.zero_state(batch);
  Tensor prev = model.encode(start_frames);
  for (std::size_t t = 2; t <= length; ++t) {
    GaussianStep prior = prior_step(model, p_state, prev, cond, t);
    Tensor z = reparam_sample(prior.dist.mean, prior.dist.logvar, rng);
    GeneratorStep gen = generator_step(model, g_state, prev, z, cond, t);
    p_state = std::move(prior.state);
    g_state = std::move(gen.state);
    if (t < length) prev = model.encode(gen.frame);
    out.push_back(std::move(gen.frame));
  }
  return out;
}

using Frame = std::vector<double>;

inline Tensor replicate_rows(std::span<const double> frame, std::size_t copies) {
  Tensor t(Shape{copies, frame.size()});
  auto d = t.mutable_data();
  for (std::size_t r = 0; r < copies; ++r) std::copy(frame.begin(), frame.end(), d.begin() + r * frame.size());
  return t;
}

inline Frame row_of(const Tensor& t, std::size_t r) {
  const auto d = t.data();
  return Frame(d.begin() + r * t.cols(), d.begin() + (r + 1) * t.cols());
}

inline std::vector<Frame> sample_sequence(const P2PModel& model, std::span<const double> start,
                                          std::span<const double> end, std::size_t length, Rng& rng) {
  if (start.size() != model.dims().frame || end.size() != model.dims().frame) {
    throw DimensionError("control point width does not match the model frame width");
  }
  NoGradScope no_grad;
  const auto frames = sample_batch(model, replicate_rows(start, 1), replicate_rows(end, 1), length, rng);
  std::vector<Frame> out;
  for (const Tensor& f : frames) out.push_back(row_of(f, 0));
  return out;
}

/// Multi-control-point generation: clip i runs from control point i to
/// i+1; each boundary is emitted once and equals its control point exactly.
struct StitchedSequence {
  std::vector<Frame> frames;
  std::vector<std::size_t> control_indices;  // 0-based positions of the control points
};

inline StitchedSequence stitch_generate(const P2PModel& model, const std::vector<Frame>& control_points,
                                        const std::vector<std::size_t>& lengths, Rng& rng) {
  if (control_points.size() < 2 || lengths.size() + 1 != control_points.size()) {
    throw std::invalid_argument("stitching needs n >= 2 control points and n-1 clip lengths");
  }
  for (std::size_t len : lengths) {
    if (len < 2) throw std::invalid_argument("every clip length must be at least 2");
  }
  StitchedSequence out;
  out.frames.push_back(control_points.front());
  out.control_indices.push_back(0);
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    auto clip = sample_sequence(model, control_points[i], control_points[i + 1], lengths[i], rng);
    for (std::size_t t = 1; t + 1 < clip.size(); ++t) out.frames.push_back(std::move(clip[t]));
    out.control_indices.push_back(out.frames.size());
    out.frames.push_back(control_points[i + 1]);
  }
  return out;
}

/// Looping clip: start and target end frame are the same frame.
inline std::vector<Frame> loop_generate(const P2PModel& model, std::span<const double> frame, std::size_t length,
                                        Rng& rng) {
  if (length < 3) throw std::invalid_argument("loop length must be at least 3");
  return sample_sequence(model, frame, frame, length, rng);
}

/// Posterior-driven reconstructions of ground-truth frames (one batch row per
/// sample). x̂_1 is the given start frame.
inline std::vector<Tensor> reconstruct_batch(const P2PModel& model, const std::vector<Tensor>& frames, Rng& rng) {
  NoGradScope no_grad;
  const GenerationCondition cond = make_condition(model, frames.back(), frames.size());
  const RolloutRecord record =
      train_unroll(model, frames, cond, all_kept_masks(frames.size(), frames.front().rows()), rng, EndFrameRollout::kNone);
  std::vector<Tensor> out;
  for (const auto& step : record.steps) out.push_back(step.frame);
  return out;
}

}  // namespace p2p
