// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "p2p/errors.hpp"
#include "p2p/rng.hpp"
#include "p2p/tensor.hpp"

namespace p2p {

struct NamedParameter {
  std::string name;
  Tensor value;
};

/// Ordered registry of trainable tensors. Registration order is the
/// serialization order of checkpoints and the iteration order of the optimizer.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor value) {
    for (const auto& p : entries_) {
      if (p.name == name || p.value.id() == value.id()) {
        throw ContractError("parameter '" + name + "' registered twice");
      }
    }
    value.set_requires_grad(true);
    entries_.push_back({std::move(name), value});
    return value;
  }

  const std::vector<NamedParameter>& entries() const { return entries_; }
  std::size_t count() const { return entries_.size(); }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& p : entries_) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : entries_) p.value.zero_grad();
  }

 private:
  std::vector<NamedParameter> entries_;
};

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
  std::size_t in = 0;
  std::size_t out = 0;

  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, std::size_t in_width, std::size_t out_width)
      : weight(params.add(name + ".weight", Tensor(Shape{out_width, in_width}))),
        bias(params.add(name + ".bias", Tensor(Shape{out_width}))),
        in(in_width),
        out(out_width) {}

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 2 || x.dim(1) != in) {
      throw DimensionError("linear layer expects width " + std::to_string(in) + ", got " + shape_str(x.shape()));
    }
    return linear(x, weight, bias);
  }
};

/// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)), zero biases.
inline void init_params(Linear& layer, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
  for (double& w : layer.weight.mutable_data()) w = rng.uniform(-bound, bound);
  for (double& b : layer.bias.mutable_data()) b = 0.0;
}

/// Input projection, two residual blocks, output projection. The encoder
/// squashes its output with tanh; the decoder variant leaves it linear.
struct ResidualMLP {
  Linear input;
  Linear block1;
  Linear block2;
  Linear output;
  bool squash_output = true;

  ResidualMLP() = default;
  ResidualMLP(ParameterSet& params, const std::string& name, std::size_t in_width, std::size_t hidden,
              std::size_t out_width, bool squash)
      : input(params, name + ".input", in_width, hidden),
        block1(params, name + ".res1", hidden, hidden),
        block2(params, name + ".res2", hidden, hidden),
        output(params, name + ".output", hidden, out_width),
        squash_output(squash) {}

  Tensor operator()(const Tensor& x) const {
    Tensor a = tanh(input(x));
    a = a + tanh(block1(a));
    a = a + tanh(block2(a));
    Tensor y = output(a);
    return squash_output ? tanh(y) : y;
  }
};

inline void init_params(ResidualMLP& mlp, Rng& rng) {
  init_params(mlp.input, rng);
  init_params(mlp.block1, rng);
  init_params(mlp.block2, rng);
  init_params(mlp.output, rng);
}

struct LSTMState {
  Tensor h;  // [batch x hidden]
  Tensor c;  // [batch x hidden]
};

/// Gates (input, forget, candidate, output) computed from [x, h] in one affine map.
struct LSTMCell {
  Linear gates;
  std::size_t input_width = 0;
  std::size_t hidden = 0;

  LSTMCell() = default;
  LSTMCell(ParameterSet& params, const std::string& name, std::size_t in_width, std::size_t hidden_width)
      : gates(params, name + ".gates", in_width + hidden_width, 4 * hidden_width),
        input_width(in_width),
        hidden(hidden_width) {}

  LSTMState zero_state(std::size_t batch) const {
    return {Tensor(Shape{batch, hidden}), Tensor(Shape{batch, hidden})};
  }
};

inline LSTMState lstm_step(const LSTMCell& cell, const Tensor& x, const LSTMState& state) {
  if (x.rank() != 2 || x.dim(1) != cell.input_width) {
    throw DimensionError("lstm_step: input width " + std::to_string(cell.input_width) + " expected, got " +
                         shape_str(x.shape()));
  }
  if (state.h.rank() != 2 || state.h.dim(0) != x.dim(0) || state.h.dim(1) != cell.hidden ||
      state.c.shape() != state.h.shape()) {
    throw DimensionError("lstm_step: state shape does not match batch/hidden width");
  }
  const std::size_t h = cell.hidden;
  const Tensor pre = cell.gates(concat({x, state.h}, 1));
  const Tensor input_gate = sigmoid(slice(pre, 1, 0, h));
  const Tensor forget_gate = sigmoid(slice(pre, 1, h, 2 * h));
  const Tensor candidate = tanh(slice(pre, 1, 2 * h, 3 * h));
  const Tensor output_gate = sigmoid(slice(pre, 1, 3 * h, 4 * h));
  Tensor c = forget_gate * state.c + input_gate * candidate;
  Tensor out = output_gate * tanh(c);
  return {std::move(out), std::move(c)};
}

/// Glorot-uniform gate weights with the forget-gate bias slice set to +1.
inline void init_params(LSTMCell& cell, Rng& rng) {
  init_params(cell.gates, rng);
  auto bias = cell.gates.bias.mutable_data();
  for (std::size_t i = cell.hidden; i < 2 * cell.hidden; ++i) bias[i] = 1.0;
}

/// Stacked cells; layer k > 0 consumes the hidden output of layer k-1.
struct LSTMStack {
  std::vector<LSTMCell> layers;

  LSTMStack() = default;
  LSTMStack(ParameterSet& params, const std::string& name, std::size_t in_width, std::size_t hidden,
            std::size_t depth) {
    for (std::size_t k = 0; k < depth; ++k) {
      layers.emplace_back(params, name + ".l" + std::to_string(k), k == 0 ? in_width : hidden, hidden);
    }
  }

  std::vector<LSTMState> zero_state(std::size_t batch) const {
    std::vector<LSTMState> s;
    for (const auto& cell : layers) s.push_back(cell.zero_state(batch));
    return s;
  }

  /// Returns the updated per-layer states; the top layer's h is the output.
  std::vector<LSTMState> step(const Tensor& x, const std::vector<LSTMState>& state) const {
    if (state.size() != layers.size()) throw DimensionError("LSTM stack state depth mismatch");
    std::vector<LSTMState> next;
    next.reserve(layers.size());
    Tensor in = x;
    for (std::size_t k = 0; k < layers.size(); ++k) {
      next.push_back(lstm_step(layers[k], in, state[k]));
      in = next.back().h;
    }
    return next;
  }
};

inline void init_params(LSTMStack& stack, Rng& rng) {
  for (auto& cell : stack.layers) init_params(cell, rng);
}

struct Gaussian {
  Tensor mean;
  Tensor logvar;
};

/// Maps a hidden state to a diagonal Gaussian parameterized by (mean, log-variance).
struct GaussianHead {
  Linear mean;
  Linear logvar;

  GaussianHead() = default;
  GaussianHead(ParameterSet& params, const std::string& name, std::size_t hidden, std::size_t latent)
      : mean(params, name + ".mean", hidden, latent), logvar(params, name + ".logvar", hidden, latent) {}

  Gaussian operator()(const Tensor& h) const { return {mean(h), logvar(h)}; }
};

inline void init_params(GaussianHead& head, Rng& rng) {
  init_params(head.mean, rng);
  init_params(head.logvar, rng);
}

/// z = mean + exp(logvar / 2) * noise. The noise tensor carries no gradient.
inline Tensor reparam_sample(const Tensor& mean, const Tensor& logvar, const Tensor& noise) {
  if (mean.shape() != logvar.shape() || noise.shape() != mean.shape()) {
    throw DimensionError("reparam_sample: mean/logvar/noise shapes differ");
  }
  return mean + exp(scale(logvar, 0.5)) * noise;
}

inline Tensor standard_normal(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.mutable_data()) v = rng.normal();
  return t;
}

inline Tensor reparam_sample(const Tensor& mean, const Tensor& logvar, Rng& rng) {
  if (mean.shape() != logvar.shape()) throw DimensionError("reparam_sample: mean/logvar shapes differ");
  return reparam_sample(mean, logvar, standard_normal(mean.shape(), rng));
}

}  // namespace p2p
