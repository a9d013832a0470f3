#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "skipgrid/rng.hpp"
#include "skipgrid/tensor.hpp"

namespace skipgrid {

enum class Mode { kTrain, kEval };
enum class Activation { kGelu, kRelu };

inline Activation activation_from_string(const std::string& s) {
  if (s == "gelu") return Activation::kGelu;
  if (s == "relu") return Activation::kRelu;
  throw Error::config("unknown activation '" + s + "' (expected gelu or relu)");
}

inline const char* to_string(Activation a) {
  return a == Activation::kGelu ? "gelu" : "relu";
}

// Dropout rate plus scaling mode. scaled=true is the usual inverted dropout
// (kept units multiplied by 1/(1-p), E[out]=in); scaled=false keeps units
// as-is, so E[out]=(1-p)*in and rate 1 smoothly removes the connection.
struct DropoutSpec {
  float rate = 0.0f;
  bool scaled = true;

  void validate() const {
    if (rate < 0.0f || rate > 1.0f)
      throw Error::config("dropout rate " + std::to_string(rate) + " outside [0,1]");
    if (scaled && rate >= 1.0f)
      throw Error::config("scaled dropout cannot have rate 1 (keep factor 1/(1-p) is undefined)");
  }

  static DropoutSpec inverted(float rate) { return {rate, true}; }
  static DropoutSpec unscaled(float rate) { return {rate, false}; }
};

// Per-element Bernoulli masking. The mask is drawn once in the forward pass
// and reused by the backward rule. Eval mode and rate 0 are exact identities;
// unscaled rate 1 is an exact zero with no gradient path.
template <typename S>
Tensor<S> dropout_forward(Tape<S>& tape, const Tensor<S>& x, const DropoutSpec& spec, Mode mode,
                          RngState& rng) {
  spec.validate();
  if (mode == Mode::kEval || spec.rate == 0.0f) return x;
  if (spec.rate >= 1.0f) return Tensor<S>::zeros(x.shape());

  const long n = x.size();
  const S factor = spec.scaled ? S(1) / (S(1) - static_cast<S>(spec.rate)) : S(1);
  auto keep = std::make_shared<std::vector<std::uint8_t>>(static_cast<std::size_t>(n));
  Tensor<S> y = Tensor<S>::zeros(x.shape());
  for (long i = 0; i < n; ++i) {
    const bool k = rng.next_uniform() >= spec.rate;
    (*keep)[static_cast<std::size_t>(i)] = k;
    y.values()[i] = k ? x.values()[i] * factor : S(0);
  }
  if (tape.recording() && x.requires_grad()) {
    y.set_requires_grad(true);
    Tensor<S> xc = x, yc = y;
    tape.record(y, [xc, yc, keep, factor, n]() mutable {
      std::span<const S> dy = yc.grad_view();
      std::span<S> dx = xc.grad();
      for (long i = 0; i < n; ++i)
        if ((*keep)[static_cast<std::size_t>(i)]) dx[i] += dy[i] * factor;
    });
  }
  return y;
}

template <typename S>
struct LinearLayer {
  Tensor<S> weight;  // [in, out]
  Tensor<S> bias;    // [out]

  static LinearLayer init(int in, int out, S std_dev, RngState& rng) {
    LinearLayer l;
    std::vector<S> w(static_cast<std::size_t>(in) * out);
    for (auto& v : w) v = static_cast<S>(rng.next_normal()) * std_dev;
    l.weight = Tensor<S>::from({in, out}, std::move(w), true);
    l.bias = Tensor<S>::zeros({out}, true);
    return l;
  }

  Tensor<S> forward(Tape<S>& tape, const Tensor<S>& x) const {
    return add(tape, matmul(tape, x, weight), bias);
  }
};

template <typename S>
struct LayerNormParams {
  Tensor<S> gain;  // [d]
  Tensor<S> bias;  // [d]
  S eps = S(1e-5);

  static LayerNormParams init(int d) {
    LayerNormParams p;
    p.gain = Tensor<S>::full({d}, S(1), true);
    p.bias = Tensor<S>::zeros({d}, true);
    return p;
  }
};

template <typename S>
Tensor<S> layernorm_forward(Tape<S>& tape, const Tensor<S>& x, const LayerNormParams<S>& params) {
  return layernorm(tape, x, params.gain, params.bias, params.eps);
}

struct AttentionConfig {
  int n_head = 4;
  int n_embd = 128;
  int block_size = 64;
  DropoutSpec attn_dropout;  // scaled; applied to attention weights and sublayer output

  void validate() const {
    if (n_head <= 0 || n_embd <= 0 || block_size <= 0)
      throw Error::config("attention dims must be positive");
    if (n_embd % n_head != 0)
      throw Error::config("n_embd " + std::to_string(n_embd) + " not divisible by n_head " +
                          std::to_string(n_head));
    attn_dropout.validate();
  }
};

template <typename S>
struct AttentionParams {
  LinearLayer<S> query, key, value, proj;

  static AttentionParams init(int n_embd, S std_dev, RngState& rng) {
    AttentionParams p;
    p.query = LinearLayer<S>::init(n_embd, n_embd, std_dev, rng);
    p.key = LinearLayer<S>::init(n_embd, n_embd, std_dev, rng);
    p.value = LinearLayer<S>::init(n_embd, n_embd, std_dev, rng);
    p.proj = LinearLayer<S>::init(n_embd, n_embd, std_dev, rng);
    return p;
  }
};

// Multi-head scaled dot-product attention with a strict causal mask: position
// t sees positions <= t only. Dropout (inverted) hits the post-softmax
// weights and the projected output; weight_rng and out_rng are the two sites.
// `weights_out`, when given, receives the per-head pre-dropout weights.
template <typename S>
Tensor<S> causal_self_attention(Tape<S>& tape, const Tensor<S>& x, const AttentionConfig& cfg,
                                const AttentionParams<S>& params, Mode mode, RngState& weight_rng,
                                RngState& out_rng, std::vector<Tensor<S>>* weights_out = nullptr) {
  cfg.validate();
  if (x.ndim() != 3)
    throw Error::dimension("attention input must be [batch, time, channels], got " +
                           shape_str(x.shape()));
  const int t = x.dim(1);
  const int c = x.dim(2);
  if (t > cfg.block_size)
    throw Error::contract("context length " + std::to_string(t) + " exceeds block size " +
                          std::to_string(cfg.block_size));
  if (c != cfg.n_embd)
    throw Error::dimension("attention channels " + std::to_string(c) + " != n_embd " +
                           std::to_string(cfg.n_embd));

  const int head_dim = cfg.n_embd / cfg.n_head;
  const S inv_sqrt_hd = S(1) / std::sqrt(static_cast<S>(head_dim));
  // Finite stand-in for -inf; exp(kMaskFill - max) underflows to exactly 0.
  const S kMaskFill = S(-1e9);

  Tensor<S> q = params.query.forward(tape, x);
  Tensor<S> k = params.key.forward(tape, x);
  Tensor<S> v = params.value.forward(tape, x);

  const Mask mask = causal_mask(t);
  std::vector<Tensor<S>> q_h = split_last_dim(tape, q, cfg.n_head);
  std::vector<Tensor<S>> k_h = split_last_dim(tape, k, cfg.n_head);
  std::vector<Tensor<S>> v_h = split_last_dim(tape, v, cfg.n_head);

  std::vector<Tensor<S>> heads;
  heads.reserve(static_cast<std::size_t>(cfg.n_head));
  for (int h = 0; h < cfg.n_head; ++h) {
    Tensor<S> scores = matmul(tape, q_h[h], transpose_last2(tape, k_h[h]));  // [B,T,T]
    scores = scale(tape, scores, inv_sqrt_hd);
    scores = masked_fill(tape, scores, mask, kMaskFill);
    Tensor<S> w = softmax(tape, scores);
    if (weights_out) weights_out->push_back(w);
    w = dropout_forward(tape, w, cfg.attn_dropout, mode, weight_rng);
    heads.push_back(matmul(tape, w, v_h[h]));  // [B,T,head_dim]
  }
  Tensor<S> out = params.proj.forward(tape, concat_last_dim(tape, heads));
  return dropout_forward(tape, out, cfg.attn_dropout, mode, out_rng);
}

template <typename S>
struct MlpParams {
  LinearLayer<S> fc;    // [C, 4C]
  LinearLayer<S> proj;  // [4C, C]
  Activation activation = Activation::kGelu;

  static MlpParams init(int n_embd, Activation act, S std_dev, RngState& rng) {
    MlpParams p;
    p.fc = LinearLayer<S>::init(n_embd, 4 * n_embd, std_dev, rng);
    p.proj = LinearLayer<S>::init(4 * n_embd, n_embd, std_dev, rng);
    p.activation = act;
    return p;
  }
};

// linear(C -> 4C) -> activation -> linear(4C -> C) -> dropout.
template <typename S>
Tensor<S> mlp_forward(Tape<S>& tape, const Tensor<S>& x, const MlpParams<S>& params,
                      const DropoutSpec& spec, Mode mode, RngState& rng) {
  Tensor<S> h = params.fc.forward(tape, x);
  h = params.activation == Activation::kGelu ? gelu(tape, h) : relu(tape, h);
  h = params.proj.forward(tape, h);
  return dropout_forward(tape, h, spec, mode, rng);
}

}  // namespace skipgrid
