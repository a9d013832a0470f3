#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "skipgrid/model.hpp"
#include "skipgrid/tensor.hpp"

namespace skipgrid::gradcheck {

// Central differences with h = 1e-3, forward recomputed in double precision,
// against the float32 analytic gradient. Errors are normalized by
// max(1, |analytic|, |numeric|) so near-zero gradients compare absolutely.
constexpr double kStep = 1e-3;
constexpr double kTolerance = 1e-4;

struct CheckOutcome {
  std::string name;
  int seeds = 0;
  long elements = 0;    // gradient entries compared
  double max_err = 0.0;
  bool passed = false;
};

inline double grad_err(double analytic, double numeric) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  return std::abs(analytic - numeric) / denom;
}

// A case supplies input shapes plus a forward functor instantiable at float
// (analytic path) and double (numeric recompute). Inputs are drawn from
// N(0, scale^2); min_abs pushes draws away from non-smooth points.
template <typename Case>
CheckOutcome check_gradients(const Case& c, int n_seeds, std::uint64_t seed0 = 0xC0FFEE) {
  CheckOutcome out;
  out.name = c.name;
  out.seeds = n_seeds;

  for (int s = 0; s < n_seeds; ++s) {
    RngState rng = derive_stream(seed0, static_cast<std::uint64_t>(s));
    std::vector<Tensor<float>> in32;
    std::vector<Tensor<double>> in64;
    for (const Shape& shape : c.shapes) {
      std::vector<float> v(static_cast<std::size_t>(numel(shape)));
      for (auto& x : v) {
        x = static_cast<float>(rng.next_normal()) * c.scale;
        if (c.min_abs > 0.0f && std::abs(x) < c.min_abs) x = x < 0 ? x - c.min_abs : x + c.min_abs;
      }
      std::vector<double> v64(v.begin(), v.end());
      in32.push_back(Tensor<float>::from(shape, std::move(v), true));
      in64.push_back(Tensor<double>::from(shape, std::move(v64), false));
    }

    // Analytic pass at float32, through a random linear projection to a scalar.
    Tape<float> tape;
    Tensor<float> y32 = c(tape, in32);
    std::vector<float> proj(static_cast<std::size_t>(y32.size()));
    for (auto& x : proj) x = static_cast<float>(rng.next_normal());
    Tensor<float> r32 = Tensor<float>::from(y32.shape(), proj);
    backward(tape, mean(tape, mul(tape, y32, r32)));

    // Numeric recompute at float64 with the same projection.
    auto eval = [&]() -> double {
      Tape<double> t(false);
      Tensor<double> y = c(t, in64);
      double acc = 0.0;
      for (long i = 0; i < y.size(); ++i)
        acc += y.values()[i] * static_cast<double>(proj[static_cast<std::size_t>(i)]);
      return acc / static_cast<double>(y.size());
    };

    for (std::size_t i = 0; i < in32.size(); ++i) {
      std::span<const float> analytic = in32[i].grad_view();
      std::span<double> v = in64[i].values();
      for (long e = 0; e < in64[i].size(); ++e) {
        const double orig = v[e];
        v[e] = orig + kStep;
        const double up = eval();
        v[e] = orig - kStep;
        const double down = eval();
        v[e] = orig;
        const double fd = (up - down) / (2.0 * kStep);
        const double err = grad_err(static_cast<double>(analytic[e]), fd);
        out.max_err = std::max(out.max_err, err);
        ++out.elements;
      }
    }
  }
  out.passed = out.max_err < kTolerance;
  return out;
}

namespace cases {

struct Matmul {
  std::string name = "matmul";
  std::vector<Shape> shapes{{3, 4}, {4, 2}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return matmul(t, in[0], in[1]);
  }
};

struct MatmulBatched {
  std::string name = "matmul_batched";
  std::vector<Shape> shapes{{2, 3, 4}, {2, 4, 2}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return matmul(t, in[0], in[1]);
  }
};

struct AddBroadcast {
  std::string name = "add_broadcast";
  std::vector<Shape> shapes{{2, 3}, {3}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return add(t, in[0], in[1]);
  }
};

struct Mul {
  std::string name = "mul";
  std::vector<Shape> shapes{{2, 4}, {2, 4}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return mul(t, in[0], in[1]);
  }
};

struct ScaleOp {
  std::string name = "scale";
  std::vector<Shape> shapes{{5}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return skipgrid::scale(t, in[0], S(1.7));
  }
};

struct Transpose {
  std::string name = "transpose_last2";
  std::vector<Shape> shapes{{2, 3, 4}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return transpose_last2(t, in[0]);
  }
};

struct SplitConcat {
  std::string name = "split_concat";
  std::vector<Shape> shapes{{2, 3, 6}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    std::vector<Tensor<S>> parts = split_last_dim(t, in[0], 3);
    std::vector<Tensor<S>> reversed(parts.rbegin(), parts.rend());
    return concat_last_dim(t, reversed);
  }
};

struct Reshape {
  std::string name = "reshape";
  std::vector<Shape> shapes{{2, 6}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    // through a view and back into an op, so gradient flow through views is covered
    return mul(t, reshape(t, in[0], {3, 4}), reshape(t, in[0], {3, 4}));
  }
};

struct GatherRows {
  std::string name = "gather_rows";
  std::vector<Shape> shapes{{5, 3}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return gather_rows(t, in[0], {0, 2, 4, 2});  // repeated id: scatter-add carry
  }
};

struct MaskedFill {
  std::string name = "masked_fill";
  std::vector<Shape> shapes{{2, 3, 3}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return masked_fill(t, in[0], causal_mask(3), S(-3));
  }
};

struct Softmax {
  std::string name = "softmax";
  std::vector<Shape> shapes{{2, 5}};
  float scale = 0.8f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return softmax(t, in[0]);
  }
};

struct MeanOp {
  std::string name = "mean";
  std::vector<Shape> shapes{{2, 4}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return mean(t, in[0]);
  }
};

struct Relu {
  std::string name = "relu";
  std::vector<Shape> shapes{{6}};
  float scale = 0.6f, min_abs = 0.05f;  // keep clear of the kink at 0
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return relu(t, in[0]);
  }
};

struct Gelu {
  std::string name = "gelu";
  std::vector<Shape> shapes{{6}};
  float scale = 0.8f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return gelu(t, in[0]);
  }
};

struct LayerNorm {
  std::string name = "layernorm";
  std::vector<Shape> shapes{{2, 5}, {5}, {5}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return layernorm(t, in[0], in[1], in[2], S(1e-5));
  }
};

struct CrossEntropy {
  std::string name = "cross_entropy";
  std::vector<Shape> shapes{{4, 6}};
  float scale = 0.8f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    return cross_entropy(t, in[0], {1, 0, 5, 3});
  }
};

struct DropoutUnscaled {
  std::string name = "dropout_unscaled";
  std::vector<Shape> shapes{{3, 4}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    RngState rng(42);  // same mask every evaluation
    return dropout_forward(t, in[0], DropoutSpec::unscaled(0.35f), Mode::kTrain, rng);
  }
};

struct DropoutInverted {
  std::string name = "dropout_inverted";
  std::vector<Shape> shapes{{3, 4}};
  float scale = 0.6f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    RngState rng(43);
    return dropout_forward(t, in[0], DropoutSpec::inverted(0.35f), Mode::kTrain, rng);
  }
};

// x plus the eight attention parameter tensors, dropout off.
struct Attention {
  std::string name = "attention";
  std::vector<Shape> shapes{{2, 3, 4}, {4, 4}, {4}, {4, 4}, {4}, {4, 4}, {4}, {4, 4}, {4}};
  float scale = 0.5f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    AttentionConfig cfg;
    cfg.n_head = 2;
    cfg.n_embd = 4;
    cfg.block_size = 8;
    cfg.attn_dropout = DropoutSpec::inverted(0.0f);
    AttentionParams<S> p;
    p.query = {in[1], in[2]};
    p.key = {in[3], in[4]};
    p.value = {in[5], in[6]};
    p.proj = {in[7], in[8]};
    RngState r1(1), r2(2);
    return causal_self_attention(t, in[0], cfg, p, Mode::kEval, r1, r2);
  }
};

struct Mlp {
  std::string name = "mlp";
  std::vector<Shape> shapes{{2, 3, 4}, {4, 16}, {16}, {16, 4}, {4}};
  float scale = 0.5f, min_abs = 0.0f;
  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    MlpParams<S> p;
    p.fc = {in[1], in[2]};
    p.proj = {in[3], in[4]};
    p.activation = Activation::kGelu;
    RngState r(3);
    return mlp_forward(t, in[0], p, DropoutSpec::inverted(0.0f), Mode::kEval, r);
  }
};

// Every parameter of a 2-block model, through the full forward to logits.
struct FullModel {
  std::string name = "full_model_2block";
  ModelConfig cfg;
  std::vector<Shape> shapes;
  float scale = 0.3f, min_abs = 0.0f;

  FullModel() {
    cfg.n_layer = 2;
    cfg.n_head = 2;
    cfg.n_embd = 8;
    cfg.block_size = 6;
    cfg.vocab_size = 11;
    cfg.attn_mlp_dropout = 0.0f;
    cfg.topology.skip1 = 0.0f;
    cfg.topology.skip2 = 0.0f;  // exercise the skip-2 wiring too
    cfg.activation = Activation::kGelu;
    for (const ParamSpec& ps : parameter_spec(cfg)) shapes.push_back(ps.shape);
  }

  template <typename S>
  Tensor<S> operator()(Tape<S>& t, const std::vector<Tensor<S>>& in) const {
    DecoderModel<S> m = assemble_model(cfg, in);
    const std::vector<std::int32_t> tokens{3, 1, 4, 1, 5, 9, 2, 6};  // [2, 4]
    return model_forward(t, m, tokens, 2, 4, Mode::kEval);
  }
};

}  // namespace cases

inline std::vector<CheckOutcome> run_default_suite(int n_seeds = 20) {
  std::vector<CheckOutcome> results;
  results.push_back(check_gradients(cases::Matmul{}, n_seeds));
  results.push_back(check_gradients(cases::MatmulBatched{}, n_seeds));
  results.push_back(check_gradients(cases::AddBroadcast{}, n_seeds));
  results.push_back(check_gradients(cases::Mul{}, n_seeds));
  results.push_back(check_gradients(cases::ScaleOp{}, n_seeds));
  results.push_back(check_gradients(cases::Transpose{}, n_seeds));
  results.push_back(check_gradients(cases::SplitConcat{}, n_seeds));
  results.push_back(check_gradients(cases::Reshape{}, n_seeds));
  results.push_back(check_gradients(cases::GatherRows{}, n_seeds));
  results.push_back(check_gradients(cases::MaskedFill{}, n_seeds));
  results.push_back(check_gradients(cases::Softmax{}, n_seeds));
  results.push_back(check_gradients(cases::MeanOp{}, n_seeds));
  results.push_back(check_gradients(cases::Relu{}, n_seeds));
  results.push_back(check_gradients(cases::Gelu{}, n_seeds));
  results.push_back(check_gradients(cases::LayerNorm{}, n_seeds));
  results.push_back(check_gradients(cases::CrossEntropy{}, n_seeds));
  results.push_back(check_gradients(cases::DropoutUnscaled{}, n_seeds));
  results.push_back(check_gradients(cases::DropoutInverted{}, n_seeds));
  results.push_back(check_gradients(cases::Attention{}, n_seeds));
  results.push_back(check_gradients(cases::Mlp{}, n_seeds));
  results.push_back(check_gradients(cases::FullModel{}, n_seeds));
  return results;
}

}  // namespace skipgrid::gradcheck
