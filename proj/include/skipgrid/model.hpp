#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "skipgrid/layers.hpp"
#include "skipgrid/rng.hpp"
#include "skipgrid/tensor.hpp"

namespace skipgrid {

// Which additive identity paths exist and how much unscaled dropout each one
// carries. skip1 is the standard per-sublayer residual; skip2/skip4 connect
// block outputs h_{i-2} / h_{i-4} into block i. An absent rate disables that
// connection depth entirely.
struct ResidualTopology {
  float skip1 = 0.0f;
  std::optional<float> skip2;
  std::optional<float> skip4;
  // Block i gets a skip-k edge when i >= k and (i - k) % stride == 0;
  // stride 1 adds one at every eligible block.
  int stride = 1;

  void validate() const {
    auto check = [](const char* name, float r) {
      if (r < 0.0f || r > 1.0f)
        throw Error::config(std::string(name) + " dropout rate " + std::to_string(r) +
                            " outside [0,1]");
    };
    check("skip1", skip1);
    if (skip2) check("skip2", *skip2);
    if (skip4) check("skip4", *skip4);
    if (skip4 && !skip2) throw Error::config("skip4 requires skip2 to be enabled");
    if (stride < 1) throw Error::config("residual stride must be >= 1");
  }
};

struct ModelConfig {
  int n_layer = 16;
  int n_head = 4;
  int n_embd = 128;
  int block_size = 64;
  int vocab_size = 0;
  float attn_mlp_dropout = 0.0f;
  ResidualTopology topology;
  Activation activation = Activation::kGelu;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_layer < 1) throw Error::config("n_layer must be >= 1, got " + std::to_string(n_layer));
    if (block_size < 1)
      throw Error::config("block_size must be >= 1, got " + std::to_string(block_size));
    if (n_head < 1 || n_embd < 1) throw Error::config("n_head and n_embd must be >= 1");
    if (n_embd % n_head != 0)
      throw Error::config("n_embd " + std::to_string(n_embd) + " not divisible by n_head " +
                          std::to_string(n_head));
    if (vocab_size < 1)
      throw Error::config("vocab_size must be >= 1, got " + std::to_string(vocab_size));
    if (attn_mlp_dropout < 0.0f || attn_mlp_dropout >= 1.0f)
      throw Error::config("attn/mlp dropout rate " + std::to_string(attn_mlp_dropout) +
                          " outside [0,1)");
    topology.validate();
  }
};

// Canonical parameter layout: registration order, names, shapes, and the
// initializer family for each slot. Everything that walks parameters
// (optimizer, checkpoints, model assembly) agrees through this list.
enum class ParamInit { kNormal, kZeros, kOnes };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamInit init;
};

inline std::vector<ParamSpec> parameter_spec(const ModelConfig& cfg) {
  std::vector<ParamSpec> out;
  const int c = cfg.n_embd;
  out.push_back({"tok_emb", {cfg.vocab_size, c}, ParamInit::kNormal});
  out.push_back({"pos_emb", {cfg.block_size, c}, ParamInit::kNormal});
  for (int i = 0; i < cfg.n_layer; ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    out.push_back({p + "ln1.gain", {c}, ParamInit::kOnes});
    out.push_back({p + "ln1.bias", {c}, ParamInit::kZeros});
    out.push_back({p + "attn.q.w", {c, c}, ParamInit::kNormal});
    out.push_back({p + "attn.q.b", {c}, ParamInit::kZeros});
    out.push_back({p + "attn.k.w", {c, c}, ParamInit::kNormal});
    out.push_back({p + "attn.k.b", {c}, ParamInit::kZeros});
    out.push_back({p + "attn.v.w", {c, c}, ParamInit::kNormal});
    out.push_back({p + "attn.v.b", {c}, ParamInit::kZeros});
    out.push_back({p + "attn.o.w", {c, c}, ParamInit::kNormal});
    out.push_back({p + "attn.o.b", {c}, ParamInit::kZeros});
    out.push_back({p + "ln2.gain", {c}, ParamInit::kOnes});
    out.push_back({p + "ln2.bias", {c}, ParamInit::kZeros});
    out.push_back({p + "mlp.fc.w", {c, 4 * c}, ParamInit::kNormal});
    out.push_back({p + "mlp.fc.b", {4 * c}, ParamInit::kZeros});
    out.push_back({p + "mlp.proj.w", {4 * c, c}, ParamInit::kNormal});
    out.push_back({p + "mlp.proj.b", {c}, ParamInit::kZeros});
  }
  out.push_back({"ln_f.gain", {c}, ParamInit::kOnes});
  out.push_back({"ln_f.bias", {c}, ParamInit::kZeros});
  out.push_back({"head.w", {c, cfg.vocab_size}, ParamInit::kNormal});
  return out;
}

template <typename S>
struct DecoderBlock {
  LayerNormParams<S> ln1;
  AttentionParams<S> attn;
  LayerNormParams<S> ln2;
  MlpParams<S> mlp;
};

template <typename S>
struct DecoderModel {
  ModelConfig config;
  Tensor<S> tok_emb;  // [vocab, n_embd]
  Tensor<S> pos_emb;  // [block_size, n_embd]
  std::vector<DecoderBlock<S>> blocks;
  LayerNormParams<S> ln_f;
  Tensor<S> head;  // [n_embd, vocab]

  // Handles in parameter_spec order.
  std::vector<std::pair<std::string, Tensor<S>>> parameters;

  long num_params() const {
    long n = 0;
    for (const auto& [name, t] : parameters) n += t.size();
    return n;
  }

  Tensor<S> find_param(const std::string& name) const {
    for (const auto& [n, t] : parameters)
      if (n == name) return t;
    throw Error::contract("no parameter named " + name);
  }

  void zero_grads() {
    for (auto& [name, t] : parameters) t.zero_grad();
  }
};

// Wire a model around externally owned tensors given in parameter_spec
// order. Gradients then land on the caller's handles, which is what the
// optimizer, the checkpoint loader, and gradient checking all want.
template <typename S>
DecoderModel<S> assemble_model(const ModelConfig& cfg, std::vector<Tensor<S>> params) {
  cfg.validate();
  const std::vector<ParamSpec> spec = parameter_spec(cfg);
  if (params.size() != spec.size())
    throw Error::contract("expected " + std::to_string(spec.size()) + " parameter tensors, got " +
                          std::to_string(params.size()));
  for (std::size_t i = 0; i < spec.size(); ++i) {
    if (params[i].shape() != spec[i].shape)
      throw Error::dimension("parameter " + spec[i].name + " has shape " +
                             shape_str(params[i].shape()) + ", expected " +
                             shape_str(spec[i].shape));
    params[i].set_requires_grad(true);
  }

  DecoderModel<S> m;
  m.config = cfg;
  std::size_t at = 0;
  auto take = [&](Tensor<S>& slot) {
    slot = params[at];
    m.parameters.emplace_back(spec[at].name, params[at]);
    ++at;
  };
  take(m.tok_emb);
  take(m.pos_emb);
  m.blocks.resize(static_cast<std::size_t>(cfg.n_layer));
  for (auto& b : m.blocks) {
    take(b.ln1.gain);
    take(b.ln1.bias);
    take(b.attn.query.weight);
    take(b.attn.query.bias);
    take(b.attn.key.weight);
    take(b.attn.key.bias);
    take(b.attn.value.weight);
    take(b.attn.value.bias);
    take(b.attn.proj.weight);
    take(b.attn.proj.bias);
    take(b.ln2.gain);
    take(b.ln2.bias);
    take(b.mlp.fc.weight);
    take(b.mlp.fc.bias);
    take(b.mlp.proj.weight);
    take(b.mlp.proj.bias);
    b.mlp.activation = cfg.activation;
  }
  take(m.ln_f.gain);
  take(m.ln_f.bias);
  take(m.head);
  return m;
}

// Weights ~ N(0, 0.02), biases 0, layer-norm gain 1; deterministic in
// config.seed.
template <typename S>
DecoderModel<S> build_model(const ModelConfig& cfg) {
  cfg.validate();
  constexpr std::uint64_t kInitStream = 0xD1CE;
  RngState rng = derive_stream(cfg.seed, kInitStream);
  const S std_dev = S(0.02);

  std::vector<Tensor<S>> params;
  for (const ParamSpec& ps : parameter_spec(cfg)) {
    switch (ps.init) {
      case ParamInit::kNormal: {
        std::vector<S> v(static_cast<std::size_t>(numel(ps.shape)));
        for (auto& x : v) x = static_cast<S>(rng.next_normal()) * std_dev;
        params.push_back(Tensor<S>::from(ps.shape, std::move(v), true));
        break;
      }
      case ParamInit::kZeros:
        params.push_back(Tensor<S>::zeros(ps.shape, true));
        break;
      case ParamInit::kOnes:
        params.push_back(Tensor<S>::full(ps.shape, S(1), true));
        break;
    }
  }
  return assemble_model(cfg, std::move(params));
}

// Randomized sites inside one forward pass. Streams are keyed by
// (seed, block, kind, round) so each site draws independently: toggling one
// site never shifts the masks any other site sees.
enum class DropSite : std::uint64_t {
  kAttnWeights = 0,
  kAttnOut = 1,
  kMlpOut = 2,
  kSkip1Attn = 3,
  kSkip1Mlp = 4,
  kSkip2 = 5,
  kSkip4 = 6,
};

inline RngState site_stream(std::uint64_t seed, int block, DropSite site, std::uint64_t round) {
  return derive_stream(
      seed, static_cast<std::uint64_t>(block) * 8 + static_cast<std::uint64_t>(site), round);
}

// Full decoder forward. tokens is row-major [batch, time]. `round` selects
// the dropout streams for this pass (the training iteration, by convention).
//
// Block wiring, for block i in 1..n_layer with x = h_{i-1}:
//   a = drop1(x) + Attn(LN1(x))
//   s = drop1(a) + MLP(LN2(a))
//   h_i = s (+ drop2(h_{i-2}) when enabled) (+ drop4(h_{i-4}) when enabled)
// where dropN are the unscaled residual-path dropouts from the topology.
template <typename S>
Tensor<S> model_forward(Tape<S>& tape, const DecoderModel<S>& m,
                        const std::vector<std::int32_t>& tokens, int batch, int time, Mode mode,
                        std::uint64_t round = 0) {
  const ModelConfig& cfg = m.config;
  if (batch < 1 || time < 1 ||
      static_cast<long>(tokens.size()) != static_cast<long>(batch) * time)
    throw Error::contract("token buffer does not match batch " + std::to_string(batch) +
                          " x time " + std::to_string(time));
  if (time > cfg.block_size)
    throw Error::contract("context length " + std::to_string(time) + " exceeds block size " +
                          std::to_string(cfg.block_size));
  for (std::int32_t id : tokens)
    if (id < 0 || id >= cfg.vocab_size)
      throw Error::index("token id " + std::to_string(id) + " out of range [0," +
                         std::to_string(cfg.vocab_size) + ")");

  const DropoutSpec attn_drop = DropoutSpec::inverted(cfg.attn_mlp_dropout);
  const DropoutSpec skip1_drop = DropoutSpec::unscaled(cfg.topology.skip1);

  AttentionConfig acfg;
  acfg.n_head = cfg.n_head;
  acfg.n_embd = cfg.n_embd;
  acfg.block_size = cfg.block_size;
  acfg.attn_dropout = attn_drop;

  std::vector<std::int32_t> pos_ids(static_cast<std::size_t>(time));
  for (int t = 0; t < time; ++t) pos_ids[static_cast<std::size_t>(t)] = t;

  Tensor<S> tok =
      reshape(tape, gather_rows(tape, m.tok_emb, tokens), {batch, time, cfg.n_embd});
  Tensor<S> pos = gather_rows(tape, m.pos_emb, pos_ids);  // [time, n_embd]
  Tensor<S> h = add(tape, tok, pos);

  // h_0 .. h_i; kept so skip-2/skip-4 edges can reach back.
  std::vector<Tensor<S>> history;
  history.push_back(h);

  for (int i = 1; i <= cfg.n_layer; ++i) {
    const auto& blk = m.blocks[static_cast<std::size_t>(i - 1)];
    const Tensor<S>& x = history.back();

    RngState attn_w_rng = site_stream(cfg.seed, i, DropSite::kAttnWeights, round);
    RngState attn_o_rng = site_stream(cfg.seed, i, DropSite::kAttnOut, round);
    RngState mlp_rng = site_stream(cfg.seed, i, DropSite::kMlpOut, round);
    RngState skip1a_rng = site_stream(cfg.seed, i, DropSite::kSkip1Attn, round);
    RngState skip1m_rng = site_stream(cfg.seed, i, DropSite::kSkip1Mlp, round);

    Tensor<S> attn_out = causal_self_attention(tape, layernorm_forward(tape, x, blk.ln1), acfg,
                                               blk.attn, mode, attn_w_rng, attn_o_rng);
    Tensor<S> a = add(tape, dropout_forward(tape, x, skip1_drop, mode, skip1a_rng), attn_out);

    Tensor<S> mlp_out =
        mlp_forward(tape, layernorm_forward(tape, a, blk.ln2), blk.mlp, attn_drop, mode, mlp_rng);
    Tensor<S> s = add(tape, dropout_forward(tape, a, skip1_drop, mode, skip1m_rng), mlp_out);

    Tensor<S> out = s;
    if (cfg.topology.skip2 && i >= 2 && (i - 2) % cfg.topology.stride == 0) {
      RngState r = site_stream(cfg.seed, i, DropSite::kSkip2, round);
      out = add(tape, out,
                dropout_forward(tape, history[static_cast<std::size_t>(i - 2)],
                                DropoutSpec::unscaled(*cfg.topology.skip2), mode, r));
    }
    if (cfg.topology.skip4 && i >= 4 && (i - 4) % cfg.topology.stride == 0) {
      RngState r = site_stream(cfg.seed, i, DropSite::kSkip4, round);
      out = add(tape, out,
                dropout_forward(tape, history[static_cast<std::size_t>(i - 4)],
                                DropoutSpec::unscaled(*cfg.topology.skip4), mode, r));
    }
    history.push_back(out);
  }

  Tensor<S> y = layernorm_forward(tape, history.back(), m.ln_f);
  y = reshape(tape, y, {batch * time, cfg.n_embd});
  y = matmul(tape, y, m.head);
  return reshape(tape, y, {batch, time, cfg.vocab_size});
}

// Autoregressive sampling. temperature below 1e-6 is treated as the argmax
// limit. The context is cropped to the trailing block_size tokens.
template <typename S>
std::vector<std::int32_t> generate(const DecoderModel<S>& m, std::vector<std::int32_t> ids,
                                   int n_new, float temperature, RngState& rng) {
  if (ids.empty()) throw Error::contract("generate requires a non-empty prompt");
  if (temperature < 0.0f) throw Error::contract("temperature must be non-negative");
  const int v = m.config.vocab_size;
  for (int step = 0; step < n_new; ++step) {
    const int ctx = std::min<int>(static_cast<int>(ids.size()), m.config.block_size);
    std::vector<std::int32_t> window(ids.end() - ctx, ids.end());
    Tape<S> tape(false);
    Tensor<S> logits = model_forward(tape, m, window, 1, ctx, Mode::kEval);
    std::span<const S> row = logits.values().subspan(static_cast<std::size_t>(ctx - 1) * v,
                                                     static_cast<std::size_t>(v));
    std::int32_t next = 0;
    if (temperature < 1e-6f) {
      for (int j = 1; j < v; ++j)
        if (row[static_cast<std::size_t>(j)] > row[static_cast<std::size_t>(next)]) next = j;
    } else {
      std::vector<double> p(static_cast<std::size_t>(v));
      double mx = static_cast<double>(row[0]) / temperature;
      for (int j = 0; j < v; ++j)
        mx = std::max(mx, static_cast<double>(row[static_cast<std::size_t>(j)]) / temperature);
      double sum = 0.0;
      for (int j = 0; j < v; ++j) {
        p[static_cast<std::size_t>(j)] =
            std::exp(static_cast<double>(row[static_cast<std::size_t>(j)]) / temperature - mx);
        sum += p[static_cast<std::size_t>(j)];
      }
      const double u = rng.next_uniform_f64() * sum;
      double acc = 0.0;
      next = v - 1;  // guard against accumulated rounding
      for (int j = 0; j < v; ++j) {
        acc += p[static_cast<std::size_t>(j)];
        if (u < acc) {
          next = j;
          break;
        }
      }
    }
    ids.push_back(next);
  }
  return ids;
}

}  // namespace skipgrid
