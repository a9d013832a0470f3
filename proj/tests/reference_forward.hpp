// Straight-line double-precision recomputation of the decoder forward pass,
// written with plain loops over std::vector so it shares nothing with the
// tensor engine it cross-checks. Dropout must be disabled in the checked
// model; skip-2/skip-4 edges are honored when enabled (at rate 0).
#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "skipgrid/model.hpp"

namespace reference {

using Params = std::map<std::string, std::vector<double>>;

inline Params extract_params(const skipgrid::DecoderModel<float>& m) {
  Params p;
  for (const auto& [name, t] : m.parameters)
    p[name] = std::vector<double>(t.values().begin(), t.values().end());
  return p;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& gain,
                                      const std::vector<double>& bias) {
  const std::size_t d = x.size();
  double mu = 0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(d);
  double var = 0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(d);
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) out[j] = gain[j] * ((x[j] - mu) * inv) + bias[j];
  return out;
}

// y = x W + b with W stored row-major [in, out]
inline std::vector<double> linear(const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& b, int in, int out) {
  std::vector<double> y(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    double acc = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
    for (int i = 0; i < in; ++i)
      acc += x[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i) * out + o];
    y[static_cast<std::size_t>(o)] = acc;
  }
  return y;
}

inline double gelu_tanh(double x) {
  return 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
}

// Returns logits [time][vocab] for one sequence.
inline std::vector<std::vector<double>> forward(const skipgrid::ModelConfig& cfg, const Params& p,
                                                const std::vector<std::int32_t>& tokens) {
  const int time = static_cast<int>(tokens.size());
  const int c = cfg.n_embd;
  const int hd = c / cfg.n_head;
  auto at = [&p](const std::string& name) -> const std::vector<double>& { return p.at(name); };

  // token + positional embedding
  std::vector<std::vector<double>> h(static_cast<std::size_t>(time));
  for (int t = 0; t < time; ++t) {
    h[static_cast<std::size_t>(t)].resize(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j)
      h[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] =
          at("tok_emb")[static_cast<std::size_t>(tokens[static_cast<std::size_t>(t)]) * c + j] +
          at("pos_emb")[static_cast<std::size_t>(t) * c + j];
  }

  std::vector<std::vector<std::vector<double>>> history;  // h_0 .. h_i
  history.push_back(h);

  for (int blk = 1; blk <= cfg.n_layer; ++blk) {
    const std::string pre = "block" + std::to_string(blk - 1) + ".";
    const auto& x = history.back();

    // attention sublayer
    std::vector<std::vector<double>> q(static_cast<std::size_t>(time)),
        k(static_cast<std::size_t>(time)), v(static_cast<std::size_t>(time));
    for (int t = 0; t < time; ++t) {
      const std::vector<double> ln =
          layer_norm(x[static_cast<std::size_t>(t)], at(pre + "ln1.gain"), at(pre + "ln1.bias"));
      q[static_cast<std::size_t>(t)] = linear(ln, at(pre + "attn.q.w"), at(pre + "attn.q.b"), c, c);
      k[static_cast<std::size_t>(t)] = linear(ln, at(pre + "attn.k.w"), at(pre + "attn.k.b"), c, c);
      v[static_cast<std::size_t>(t)] = linear(ln, at(pre + "attn.v.w"), at(pre + "attn.v.b"), c, c);
    }
    std::vector<std::vector<double>> a(static_cast<std::size_t>(time));
    for (int t = 0; t < time; ++t) {
      std::vector<double> merged(static_cast<std::size_t>(c));
      for (int head = 0; head < cfg.n_head; ++head) {
        std::vector<double> scores(static_cast<std::size_t>(t) + 1);
        for (int u = 0; u <= t; ++u) {
          double dot = 0;
          for (int j = 0; j < hd; ++j)
            dot += q[static_cast<std::size_t>(t)][static_cast<std::size_t>(head * hd + j)] *
                   k[static_cast<std::size_t>(u)][static_cast<std::size_t>(head * hd + j)];
          scores[static_cast<std::size_t>(u)] = dot / std::sqrt(static_cast<double>(hd));
        }
        double mx = scores[0];
        for (double s : scores) mx = std::max(mx, s);
        double denom = 0;
        for (double& s : scores) {
          s = std::exp(s - mx);
          denom += s;
        }
        for (int j = 0; j < hd; ++j) {
          double acc = 0;
          for (int u = 0; u <= t; ++u)
            acc += (scores[static_cast<std::size_t>(u)] / denom) *
                   v[static_cast<std::size_t>(u)][static_cast<std::size_t>(head * hd + j)];
          merged[static_cast<std::size_t>(head * hd + j)] = acc;
        }
      }
      const std::vector<double> proj =
          linear(merged, at(pre + "attn.o.w"), at(pre + "attn.o.b"), c, c);
      a[static_cast<std::size_t>(t)] = x[static_cast<std::size_t>(t)];
      for (int j = 0; j < c; ++j)
        a[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] +=
            proj[static_cast<std::size_t>(j)];
    }

    // mlp sublayer
    std::vector<std::vector<double>> s(static_cast<std::size_t>(time));
    for (int t = 0; t < time; ++t) {
      const std::vector<double> ln =
          layer_norm(a[static_cast<std::size_t>(t)], at(pre + "ln2.gain"), at(pre + "ln2.bias"));
      std::vector<double> hid = linear(ln, at(pre + "mlp.fc.w"), at(pre + "mlp.fc.b"), c, 4 * c);
      for (double& u : hid)
        u = cfg.activation == skipgrid::Activation::kGelu ? gelu_tanh(u) : (u > 0 ? u : 0);
      const std::vector<double> proj =
          linear(hid, at(pre + "mlp.proj.w"), at(pre + "mlp.proj.b"), 4 * c, c);
      s[static_cast<std::size_t>(t)] = a[static_cast<std::size_t>(t)];
      for (int j = 0; j < c; ++j)
        s[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] +=
            proj[static_cast<std::size_t>(j)];
    }

    // skip-2 / skip-4 edges (dropout disabled: plain addition)
    if (cfg.topology.skip2 && blk >= 2 && (blk - 2) % cfg.topology.stride == 0)
      for (int t = 0; t < time; ++t)
        for (int j = 0; j < c; ++j)
          s[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] +=
              history[static_cast<std::size_t>(blk - 2)][static_cast<std::size_t>(t)]
                     [static_cast<std::size_t>(j)];
    if (cfg.topology.skip4 && blk >= 4 && (blk - 4) % cfg.topology.stride == 0)
      for (int t = 0; t < time; ++t)
        for (int j = 0; j < c; ++j)
          s[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] +=
              history[static_cast<std::size_t>(blk - 4)][static_cast<std::size_t>(t)]
                     [static_cast<std::size_t>(j)];
    history.push_back(s);
  }

  std::vector<std::vector<double>> logits(static_cast<std::size_t>(time));
  for (int t = 0; t < time; ++t) {
    const std::vector<double> ln =
        layer_norm(history.back()[static_cast<std::size_t>(t)], at("ln_f.gain"), at("ln_f.bias"));
    logits[static_cast<std::size_t>(t)] = linear(ln, at("head.w"), {}, c, cfg.vocab_size);
  }
  return logits;
}

}  // namespace reference
