#include <doctest.h>

#include <cmath>
#include <vector>

#include "skipgrid/layers.hpp"
#include "skipgrid/rng.hpp"

using namespace skipgrid;

namespace {

Tensor<float> random_tensor(Shape shape, float scale, RngState& rng, bool rg = false) {
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.next_normal()) * scale;
  return Tensor<float>::from(std::move(shape), std::move(v), rg);
}

}  // namespace

TEST_CASE("dropout: rate 0 is the exact identity in both modes") {
  Tape<float> tape;
  RngState seed_rng(1), rng(2);
  Tensor<float> x = random_tensor({4, 5}, 1.0f, seed_rng);
  for (Mode mode : {Mode::kTrain, Mode::kEval}) {
    Tensor<float> y = dropout_forward(tape, x, DropoutSpec::unscaled(0.0f), mode, rng);
    CHECK(y.values().data() == x.values().data());
  }
}

TEST_CASE("dropout: eval mode ignores the rate entirely") {
  Tape<float> tape;
  RngState seed_rng(1), rng(2);
  Tensor<float> x = random_tensor({4, 5}, 1.0f, seed_rng);
  Tensor<float> y = dropout_forward(tape, x, DropoutSpec::unscaled(0.7f), Mode::kEval, rng);
  CHECK(y.values().data() == x.values().data());
  CHECK(rng.position() == 0);  // no draws consumed
}

TEST_CASE("dropout: unscaled rate 1 zeroes everything") {
  Tape<float> tape;
  RngState rng(3);
  Tensor<float> x = Tensor<float>::full({8}, 2.5f);
  Tensor<float> y = dropout_forward(tape, x, DropoutSpec::unscaled(1.0f), Mode::kTrain, rng);
  for (long i = 0; i < y.size(); ++i) CHECK(y.values()[i] == 0.0f);
}

TEST_CASE("dropout: scaled rate 1 is a config error") {
  Tape<float> tape;
  RngState rng(3);
  Tensor<float> x = Tensor<float>::full({8}, 1.0f);
  CHECK_THROWS_AS(dropout_forward(tape, x, DropoutSpec::inverted(1.0f), Mode::kTrain, rng),
                  Error);
  CHECK_THROWS_AS(dropout_forward(tape, x, DropoutSpec{1.5f, false}, Mode::kTrain, rng), Error);
}

TEST_CASE("dropout: sample means match the Bernoulli expectation") {
  const long n = 100000;
  const float c = 2.5f;
  Tensor<float> x = Tensor<float>::full({static_cast<int>(n)}, c);
  for (float p : {0.2f, 0.5f}) {
    Tape<float> tape;
    RngState rng(1000 + static_cast<std::uint64_t>(p * 100));

    // unscaled: E[out] = (1-p) c, sd of the mean = c sqrt(p(1-p)/n)
    Tensor<float> yu = dropout_forward(tape, x, DropoutSpec::unscaled(p), Mode::kTrain, rng);
    double mu = 0;
    for (long i = 0; i < n; ++i) mu += yu.values()[i];
    mu /= n;
    const double bound_u = 3.0 * c * std::sqrt(p * (1.0 - p) / n);
    CHECK(std::abs(mu - (1.0 - p) * c) < bound_u);

    // inverted: E[out] = c, per-draw sd = c sqrt(p/(1-p))
    Tensor<float> ys = dropout_forward(tape, x, DropoutSpec::inverted(p), Mode::kTrain, rng);
    double ms = 0;
    for (long i = 0; i < n; ++i) ms += ys.values()[i];
    ms /= n;
    const double bound_s = 3.0 * c * std::sqrt(p / ((1.0 - p) * n));
    CHECK(std::abs(ms - c) < bound_s);
  }
}

TEST_CASE("dropout: identical rng state reproduces the identical mask") {
  Tape<float> tape;
  RngState seed_rng(7);
  Tensor<float> x = random_tensor({64}, 1.0f, seed_rng);
  RngState r1(12345), r2(12345);
  Tensor<float> a = dropout_forward(tape, x, DropoutSpec::unscaled(0.4f), Mode::kTrain, r1);
  Tensor<float> b = dropout_forward(tape, x, DropoutSpec::unscaled(0.4f), Mode::kTrain, r2);
  for (long i = 0; i < a.size(); ++i) CHECK(a.values()[i] == b.values()[i]);
}

TEST_CASE("dropout: backward reuses the forward mask") {
  Tape<float> tape;
  Tensor<float> x = Tensor<float>::full({32}, 3.0f, true);
  RngState rng(99);
  Tensor<float> y = dropout_forward(tape, x, DropoutSpec::inverted(0.5f), Mode::kTrain, rng);
  backward(tape, mean(tape, y));
  // gradient is nonzero exactly where the output survived
  for (long i = 0; i < x.size(); ++i) {
    const bool kept = y.values()[i] != 0.0f;
    CHECK((x.grad()[i] != 0.0f) == kept);
  }
}

TEST_CASE("layernorm: constant input maps to the bias") {
  Tape<float> tape;
  LayerNormParams<float> params = LayerNormParams<float>::init(8);
  // integer constant: partial sums are exact, so the zero-variance path is exact
  Tensor<float> x = Tensor<float>::full({2, 8}, 2.0f);
  Tensor<float> y = layernorm_forward(tape, x, params);
  for (long i = 0; i < y.size(); ++i) CHECK(y.values()[i] == 0.0f);  // gain 1, bias 0

  // non-representable mean: eps keeps the degenerate slice tame (no blow-up)
  Tensor<float> x2 = Tensor<float>::full({2, 8}, 4.2f);
  Tensor<float> y2 = layernorm_forward(tape, x2, params);
  for (long i = 0; i < y2.size(); ++i) {
    CHECK(std::isfinite(y2.values()[i]));
    CHECK(std::abs(y2.values()[i]) < 1e-3f);
  }
}

TEST_CASE("layernorm: output is standardized per slice") {
  Tape<float> tape;
  RngState rng(21);
  LayerNormParams<float> params = LayerNormParams<float>::init(32);
  Tensor<float> x = random_tensor({8, 32}, 2.0f, rng);
  Tensor<float> y = layernorm_forward(tape, x, params);
  for (int s = 0; s < 8; ++s) {
    double mu = 0, var = 0;
    for (int j = 0; j < 32; ++j) mu += y.values()[s * 32 + j];
    mu /= 32;
    for (int j = 0; j < 32; ++j) {
      const double d = y.values()[s * 32 + j] - mu;
      var += d * d;
    }
    var /= 32;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("attention: a single token returns the projected value vector") {
  Tape<float> tape;
  RngState rng(31);
  AttentionConfig cfg;
  cfg.n_head = 2;
  cfg.n_embd = 8;
  cfg.block_size = 4;
  cfg.attn_dropout = DropoutSpec::inverted(0.0f);
  AttentionParams<float> params = AttentionParams<float>::init(8, 0.5f, rng);
  Tensor<float> x = random_tensor({1, 1, 8}, 1.0f, rng);

  RngState r1(1), r2(2);
  Tensor<float> out = causal_self_attention(tape, x, cfg, params, Mode::kEval, r1, r2);

  Tensor<float> v = params.value.forward(tape, x);
  Tensor<float> want = params.proj.forward(tape, v);
  REQUIRE(out.size() == want.size());
  for (long i = 0; i < out.size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(want.values()[i]).epsilon(1e-6));
}

TEST_CASE("attention: strict causality, bit for bit") {
  Tape<float> tape;
  RngState rng(33);
  AttentionConfig cfg;
  cfg.n_head = 2;
  cfg.n_embd = 8;
  cfg.block_size = 8;
  cfg.attn_dropout = DropoutSpec::inverted(0.0f);
  AttentionParams<float> params = AttentionParams<float>::init(8, 0.5f, rng);

  Tensor<float> x = random_tensor({1, 5, 8}, 1.0f, rng);
  std::vector<float> perturbed(x.values().begin(), x.values().end());
  for (int j = 0; j < 8; ++j) perturbed[static_cast<std::size_t>(3 * 8 + j)] += 0.75f;
  Tensor<float> x2 = Tensor<float>::from({1, 5, 8}, std::move(perturbed));

  RngState r1(1), r2(2), r3(1), r4(2);
  Tensor<float> a = causal_self_attention(tape, x, cfg, params, Mode::kEval, r1, r2);
  Tensor<float> b = causal_self_attention(tape, x2, cfg, params, Mode::kEval, r3, r4);
  for (int t = 0; t < 3; ++t)
    for (int j = 0; j < 8; ++j)
      CHECK(a.values()[t * 8 + j] == b.values()[t * 8 + j]);
  // and the perturbed position itself does change
  bool changed = false;
  for (int j = 0; j < 8; ++j) changed = changed || a.values()[3 * 8 + j] != b.values()[3 * 8 + j];
  CHECK(changed);
}

TEST_CASE("attention: per-row weights sum to one before dropout") {
  Tape<float> tape;
  RngState rng(35);
  AttentionConfig cfg;
  cfg.n_head = 2;
  cfg.n_embd = 4;
  cfg.block_size = 8;
  cfg.attn_dropout = DropoutSpec::inverted(0.3f);  // dropout active; weights still pre-dropout
  AttentionParams<float> params = AttentionParams<float>::init(4, 0.5f, rng);
  Tensor<float> x = random_tensor({2, 6, 4}, 1.0f, rng);

  RngState r1(1), r2(2);
  std::vector<Tensor<float>> weights;
  causal_self_attention(tape, x, cfg, params, Mode::kTrain, r1, r2, &weights);
  REQUIRE(weights.size() == 2);
  for (const auto& w : weights) {
    REQUIRE(w.shape() == Shape{2, 6, 6});
    for (int s = 0; s < 2 * 6; ++s) {
      float sum = 0;
      for (int j = 0; j < 6; ++j) sum += w.values()[s * 6 + j];
      CHECK(std::abs(sum - 1.0f) < 1e-6f);
    }
  }
}

TEST_CASE("attention matches an independent scalar-loop recomputation") {
  const int b = 1, t = 3, c = 4, heads = 2, hd = c / heads;
  Tape<float> tape;
  RngState rng(37);
  AttentionConfig cfg;
  cfg.n_head = heads;
  cfg.n_embd = c;
  cfg.block_size = 8;
  cfg.attn_dropout = DropoutSpec::inverted(0.0f);
  AttentionParams<float> params = AttentionParams<float>::init(c, 0.6f, rng);
  Tensor<float> x = random_tensor({b, t, c}, 0.8f, rng);

  RngState r1(1), r2(2);
  Tensor<float> out = causal_self_attention(tape, x, cfg, params, Mode::kEval, r1, r2);

  // straight-line double-precision recomputation, no tensor machinery
  auto wline = [](const Tensor<float>& w, int row, int col, int cols) {
    return static_cast<double>(w.values()[row * cols + col]);
  };
  auto linear_at = [&](const LinearLayer<float>& l, const std::vector<double>& in, int out_dim,
                       int in_dim) {
    std::vector<double> r(static_cast<std::size_t>(out_dim));
    for (int o = 0; o < out_dim; ++o) {
      double acc = static_cast<double>(l.bias.values()[o]);
      for (int i = 0; i < in_dim; ++i) acc += in[static_cast<std::size_t>(i)] * wline(l.weight, i, o, out_dim);
      r[static_cast<std::size_t>(o)] = acc;
    }
    return r;
  };

  std::vector<std::vector<double>> q(t), k(t), v(t);
  for (int p = 0; p < t; ++p) {
    std::vector<double> xin(static_cast<std::size_t>(c));
    for (int j = 0; j < c; ++j) xin[static_cast<std::size_t>(j)] = x.values()[p * c + j];
    q[static_cast<std::size_t>(p)] = linear_at(params.query, xin, c, c);
    k[static_cast<std::size_t>(p)] = linear_at(params.key, xin, c, c);
    v[static_cast<std::size_t>(p)] = linear_at(params.value, xin, c, c);
  }
  for (int p = 0; p < t; ++p) {
    std::vector<double> merged(static_cast<std::size_t>(c));
    for (int h = 0; h < heads; ++h) {
      std::vector<double> scores(static_cast<std::size_t>(p) + 1);
      for (int u = 0; u <= p; ++u) {
        double dot = 0;
        for (int j = 0; j < hd; ++j)
          dot += q[static_cast<std::size_t>(p)][static_cast<std::size_t>(h * hd + j)] *
                 k[static_cast<std::size_t>(u)][static_cast<std::size_t>(h * hd + j)];
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
        for (int u = 0; u <= p; ++u)
          acc += (scores[static_cast<std::size_t>(u)] / denom) *
                 v[static_cast<std::size_t>(u)][static_cast<std::size_t>(h * hd + j)];
        merged[static_cast<std::size_t>(h * hd + j)] = acc;
      }
    }
    const std::vector<double> projected = linear_at(params.proj, merged, c, c);
    for (int j = 0; j < c; ++j)
      CHECK(static_cast<double>(out.values()[p * c + j]) ==
            doctest::Approx(projected[static_cast<std::size_t>(j)]).epsilon(1e-5));
  }
}

TEST_CASE("attention: overlong context is rejected") {
  Tape<float> tape;
  RngState rng(39);
  AttentionConfig cfg;
  cfg.n_head = 1;
  cfg.n_embd = 4;
  cfg.block_size = 2;
  AttentionParams<float> params = AttentionParams<float>::init(4, 0.5f, rng);
  Tensor<float> x = Tensor<float>::zeros({1, 3, 4});
  RngState r1(1), r2(2);
  CHECK_THROWS_AS(causal_self_attention(tape, x, cfg, params, Mode::kEval, r1, r2), Error);
}

TEST_CASE("mlp: zero weights and biases give zero output") {
  Tape<float> tape;
  MlpParams<float> params;
  params.fc = {Tensor<float>::zeros({4, 16}, true), Tensor<float>::zeros({16}, true)};
  params.proj = {Tensor<float>::zeros({16, 4}, true), Tensor<float>::zeros({4}, true)};
  params.activation = Activation::kGelu;
  RngState seed_rng(41), rng(1);
  Tensor<float> x = random_tensor({2, 3, 4}, 1.0f, seed_rng);
  Tensor<float> y = mlp_forward(tape, x, params, DropoutSpec::inverted(0.0f), Mode::kTrain, rng);
  for (long i = 0; i < y.size(); ++i) CHECK(y.values()[i] == 0.0f);
}

TEST_CASE("mlp: dropout rate 0 is deterministic across calls") {
  Tape<float> tape;
  RngState rng(43);
  MlpParams<float> params = MlpParams<float>::init(4, Activation::kRelu, 0.5f, rng);
  Tensor<float> x = random_tensor({2, 3, 4}, 1.0f, rng);
  RngState r1(5), r2(5);
  Tensor<float> a = mlp_forward(tape, x, params, DropoutSpec::inverted(0.0f), Mode::kTrain, r1);
  Tensor<float> b = mlp_forward(tape, x, params, DropoutSpec::inverted(0.0f), Mode::kTrain, r2);
  for (long i = 0; i < a.size(); ++i) CHECK(a.values()[i] == b.values()[i]);
}
