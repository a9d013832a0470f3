#include "skipgrid/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "skipgrid/checkpoint.hpp"
#include "skipgrid/error.hpp"

namespace skipgrid {

namespace {

constexpr std::uint64_t kBatchStream = 0xBA7C4;
constexpr std::uint64_t kEvalTrainStream = 0xE7A1;
constexpr std::uint64_t kEvalValStream = 0xE7A2;
constexpr double kPi = 3.14159265358979323846;

}  // namespace

float LrSchedule::lr_at(long iter) const {
  if (iter < 0) throw Error::contract("lr_at called with negative iteration");
  if (iter >= total_iters) return lr_min;
  const double frac = static_cast<double>(iter) / static_cast<double>(total_iters);
  switch (shape) {
    case LrShape::kCosine:
      return static_cast<float>(lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(kPi * frac)));
    case LrShape::kLinear:
      return static_cast<float>(lr_max - (lr_max - lr_min) * frac);
  }
  return lr_min;
}

OptimizerState OptimizerState::for_params(
    const std::vector<std::pair<std::string, Tensor<float>>>& params, AdamConfig cfg) {
  OptimizerState s;
  s.config = cfg;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& [name, t] : params) {
    s.m.emplace_back(static_cast<std::size_t>(t.size()), 0.0f);
    s.v.emplace_back(static_cast<std::size_t>(t.size()), 0.0f);
  }
  return s;
}

void adam_update(std::vector<std::pair<std::string, Tensor<float>>>& params, OptimizerState& opt,
                 float lr) {
  if (params.size() != opt.m.size())
    throw Error::contract("optimizer state does not match parameter count");
  opt.step += 1;
  const AdamConfig& c = opt.config;
  const double bc1 = 1.0 - std::pow(static_cast<double>(c.beta1), static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(c.beta2), static_cast<double>(opt.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<float>& t = params[p].second;
    std::span<float> w = t.values();
    std::span<float> g = t.grad();
    std::vector<float>& m = opt.m[p];
    std::vector<float>& v = opt.v[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = c.beta1 * m[i] + (1.0f - c.beta1) * g[i];
      v[i] = c.beta2 * v[i] + (1.0f - c.beta2) * g[i] * g[i];
      const float mhat = static_cast<float>(m[i] / bc1);
      const float vhat = static_cast<float>(v[i] / bc2);
      w[i] -= lr * mhat / (std::sqrt(vhat) + c.eps);
      if (c.weight_decay != 0.0f) w[i] -= lr * c.weight_decay * w[i];
    }
  }
}

float train_step(DecoderModel<float>& model, const Batch& batch, OptimizerState& opt, float lr,
                 std::uint64_t round) {
  const int b = batch.batch_size;
  const int t = batch.block_size;
  Tape<float> tape;
  Tensor<float> logits = model_forward(tape, model, batch.inputs, b, t, Mode::kTrain, round);
  Tensor<float> loss = cross_entropy(
      tape, reshape(tape, logits, {b * t, model.config.vocab_size}), batch.targets);
  const float loss_value = loss.item();
  backward(tape, loss);
  adam_update(model.parameters, opt, lr);
  model.zero_grads();
  return loss_value;
}

float estimate_loss(const DecoderModel<float>& model, const std::vector<std::int32_t>& split,
                    int batch_size, int n_batches, RngState& rng) {
  if (n_batches < 1) throw Error::contract("estimate_loss needs at least one batch");
  const int t = model.config.block_size;
  double acc = 0.0;
  for (int i = 0; i < n_batches; ++i) {
    Batch batch = sample_batch(split, batch_size, t, rng);
    Tape<float> tape(false);
    Tensor<float> logits = model_forward(tape, model, batch.inputs, batch_size, t, Mode::kEval);
    Tensor<float> loss = cross_entropy(
        tape, reshape(tape, logits, {batch_size * t, model.config.vocab_size}), batch.targets);
    acc += static_cast<double>(loss.item());
  }
  return static_cast<float>(acc / n_batches);
}

TrainReport train_loop(const ModelConfig& cfg, const TrainSettings& settings,
                       const SplitDataset& data) {
  cfg.validate();
  if (settings.batch_size < 1) throw Error::config("batch_size must be >= 1");
  if (settings.eval_interval < 1) throw Error::config("eval_interval must be >= 1");

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&start]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };

  DecoderModel<float> model = build_model<float>(cfg);
  OptimizerState opt = OptimizerState::for_params(model.parameters);
  RngState batch_rng = derive_stream(cfg.seed, kBatchStream);
  const float divergence_cap = 3.0f * std::log(static_cast<float>(cfg.vocab_size));
  const long total = settings.schedule.total_iters;

  TrainReport report;
  report.config = cfg;
  report.seed = cfg.seed;
  report.step_losses.reserve(static_cast<std::size_t>(total));

  std::ofstream csv;
  if (!settings.curve_csv_path.empty()) {
    csv.open(settings.curve_csv_path, std::ios::trunc);
    if (!csv.is_open()) throw Error::io("cannot write curve file: " + settings.curve_csv_path);
    csv << "iteration,train_loss,val_loss,lr,wall_seconds\n";
  }

  auto evaluate = [&](long iteration) {
    RngState tr = derive_stream(cfg.seed, kEvalTrainStream, static_cast<std::uint64_t>(iteration));
    RngState vr = derive_stream(cfg.seed, kEvalValStream, static_cast<std::uint64_t>(iteration));
    CurvePoint pt;
    pt.iteration = iteration;
    pt.train_loss =
        estimate_loss(model, data.train_ids, settings.batch_size, settings.eval_batches, tr);
    pt.val_loss = estimate_loss(model, data.val_ids, settings.batch_size, settings.eval_batches, vr);
    pt.lr = settings.schedule.lr_at(iteration);
    pt.wall_seconds = elapsed();
    report.curve.push_back(pt);
    if (csv.is_open()) {
      csv << pt.iteration << ',' << format_float_exact(pt.train_loss) << ','
          << format_float_exact(pt.val_loss) << ',' << format_float_exact(pt.lr) << ','
          << pt.wall_seconds << '\n';
      csv.flush();
    }
    if (settings.on_eval) settings.on_eval(pt);
  };
  auto save = [&]() {
    if (!settings.checkpoint_path.empty())
      save_checkpoint(model, settings.checkpoint_extras, settings.checkpoint_path);
  };

  evaluate(0);
  for (long i = 0; i < total; ++i) {
    Batch batch = sample_batch(data.train_ids, settings.batch_size, cfg.block_size, batch_rng);
    const float loss =
        train_step(model, batch, opt, settings.schedule.lr_at(i), static_cast<std::uint64_t>(i));
    report.step_losses.push_back(loss);
    if (!std::isfinite(loss) || loss > divergence_cap) {
      report.diverged = true;
      report.diverged_at = i;
      break;
    }
    const long done = i + 1;
    if (done % settings.eval_interval == 0 || done == total) evaluate(done);
    if ((settings.checkpoint_interval > 0 && done % settings.checkpoint_interval == 0) ||
        done == total)
      save();
  }
  if (report.diverged) save();

  report.final_val_loss = report.curve.back().val_loss;
  report.wall_seconds = elapsed();
  return report;
}

}  // namespace skipgrid
