#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "skipgrid/data.hpp"
#include "skipgrid/model.hpp"

namespace skipgrid {

enum class LrShape { kCosine, kLinear };

inline LrShape lr_shape_from_string(const std::string& s) {
  if (s == "cosine") return LrShape::kCosine;
  if (s == "linear") return LrShape::kLinear;
  throw Error::config("unknown schedule '" + s + "' (expected cosine or linear)");
}

inline const char* to_string(LrShape s) { return s == LrShape::kCosine ? "cosine" : "linear"; }

// lr_max at iteration 0 decaying to lr_min at total_iters, clamped beyond.
struct LrSchedule {
  float lr_max = 1e-3f;
  float lr_min = 1e-4f;
  long total_iters = 50000;
  LrShape shape = LrShape::kCosine;

  float lr_at(long iter) const;
};

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;  // decoupled; off by default
};

// First/second moment buffers, one pair per parameter tensor, plus the
// bias-correction step count.
struct OptimizerState {
  AdamConfig config;
  long step = 0;
  std::vector<std::vector<float>> m;
  std::vector<std::vector<float>> v;

  static OptimizerState for_params(const std::vector<std::pair<std::string, Tensor<float>>>& params,
                                   AdamConfig cfg = {});
};

// One Adam step from the gradients currently on the parameters.
// Gradients are left untouched; callers zero them when done.
void adam_update(std::vector<std::pair<std::string, Tensor<float>>>& params, OptimizerState& opt,
                 float lr);

// Forward, cross-entropy, backward, Adam update, zero grads. Returns the
// pre-update loss on the batch.
float train_step(DecoderModel<float>& model, const Batch& batch, OptimizerState& opt, float lr,
                 std::uint64_t round);

// Mean cross-entropy over freshly sampled batches with dropout disabled.
float estimate_loss(const DecoderModel<float>& model, const std::vector<std::int32_t>& split,
                    int batch_size, int n_batches, RngState& rng);

struct CurvePoint {
  long iteration = 0;
  float train_loss = 0.0f;
  float val_loss = 0.0f;
  float lr = 0.0f;
  double wall_seconds = 0.0;
};

struct TrainSettings {
  int batch_size = 8;
  LrSchedule schedule;
  long eval_interval = 500;
  int eval_batches = 200;
  long checkpoint_interval = 5000;
  std::string curve_csv_path;   // empty disables the curve file
  std::string checkpoint_path;  // empty disables checkpoints
  std::map<std::string, std::string> checkpoint_extras;
  std::function<void(const CurvePoint&)> on_eval;  // optional progress hook
};

struct TrainReport {
  std::vector<CurvePoint> curve;
  std::vector<float> step_losses;  // loss at every iteration, in order
  float final_val_loss = std::numeric_limits<float>::quiet_NaN();
  double wall_seconds = 0.0;
  bool diverged = false;
  long diverged_at = -1;
  ModelConfig config;
  std::uint64_t seed = 0;
};

// Runs schedule.total_iters steps: periodic loss estimation on both splits
// (iteration 0 included), curve rows streamed to CSV, checkpoints at the
// configured interval and at the end. A divergent loss (non-finite or above
// 3 ln V) aborts the run and returns a partial report flagged diverged.
TrainReport train_loop(const ModelConfig& cfg, const TrainSettings& settings,
                       const SplitDataset& data);

}  // namespace skipgrid
