#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "skipgrid/data.hpp"
#include "skipgrid/trainer.hpp"

namespace skipgrid {

// One grid cell: the four dropout knobs, the iteration budget, and the seed.
// res2/res4 absent means that connection depth does not exist in the model.
struct GridRow {
  float attn = 0.0f;
  float res1 = 0.0f;
  std::optional<float> res2;
  std::optional<float> res4;
  long iters = 50000;
  std::optional<std::uint64_t> seed;  // absent: derived from (base seed, row index)
  std::optional<float> reference_loss;

  bool same_config(const GridRow& o) const {
    return attn == o.attn && res1 == o.res1 && res2 == o.res2 && res4 == o.res4 &&
           iters == o.iters && seed == o.seed;
  }
};

struct GridSpec {
  std::vector<GridRow> rows;
  ModelConfig base;            // vocab_size is filled from the corpus at run time
  TrainSettings base_train;

  void validate() const;  // rejects duplicate rows and res4 without res2
};

struct RunResult {
  int index = -1;
  std::string row_id;
  GridRow row;
  std::uint64_t seed_used = 0;
  std::string status;  // completed | diverged | failed: <reason>
  float final_val_loss = 0.0f;
  std::optional<float> reference_loss;
  std::optional<float> delta;  // final_val_loss - reference_loss
  double wall_seconds = 0.0;
  std::string curve_path;
  bool resumed = false;
};

// The published ablation table this grid reproduces: 16 rows of
// (attn, res1, res2, res4, iters, loss). Kept verbatim, including the
// repeated (0.2, 0, -, -) row.
struct ReferenceRow {
  float attn;
  float res1;
  std::optional<float> res2;
  std::optional<float> res4;
  long iters;
  float loss;
};
const std::vector<ReferenceRow>& reference_results_table();

// The reference table as a runnable grid. The repeated row is collapsed to
// one run (15 unique configurations), each carrying its reference loss.
GridSpec builtin_reference_grid(std::uint64_t global_seed);

// Plain-text grid file: one [run] section per row with keys
// attn, res1, res2, res4, iters, seed; the literal `none` disables a depth.
std::vector<GridRow> parse_grid_rows(const std::string& text);
std::vector<GridRow> load_grid_file(const std::string& path);

// Train every row (worker threads, one full model each), write
// results/<row_id>.result markers, curves/<row_id>.csv, and
// checkpoints/<row_id>.skpg under out_dir. Rows whose marker already matches
// are skipped unless force is set. Row failures are recorded, not fatal.
std::vector<RunResult> run_grid(const GridSpec& spec, const SplitDataset& data,
                                std::uint64_t corpus_hash, int parallelism,
                                const std::string& out_dir, bool force = false);

}  // namespace skipgrid
