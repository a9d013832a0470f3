#pragma once

#include <string>
#include <vector>

#include "skipgrid/grid.hpp"

namespace skipgrid {

// Results table as CSV and aligned text (columns Attn, Res1, Res2, Res4,
// Iters, Loss, PaperLoss, Delta; absent depths print as N/A; non-completed
// rows put their status in the Loss column), plus one SVG line chart of
// train/val loss per run, read back from the run's curve CSV.
void emit_report(const std::vector<RunResult>& results, const std::string& out_dir);

// The table rows as comma-joined strings, exactly as written to results.csv
// (minus the header). Exposed so reports are easy to check and diff.
std::vector<std::string> results_csv_rows(const std::vector<RunResult>& results);

struct CurveSeries {
  std::vector<long> iterations;
  std::vector<float> train_loss;
  std::vector<float> val_loss;
};

CurveSeries parse_curve_csv(const std::string& path);

void write_curve_svg(const CurveSeries& curve, const std::string& title,
                     const std::string& path);

}  // namespace skipgrid
