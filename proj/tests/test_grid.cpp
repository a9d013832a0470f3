#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "skipgrid/checkpoint.hpp"
#include "skipgrid/grid.hpp"
#include "skipgrid/report.hpp"

using namespace skipgrid;
namespace fs = std::filesystem;

namespace {

std::string grid_corpus() {
  std::string out;
  for (int i = 0; i < 160; ++i) out += "in the beginning was the word and the word was enough. ";
  return out;
}

GridSpec tiny_spec(const SplitDataset& split, int vocab_size, int n_rows) {
  GridSpec spec;
  spec.base.n_layer = 1;
  spec.base.n_head = 2;
  spec.base.n_embd = 8;
  spec.base.block_size = 8;
  spec.base.vocab_size = vocab_size;
  spec.base.seed = 77;
  spec.base_train.batch_size = 2;
  spec.base_train.eval_interval = 500;
  spec.base_train.eval_batches = 2;
  spec.base_train.checkpoint_interval = 0;
  (void)split;
  for (int i = 0; i < n_rows; ++i) {
    GridRow row;
    row.attn = 0.1f * static_cast<float>(i);
    row.iters = 6;
    spec.rows.push_back(row);
  }
  return spec;
}

std::string serialize_reference_row(const ReferenceRow& r) {
  auto opt = [](const std::optional<float>& v) { return v ? format_rate(*v) : "N/A"; };
  char loss[16];
  std::snprintf(loss, sizeof loss, "%.4f", static_cast<double>(r.loss));
  return format_rate(r.attn) + "," + format_rate(r.res1) + "," + opt(r.res2) + "," + opt(r.res4) +
         "," + std::to_string(r.iters) + "," + loss;
}

}  // namespace

TEST_CASE("the published results table is frozen, byte for byte") {
  const std::vector<std::string> want = {
      "0,0,N/A,N/A,50000,1.5618",         "0.2,0,N/A,N/A,50000,1.6261",
      "0.5,0,N/A,N/A,50000,1.9533",       "0.2,0,N/A,N/A,50000,1.6261",
      "0.2,0.025,N/A,N/A,50000,1.5560",   "0.2,0.2,N/A,N/A,50000,1.6961",
      "0.2,0.5,N/A,N/A,50000,2.8716",     "0.2,0.025,0,N/A,50000,1.5588",
      "0.2,0.025,0.05,N/A,50000,1.5883",  "0.2,0.025,0.25,N/A,50000,1.5731",
      "0.2,0.025,0.5,N/A,50000,1.5773",   "0.2,0.025,0.99,N/A,50000,1.5531",
      "0.2,0.025,0.99,0,50000,1.5709",    "0.2,0.025,0.99,0.2,50000,1.5624",
      "0.2,0.025,0.99,0.5,50000,1.5670",  "0.2,0.025,0.99,0.99,50000,1.5633",
  };
  const auto& table = reference_results_table();
  REQUIRE(table.size() == 16);
  for (std::size_t i = 0; i < table.size(); ++i)
    CHECK(serialize_reference_row(table[i]) == want[i]);
}

TEST_CASE("builtin grid collapses the repeated configuration to 15 unique rows") {
  GridSpec spec = builtin_reference_grid(42);
  CHECK(spec.rows.size() == 15);
  spec.base.vocab_size = 65;
  spec.rows[0].seed = std::nullopt;  // still valid without explicit seeds
  CHECK_NOTHROW(spec.validate());

  // spot values straight from the table
  const GridRow& baseline = spec.rows[1];  // (0.2, 0, -, -)
  CHECK(baseline.attn == 0.2f);
  CHECK(baseline.res1 == 0.0f);
  CHECK(!baseline.res2);
  REQUIRE(baseline.reference_loss.has_value());
  CHECK(*baseline.reference_loss == 1.6261f);

  int best = -1, worst = -1;
  for (std::size_t i = 0; i < spec.rows.size(); ++i) {
    const GridRow& r = spec.rows[i];
    if (r.attn == 0.2f && r.res1 == 0.025f && r.res2 && *r.res2 == 0.99f && !r.res4)
      best = static_cast<int>(i);
    if (r.attn == 0.2f && r.res1 == 0.5f && !r.res2) worst = static_cast<int>(i);
  }
  REQUIRE(best >= 0);
  REQUIRE(worst >= 0);
  CHECK(*spec.rows[static_cast<std::size_t>(best)].reference_loss == 1.5531f);
  CHECK(*spec.rows[static_cast<std::size_t>(worst)].reference_loss == 2.8716f);

  // every row trains the full published recipe
  for (const GridRow& r : spec.rows) CHECK(r.iters == 50000);
}

TEST_CASE("grid files parse sections, none markers, and reject junk") {
  const std::string text =
      "# two desk-scale cells\n"
      "[run]\n"
      "attn = 0.2\n"
      "res1 = 0.025\n"
      "res2 = 0.99\n"
      "res4 = none\n"
      "iters = 100\n"
      "seed = 9\n"
      "\n"
      "[run]\n"
      "attn = 0.2\n"
      "iters = 100\n";
  const std::vector<GridRow> rows = parse_grid_rows(text);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].attn == 0.2f);
  CHECK(rows[0].res1 == 0.025f);
  REQUIRE(rows[0].res2.has_value());
  CHECK(*rows[0].res2 == 0.99f);
  CHECK(!rows[0].res4.has_value());
  CHECK(rows[0].iters == 100);
  REQUIRE(rows[0].seed.has_value());
  CHECK(*rows[0].seed == 9);
  CHECK(rows[1].res1 == 0.0f);
  CHECK(!rows[1].seed.has_value());

  CHECK_THROWS_AS(parse_grid_rows("attn = 0.2\n"), Error);          // key before [run]
  CHECK_THROWS_AS(parse_grid_rows("[run]\nbogus = 1\n"), Error);    // unknown key
  CHECK_THROWS_AS(parse_grid_rows("[grid]\n"), Error);              // unknown section
  CHECK_THROWS_AS(parse_grid_rows(""), Error);                      // no rows
}

TEST_CASE("duplicate rows are rejected; res4 without res2 is rejected") {
  const auto [vocab, split] = load_and_encode_text(grid_corpus());
  GridSpec spec = tiny_spec(split, vocab.size(), 1);
  spec.rows.push_back(spec.rows[0]);
  CHECK_THROWS_AS(spec.validate(), Error);

  GridSpec bad = tiny_spec(split, vocab.size(), 1);
  bad.rows[0].res4 = 0.5f;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("run_grid: artifacts, resume, force") {
  const std::string corpus = grid_corpus();
  const auto [vocab, split] = load_and_encode_text(corpus);
  const std::uint64_t hash = fnv1a_hash(corpus);
  const std::string out = "test_tmp/grid_resume";
  fs::remove_all(out);

  GridSpec spec = tiny_spec(split, vocab.size(), 1);
  auto first = run_grid(spec, split, hash, 1, out);
  REQUIRE(first.size() == 1);
  CHECK(first[0].status == "completed");
  CHECK(!first[0].resumed);
  CHECK(fs::exists(out + "/curves/row00.csv"));
  CHECK(fs::exists(out + "/results/row00.result"));
  CHECK(fs::exists(out + "/checkpoints/row00.skpg"));

  auto second = run_grid(spec, split, hash, 1, out);
  CHECK(second[0].resumed);
  CHECK(second[0].final_val_loss == first[0].final_val_loss);
  CHECK(second[0].wall_seconds == first[0].wall_seconds);

  auto forced = run_grid(spec, split, hash, 1, out, /*force=*/true);
  CHECK(!forced[0].resumed);
  CHECK(forced[0].final_val_loss == first[0].final_val_loss);  // deterministic retrain

  // a changed configuration must not reuse the stale marker
  GridSpec changed = tiny_spec(split, vocab.size(), 1);
  changed.base.n_embd = 16;
  auto retrained = run_grid(changed, split, hash, 1, out);
  CHECK(!retrained[0].resumed);
}

TEST_CASE("serial and parallel grid execution produce identical results") {
  const std::string corpus = grid_corpus();
  const auto [vocab, split] = load_and_encode_text(corpus);
  const std::uint64_t hash = fnv1a_hash(corpus);
  fs::remove_all("test_tmp/grid_serial");
  fs::remove_all("test_tmp/grid_parallel");

  GridSpec spec = tiny_spec(split, vocab.size(), 3);
  auto serial = run_grid(spec, split, hash, 1, "test_tmp/grid_serial");
  auto parallel = run_grid(spec, split, hash, 2, "test_tmp/grid_parallel");
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) {
    CHECK(serial[i].status == "completed");
    CHECK(serial[i].final_val_loss == parallel[i].final_val_loss);
    CHECK(serial[i].seed_used == parallel[i].seed_used);
  }
}

TEST_CASE("emit_report: csv round-trip, N/A cells, status rows, svg output") {
  const std::string corpus = grid_corpus();
  const auto [vocab, split] = load_and_encode_text(corpus);
  const std::uint64_t hash = fnv1a_hash(corpus);
  const std::string out = "test_tmp/grid_report";
  fs::remove_all(out);

  GridSpec spec = tiny_spec(split, vocab.size(), 2);
  spec.rows[1].res2 = 0.99f;
  spec.rows[1].reference_loss = 1.5531f;
  auto results = run_grid(spec, split, hash, 1, out);

  // synthesize a diverged row to exercise status rendering
  RunResult dead;
  dead.index = 2;
  dead.row_id = "row02";
  dead.row.attn = 0.5f;
  dead.row.iters = 6;
  dead.status = "diverged";
  results.push_back(dead);

  emit_report(results, out);
  REQUIRE(fs::exists(out + "/results.csv"));
  REQUIRE(fs::exists(out + "/results.txt"));
  REQUIRE(fs::exists(out + "/curves/row00.svg"));
  REQUIRE(fs::exists(out + "/curves/row01.svg"));

  // independent CSV re-parse reproduces every value exactly
  std::ifstream csv(out + "/results.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "Attn,Res1,Res2,Res4,Iters,Loss,PaperLoss,Delta");
  std::vector<std::vector<std::string>> parsed;
  for (std::string line; std::getline(csv, line);) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    cells.resize(8);
    parsed.push_back(cells);
  }
  REQUIRE(parsed.size() == 3);
  CHECK(std::strtof(parsed[0][0].c_str(), nullptr) == results[0].row.attn);
  CHECK(parsed[0][2] == "N/A");
  CHECK(parsed[0][3] == "N/A");
  CHECK(parsed[0][4] == "6");
  CHECK(std::strtof(parsed[0][5].c_str(), nullptr) == results[0].final_val_loss);
  CHECK(parsed[1][2] == "0.99");
  CHECK(parsed[1][6] == "1.5531");
  CHECK(std::strtof(parsed[1][7].c_str(), nullptr) == *results[1].delta);
  CHECK(parsed[2][5] == "diverged");

  std::ifstream svg(out + "/curves/row00.svg");
  std::string body((std::istreambuf_iterator<char>(svg)), std::istreambuf_iterator<char>());
  CHECK(body.find("<svg") != std::string::npos);
  CHECK(body.find("iteration") != std::string::npos);
  CHECK(body.find("loss") != std::string::npos);
  CHECK(std::count(body.begin(), body.end(), '\n') > 10);
  std::size_t polylines = 0;
  for (std::size_t at = body.find("<polyline"); at != std::string::npos;
       at = body.find("<polyline", at + 1))
    ++polylines;
  CHECK(polylines == 2);
}
