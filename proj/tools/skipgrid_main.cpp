// skipgrid: character-level decoder training with configurable residual
// topology (skip-1/2/4) and dropout regimes, plus a grid runner for
// dropout-rate ablations.

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "skipgrid/checkpoint.hpp"
#include "skipgrid/data.hpp"
#include "skipgrid/error.hpp"
#include "skipgrid/gradcheck.hpp"
#include "skipgrid/grid.hpp"
#include "skipgrid/report.hpp"
#include "skipgrid/trainer.hpp"

namespace fs = std::filesystem;
using namespace skipgrid;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;

struct CommonOpts {
  int n_layer = 16;
  int n_head = 4;
  int n_embd = 128;
  int block_size = 64;
  int batch_size = 8;
  long iters = 50000;
  double lr_max = 1e-3;
  double lr_min = 1e-4;
  std::string schedule = "cosine";
  std::string activation = "gelu";
  long eval_interval = 500;
  int eval_batches = 200;
  long checkpoint_interval = 5000;
  std::uint64_t seed = 1337;
  std::string data_path;
  std::string out_dir = "out";
};

struct RateOpts {
  double attn = 0.0;
  double res1 = 0.0;
  std::string res2 = "none";
  std::string res4 = "none";
  int res_stride = 1;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("SKIPGRID_SEED")) {
    char* end = nullptr;
    const std::uint64_t v = std::strtoull(env, &end, 10);
    if (end != env && *end == '\0') return v;
    std::fprintf(stderr, "warning: ignoring malformed SKIPGRID_SEED '%s'\n", env);
  }
  return 1337;
}

void add_model_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--n-layer", o.n_layer, "transformer blocks")->capture_default_str();
  cmd->add_option("--n-head", o.n_head, "attention heads")->capture_default_str();
  cmd->add_option("--n-embd", o.n_embd, "embedding width")->capture_default_str();
  cmd->add_option("--block-size", o.block_size, "context length")->capture_default_str();
  cmd->add_option("--activation", o.activation, "mlp activation: gelu|relu")
      ->capture_default_str();
}

void add_train_flags(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--batch-size", o.batch_size, "sequences per step")->capture_default_str();
  cmd->add_option("--iters", o.iters, "total training iterations")->capture_default_str();
  cmd->add_option("--lr-max", o.lr_max, "initial learning rate")->capture_default_str();
  cmd->add_option("--lr-min", o.lr_min, "final learning rate")->capture_default_str();
  cmd->add_option("--schedule", o.schedule, "decay shape: cosine|linear")->capture_default_str();
  cmd->add_option("--eval-interval", o.eval_interval, "iterations between loss estimates")
      ->capture_default_str();
  cmd->add_option("--eval-batches", o.eval_batches, "batches per loss estimate")
      ->capture_default_str();
  cmd->add_option("--checkpoint-interval", o.checkpoint_interval,
                  "iterations between checkpoints")
      ->capture_default_str();
  cmd->add_option("--seed", o.seed, "root seed (env SKIPGRID_SEED overrides this default)")
      ->capture_default_str();
}

void add_rate_flags(CLI::App* cmd, RateOpts& r) {
  cmd->add_option("--attn", r.attn, "attention/MLP dropout rate (inverted)")
      ->capture_default_str();
  cmd->add_option("--res1", r.res1, "skip-1 residual dropout rate (unscaled)")
      ->capture_default_str();
  cmd->add_option("--res2", r.res2, "skip-2 residual dropout rate or 'none'")
      ->capture_default_str();
  cmd->add_option("--res4", r.res4, "skip-4 residual dropout rate or 'none'")
      ->capture_default_str();
  cmd->add_option("--res-stride", r.res_stride, "blocks between skip-2/4 edges (1 = every block)")
      ->capture_default_str();
}

std::optional<float> rate_or_none(const std::string& s, const char* flag) {
  if (s == "none") return std::nullopt;
  char* end = nullptr;
  const float v = std::strtof(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw Error::config(std::string(flag) + " expects a rate or 'none', got '" + s + "'");
  return v;
}

ModelConfig make_model_config(const CommonOpts& o, const RateOpts& r, int vocab_size) {
  ModelConfig cfg;
  cfg.n_layer = o.n_layer;
  cfg.n_head = o.n_head;
  cfg.n_embd = o.n_embd;
  cfg.block_size = o.block_size;
  cfg.vocab_size = vocab_size;
  cfg.attn_mlp_dropout = static_cast<float>(r.attn);
  cfg.topology.skip1 = static_cast<float>(r.res1);
  cfg.topology.skip2 = rate_or_none(r.res2, "--res2");
  cfg.topology.skip4 = rate_or_none(r.res4, "--res4");
  cfg.topology.stride = r.res_stride;
  cfg.activation = activation_from_string(o.activation);
  cfg.seed = o.seed;
  cfg.validate();
  return cfg;
}

TrainSettings make_train_settings(const CommonOpts& o) {
  TrainSettings ts;
  ts.batch_size = o.batch_size;
  ts.schedule.lr_max = static_cast<float>(o.lr_max);
  ts.schedule.lr_min = static_cast<float>(o.lr_min);
  ts.schedule.total_iters = o.iters;
  ts.schedule.shape = lr_shape_from_string(o.schedule);
  ts.eval_interval = o.eval_interval;
  ts.eval_batches = o.eval_batches;
  ts.checkpoint_interval = o.checkpoint_interval;
  return ts;
}

std::string vocab_to_hex(const Vocab& vocab) {
  const std::string bytes = encode_utf8(vocab.chars());
  static const char* digits = "0123456789abcdef";
  std::string out;
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xF]);
  }
  return out;
}

Vocab vocab_from_hex(const std::string& hex) {
  if (hex.size() % 2 != 0) throw Error::data("malformed vocab_hex in checkpoint");
  std::string bytes;
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw Error::data("malformed vocab_hex in checkpoint");
  };
  for (std::size_t i = 0; i < hex.size(); i += 2)
    bytes.push_back(static_cast<char>(nibble(hex[i]) * 16 + nibble(hex[i + 1])));
  return Vocab::from_codepoints(decode_utf8(bytes));
}

std::map<std::string, std::string> effective_config(const ModelConfig& cfg,
                                                    const TrainSettings& ts,
                                                    const std::string& data_path,
                                                    std::uint64_t corpus_hash) {
  std::map<std::string, std::string> kv = model_config_kv(cfg);
  kv["batch_size"] = std::to_string(ts.batch_size);
  kv["iters"] = std::to_string(ts.schedule.total_iters);
  kv["lr_max"] = format_float_exact(ts.schedule.lr_max);
  kv["lr_min"] = format_float_exact(ts.schedule.lr_min);
  kv["schedule"] = to_string(ts.schedule.shape);
  kv["eval_interval"] = std::to_string(ts.eval_interval);
  kv["eval_batches"] = std::to_string(ts.eval_batches);
  kv["checkpoint_interval"] = std::to_string(ts.checkpoint_interval);
  kv["data"] = data_path;
  kv["corpus_hash"] = std::to_string(corpus_hash);
  return kv;
}

void echo_config(const std::map<std::string, std::string>& kv, const std::string& file_path) {
  std::string text;
  for (const auto& [k, v] : kv) text += k + " = " + v + "\n";
  std::fputs(text.c_str(), stdout);
  if (!file_path.empty()) {
    std::ofstream out(file_path, std::ios::trunc);
    out << text;
  }
}

int cmd_train(const CommonOpts& o, const RateOpts& r) {
  const std::string corpus = read_file(o.data_path);
  const auto [vocab, split] = load_and_encode_text(corpus);
  const std::uint64_t corpus_hash = fnv1a_hash(corpus);

  ModelConfig cfg = make_model_config(o, r, vocab.size());
  TrainSettings ts = make_train_settings(o);
  fs::create_directories(o.out_dir);
  ts.curve_csv_path = (fs::path(o.out_dir) / "curve.csv").string();
  ts.checkpoint_path = (fs::path(o.out_dir) / "model.skpg").string();
  ts.checkpoint_extras["vocab_hex"] = vocab_to_hex(vocab);
  ts.on_eval = [](const CurvePoint& pt) {
    std::printf("iter %6ld  train %.4f  val %.4f  lr %.2e  %.1fs\n", pt.iteration,
                static_cast<double>(pt.train_loss), static_cast<double>(pt.val_loss),
                static_cast<double>(pt.lr), pt.wall_seconds);
    std::fflush(stdout);
  };

  std::printf("vocab size %d | train %zu chars | val %zu chars\n", vocab.size(),
              split.train_ids.size(), split.val_ids.size());
  echo_config(effective_config(cfg, ts, o.data_path, corpus_hash),
              (fs::path(o.out_dir) / "run_config.txt").string());

  TrainReport report = train_loop(cfg, ts, split);

  std::map<std::string, std::string> summary =
      effective_config(cfg, ts, o.data_path, corpus_hash);
  summary["status"] = report.diverged ? "diverged" : "completed";
  summary["final_val_loss"] = format_float_exact(report.final_val_loss);
  summary["wall_seconds"] = std::to_string(report.wall_seconds);
  if (report.diverged) summary["diverged_at"] = std::to_string(report.diverged_at);
  {
    std::ofstream out(fs::path(o.out_dir) / "report.txt", std::ios::trunc);
    for (const auto& [k, v] : summary) out << k << " = " << v << "\n";
  }

  if (report.diverged) {
    std::fprintf(stderr, "training diverged at iteration %ld (loss %.4f)\n", report.diverged_at,
                 static_cast<double>(report.step_losses.back()));
    return kExitDiverged;
  }
  std::printf("done: final val loss %.4f in %.1fs; artifacts in %s\n",
              static_cast<double>(report.final_val_loss), report.wall_seconds,
              o.out_dir.c_str());
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& which_split, int batch_size, int n_batches, std::uint64_t seed) {
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  const auto [vocab, split] = load_and_encode(data_path);
  if (vocab.size() != loaded.model.config.vocab_size)
    throw Error::data("corpus vocabulary (" + std::to_string(vocab.size()) +
                      ") does not match checkpoint vocab_size (" +
                      std::to_string(loaded.model.config.vocab_size) + ")");
  const std::vector<std::int32_t>& ids =
      which_split == "train" ? split.train_ids : split.val_ids;
  RngState rng = derive_stream(seed, 0xE7A1);
  const float loss = estimate_loss(loaded.model, ids, batch_size, n_batches, rng);
  std::printf("%s loss %.6f (%d batches, seed %" PRIu64 ")\n", which_split.c_str(),
              static_cast<double>(loss), n_batches, seed);
  return 0;
}

int cmd_generate(const std::string& checkpoint_path, const std::string& prompt, int n_new,
                 double temperature, std::uint64_t seed) {
  if (prompt.empty()) throw Error::contract("--prompt must be non-empty");
  LoadedCheckpoint loaded = load_checkpoint(checkpoint_path);
  auto it = loaded.extras.find("vocab_hex");
  if (it == loaded.extras.end())
    throw Error::data("checkpoint has no vocabulary; cannot map characters");
  const Vocab vocab = vocab_from_hex(it->second);
  if (vocab.size() != loaded.model.config.vocab_size)
    throw Error::data("checkpoint vocabulary is inconsistent with vocab_size");

  std::vector<std::int32_t> ids = vocab.encode_utf8(prompt);
  RngState rng = derive_stream(seed, 0x6E4E);
  ids = generate(loaded.model, ids, n_new, static_cast<float>(temperature), rng);
  std::printf("%s\n", vocab.decode(ids).c_str());
  return 0;
}

int cmd_grid(const CommonOpts& o, bool use_builtin, const std::string& grid_file,
             int parallelism, bool force, bool iters_overridden) {
  const std::string corpus = read_file(o.data_path);
  const auto [vocab, split] = load_and_encode_text(corpus);
  const std::uint64_t corpus_hash = fnv1a_hash(corpus);

  GridSpec spec;
  if (use_builtin) {
    spec = builtin_reference_grid(o.seed);
  } else {
    spec.rows = load_grid_file(grid_file);
  }
  RateOpts no_rates;  // per-row rates replace these
  spec.base = make_model_config(o, no_rates, vocab.size());
  spec.base_train = make_train_settings(o);
  spec.base_train.checkpoint_extras["vocab_hex"] = vocab_to_hex(vocab);
  if (iters_overridden)
    for (GridRow& row : spec.rows) row.iters = o.iters;

  std::printf("grid: %zu rows | vocab %d | parallelism %d | out %s\n", spec.rows.size(),
              vocab.size(), parallelism, o.out_dir.c_str());
  const std::vector<RunResult> results =
      run_grid(spec, split, corpus_hash, parallelism, o.out_dir, force);
  emit_report(results, o.out_dir);
  std::printf("report written to %s/results.txt\n", o.out_dir.c_str());

  for (const RunResult& r : results)
    if (r.status != "completed") return kExitDiverged;
  return 0;
}

int cmd_gradcheck(int seeds) {
  bool all_ok = true;
  for (const auto& outcome : gradcheck::run_default_suite(seeds)) {
    std::printf("[%s] %-18s max err %.3e over %ld gradient entries (%d seeds)\n",
                outcome.passed ? "PASS" : "FAIL", outcome.name.c_str(), outcome.max_err,
                outcome.elements, outcome.seeds);
    all_ok = all_ok && outcome.passed;
  }
  return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"character-level decoder with configurable residual topology and dropout"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "key=value config file with [train]/[grid] sections (flags override it)");

  CommonOpts opts;
  opts.seed = default_seed();
  RateOpts rates;

  // train
  CLI::App* train = app.add_subcommand("train", "train one model");
  train->add_option("--data", opts.data_path, "UTF-8 corpus file")->required();
  train->add_option("--out", opts.out_dir, "output directory")->capture_default_str();
  add_model_flags(train, opts);
  add_train_flags(train, opts);
  add_rate_flags(train, rates);

  // eval
  std::string ckpt_path, eval_split = "val";
  CLI::App* eval = app.add_subcommand("eval", "estimate loss of a checkpoint on a split");
  eval->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval->add_option("--data", opts.data_path, "UTF-8 corpus file")->required();
  eval->add_option("--split", eval_split, "train|val")->capture_default_str();
  eval->add_option("--batches", opts.eval_batches, "batches to average")->capture_default_str();
  eval->add_option("--batch-size", opts.batch_size, "sequences per batch")->capture_default_str();
  eval->add_option("--seed", opts.seed, "sampling seed")->capture_default_str();

  // generate
  std::string prompt;
  int n_new = 200;
  double temperature = 1.0;
  CLI::App* gen = app.add_subcommand("generate", "sample text from a checkpoint");
  gen->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  gen->add_option("--prompt", prompt, "prompt text")->required();
  gen->add_option("--n", n_new, "characters to generate")->capture_default_str();
  gen->add_option("--temperature", temperature, "sampling temperature (<1e-6 = argmax)")
      ->capture_default_str();
  gen->add_option("--seed", opts.seed, "sampling seed")->capture_default_str();

  // grid
  bool use_builtin = false, force = false;
  std::string grid_file;
  int parallelism = 1;
  CLI::App* grid = app.add_subcommand("grid", "run a grid of dropout/residual configurations");
  grid->add_option("--data", opts.data_path, "UTF-8 corpus file")->required();
  grid->add_option("--out", opts.out_dir, "output directory")->default_val("grid_out");
  grid->add_flag("--paper", use_builtin, "run the built-in published ablation grid");
  grid->add_option("--grid-file", grid_file, "grid definition file ([run] sections)");
  grid->add_option("--parallelism", parallelism, "concurrent rows")->capture_default_str();
  grid->add_flag("--force", force, "recompute rows that already have results");
  add_model_flags(grid, opts);
  add_train_flags(grid, opts);

  // gradcheck
  int gc_seeds = 20;
  CLI::App* gradcheck_cmd =
      app.add_subcommand("gradcheck", "finite-difference check of every operation");
  gradcheck_cmd->add_option("--seeds", gc_seeds, "random seeds per case")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (app.got_subcommand(train)) return cmd_train(opts, rates);
    if (app.got_subcommand(eval)) {
      if (eval_split != "train" && eval_split != "val")
        throw Error::config("--split must be train or val, got '" + eval_split + "'");
      return cmd_eval(ckpt_path, opts.data_path, eval_split, opts.batch_size, opts.eval_batches,
                      opts.seed);
    }
    if (app.got_subcommand(gen))
      return cmd_generate(ckpt_path, prompt, n_new, temperature, opts.seed);
    if (app.got_subcommand(grid)) {
      if (use_builtin == !grid_file.empty())
        throw Error::config("grid needs exactly one of --paper or --grid-file");
      const bool iters_overridden = grid->count("--iters") > 0;
      return cmd_grid(opts, use_builtin, grid_file, parallelism, force, iters_overridden);
    }
    if (app.got_subcommand(gradcheck_cmd)) return cmd_gradcheck(gc_seeds);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
