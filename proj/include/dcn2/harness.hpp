#pragma once

// Single-pass benchmark runs, the hash-space sweep and the hyperparameter
// grid. Every artifact is a pure function of (spec, seed): no timings, no
// host names, and the spec hash plus seed sit in each file's header.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dcn2/eval.hpp"
#include "dcn2/features.hpp"
#include "dcn2/model.hpp"

namespace dcn2 {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitUnreadableInput = 2,
  kExitSchemaMismatch = 3,
  kExitNonFiniteLoss = 4,
  kExitConfigError = 5,
  kExitEmptyDataset = 6,
};

// Maps an exception from a run to its exit code.
int exit_code_for(const std::exception& e);

struct RunSpec {
  std::string data_path;
  DataFormat format = DataFormat::kGeneric;
  ModelConfig model;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string out_dir = ".";
  std::string name = "run";
  std::size_t window = kDefaultWindow;
  std::uint64_t max_rows = 0;  // 0 = whole file
  double padding_quantile = 0.95;
  std::uint64_t padding_sample_rows = 20000;
  // Enforce the tuned hyperparameter ranges (see validate_config).
  bool strict_ranges = true;
  bool write_checkpoint = true;
  bool write_weights = true;
  double weight_epsilon = 0.01;
};

// Stable hex digest of everything in the spec that affects results, except
// the seed list and output location.
std::string spec_hash(const RunSpec& spec);

struct SeedResult {
  std::uint64_t seed = 0;
  int exit_code = kExitOk;
  std::string error;
  std::uint64_t rows = 0;
  std::uint64_t row_errors = 0;
  bool malformed = false;  // more than 1% of rows rejected
  std::vector<WindowRecord> windows;
  std::optional<WindowRecord> partial;
  MetricAggregates aggregates;
  std::size_t parameters = 0;
  std::optional<WeightDistribution> weights;

  bool ok() const { return exit_code == kExitOk; }
};

struct RunResult {
  std::string name;
  std::string hash;
  ModelConfig model;
  std::vector<SeedResult> seeds;
  int exit_code = kExitOk;  // first failing seed's code

  // Mean over seeds of each seed's mean windowed metric (failed seeds and
  // seeds without a defined window are skipped).
  std::optional<double> mean_auc() const;
  std::optional<double> mean_rig() const;
};

// Anything that can score a batch and then learn from it. The predictions
// must come from the parameters before the update.
class Learner {
 public:
  virtual ~Learner() = default;
  virtual void train_batch(std::span<const FeatureRecord> batch, std::vector<double>& predictions) = 0;
};

// Test-then-train over a record stream: every prediction is recorded into
// `metrics` before the batch it belongs to is learned from. Returns the
// number of records consumed.
std::uint64_t progressive_pass(RecordStream& stream, Learner& learner, std::size_t batch_size,
                               WindowedMetrics& metrics);

// One pass per seed; writes artifacts into spec.out_dir:
//   <name>_seed<S>.windows.csv, <name>_seed<S>.summary.json,
//   <name>_seed<S>.ckpt (+ .layers), <name>_seed<S>.weights.csv
// and <name>.summary.json across seeds. Errors are caught per seed.
RunResult run_single(const RunSpec& spec);

// Validates the spec and input before any seed runs. Throws on problems.
void check_run_spec(const RunSpec& spec);

struct GridAxes {
  std::vector<Variant> variants;
  std::vector<int> hash_bits;
  std::vector<double> learning_rates;
  std::vector<double> beta1s;
  std::vector<int> dims;
  std::vector<double> phis;
};

struct SweepSpec {
  RunSpec base;
  GridAxes axes;  // empty axis = keep the base value
  int parallelism = 1;
  double budget_seconds = 0.0;  // 0 = unlimited
};

struct CellResult {
  std::string name;
  ModelConfig model;
  bool ran = false;
  RunResult run;
  std::size_t parameters = 0;
};

struct GridReport {
  std::vector<CellResult> cells;  // declaration order
  bool partial = false;           // budget ran out before every cell started
  // Index into `cells` of the best config per variant, in variant order.
  std::vector<std::pair<Variant, std::size_t>> best;
};

// Expands the axes in a fixed order (variant, hash_bits, lr, beta1, dim, phi).
std::vector<ModelConfig> expand_grid(const ModelConfig& base, const GridAxes& axes);
std::string cell_name(const ModelConfig& config);

// Ranks by mean AUC, then mean RIG, then fewer parameters. Cells that did
// not run or have no defined AUC never win.
std::vector<std::pair<Variant, std::size_t>> rank_cells(const std::vector<CellResult>& cells);

// Runs every cell (in parallel up to spec.parallelism), writes each cell's
// artifacts plus grid.csv and grid.json into base.out_dir.
GridReport run_grid(const SweepSpec& spec);

struct SweepRow {
  int hash_bits = 0;
  Variant variant = Variant::kDcn2;
  std::optional<double> mean_rig;
  std::optional<double> mean_auc;
  std::vector<std::optional<double>> seed_rig;
  std::vector<std::optional<double>> seed_auc;
  int exit_code = kExitOk;
};

// Hash-bits axis (at least two values) crossed with the variants axis.
// Writes hash_sweep.csv; rows sorted by hash bits, then variant.
std::vector<SweepRow> run_hash_sweep(const SweepSpec& spec);

// Optional progress sink for long runs (stderr in the CLI, silent by default).
void set_progress_sink(std::function<void(const std::string&)> sink);

}  // namespace dcn2
