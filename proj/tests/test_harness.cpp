#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include <json.hpp>

#include "dcn2/errors.hpp"
#include "dcn2/harness.hpp"
#include "dcn2/synthetic.hpp"

using namespace dcn2;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("dcn2_test_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string synthetic_file(std::uint64_t rows) {
  const auto path = fs::temp_directory_path() / ("dcn2_test_synth_" + std::to_string(rows) + ".tsv");
  if (!fs::exists(path)) {
    SyntheticSpec s;
    s.rows = rows;
    write_synthetic(path.string(), s);
  }
  return path.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> dir_contents(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::directory_iterator(dir)) out[e.path().filename().string()] = slurp(e.path());
  return out;
}

RunSpec small_spec(const std::string& data, const fs::path& out) {
  RunSpec s;
  s.data_path = data;
  s.out_dir = out.string();
  s.name = "t";
  s.window = 10;
  s.seeds = {1};
  s.model.hash_bits = 10;
  s.model.embedding_dim = 8;
  s.model.deep_layers = {16};
  s.model.batch_size = 10;
  s.model.learning_rate = 0.01;
  return s;
}

// Records which rows it has trained on so the test can check that every
// prediction is made before the learner sees that row's label.
class TracingLearner : public Learner {
 public:
  void train_batch(std::span<const FeatureRecord> batch, std::vector<double>& predictions) override {
    batch_sizes.push_back(batch.size());
    for (const auto& r : batch) {
      const auto key = r.fields[0].index * 1000003ULL + r.fields[1].index;
      predictions.push_back(trained.count(key) ? 0.9 : 0.1);
    }
    for (const auto& r : batch) trained.insert(r.fields[0].index * 1000003ULL + r.fields[1].index);
  }
  std::vector<std::size_t> batch_sizes;
  std::multiset<std::uint64_t> trained;
};

}  // namespace

TEST_CASE("exit codes map from error types") {
  CHECK(exit_code_for(IoError("x")) == 2);
  CHECK(exit_code_for(SchemaError("x")) == 3);
  CHECK(exit_code_for(ParseError("x")) == 3);
  CHECK(exit_code_for(NonFiniteError("x")) == 4);
  CHECK(exit_code_for(ConfigError("x")) == 5);
  CHECK(exit_code_for(EmptyDatasetError("x")) == 6);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("progressive pass predicts before it trains, in batch order") {
  const auto data = synthetic_file(100);
  const auto profile = load_profile(data, DataFormat::kGeneric);
  const auto padding = estimate_padding(data, profile, 0.95, 0);
  RecordStream stream(data, profile, 12, padding);
  TracingLearner learner;
  WindowedMetrics metrics(10);
  CHECK(progressive_pass(stream, learner, 32, metrics) == 100);
  CHECK(learner.batch_sizes == std::vector<std::size_t>{32, 32, 32, 4});
  CHECK(metrics.instances() == 100);
  CHECK(metrics.windows().size() == 10);
  CHECK_FALSE(metrics.partial().has_value());
}

TEST_CASE("run bookkeeping: 100 rows, window 10, artifacts per seed") {
  const auto out = scratch("run");
  auto spec = small_spec(synthetic_file(100), out);
  spec.seeds = {1, 2};
  const auto r = run_single(spec);
  REQUIRE(r.exit_code == kExitOk);
  REQUIRE(r.seeds.size() == 2);
  for (const auto& s : r.seeds) {
    CHECK(s.rows == 100);
    CHECK(s.windows.size() == 10);
    CHECK_FALSE(s.partial.has_value());
    CHECK_FALSE(s.malformed);
    REQUIRE(s.weights.has_value());
    CHECK(s.weights->total == 1024);
  }
  for (const char* f : {"t.summary.json", "t_seed1.windows.csv", "t_seed1.summary.json", "t_seed1.ckpt",
                        "t_seed1.ckpt.layers", "t_seed1.weights.csv", "t_seed2.windows.csv"})
    CHECK_MESSAGE(fs::exists(out / f), f);
  const auto csv = slurp(out / "t_seed1.windows.csv");
  CHECK(csv.rfind("# spec_hash=" + r.hash + ", seed=1\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 12);

  const auto j = nlohmann::json::parse(slurp(out / "t.summary.json"));
  CHECK(j["spec_hash"] == r.hash);
  CHECK(j["mean_auc"].get<double>() == doctest::Approx(*r.mean_auc()));

  // the checkpoint reloads and reports the same collision weights
  const auto m = load_checkpoint((out / "t_seed1.ckpt").string());
  const auto w = export_weight_distribution(m.table(), spec.weight_epsilon);
  CHECK(w.modified == r.seeds[0].weights->modified);
  fs::remove_all(out);
}

TEST_CASE("a trailing partial window is reported, not aggregated") {
  const auto out = scratch("partial");
  auto spec = small_spec(synthetic_file(100), out);
  spec.window = 30;
  const auto r = run_single(spec);
  REQUIRE(r.exit_code == kExitOk);
  CHECK(r.seeds[0].windows.size() == 3);
  REQUIRE(r.seeds[0].partial.has_value());
  CHECK(r.seeds[0].partial->count == 10);
  fs::remove_all(out);
}

TEST_CASE("empty dataset: exit 6 and no artifacts") {
  const auto out = scratch("empty");
  const auto data = out / "empty.tsv";
  std::ofstream(data) << "label\tnum:a\tcat:b\n";
  const auto res = out / "res";
  auto spec = small_spec(data.string(), res);
  const auto r = run_single(spec);
  CHECK(r.exit_code == kExitEmptyDataset);
  CHECK(fs::is_empty(res));
  fs::remove_all(out);
}

TEST_CASE("input problems map to their exit codes") {
  const auto out = scratch("codes");
  auto spec = small_spec((out / "missing.tsv").string(), out / "res");
  try {
    run_single(spec);
    FAIL("expected IoError");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == kExitUnreadableInput);
  }

  const auto bad = out / "bad.tsv";
  std::ofstream(bad) << "label\tcolour:x\n1\tred\n";
  spec.data_path = bad.string();
  try {
    run_single(spec);
    FAIL("expected SchemaError");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == kExitSchemaMismatch);
  }

  spec.data_path = synthetic_file(100);
  spec.model.embedding_dim = 4;  // outside the tuned range
  try {
    run_single(spec);
    FAIL("expected ConfigError");
  } catch (const std::exception& e) {
    CHECK(exit_code_for(e) == kExitConfigError);
  }
  spec.strict_ranges = false;
  CHECK(run_single(spec).exit_code == kExitOk);

  // a huge phi overflows fp32 activations: non-finite loss
  spec.model.embedding_dim = 8;
  spec.model.phi = 1e30;
  spec.model.cross_layers = 3;
  const auto r = run_single(spec);
  CHECK(r.exit_code == kExitNonFiniteLoss);
  CHECK(r.seeds[0].error.find("non-finite") != std::string::npos);
  fs::remove_all(out);
}

TEST_CASE("malformed rows are skipped and flagged above 1%") {
  const auto out = scratch("malformed");
  const auto src = synthetic_file(100);
  const auto data = out / "dirty.tsv";
  {
    std::ifstream in(src);
    std::ofstream o(data);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
      o << line << '\n';
      if (n++ == 5) o << "1\tnot\tenough\n" << "x\n";
    }
  }
  const auto r = run_single(small_spec(data.string(), out / "res"));
  REQUIRE(r.exit_code == kExitOk);
  CHECK(r.seeds[0].rows == 100);
  CHECK(r.seeds[0].row_errors == 2);
  CHECK(r.seeds[0].malformed);
  const auto j = nlohmann::json::parse(slurp(out / "res" / "t_seed1.summary.json"));
  CHECK(j["malformed"] == true);
  fs::remove_all(out);
}

TEST_CASE("identical specs give byte-identical artifacts") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  const auto data = synthetic_file(300);
  auto sa = small_spec(data, a), sb = small_spec(data, b);
  sa.seeds = sb.seeds = {3, 4};
  run_single(sa);
  run_single(sb);
  const auto ca = dir_contents(a), cb = dir_contents(b);
  CHECK(ca.size() == 11);
  CHECK(ca == cb);
  // spec hash ignores the seed list and output location but not the model
  CHECK(spec_hash(sa) == spec_hash(sb));
  sb.model.learning_rate = 0.002;
  CHECK(spec_hash(sa) != spec_hash(sb));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("grid: expansion order and names") {
  ModelConfig base;
  GridAxes axes;
  axes.variants = {Variant::kDcn2, Variant::kDcnV2};
  axes.learning_rates = {0.001, 0.01};
  const auto cells = expand_grid(base, axes);
  REQUIRE(cells.size() == 4);
  CHECK(cell_name(cells[0]) == "dcn2_b18_d8_lr0.001_beta10.9_phi1");
  CHECK(cell_name(cells[1]) == "dcn2_b18_d8_lr0.01_beta10.9_phi1");
  CHECK(cells[2].variant == Variant::kDcnV2);
  CHECK(expand_grid(base, GridAxes{}).size() == 1);
}

TEST_CASE("grid: a single point, a never-selected no-learning cell, reproducible ranking") {
  const auto out = scratch("grid");
  SweepSpec sw;
  sw.base = small_spec(synthetic_file(3000), out);
  sw.base.window = 500;
  sw.base.model.batch_size = 20;
  sw.base.write_checkpoint = false;

  sw.axes.learning_rates = {0.01};
  auto one = run_grid(sw);
  REQUIRE(one.cells.size() == 1);
  REQUIRE(one.best.size() == 1);
  CHECK(one.best[0].second == 0);

  // lr = 0 is outside the tuned range: refused unless ranges are relaxed
  sw.axes.learning_rates = {0.0, 0.01};
  sw.axes.variants = {Variant::kDcn2, Variant::kDcn2Simk};
  CHECK_THROWS_AS(run_grid(sw), ConfigError);
  sw.base.strict_ranges = false;
  sw.parallelism = 2;
  const auto g = run_grid(sw);
  REQUIRE(g.cells.size() == 4);
  REQUIRE(g.best.size() == 2);
  for (const auto& [v, i] : g.best) CHECK(g.cells[i].model.learning_rate == 0.01);

  // re-rank from what was written to disk
  const auto grid = nlohmann::json::parse(slurp(out / "grid.json"));
  std::vector<CellResult> reread;
  for (const auto& c : g.cells) {
    CellResult r;
    r.name = c.name;
    r.model = c.model;
    r.ran = true;
    const auto s = nlohmann::json::parse(slurp(out / (c.name + ".summary.json")));
    r.run.seeds.resize(1);
    r.run.seeds[0].aggregates.auc = Aggregate{s["mean_auc"].get<double>()};
    r.run.seeds[0].aggregates.rig = Aggregate{s["mean_rig"].get<double>()};
    for (const auto& gc : grid["cells"])
      if (gc["cell"] == c.name) r.parameters = gc["parameters"].get<std::size_t>();
    reread.push_back(r);
  }
  CHECK(rank_cells(reread) == g.best);
  for (const auto& [v, i] : g.best) CHECK(grid["best"][std::string(variant_name(v))] == g.cells[i].name);
  fs::remove_all(out);
}

TEST_CASE("grid budget: cells past the deadline do not run") {
  const auto out = scratch("budget");
  SweepSpec sw;
  sw.base = small_spec(synthetic_file(100), out);
  sw.base.write_checkpoint = false;
  sw.axes.learning_rates = {0.001, 0.002, 0.003};
  sw.budget_seconds = 1e-9;
  const auto g = run_grid(sw);
  CHECK(g.partial);
  CHECK(g.best.empty());
  fs::remove_all(out);
}

TEST_CASE("rank ties break on RIG, then on parameter count") {
  auto cell = [](double auc, double rig, std::size_t params) {
    CellResult c;
    c.ran = true;
    c.parameters = params;
    c.run.seeds.resize(1);
    c.run.seeds[0].aggregates.auc = Aggregate{auc};
    c.run.seeds[0].aggregates.rig = Aggregate{rig};
    return c;
  };
  CHECK(rank_cells({cell(0.7, 0.1, 10), cell(0.8, 0.0, 10)})[0].second == 1);
  CHECK(rank_cells({cell(0.7, 0.1, 10), cell(0.7, 0.2, 10)})[0].second == 1);
  CHECK(rank_cells({cell(0.7, 0.1, 10), cell(0.7, 0.1, 5)})[0].second == 1);
  CHECK(rank_cells({cell(0.7, 0.1, 10), cell(0.7, 0.1, 10)})[0].second == 0);
  auto never = cell(0.99, 0.9, 1);
  never.ran = false;
  CHECK(rank_cells({never, cell(0.6, 0.1, 10)})[0].second == 1);
}

TEST_CASE("hash sweep: table shape and serial vs parallel artifacts") {
  const auto a = scratch("sweep_a"), b = scratch("sweep_b");
  SweepSpec sw;
  sw.base = small_spec(synthetic_file(300), a);
  sw.base.seeds = {1, 2};
  sw.axes.hash_bits = {10, 8};
  sw.axes.variants = {Variant::kDcnV2, Variant::kDcn2};
  const auto rows = run_hash_sweep(sw);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].hash_bits == 8);
  CHECK(rows[0].variant == Variant::kDcn2);
  CHECK(rows[3].hash_bits == 10);
  CHECK(rows[0].seed_rig.size() == 2);
  const auto csv = slurp(a / "hash_sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);

  sw.base.out_dir = b.string();
  sw.parallelism = 4;
  run_hash_sweep(sw);
  CHECK(dir_contents(a) == dir_contents(b));

  sw.axes.hash_bits = {10};
  CHECK_THROWS_AS(run_hash_sweep(sw), ConfigError);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("cli: config file first, flags override, exit codes propagate") {
  const char* cli = std::getenv("DCN2_CLI");
  if (cli == nullptr) {
    MESSAGE("DCN2_CLI not set; skipping");
    return;
  }
  const auto out = scratch("cli");
  const auto cfg = out / "run.cfg";
  std::ofstream(cfg) << "dcn2-config 1\n# test\nlr = 0.005\ndim = 12\nbatch = 10\nhash-bits = 10\n"
                        "window = 10\nseeds = 1\nname = c\n";
  const std::string base = std::string(cli) + " -q run --config " + cfg.string() + " --data " +
                           synthetic_file(100) + " --out " + (out / "res").string();
  CHECK(std::system((base + " --lr 0.002 > /dev/null").c_str()) == 0);
  const auto j = nlohmann::json::parse(slurp(out / "res" / "c.summary.json"));
  CHECK(j["config"]["lr"] == "0.002");
  CHECK(j["config"]["dim"] == "12");

  auto code = [](const std::string& cmd) {
    const int s = std::system((cmd + " > /dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  CHECK(code(base + " --dim 4") == kExitConfigError);
  CHECK(code(base + " --dim 4 --allow-out-of-range") == kExitOk);
  CHECK(code(std::string(cli) + " -q run --data " + (out / "nope.tsv").string()) == kExitUnreadableInput);
  CHECK(code(base + " --variant dcn9") == kExitConfigError);
  fs::remove_all(out);
}
