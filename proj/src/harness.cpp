#include "dcn2/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dcn2/config.hpp"
#include "dcn2/errors.hpp"

namespace dcn2 {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::mutex g_progress_mutex;
std::function<void(const std::string&)> g_progress;

void progress(const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_progress_mutex);
  if (g_progress) g_progress(msg);
}

Json optional_json(std::optional<double> v) { return v ? Json(*v) : Json(nullptr); }

Json aggregate_json(const std::optional<Aggregate>& a) {
  if (!a) return nullptr;
  return Json{{"avg", a->avg},   {"median", a->median}, {"max", a->max},
              {"min", a->min},   {"std", a->std},       {"windows", a->count}};
}

Json window_json(const WindowRecord& w) {
  return Json{{"index", w.index},
              {"count", w.count},
              {"auc", optional_json(w.auc)},
              {"logloss", w.logloss},
              {"rig", optional_json(w.rig)},
              {"pos_rate", w.pos_rate}};
}

Json config_json(const ModelConfig& c) {
  Json out = Json::object();
  for (const auto& [k, v] : parse_config_text(serialize_model_config(c))) out[k] = v;
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string header_comment(const std::string& hash, std::optional<std::uint64_t> seed) {
  std::string s = "spec_hash=" + hash;
  if (seed) s += ", seed=" + std::to_string(*seed);
  return s;
}

class ModelLearner : public Learner {
 public:
  explicit ModelLearner(Model<float>& model) : model_(model) {}
  void train_batch(std::span<const FeatureRecord> batch, std::vector<double>& predictions) override {
    model_.train_step(batch, &predictions);
  }

 private:
  Model<float>& model_;
};

std::optional<double> mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nullopt;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

void set_progress_sink(std::function<void(const std::string&)> sink) {
  std::lock_guard<std::mutex> lock(g_progress_mutex);
  g_progress = std::move(sink);
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e)) return kExitUnreadableInput;
  if (dynamic_cast<const SchemaError*>(&e)) return kExitSchemaMismatch;
  if (dynamic_cast<const ParseError*>(&e)) return kExitSchemaMismatch;
  if (dynamic_cast<const NonFiniteError*>(&e)) return kExitNonFiniteLoss;
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfigError;
  if (dynamic_cast<const EmptyDatasetError*>(&e)) return kExitEmptyDataset;
  return kExitFailure;
}

std::string spec_hash(const RunSpec& spec) {
  ModelConfig m = spec.model;
  m.seed = 0;
  std::ostringstream text;
  text << "data=" << fs::path(spec.data_path).filename().string() << '\n'
       << "format=" << format_name(spec.format) << '\n'
       << "window=" << spec.window << '\n'
       << "max_rows=" << spec.max_rows << '\n'
       << "padding_quantile=" << format_real(spec.padding_quantile) << '\n'
       << "padding_sample_rows=" << spec.padding_sample_rows << '\n'
       << serialize_model_config(m);
  const std::string s = text.str();
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%08x%08x", murmur3_32(s, 0x5eed0001U), murmur3_32(s, 0x5eed0002U));
  return buf;
}

std::optional<double> RunResult::mean_auc() const {
  std::vector<double> v;
  for (const auto& s : seeds)
    if (s.ok() && s.aggregates.auc) v.push_back(s.aggregates.auc->avg);
  return mean_of(v);
}

std::optional<double> RunResult::mean_rig() const {
  std::vector<double> v;
  for (const auto& s : seeds)
    if (s.ok() && s.aggregates.rig) v.push_back(s.aggregates.rig->avg);
  return mean_of(v);
}

std::uint64_t progressive_pass(RecordStream& stream, Learner& learner, std::size_t batch_size,
                               WindowedMetrics& metrics) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<FeatureRecord> batch;
  batch.reserve(batch_size);
  std::vector<double> predictions;
  std::uint64_t consumed = 0;
  auto flush = [&] {
    if (batch.empty()) return;
    predictions.clear();
    learner.train_batch(batch, predictions);
    if (predictions.size() != batch.size()) {
      throw EvaluationError("learner returned " + std::to_string(predictions.size()) +
                            " predictions for a batch of " + std::to_string(batch.size()));
    }
    for (std::size_t i = 0; i < batch.size(); ++i) metrics.record(predictions[i], batch[i].label);
    consumed += batch.size();
    batch.clear();
  };
  FeatureRecord record;
  while (stream.next(record)) {
    batch.push_back(std::move(record));
    if (batch.size() == batch_size) flush();
  }
  flush();
  return consumed;
}

void check_run_spec(const RunSpec& spec) {
  if (spec.seeds.empty()) throw ConfigError("run needs at least one seed");
  if (spec.window == 0) throw ConfigError("window must be >= 1");
  if (!(spec.padding_quantile > 0.0 && spec.padding_quantile <= 1.0))
    throw ConfigError("padding quantile must be in (0, 1]");
  if (spec.data_path.empty()) throw ConfigError("no input data given");
  if (!fs::exists(spec.data_path)) throw IoError("cannot open " + spec.data_path);
  const auto profile = load_profile(spec.data_path, spec.format);
  validate_config(spec.model, profile.schema.size(), spec.strict_ranges);
  std::error_code ec;
  fs::create_directories(spec.out_dir, ec);
  if (ec || !fs::is_directory(spec.out_dir))
    throw IoError("output directory " + spec.out_dir + " is not writable");
}

namespace {

SeedResult run_seed(const RunSpec& spec, const DatasetProfile& profile,
                    const PaddingLengths& padding, std::uint64_t seed, const std::string& hash) {
  SeedResult r;
  r.seed = seed;
  ModelConfig config = spec.model;
  config.seed = seed;
  Model<float> model(config, profile.schema.size());
  r.parameters = model.parameter_count();

  RecordStream stream(spec.data_path, profile, config.hash_bits, padding, spec.max_rows);
  WindowedMetrics metrics(spec.window);
  ModelLearner learner(model);
  r.rows = progressive_pass(stream, learner, static_cast<std::size_t>(config.batch_size), metrics);
  r.row_errors = stream.stats().row_errors;
  if (r.rows == 0) {
    std::string msg = "no usable rows in " + spec.data_path;
    if (!stream.stats().first_error.empty()) msg += " (first error: " + stream.stats().first_error + ")";
    throw EmptyDatasetError(msg);
  }
  const std::uint64_t seen = r.rows + r.row_errors;
  r.malformed = r.row_errors * 100 > seen;
  r.windows = metrics.windows();
  r.partial = metrics.partial();
  r.aggregates = aggregate_windows(r.windows);
  if (config.uses_collision_weights()) {
    r.weights = export_weight_distribution(model.table(), spec.weight_epsilon);
  }

  const std::string stem = spec.name + "_seed" + std::to_string(seed);
  const fs::path dir(spec.out_dir);
  const std::string comment = header_comment(hash, seed);

  std::ostringstream csv;
  write_window_csv_header(csv, comment);
  write_window_rows(csv, stem, r.windows);
  write_text(dir / (stem + ".windows.csv"), csv.str());

  Json summary{{"run_id", stem},
               {"spec_hash", hash},
               {"seed", seed},
               {"config", config_json(config)},
               {"rows", r.rows},
               {"row_errors", r.row_errors},
               {"malformed", r.malformed},
               {"parameters", r.parameters},
               {"windows", r.windows.size()},
               {"auc", aggregate_json(r.aggregates.auc)},
               {"logloss", aggregate_json(r.aggregates.logloss)},
               {"rig", aggregate_json(r.aggregates.rig)},
               {"pos_rate", aggregate_json(r.aggregates.pos_rate)},
               {"partial_window", r.partial ? window_json(*r.partial) : Json(nullptr)}};
  if (r.weights) {
    const auto& w = *r.weights;
    summary["collision_weights"] = Json{{"epsilon", w.epsilon},       {"total", w.total},
                                        {"modified", w.modified},     {"below_one", w.below_one},
                                        {"above_one", w.above_one},   {"lower_tail", w.lower_tail},
                                        {"upper_tail", w.upper_tail}, {"min", w.min_weight},
                                        {"max", w.max_weight}};
  }
  write_text(dir / (stem + ".summary.json"), summary.dump(2) + "\n");

  if (r.weights) {
    std::ostringstream wc;
    wc << "# " << comment << '\n' << "bucket_low,bucket_high,count\n";
    for (const auto& b : r.weights->buckets)
      wc << format_real(b.low) << ',' << format_real(b.high) << ',' << b.count << '\n';
    write_text(dir / (stem + ".weights.csv"), wc.str());
  }
  if (spec.write_checkpoint) save_checkpoint(model, (dir / (stem + ".ckpt")).string());
  return r;
}

}  // namespace

RunResult run_single(const RunSpec& spec) {
  RunResult result;
  result.name = spec.name;
  result.model = spec.model;
  result.hash = spec_hash(spec);
  check_run_spec(spec);
  const auto profile = load_profile(spec.data_path, spec.format);
  const auto padding =
      estimate_padding(spec.data_path, profile, spec.padding_quantile, spec.padding_sample_rows);

  for (auto seed : spec.seeds) {
    progress(spec.name + ": seed " + std::to_string(seed));
    SeedResult r;
    try {
      r = run_seed(spec, profile, padding, seed, result.hash);
    } catch (const std::exception& e) {
      r = SeedResult{};
      r.seed = seed;
      r.exit_code = exit_code_for(e);
      r.error = e.what();
    }
    if (!r.ok() && result.exit_code == kExitOk) result.exit_code = r.exit_code;
    result.seeds.push_back(std::move(r));
  }

  Json seeds = Json::array();
  for (const auto& s : result.seeds) {
    seeds.push_back(Json{{"seed", s.seed},
                         {"exit_code", s.exit_code},
                         {"error", s.error},
                         {"auc_avg", s.aggregates.auc ? Json(s.aggregates.auc->avg) : Json(nullptr)},
                         {"rig_avg", s.aggregates.rig ? Json(s.aggregates.rig->avg) : Json(nullptr)}});
  }
  // Only written when at least one seed produced artifacts.
  const bool any_ok = std::any_of(result.seeds.begin(), result.seeds.end(),
                                  [](const SeedResult& s) { return s.ok(); });
  if (any_ok) {
    Json summary{{"name", spec.name},
                 {"spec_hash", result.hash},
                 {"config", config_json(spec.model)},
                 {"exit_code", result.exit_code},
                 {"seeds", seeds},
                 {"mean_auc", optional_json(result.mean_auc())},
                 {"mean_rig", optional_json(result.mean_rig())}};
    write_text(fs::path(spec.out_dir) / (spec.name + ".summary.json"), summary.dump(2) + "\n");
  }
  return result;
}

std::vector<ModelConfig> expand_grid(const ModelConfig& base, const GridAxes& axes) {
  std::vector<ModelConfig> out{base};
  auto expand = [&](const auto& values, auto setter) {
    if (values.empty()) return;
    std::vector<ModelConfig> next;
    for (const auto& c : out) {
      for (const auto& v : values) {
        ModelConfig m = c;
        setter(m, v);
        next.push_back(m);
      }
    }
    out = std::move(next);
  };
  expand(axes.variants, [](ModelConfig& m, Variant v) { m.variant = v; });
  expand(axes.hash_bits, [](ModelConfig& m, int v) { m.hash_bits = v; });
  expand(axes.learning_rates, [](ModelConfig& m, double v) { m.learning_rate = v; });
  expand(axes.beta1s, [](ModelConfig& m, double v) { m.beta1 = v; });
  expand(axes.dims, [](ModelConfig& m, int v) { m.embedding_dim = v; });
  expand(axes.phis, [](ModelConfig& m, double v) { m.phi = v; });
  return out;
}

std::string cell_name(const ModelConfig& c) {
  return std::string(variant_name(c.variant)) + "_b" + std::to_string(c.hash_bits) + "_d" +
         std::to_string(c.embedding_dim) + "_lr" + format_real(c.learning_rate) + "_beta1" +
         format_real(c.beta1) + "_phi" + format_real(c.phi);
}

std::vector<std::pair<Variant, std::size_t>> rank_cells(const std::vector<CellResult>& cells) {
  std::vector<Variant> order;
  for (const auto& c : cells)
    if (std::find(order.begin(), order.end(), c.model.variant) == order.end())
      order.push_back(c.model.variant);

  std::vector<std::pair<Variant, std::size_t>> best;
  for (auto v : order) {
    std::optional<std::size_t> pick;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const auto& c = cells[i];
      if (c.model.variant != v || !c.ran || !c.run.mean_auc()) continue;
      if (!pick) {
        pick = i;
        continue;
      }
      const auto& b = cells[*pick];
      const double auc = *c.run.mean_auc(), best_auc = *b.run.mean_auc();
      const double rig = c.run.mean_rig().value_or(-1e300);
      const double best_rig = b.run.mean_rig().value_or(-1e300);
      bool better = false;
      if (auc != best_auc) better = auc > best_auc;
      else if (rig != best_rig) better = rig > best_rig;
      else better = c.parameters < b.parameters;
      if (better) pick = i;
    }
    if (pick) best.emplace_back(v, *pick);
  }
  return best;
}

namespace {

// Runs each config as an independent run_single. Results land at the
// config's index, so scheduling order never affects the output.
std::vector<CellResult> run_cells(const SweepSpec& spec, const std::vector<ModelConfig>& configs,
                                  bool& partial) {
  std::vector<CellResult> cells(configs.size());
  for (std::size_t i = 0; i < configs.size(); ++i) {
    cells[i].model = configs[i];
    cells[i].name = cell_name(configs[i]);
  }
  const auto start = std::chrono::steady_clock::now();
  std::atomic<std::size_t> next{0};
  std::atomic<bool> out_of_time{false};

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      if (spec.budget_seconds > 0.0) {
        const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
        if (elapsed.count() >= spec.budget_seconds) {
          out_of_time = true;
          continue;
        }
      }
      RunSpec rs = spec.base;
      rs.model = configs[i];
      rs.name = cells[i].name;
      CellResult& cell = cells[i];
      cell.parameters = 0;
      try {
        cell.run = run_single(rs);
      } catch (const std::exception& e) {
        cell.run = RunResult{};
        cell.run.name = rs.name;
        cell.run.model = rs.model;
        cell.run.exit_code = exit_code_for(e);
        SeedResult failed;
        failed.exit_code = cell.run.exit_code;
        failed.error = e.what();
        cell.run.seeds.push_back(failed);
      }
      for (const auto& s : cell.run.seeds)
        if (s.ok()) cell.parameters = s.parameters;
      cell.ran = true;
      progress("cell " + cell.name + " done");
    }
  };

  const int threads = std::max(1, spec.parallelism);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  partial = out_of_time.load();
  return cells;
}

}  // namespace

GridReport run_grid(const SweepSpec& spec) {
  check_run_spec(spec.base);
  const auto configs = expand_grid(spec.base.model, spec.axes);
  if (configs.empty()) throw ConfigError("grid is empty");
  const auto profile = load_profile(spec.base.data_path, spec.base.format);
  for (const auto& c : configs) validate_config(c, profile.schema.size(), spec.base.strict_ranges);

  GridReport report;
  report.cells = run_cells(spec, configs, report.partial);
  report.best = rank_cells(report.cells);

  const std::string hash = spec_hash(spec.base);
  std::ostringstream csv;
  csv << "# " << header_comment(hash, std::nullopt) << '\n'
      << "cell,variant,hash_bits,dim,lr,beta1,phi,parameters,mean_auc,mean_rig,exit_code,ran\n";
  Json cells = Json::array();
  for (const auto& c : report.cells) {
    const auto& m = c.model;
    csv << c.name << ',' << variant_name(m.variant) << ',' << m.hash_bits << ','
        << m.embedding_dim << ',' << format_real(m.learning_rate) << ',' << format_real(m.beta1)
        << ',' << format_real(m.phi) << ',' << c.parameters << ','
        << format_metric(c.run.mean_auc()) << ',' << format_metric(c.run.mean_rig()) << ','
        << c.run.exit_code << ',' << (c.ran ? 1 : 0) << '\n';
    cells.push_back(Json{{"cell", c.name},
                         {"ran", c.ran},
                         {"exit_code", c.run.exit_code},
                         {"parameters", c.parameters},
                         {"mean_auc", optional_json(c.run.mean_auc())},
                         {"mean_rig", optional_json(c.run.mean_rig())}});
  }
  Json best = Json::object();
  for (const auto& [v, i] : report.best) best[std::string(variant_name(v))] = report.cells[i].name;
  Json out{{"spec_hash", hash}, {"partial", report.partial}, {"best", best}, {"cells", cells}};
  const fs::path dir(spec.base.out_dir);
  write_text(dir / "grid.csv", csv.str());
  write_text(dir / "grid.json", out.dump(2) + "\n");
  return report;
}

std::vector<SweepRow> run_hash_sweep(const SweepSpec& spec) {
  if (spec.axes.hash_bits.size() < 2) throw ConfigError("hash sweep needs at least two hash_bits values");
  check_run_spec(spec.base);
  GridAxes axes;
  axes.hash_bits = spec.axes.hash_bits;
  axes.variants = spec.axes.variants;
  const auto configs = expand_grid(spec.base.model, axes);
  const auto profile = load_profile(spec.base.data_path, spec.base.format);
  for (const auto& c : configs) validate_config(c, profile.schema.size(), spec.base.strict_ranges);

  bool partial = false;
  const auto cells = run_cells(spec, configs, partial);

  std::vector<SweepRow> rows;
  for (const auto& c : cells) {
    SweepRow row;
    row.hash_bits = c.model.hash_bits;
    row.variant = c.model.variant;
    row.mean_auc = c.run.mean_auc();
    row.mean_rig = c.run.mean_rig();
    row.exit_code = c.ran ? c.run.exit_code : kExitFailure;
    for (auto seed : spec.base.seeds) {
      std::optional<double> auc, rig;
      for (const auto& s : c.run.seeds) {
        if (s.seed != seed || !s.ok()) continue;
        if (s.aggregates.auc) auc = s.aggregates.auc->avg;
        if (s.aggregates.rig) rig = s.aggregates.rig->avg;
      }
      row.seed_auc.push_back(auc);
      row.seed_rig.push_back(rig);
    }
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
    if (a.hash_bits != b.hash_bits) return a.hash_bits < b.hash_bits;
    return static_cast<int>(a.variant) < static_cast<int>(b.variant);
  });

  std::ostringstream csv;
  csv << "# " << header_comment(spec_hash(spec.base), std::nullopt) << '\n'
      << "hash_bits,variant,mean_rig,mean_auc";
  for (auto seed : spec.base.seeds) csv << ",rig_seed" << seed;
  for (auto seed : spec.base.seeds) csv << ",auc_seed" << seed;
  csv << ",exit_code\n";
  for (const auto& r : rows) {
    csv << r.hash_bits << ',' << variant_name(r.variant) << ',' << format_metric(r.mean_rig) << ','
        << format_metric(r.mean_auc);
    for (const auto& v : r.seed_rig) csv << ',' << format_metric(v);
    for (const auto& v : r.seed_auc) csv << ',' << format_metric(v);
    csv << ',' << r.exit_code << '\n';
  }
  write_text(fs::path(spec.base.out_dir) / "hash_sweep.csv", csv.str());
  return rows;
}

}  // namespace dcn2
