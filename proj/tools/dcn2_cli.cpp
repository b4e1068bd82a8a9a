// dcn2: single-pass CTR training and benchmark runs.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <json.hpp>

#include "dcn2/config.hpp"
#include "dcn2/errors.hpp"
#include "dcn2/harness.hpp"
#include "dcn2/synthetic.hpp"

using namespace dcn2;

namespace {

// Flags that map onto config-file keys. Values are kept as text so the
// config file and the command line go through the same parser.
constexpr const char* kRunFlags[] = {"data",       "format",        "seeds",          "max-rows",
                                     "window",     "out",           "name",           "budget-seconds",
                                     "parallel",   "padding-quantile"};
constexpr const char* kModelFlags[] = {"variant", "hash-bits", "dim",        "layers",
                                       "projection", "phi",    "deep",       "lr",
                                       "beta1",   "beta2",     "eps",        "batch",
                                       "init-mu", "init-sigma", "omega",     "sim-activation"};

struct Options {
  std::map<std::string, std::string> values;
  std::string config_path;
  bool allow_out_of_range = false;
  bool no_checkpoint = false;
};

void add_run_flags(CLI::App* cmd, Options& o) {
  for (const char* f : kRunFlags) cmd->add_option(std::string("--") + f, o.values[f]);
  for (const char* f : kModelFlags) cmd->add_option(std::string("--") + f, o.values[f]);
  cmd->add_option("--config", o.config_path, "key = value config file (flags override it)");
  cmd->add_flag("--allow-out-of-range", o.allow_out_of_range,
                "skip the tuned hyperparameter range checks");
  cmd->add_flag("--no-checkpoint", o.no_checkpoint, "do not write checkpoints");
}

// Config file first, then the flags that were actually given.
ConfigEntries collect(const CLI::App* cmd, const Options& o) {
  ConfigEntries entries;
  if (!o.config_path.empty()) entries = read_config_file(o.config_path);
  for (const auto& [k, v] : o.values)
    if (cmd->count("--" + k) > 0) entries.emplace_back(k, v);
  return entries;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const auto n = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError("--" + key + ": expected a non-negative integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("--" + key + ": expected a number, got '" + v + "'");
  }
}

struct Resolved {
  SweepSpec sweep;
  std::map<std::string, std::vector<std::string>> lists;  // model keys given as lists
};

Resolved resolve(const ConfigEntries& entries, const Options& o) {
  std::map<std::string, std::string> last;
  for (const auto& [k, v] : entries) last[k] = v;
  Resolved r;
  RunSpec& spec = r.sweep.base;
  spec.strict_ranges = !o.allow_out_of_range;
  spec.write_checkpoint = !o.no_checkpoint;
  for (const auto& [k, v] : last) {
    if (k == "data") spec.data_path = v;
    else if (k == "format") spec.format = parse_format(v);
    else if (k == "seeds") {
      spec.seeds.clear();
      for (const auto& s : split_list(v)) spec.seeds.push_back(parse_u64(k, s));
    } else if (k == "max-rows") spec.max_rows = parse_u64(k, v);
    else if (k == "window") spec.window = parse_u64(k, v);
    else if (k == "out") spec.out_dir = v;
    else if (k == "name") spec.name = v;
    else if (k == "budget-seconds") r.sweep.budget_seconds = parse_real(k, v);
    else if (k == "parallel") r.sweep.parallelism = static_cast<int>(parse_u64(k, v));
    else if (k == "padding-quantile") spec.padding_quantile = parse_real(k, v);
    else if (is_model_key(k)) {
      if (k != "deep" && v.find(',') != std::string::npos) r.lists[k] = split_list(v);
      else apply_model_setting(spec.model, k, v);
    } else {
      throw ConfigError("unknown setting '" + k + "'");
    }
  }
  return r;
}

GridAxes axes_from(const Resolved& r) {
  GridAxes a;
  ModelConfig probe;
  for (const auto& [k, items] : r.lists) {
    for (const auto& item : items) {
      apply_model_setting(probe, k, item);
      if (k == "variant") a.variants.push_back(probe.variant);
      else if (k == "hash-bits") a.hash_bits.push_back(probe.hash_bits);
      else if (k == "lr") a.learning_rates.push_back(probe.learning_rate);
      else if (k == "beta1") a.beta1s.push_back(probe.beta1);
      else if (k == "dim") a.dims.push_back(probe.embedding_dim);
      else if (k == "phi") a.phis.push_back(probe.phi);
      else throw ConfigError("--" + k + " does not take a list");
    }
  }
  return a;
}

void print_run(const RunResult& r) {
  for (const auto& s : r.seeds) {
    if (!s.ok()) {
      std::cerr << r.name << " seed " << s.seed << ": error (exit " << s.exit_code << "): " << s.error
                << '\n';
      continue;
    }
    std::cout << r.name << " seed " << s.seed << ": rows " << s.rows << ", windows "
              << s.windows.size() << ", auc " << format_metric(s.aggregates.auc
                                                                   ? std::optional(s.aggregates.auc->avg)
                                                                   : std::nullopt)
              << ", rig "
              << format_metric(s.aggregates.rig ? std::optional(s.aggregates.rig->avg) : std::nullopt)
              << (s.malformed ? " [>1% malformed rows]" : "") << '\n';
  }
  std::cout << r.name << " mean auc " << format_metric(r.mean_auc()) << ", mean rig "
            << format_metric(r.mean_rig()) << '\n';
}

int report_error(const std::exception& e) {
  std::cerr << "error: " << e.what() << '\n';
  return exit_code_for(e);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dcn2: single-pass CTR training, hash sweeps and grids"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no progress on stderr");

  Options run_opts, sweep_opts, grid_opts;
  auto* run = app.add_subcommand("run", "one single-pass run per seed");
  add_run_flags(run, run_opts);
  auto* sweep = app.add_subcommand("sweep-hash", "hash-space sweep over --hash-bits x --variant");
  add_run_flags(sweep, sweep_opts);
  auto* grid = app.add_subcommand("grid", "grid search; list-valued flags become axes");
  add_run_flags(grid, grid_opts);

  std::string ckpt;
  double epsilon = 0.01;
  std::size_t bins = 50;
  std::string weights_out;
  auto* inspect = app.add_subcommand("inspect-weights", "collision-weight distribution of a checkpoint");
  inspect->add_option("checkpoint", ckpt)->required();
  inspect->add_option("--epsilon", epsilon, "weights with |w - 1| above this count as modified");
  inspect->add_option("--bins", bins);
  inspect->add_option("--out", weights_out, "histogram CSV");

  SyntheticSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write the synthetic click stream");
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--rows", synth_spec.rows);
  synth->add_option("--seed", synth_spec.seed);
  synth->add_option("--intercept", synth_spec.intercept);
  synth->add_option("--interaction-scale", synth_spec.interaction_scale);
  synth->add_option("--bias-scale", synth_spec.bias_scale);

  std::size_t cx_fields = 10, cx_dim = 8, cx_proj = 4;
  int cx_od = 1, cx_lc = 1;
  auto* complexity = app.add_subcommand("complexity", "onlydense vs low-rank cost comparison");
  complexity->add_option("--fields", cx_fields);
  complexity->add_option("--dim", cx_dim);
  complexity->add_option("--onlydense-layers", cx_od);
  complexity->add_option("--lowrank-layers", cx_lc);
  complexity->add_option("--projection", cx_proj);

  CLI11_PARSE(app, argc, argv);
  if (!quiet) set_progress_sink([](const std::string& m) { std::cerr << m << '\n'; });

  try {
    if (*run) {
      const auto r = resolve(collect(run, run_opts), run_opts);
      if (!r.lists.empty()) throw ConfigError("run takes single values; use grid for lists");
      const auto result = run_single(r.sweep.base);
      print_run(result);
      return result.exit_code;
    }
    if (*sweep) {
      auto r = resolve(collect(sweep, sweep_opts), sweep_opts);
      r.sweep.axes = axes_from(r);
      if (r.sweep.axes.hash_bits.empty()) r.sweep.axes.hash_bits = {14, 16, 18, 20, 22};
      if (r.sweep.axes.variants.empty())
        r.sweep.axes.variants = {Variant::kDcn2, Variant::kDcnV2, Variant::kDcn2Simk};
      const auto rows = run_hash_sweep(r.sweep);
      int code = kExitOk;
      std::cout << "hash_bits variant mean_rig mean_auc\n";
      for (const auto& row : rows) {
        std::cout << row.hash_bits << ' ' << variant_name(row.variant) << ' '
                  << format_metric(row.mean_rig) << ' ' << format_metric(row.mean_auc) << '\n';
        if (row.exit_code != kExitOk && code == kExitOk) code = row.exit_code;
      }
      return code;
    }
    if (*grid) {
      auto r = resolve(collect(grid, grid_opts), grid_opts);
      r.sweep.axes = axes_from(r);
      const auto report = run_grid(r.sweep);
      for (const auto& [v, i] : report.best) {
        const auto& c = report.cells[i];
        std::cout << "best " << variant_name(v) << ": " << c.name << " mean auc "
                  << format_metric(c.run.mean_auc()) << ", mean rig " << format_metric(c.run.mean_rig())
                  << '\n';
      }
      if (report.partial) std::cout << "budget exhausted: partial report\n";
      return kExitOk;
    }
    if (*inspect) {
      const auto model = load_checkpoint(ckpt);
      if (!model.table().collision_weighted()) {
        std::cout << "table has no collision weights (variant " << variant_name(model.config().variant)
                  << ")\n";
        return kExitOk;
      }
      const auto w = export_weight_distribution(model.table(), epsilon, bins);
      nlohmann::ordered_json j{{"total", w.total},         {"modified", w.modified},
                               {"below_one", w.below_one}, {"above_one", w.above_one},
                               {"lower_tail", w.lower_tail}, {"upper_tail", w.upper_tail},
                               {"min", w.min_weight},       {"max", w.max_weight},
                               {"mean_modified", w.mean_modified}};
      std::cout << j.dump(2) << '\n';
      if (!weights_out.empty()) {
        std::FILE* f = std::fopen(weights_out.c_str(), "w");
        if (f == nullptr) throw IoError("cannot write " + weights_out);
        std::fprintf(f, "bucket_low,bucket_high,count\n");
        for (const auto& b : w.buckets)
          std::fprintf(f, "%s,%s,%llu\n", format_real(b.low).c_str(), format_real(b.high).c_str(),
                       static_cast<unsigned long long>(b.count));
        std::fclose(f);
      }
      return kExitOk;
    }
    if (*synth) {
      const auto stats = write_synthetic(synth_out, synth_spec);
      std::cout << "wrote " << stats.rows << " rows, positive rate "
                << format_metric(static_cast<double>(stats.positives) /
                                 static_cast<double>(std::max<std::uint64_t>(stats.rows, 1)))
                << '\n';
      return kExitOk;
    }
    if (*complexity) {
      const auto c = complexity_estimate(cx_fields, cx_dim, cx_od, cx_lc, cx_proj);
      std::cout << "width " << c.width << '\n'
                << "onlydense side " << format_real(c.onlydense_ops) << " (" << c.onlydense_params
                << " params)\n"
                << "low-rank side " << format_real(c.lowrank_ops) << " (" << c.lowrank_params
                << " params)\n"
                << (c.dominates ? "onlydense is not more expensive\n" : "low-rank is cheaper\n");
      return kExitOk;
    }
  } catch (const std::exception& e) {
    return report_error(e);
  }
  return kExitOk;
}
