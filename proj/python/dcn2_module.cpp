// Python bindings for the core operations.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dcn2/config.hpp"
#include "dcn2/errors.hpp"
#include "dcn2/harness.hpp"
#include "dcn2/synthetic.hpp"

namespace py = pybind11;
using namespace dcn2;

namespace {

py::dict aggregate_dict(const std::optional<Aggregate>& a) {
  py::dict d;
  if (!a) return d;
  d["avg"] = a->avg;
  d["median"] = a->median;
  d["max"] = a->max;
  d["min"] = a->min;
  d["std"] = a->std;
  d["windows"] = a->count;
  return d;
}

ModelConfig config_from(const py::dict& kw) {
  ModelConfig c;
  for (const auto& [k, v] : kw) {
    std::string key = py::str(k);
    std::replace(key.begin(), key.end(), '_', '-');
    apply_model_setting(c, key, std::string(py::str(v)));
  }
  return c;
}

// Parses text lines against a generic-format header into records.
std::vector<FeatureRecord> parse_lines(const std::string& header, const std::vector<std::string>& lines,
                                       int hash_bits, std::size_t multi_pad) {
  const auto profile = DatasetProfile::generic(header);
  const PaddingLengths padding(profile.field_count(), multi_pad);
  std::vector<FeatureRecord> out;
  out.reserve(lines.size());
  for (const auto& l : lines) out.push_back(parse_row(l, profile, hash_bits, padding));
  return out;
}

}  // namespace

PYBIND11_MODULE(_dcn2, m) {
  m.doc() = "DCN2 streaming CTR engine";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<SchemaError>(m, "SchemaError", PyExc_ValueError);
  py::register_exception<EvaluationError>(m, "EvaluationError", PyExc_ValueError);
  py::register_exception<NonFiniteError>(m, "NonFiniteError", PyExc_ArithmeticError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<EmptyDatasetError>(m, "EmptyDatasetError", PyExc_ValueError);

  m.def("murmur3_32", [](py::bytes key, std::uint32_t seed) { return murmur3_32(std::string(key), seed); },
        py::arg("key"), py::arg("seed"));
  m.def("hash_feature",
        [](const std::string& field, const std::string& value, int bits) {
          return hash_feature(FieldSchema{field, FieldKind::kCategorical, 0}, value, bits);
        },
        py::arg("field"), py::arg("value"), py::arg("hash_bits"));
  m.def("log_transform", &log_transform);

  m.def("window_auc", [](const std::vector<double>& s, const std::vector<int>& y) { return window_auc(s, y); });
  m.def("window_logloss", [](const std::vector<double>& s, const std::vector<int>& y) { return window_logloss(s, y); });
  m.def("window_rig", [](const std::vector<double>& s, const std::vector<int>& y) { return window_rig(s, y); });
  m.def("aggregate", [](const std::vector<double>& v) { return aggregate_dict(aggregate(v)); });

  m.def("complexity_estimate",
        [](std::size_t fields, std::size_t dim, int od, int lc, std::size_t p) {
          const auto r = complexity_estimate(fields, dim, od, lc, p);
          py::dict d;
          d["width"] = r.width;
          d["onlydense_ops"] = r.onlydense_ops;
          d["lowrank_ops"] = r.lowrank_ops;
          d["dominates"] = r.dominates;
          d["onlydense_params"] = r.onlydense_params;
          d["lowrank_params"] = r.lowrank_params;
          return d;
        },
        py::arg("fields"), py::arg("dim"), py::arg("onlydense_layers"), py::arg("lowrank_layers"),
        py::arg("projection"));
  m.def("parameter_count",
        [](std::size_t fields, const py::kwargs& kw) { return parameter_count(config_from(kw), fields); },
        py::arg("fields"));
  m.def("config_text", [](const py::kwargs& kw) { return serialize_model_config(config_from(kw)); });

  m.def("write_synthetic",
        [](const std::string& path, std::uint64_t rows, std::uint64_t seed) {
          SyntheticSpec s;
          s.rows = rows;
          s.seed = seed;
          const auto st = write_synthetic(path, s);
          return py::make_tuple(st.rows, st.positives);
        },
        py::arg("path"), py::arg("rows"), py::arg("seed") = 7);

  py::class_<FeatureRecord>(m, "Record")
      .def_readonly("label", &FeatureRecord::label)
      .def_property_readonly("indices", [](const FeatureRecord& r) {
        std::vector<std::vector<std::uint32_t>> out;
        for (const auto& f : r.fields) {
          if (f.indices.empty()) out.push_back({f.index});
          else out.emplace_back(f.indices.begin(), f.indices.begin() + f.valid);
        }
        return out;
      });
  m.def("parse_lines", &parse_lines, py::arg("header"), py::arg("lines"), py::arg("hash_bits"),
        py::arg("multi_pad") = 4);

  py::class_<Model<float>>(m, "Model")
      .def(py::init([](std::size_t fields, const py::kwargs& kw) {
             return Model<float>(config_from(kw), fields);
           }),
           py::arg("fields"))
      .def("predict", &Model<float>::predict)
      .def("predict_many",
           [](const Model<float>& model, const std::vector<FeatureRecord>& recs) {
             std::vector<double> out;
             for (const auto& r : recs) out.push_back(model.predict(r));
             return out;
           })
      .def("train_step",
           [](Model<float>& model, const std::vector<FeatureRecord>& batch) {
             std::vector<double> pre;
             const double loss = model.train_step(batch, &pre);
             return py::make_tuple(loss, pre);
           })
      .def_property_readonly("parameter_count", &Model<float>::parameter_count)
      .def_property_readonly("steps", &Model<float>::steps)
      .def("config_text", [](const Model<float>& model) { return serialize_model_config(model.config()); })
      .def("weight_distribution",
           [](const Model<float>& model, double eps) {
             const auto w = export_weight_distribution(model.table(), eps);
             py::dict d;
             d["total"] = w.total;
             d["modified"] = w.modified;
             d["below_one"] = w.below_one;
             d["above_one"] = w.above_one;
             d["lower_tail"] = w.lower_tail;
             d["upper_tail"] = w.upper_tail;
             return d;
           },
           py::arg("epsilon") = 0.01)
      .def("save", [](const Model<float>& model, const std::string& path) { save_checkpoint(model, path); });
  m.def("load_checkpoint", &load_checkpoint);

  m.def("run",
        [](const std::string& data, const std::string& out_dir, const std::string& name,
           const std::vector<std::uint64_t>& seeds, std::size_t window, std::uint64_t max_rows,
           bool strict_ranges, const py::kwargs& kw) {
          RunSpec spec;
          spec.data_path = data;
          spec.out_dir = out_dir;
          spec.name = name;
          spec.seeds = seeds;
          spec.window = window;
          spec.max_rows = max_rows;
          spec.strict_ranges = strict_ranges;
          spec.model = config_from(kw);
          const auto r = run_single(spec);
          py::dict d;
          d["exit_code"] = r.exit_code;
          d["spec_hash"] = r.hash;
          d["mean_auc"] = r.mean_auc();
          d["mean_rig"] = r.mean_rig();
          py::list seeds_out;
          for (const auto& s : r.seeds) {
            py::dict sd;
            sd["seed"] = s.seed;
            sd["exit_code"] = s.exit_code;
            sd["error"] = s.error;
            sd["rows"] = s.rows;
            sd["windows"] = s.windows.size();
            sd["auc"] = aggregate_dict(s.aggregates.auc);
            sd["rig"] = aggregate_dict(s.aggregates.rig);
            seeds_out.append(sd);
          }
          d["seeds"] = seeds_out;
          return d;
        },
        py::arg("data"), py::arg("out_dir"), py::arg("name") = "run",
        py::arg("seeds") = std::vector<std::uint64_t>{1}, py::arg("window") = kDefaultWindow,
        py::arg("max_rows") = 0, py::arg("strict_ranges") = true);
}
