#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sgl/runner.hpp"

namespace py = pybind11;
using namespace sgl;

namespace {

ExperimentConfig with_overrides(const std::string& path, std::optional<std::vector<std::uint64_t>> seeds,
                                std::optional<std::string> out, std::optional<std::size_t> workers,
                                std::optional<std::string> precision) {
  ExperimentConfig c = load_config(path);
  if (seeds) c.seeds = *seeds;
  if (out) c.output_dir = *out;
  if (workers) c.engine.workers = *workers;
  if (precision) c.engine.precision = parse_precision(*precision);
  c.validate();
  return c;
}

py::dict run_dict(const RunResult& r) {
  py::dict d;
  d["seed"] = r.seed;
  d["dir"] = r.dir.string();
  d["steps"] = r.steps;
  d["early_stopped"] = r.early_stopped;
  d["val_error"] = r.val_error;
  d["test_error"] = r.test_error;
  return d;
}

py::dict search(const std::string& config, std::optional<std::vector<std::uint64_t>> seeds,
                std::optional<std::string> out, std::optional<std::size_t> workers,
                std::optional<std::string> precision) {
  const ExperimentConfig c = with_overrides(config, seeds, out, workers, precision);
  RunOptions o;
  o.out = c.output_dir;
  SearchSummary s;
  {
    py::gil_scoped_release release;
    s = run_search(c, o);
  }
  py::list runs;
  for (const auto& r : s.runs) runs.append(run_dict(r));
  py::dict d;
  d["runs"] = runs;
  d["val_error_mean"] = s.val_error.mean;
  d["val_error_std"] = s.val_error.std;
  return d;
}

py::dict compare(const std::string& config, std::optional<std::vector<std::uint64_t>> seeds,
                 std::optional<std::string> out) {
  const ExperimentConfig c = with_overrides(config, seeds, out, std::nullopt, std::nullopt);
  RunOptions o;
  o.out = c.output_dir;
  CompareSummary s;
  {
    py::gil_scoped_release release;
    s = run_compare(c, o);
  }
  py::list rows;
  for (const auto& r : s.rows) {
    py::dict d;
    d["seed"] = r.seed;
    d["sgl_test_error"] = r.sgl_test_error;
    d["baseline_test_error"] = r.baseline_test_error;
    rows.append(d);
  }
  py::dict d;
  d["rows"] = rows;
  d["sgl_mean"] = s.sgl.mean;
  d["sgl_std"] = s.sgl.std;
  d["baseline_mean"] = s.baseline.mean;
  d["baseline_std"] = s.baseline.std;
  d["difference"] = s.difference;
  return d;
}

py::dict gradcheck(const std::string& config, std::optional<std::uint64_t> seed) {
  const ExperimentConfig c = load_config(config);
  GradcheckResult r;
  {
    py::gil_scoped_release release;
    r = run_gradcheck(c, seed.value_or(c.seeds.front()));
  }
  py::dict d;
  d["passed"] = r.report.pass;
  d["total_error"] = r.report.total_error;
  d["tolerance"] = r.report.tolerance;
  d["own_error"] = r.report.own_error;
  d["cross_error"] = r.report.cross_error;
  d["cross_exact_zero"] = r.report.cross_exact_zero;
  d["learners"] = r.report.learners;
  d["weights_per_learner"] = r.weights_per_learner;
  d["arch_per_learner"] = r.arch_per_learner;
  d["seconds"] = r.report.seconds;
  return d;
}

py::list derive(const std::vector<std::vector<double>>& logits, const std::vector<std::string>& ops,
                std::size_t num_nodes, std::size_t num_input_nodes, std::size_t k) {
  std::vector<CandidateOp> parsed;
  for (const auto& o : ops) parsed.push_back(parse_candidate_op(o));
  const CellSpec spec = CellSpec::dense(num_nodes, num_input_nodes, 1, parsed);
  spec.validate();
  ArchParams arch(make_arch_layout(spec));
  if (logits.size() != spec.edges.size())
    throw ConfigError("expected logits for " + std::to_string(spec.edges.size()) + " edges, got " +
                      std::to_string(logits.size()));
  for (std::size_t e = 0; e < logits.size(); ++e) {
    auto v = arch.view(e);
    if (logits[e].size() != v.size())
      throw ConfigError("edge " + std::to_string(e) + ": expected " + std::to_string(v.size()) + " logits");
    std::copy(logits[e].begin(), logits[e].end(), v.begin());
  }
  py::list nodes;
  for (const auto& node : derive_genotype(arch, spec, k).nodes) {
    py::list entries;
    for (const auto& e : node) entries.append(py::make_tuple(e.from, to_string(e.op), e.weight));
    nodes.append(entries);
  }
  return nodes;
}

py::tuple gaussian_mixture(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                           std::uint64_t seed, double noise, double label_noise) {
  GaussianMixtureOptions o;
  o.noise = noise;
  o.label_noise = label_noise;
  const auto d = make_gaussian_mixture(classes, per_class, dim, separation, seed, o);
  py::array_t<double> x({d.inputs.rows, d.inputs.cols});
  std::copy(d.inputs.data.begin(), d.inputs.data.end(), x.mutable_data());
  auto y = py::array_t<std::int64_t>::ensure(py::cast(d.labels));
  return py::make_tuple(x, y);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Small-group differentiable architecture search";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  m.def("search", &search, py::arg("config"), py::arg("seeds") = py::none(), py::arg("out") = py::none(),
        py::arg("workers") = py::none(), py::arg("precision") = py::none(),
        "Run the search for every seed; returns per-run errors and the aggregate.");
  m.def("compare", &compare, py::arg("config"), py::arg("seeds") = py::none(), py::arg("out") = py::none(),
        "Run the group and the single-learner baseline on the same seeds.");
  m.def("gradcheck", &gradcheck, py::arg("config"), py::arg("seed") = py::none(),
        "Certify the architecture hypergradient against central differences.");
  m.def("derive_genotype", &derive, py::arg("logits"), py::arg("ops"), py::arg("num_nodes"),
        py::arg("num_input_nodes") = 1, py::arg("k") = 1,
        "Discrete cell from per-edge logits of a dense cell: per node a list of (from, op, weight).");
  m.def("gaussian_mixture", &gaussian_mixture, py::arg("classes"), py::arg("per_class"), py::arg("dim"),
        py::arg("separation"), py::arg("seed"), py::arg("noise") = 1.0, py::arg("label_noise") = 0.0);
  m.def(
      "normalize_config", [](const std::string& text) { return serialize_config(parse_config(text)); },
      py::arg("text"), "Canonical form of a config text (defaults filled in).");
  m.def(
      "config_hash", [](const std::string& text) { return config_hash(parse_config(text)); }, py::arg("text"));
}
