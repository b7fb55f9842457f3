#include "sgl/experiment.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sgl/error.hpp"

namespace sgl {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

static_assert(std::is_same_v<std::uint64_t, unsigned long> && std::is_same_v<std::size_t, unsigned long>,
              "seed and count fields share one JSON conversion");

// Reads one JSON object, tracking consumed keys so that leftovers can be
// reported as unknown.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  bool has(const char* key) const { return node_.contains(key); }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = node_.find(key);
    if (it == node_.end()) return;
    convert(*it, field(key), out);
  }

  Reader child(const char* key) {
    seen_.insert(key);
    auto it = node_.find(key);
    static const json empty = json::object();
    return Reader(it == node_.end() ? empty : *it, field(key));
  }

  void finish() const {
    for (auto it = node_.begin(); it != node_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown key");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  static void convert(const json& v, const std::string& at, double& out) {
    if (!v.is_number()) throw ConfigError(at + ": expected a number");
    out = v.get<double>();
  }
  static void convert(const json& v, const std::string& at, bool& out) {
    if (!v.is_boolean()) throw ConfigError(at + ": expected true or false");
    out = v.get<bool>();
  }
  static void convert(const json& v, const std::string& at, std::string& out) {
    if (!v.is_string()) throw ConfigError(at + ": expected a string");
    out = v.get<std::string>();
  }
  static void convert(const json& v, const std::string& at, std::size_t& out) {
    if (!v.is_number_unsigned()) throw ConfigError(at + ": expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  static void convert(const json& v, const std::string& at, int& out) {
    if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer");
    out = v.get<int>();
  }
  static void convert(const json& v, const std::string& at, std::optional<std::uint64_t>& out) {
    if (v.is_null()) {
      out.reset();
      return;
    }
    std::uint64_t x = 0;
    convert(v, at, x);
    out = x;
  }
  template <typename T>
  static void convert(const json& v, const std::string& at, std::vector<T>& out) {
    if (!v.is_array()) throw ConfigError(at + ": expected an array");
    out.clear();
    for (std::size_t i = 0; i < v.size(); ++i) {
      T x{};
      convert(v[i], at + "[" + std::to_string(i) + "]", x);
      out.push_back(x);
    }
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_source(Reader r, DataSource& s) {
  r.get("kind", s.kind);
  r.get("classes", s.classes);
  r.get("per_class", s.per_class);
  r.get("dim", s.dim);
  r.get("separation", s.separation);
  r.get("noise", s.noise);
  r.get("shift", s.shift);
  r.get("label_noise", s.label_noise);
  r.get("seed", s.seed);
  r.get("center_seed", s.center_seed);
  r.get("path", s.path);
  r.get("label_column", s.label_column);
  r.get("has_labels", s.has_labels);
  r.finish();
}

ojson write_source(const DataSource& s) {
  ojson o;
  o["kind"] = s.kind;
  o["classes"] = s.classes;
  o["per_class"] = s.per_class;
  o["dim"] = s.dim;
  o["separation"] = s.separation;
  o["noise"] = s.noise;
  o["shift"] = s.shift;
  o["label_noise"] = s.label_noise;
  o["seed"] = s.seed;
  o["center_seed"] = s.center_seed ? ojson(*s.center_seed) : ojson(nullptr);
  o["path"] = s.path;
  o["label_column"] = s.label_column;
  o["has_labels"] = s.has_labels;
  return o;
}

void read_cell(Reader r, CellSpec& cell) {
  std::size_t nodes = cell.num_nodes, inputs = cell.num_input_nodes, width = cell.width;
  std::vector<std::string> ops;
  for (auto op : cell.ops) ops.push_back(to_string(op));
  r.get("num_nodes", nodes);
  r.get("num_input_nodes", inputs);
  r.get("width", width);
  r.get("ops", ops);
  std::vector<CandidateOp> parsed;
  for (std::size_t i = 0; i < ops.size(); ++i) {
    try {
      parsed.push_back(parse_candidate_op(ops[i]));
    } catch (const Error& e) {
      throw ConfigError(r.field("ops") + "[" + std::to_string(i) + "]: " + e.what());
    }
  }
  cell = CellSpec::dense(nodes, inputs, width, parsed);
  std::vector<std::vector<std::size_t>> edges;
  r.get("edges", edges);
  if (!edges.empty()) {
    cell.edges.clear();
    for (std::size_t i = 0; i < edges.size(); ++i) {
      if (edges[i].size() != 2)
        throw ConfigError(r.field("edges") + "[" + std::to_string(i) + "]: expected [from, to]");
      cell.edges.push_back({edges[i][0], edges[i][1]});
    }
  }
  r.finish();
}

ojson write_cell(const CellSpec& cell) {
  ojson o;
  o["num_nodes"] = cell.num_nodes;
  o["num_input_nodes"] = cell.num_input_nodes;
  o["width"] = cell.width;
  ojson ops = ojson::array();
  for (auto op : cell.ops) ops.push_back(to_string(op));
  o["ops"] = ops;
  ojson edges = ojson::array();
  for (const auto& e : cell.edges) edges.push_back({e.from, e.to});
  o["edges"] = edges;
  return o;
}

void read_engine(Reader r, EngineConfig& e, std::vector<std::uint64_t>& learner_seeds) {
  r.get("learners", e.learners);
  r.get("lambda", e.lambda);
  r.get("xi_v", e.xi_v);
  r.get("xi_w", e.xi_w);
  r.get("eta_a", e.eta_a);
  r.get("fd_scale", e.fd_scale);
  std::string opt = to_string(e.arch_optimizer);
  r.get("arch_optimizer", opt);
  try {
    e.arch_optimizer = parse_arch_optimizer(opt);
  } catch (const Error& ex) {
    throw ConfigError(r.field("arch_optimizer") + ": " + ex.what());
  }
  Reader a = r.child("adam");
  a.get("lr", e.adam.lr);
  a.get("beta1", e.adam.beta1);
  a.get("beta2", e.adam.beta2);
  a.get("eps", e.adam.eps);
  a.get("weight_decay", e.adam.weight_decay);
  a.finish();
  r.get("commit_inner_updates", e.commit_inner_updates);
  r.get("harden_pseudo_labels", e.harden_pseudo_labels);
  r.get("label_arch_path", e.label_arch_path);
  r.get("workers", e.workers);
  std::string prec = to_string(e.precision);
  r.get("precision", prec);
  try {
    e.precision = parse_precision(prec);
  } catch (const Error& ex) {
    throw ConfigError(r.field("precision") + ": " + ex.what());
  }
  r.get("learner_seeds", learner_seeds);
  r.finish();
}

ojson write_engine(const EngineConfig& e, const std::vector<std::uint64_t>& learner_seeds, bool with_workers) {
  ojson o;
  o["learners"] = e.learners;
  o["lambda"] = e.lambda;
  o["xi_v"] = e.xi_v;
  o["xi_w"] = e.xi_w;
  o["eta_a"] = e.eta_a;
  o["fd_scale"] = e.fd_scale;
  o["arch_optimizer"] = to_string(e.arch_optimizer);
  o["adam"] = ojson{{"lr", e.adam.lr},
                    {"beta1", e.adam.beta1},
                    {"beta2", e.adam.beta2},
                    {"eps", e.adam.eps},
                    {"weight_decay", e.adam.weight_decay}};
  o["commit_inner_updates"] = e.commit_inner_updates;
  o["harden_pseudo_labels"] = e.harden_pseudo_labels;
  o["label_arch_path"] = e.label_arch_path;
  if (with_workers) o["workers"] = e.workers;
  o["precision"] = to_string(e.precision);
  o["learner_seeds"] = learner_seeds;
  return o;
}

ojson write_data(const DataConfig& d) {
  ojson o;
  o["task"] = write_source(d.task);
  o["unlabeled"] = write_source(d.unlabeled);
  o["test_fraction"] = d.test_fraction;
  o["train_fraction"] = d.train_fraction;
  o["train_batch"] = d.train_batch;
  o["val_batch"] = d.val_batch;
  o["unlabeled_batch"] = d.unlabeled_batch;
  o["shared_val_batch"] = d.shared_val_batch;
  return o;
}

ojson write_model(const ExperimentConfig& c, bool with_workers) {
  ojson o;
  o["num_cells"] = c.num_cells;
  o["cell"] = write_cell(c.cell);
  o["engine"] = write_engine(c.engine, c.learner_seeds, with_workers);
  o["data"] = write_data(c.data);
  return o;
}

void validate_source(const DataSource& s, const std::string& at, bool unlabeled) {
  if (s.kind == "gaussian_mixture") {
    if (s.classes < 2) throw ConfigError(at + ".classes must be at least 2");
    if (s.per_class < 1) throw ConfigError(at + ".per_class must be at least 1");
    if (s.dim < 1) throw ConfigError(at + ".dim must be at least 1");
    if (!(s.separation >= 0.0)) throw ConfigError(at + ".separation must be non-negative");
    if (!(s.noise >= 0.0)) throw ConfigError(at + ".noise must be non-negative");
    if (!(s.label_noise >= 0.0 && s.label_noise <= 1.0)) throw ConfigError(at + ".label_noise must lie in [0, 1]");
  } else if (s.kind == "csv") {
    if (s.path.empty()) throw ConfigError(at + ".path is required for csv sources");
    if (!unlabeled && !s.has_labels) throw ConfigError(at + ".has_labels must be true for the labeled task");
  } else {
    throw ConfigError(at + ".kind: expected \"gaussian_mixture\" or \"csv\", got \"" + s.kind + "\"");
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (num_cells < 1) throw ConfigError("num_cells must be at least 1");
  try {
    cell.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("cell: ") + e.what());
  }
  engine.validate();
  if (!learner_seeds.empty() && learner_seeds.size() != engine.learners)
    throw ConfigError("engine.learner_seeds must list one seed per learner (" + std::to_string(engine.learners) +
                      ")");
  validate_source(data.task, "data.task", false);
  validate_source(data.unlabeled, "data.unlabeled", true);
  if (!(data.test_fraction > 0.0 && data.test_fraction < 1.0))
    throw ConfigError("data.test_fraction must lie in (0, 1)");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0))
    throw ConfigError("data.train_fraction must lie in (0, 1)");
  if (data.train_batch < 1 || data.val_batch < 1 || data.unlabeled_batch < 1)
    throw ConfigError("data batch sizes must be at least 1");
  if (genotype_k < 1) throw ConfigError("genotype_k must be at least 1");
  if (retrain.batch_size < 1) throw ConfigError("retrain.batch_size must be at least 1");
  if (!(retrain.lr > 0.0)) throw ConfigError("retrain.lr must be positive");
  if (!(gradcheck.h > 0.0)) throw ConfigError("gradcheck.h must be positive");
  if (!(gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be positive");
  if (!(gradcheck.arch_init_scale >= 0.0)) throw ConfigError("gradcheck.arch_init_scale must be non-negative");
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  Reader r(root, "");
  r.get("name", c.name);
  r.get("seeds", c.seeds);
  r.get("steps", c.steps);
  r.get("output_dir", c.output_dir);
  r.get("num_cells", c.num_cells);
  read_cell(r.child("cell"), c.cell);
  read_engine(r.child("engine"), c.engine, c.learner_seeds);

  Reader d = r.child("data");
  read_source(d.child("task"), c.data.task);
  read_source(d.child("unlabeled"), c.data.unlabeled);
  d.get("test_fraction", c.data.test_fraction);
  d.get("train_fraction", c.data.train_fraction);
  d.get("train_batch", c.data.train_batch);
  d.get("val_batch", c.data.val_batch);
  d.get("unlabeled_batch", c.data.unlabeled_batch);
  d.get("shared_val_batch", c.data.shared_val_batch);
  d.finish();

  r.get("genotype_k", c.genotype_k);
  r.get("early_stop_patience", c.early_stop_patience);
  r.get("checkpoint_every", c.checkpoint_every);

  Reader rt = r.child("retrain");
  rt.get("steps", c.retrain.steps);
  rt.get("lr", c.retrain.lr);
  rt.get("batch_size", c.retrain.batch_size);
  rt.finish();

  Reader g = r.child("gradcheck");
  g.get("h", c.gradcheck.h);
  g.get("tolerance", c.gradcheck.tolerance);
  g.get("warmup_steps", c.gradcheck.warmup_steps);
  g.get("max_learners", c.gradcheck.max_learners);
  g.get("max_weights", c.gradcheck.max_weights);
  g.get("max_arch", c.gradcheck.max_arch);
  g.get("arch_init_scale", c.gradcheck.arch_init_scale);
  g.get("corrupt_correction_sign", c.gradcheck.corrupt_correction_sign);
  g.finish();

  r.finish();
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  ojson o;
  o["name"] = c.name;
  o["seeds"] = c.seeds;
  o["steps"] = c.steps;
  o["output_dir"] = c.output_dir;
  const ojson model = write_model(c, true);
  for (const auto& [k, v] : model.items()) o[k] = v;
  o["genotype_k"] = c.genotype_k;
  o["early_stop_patience"] = c.early_stop_patience;
  o["checkpoint_every"] = c.checkpoint_every;
  o["retrain"] = ojson{{"steps", c.retrain.steps}, {"lr", c.retrain.lr}, {"batch_size", c.retrain.batch_size}};
  o["gradcheck"] = ojson{{"h", c.gradcheck.h},
                         {"tolerance", c.gradcheck.tolerance},
                         {"warmup_steps", c.gradcheck.warmup_steps},
                         {"max_learners", c.gradcheck.max_learners},
                         {"max_weights", c.gradcheck.max_weights},
                         {"max_arch", c.gradcheck.max_arch},
                         {"arch_init_scale", c.gradcheck.arch_init_scale},
                         {"corrupt_correction_sign", c.gradcheck.corrupt_correction_sign}};
  return o.dump(2) + "\n";
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  return fnv1a64(write_model(config, false).dump());
}

std::vector<std::uint64_t> learner_seeds_for(const ExperimentConfig& config, std::uint64_t run_seed) {
  if (!config.learner_seeds.empty()) return config.learner_seeds;
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < config.engine.learners; ++k) seeds.push_back(derive_seed(run_seed, k));
  return seeds;
}

std::string genotype_to_json(const Genotype& g, const CellSpec& spec) {
  ojson o;
  o["k"] = g.k;
  ojson nodes = ojson::array();
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    ojson entries = ojson::array();
    for (const auto& e : g.nodes[i]) {
      entries.push_back(ojson{{"edge", e.edge}, {"from", e.from}, {"op", to_string(e.op)}, {"weight", e.weight}});
    }
    nodes.push_back(ojson{{"node", spec.num_input_nodes + i}, {"inputs", entries}});
  }
  o["nodes"] = nodes;
  return o.dump(2) + "\n";
}

Genotype genotype_from_json(const std::string& text, const CellSpec& spec) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("genotype is not valid JSON: ") + e.what());
  }
  try {
    Genotype g;
    g.k = root.at("k").get<std::size_t>();
    for (const auto& node : root.at("nodes")) {
      std::vector<GenotypeEntry> entries;
      for (const auto& e : node.at("inputs")) {
        GenotypeEntry ge;
        ge.edge = e.at("edge").get<std::size_t>();
        ge.from = e.at("from").get<std::size_t>();
        ge.op = parse_candidate_op(e.at("op").get<std::string>());
        ge.weight = e.at("weight").get<double>();
        if (ge.edge >= spec.edges.size() || spec.edges[ge.edge].from != ge.from)
          throw DataError("genotype entry does not match the cell edges");
        entries.push_back(ge);
      }
      g.nodes.push_back(std::move(entries));
    }
    if (g.nodes.size() != spec.num_nodes - spec.num_input_nodes)
      throw DataError("genotype node count does not match the cell");
    return g;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed genotype: ") + e.what());
  }
}

}  // namespace sgl
