#include "sgl/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace sgl {

namespace fs = std::filesystem;

namespace {

constexpr double nan_value = std::numeric_limits<double>::quiet_NaN();

LabeledDataset materialize(const DataSource& s) {
  if (s.kind == "csv") {
    auto d = load_csv(s.path, s.label_column);
    return d;
  }
  GaussianMixtureOptions opts;
  opts.noise = s.noise;
  opts.shift = s.shift;
  opts.label_noise = s.label_noise;
  opts.center_seed = s.center_seed;
  return make_gaussian_mixture(s.classes, s.per_class, s.dim, s.separation, s.seed, opts);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

// Scalar training loss of a fixed (genotype) network.
Tensor fixed_loss(const Network& net, const BoundParams& w, const EdgeMix& mix, const LabeledBatch& batch) {
  return hard_ce_loss(net, w, mix, batch);
}

Evaluation evaluate_fixed(const Network& net, const LabeledDataset& data, const ParamVector& weights,
                          const std::vector<std::vector<double>>& masks) {
  Tape tape;
  auto w = bind_constant(tape, weights);
  const EdgeMix mix = EdgeMix::fixed(masks);
  Prediction p{to_matrix(net.predict(input_tensor(tape, data.inputs), w, mix))};
  return {mean_hard_ce(p, data.labels), accuracy(p, data.labels)};
}

void log_line(std::ostream* log, const std::string& line) {
  if (log) *log << line << '\n' << std::flush;
}

}  // namespace

ExperimentData build_data(const ExperimentConfig& config) {
  const DataConfig& dc = config.data;
  LabeledDataset pool = materialize(dc.task);
  pool.validate();
  const std::uint64_t split_seed = derive_seed(dc.task.seed, 0x5e);
  auto [rest, test] = split_train_val(pool, 1.0 - dc.test_fraction, derive_seed(split_seed, 0));
  auto [train, val] = split_train_val(rest, dc.train_fraction, derive_seed(split_seed, 1));
  if (dc.task.kind == "gaussian_mixture" && dc.task.label_noise > 0.0) {
    // Label flips use their own stream, so the clean pool has the same rows
    // and the same split; only training and validation labels stay noisy.
    DataSource clean = dc.task;
    clean.label_noise = 0.0;
    test = split_train_val(materialize(clean), 1.0 - dc.test_fraction, derive_seed(split_seed, 0)).second;
  }

  ExperimentData data{std::move(train), std::move(val), std::move(test), {}};
  const DataSource& u = dc.unlabeled;
  if (u.kind == "csv" && !u.has_labels) {
    data.unlabeled = load_unlabeled_csv(u.path);
    if (data.unlabeled.width() != pool.width())
      throw DataError("unlabeled data has width " + std::to_string(data.unlabeled.width()) + ", task has " +
                      std::to_string(pool.width()));
  } else {
    data.unlabeled = cross_unlabeled(materialize(u), pool.width());
  }
  if (data.unlabeled.size() == 0) throw DataError("unlabeled dataset is empty");
  return data;
}

NetworkSpec network_spec(const ExperimentConfig& config, const ExperimentData& data) {
  NetworkSpec spec;
  spec.input_dim = data.train.width();
  spec.classes = data.train.classes;
  spec.num_cells = config.num_cells;
  spec.cell = config.cell;
  spec.validate();
  return spec;
}

DataStream::DataStream(const ExperimentData& data, const DataConfig& config, std::size_t learners,
                       std::uint64_t run_seed)
    : data_(&data),
      train_(data.train.size(), std::min(config.train_batch, data.train.size()), derive_seed(run_seed, 0x7a)),
      unlabeled_(data.unlabeled.size(), std::min(config.unlabeled_batch, data.unlabeled.size()),
                 derive_seed(run_seed, 0x7c)) {
  const std::size_t nval = config.shared_val_batch ? 1 : learners;
  for (std::size_t k = 0; k < nval; ++k) {
    val_.emplace_back(data.val.size(), std::min(config.val_batch, data.val.size()),
                      derive_seed(derive_seed(run_seed, 0x7b), k));
  }
}

StepBatches DataStream::next() {
  StepBatches b;
  b.train = batch_of(data_->train, train_.next());
  for (auto& s : val_) b.val.push_back(batch_of(data_->val, s.next()));
  const auto idx = unlabeled_.next();
  b.unlabeled = select_rows(data_->unlabeled.inputs, idx);
  return b;
}

void DataStream::save(Checkpoint& ckpt) const {
  ckpt.train = train_.state();
  ckpt.val.clear();
  for (const auto& s : val_) ckpt.val.push_back(s.state());
  ckpt.unlabeled = unlabeled_.state();
}

void DataStream::restore(const Checkpoint& ckpt) {
  if (ckpt.val.size() != val_.size()) throw CheckpointError("checkpoint validation sampler count does not match");
  train_.restore(ckpt.train);
  for (std::size_t i = 0; i < val_.size(); ++i) val_[i].restore(ckpt.val[i]);
  unlabeled_.restore(ckpt.unlabeled);
}

Evaluation evaluate(const Network& net, const LabeledDataset& data, const ParamVector& weights,
                    const ArchParams& arch, Precision precision) {
  const Prediction p = predict_proba(net, data.inputs, weights, arch, precision);
  return {mean_hard_ce(p, data.labels), accuracy(p, data.labels)};
}

std::string metrics_header(std::size_t learners) {
  std::string h = "step";
  for (std::size_t k = 0; k < learners; ++k) {
    const std::string p = ",k" + std::to_string(k) + "_";
    h += p + "stage1_loss" + p + "stage2_objective" + p + "val_loss" + p + "val_accuracy" + p + "own_grad_norm";
    for (std::size_t j = 0; j < learners; ++j)
      if (j != k) h += p + "cross_grad_norm_from_k" + std::to_string(j);
  }
  return h + "\n";
}

std::string metrics_row(const MetricRecord& r) {
  std::string s = std::to_string(r.step);
  const std::size_t K = r.val_loss.size();
  for (std::size_t k = 0; k < K; ++k) {
    for (double v : {r.stage1_loss[k], r.stage2_objective[k], r.val_loss[k], r.val_accuracy[k], r.own_norm[k]})
      s += "," + format_double(v);
    for (std::size_t j = 0; j < K; ++j)
      if (j != k) s += "," + format_double(r.cross_norm[k][j]);
  }
  return s + "\n";
}

double RunResult::mean_val_error() const { return mean_std(val_error).mean; }
double RunResult::mean_test_error() const { return mean_std(test_error).mean; }

MeanStd mean_std(const std::vector<double>& values) {
  MeanStd m;
  if (values.empty()) return {nan_value, nan_value};
  for (double v : values) m.mean += v;
  m.mean /= static_cast<double>(values.size());
  if (values.size() < 2) {
    m.std = nan_value;
    return m;
  }
  double ss = 0.0;
  for (double v : values) ss += (v - m.mean) * (v - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  return m;
}

std::string format_mean_std(const MeanStd& m) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os.setf(std::ios::fixed);
  os.precision(4);
  os << m.mean << " +/- " << m.std;
  return os.str();
}

RunResult run_single(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options) {
  const ExperimentData data = build_data(config);
  auto net = std::make_shared<const Network>(network_spec(config, data));
  const SglEngine engine(net, config.engine);
  const std::size_t K = config.engine.learners;
  const std::uint64_t hash = config_hash(config);

  RunResult result;
  result.seed = seed;
  result.dir = options.out / ("seed-" + std::to_string(seed));
  fs::create_directories(result.dir);
  write_text(result.dir / "config.copy", options.config_text.empty() ? serialize_config(config) : options.config_text);
  write_text(result.dir / "config.resolved.json", serialize_config(config));

  DataStream stream(data, config.data, K, seed);
  Checkpoint state;
  state.config_hash = hash;
  state.run_seed = seed;
  bool resumed = false;
  if (options.resume) {
    state = load_checkpoint(*options.resume, *net, hash);
    if (state.run_seed != seed)
      throw CheckpointError("checkpoint belongs to seed " + std::to_string(state.run_seed) + ", not " +
                            std::to_string(seed));
    if (state.group.learners.size() != K) throw CheckpointError("checkpoint learner count does not match config");
    stream.restore(state);
    resumed = true;
  } else {
    const auto seeds = learner_seeds_for(config, seed);
    state.group = engine.make_group(seeds);
  }
  GroupState& group = state.group;

  std::ofstream metrics(result.dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  std::ofstream timing(result.dir / "timing.csv", std::ios::binary | std::ios::trunc);
  if (!metrics || !timing) throw Error("cannot write metrics in " + result.dir.string());
  metrics << metrics_header(K);
  timing << "step,wall_seconds\n";

  const auto start = std::chrono::steady_clock::now();
  auto record = [&](const StepReport* rep) {
    MetricRecord r;
    r.step = group.step;
    double mean_loss = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& l = group.learners[k];
      const Evaluation e = evaluate(*net, data.val, l.w, l.arch, config.engine.precision);
      r.val_loss.push_back(e.loss);
      r.val_accuracy.push_back(e.accuracy);
      mean_loss += e.loss / static_cast<double>(K);
    }
    if (rep) {
      r.stage1_loss = rep->stage1_loss;
      r.stage2_objective = rep->stage2_objective;
      r.own_norm = rep->own_norm;
      r.cross_norm = rep->cross_norm;
    } else {
      r.stage1_loss.assign(K, nan_value);
      r.stage2_objective.assign(K, nan_value);
      r.own_norm.assign(K, nan_value);
      r.cross_norm.assign(K, std::vector<double>(K, nan_value));
    }
    metrics << metrics_row(r) << std::flush;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    timing << group.step << "," << format_double(secs) << "\n" << std::flush;
    return mean_loss;
  };

  auto track = [&](double mean_loss) {
    if (mean_loss < state.best_val_loss) {
      state.best_val_loss = mean_loss;
      state.steps_since_best = 0;
    } else {
      state.steps_since_best += 1;
    }
  };

  if (!resumed) track(record(nullptr));
  while (group.step < config.steps) {
    if (config.early_stop_patience > 0 && state.steps_since_best >= config.early_stop_patience) {
      result.early_stopped = true;
      log_line(options.log, "seed " + std::to_string(seed) + ": early stop at step " + std::to_string(group.step));
      break;
    }
    const StepBatches batches = stream.next();
    StepReport rep;
    try {
      rep = engine.step(group, batches);
    } catch (const StepError& e) {
      throw StepError("seed " + std::to_string(seed) + ", step " + std::to_string(group.step + 1) + ": " + e.what());
    }
    track(record(&rep));
    if (config.checkpoint_every > 0 && group.step % config.checkpoint_every == 0) {
      stream.save(state);
      save_checkpoint(state, result.dir / ("step-" + std::to_string(group.step) + ".ckpt"));
    }
  }

  stream.save(state);
  save_checkpoint(state, result.dir / "final.ckpt");
  result.steps = group.step;
  for (std::size_t k = 0; k < K; ++k) {
    const auto& l = group.learners[k];
    const Genotype g = derive_genotype(l.arch, config.cell, config.genotype_k);
    write_text(result.dir / ("genotype-k" + std::to_string(k) + ".json"), genotype_to_json(g, config.cell));
    result.val_error.push_back(evaluate(*net, data.val, l.w, l.arch, config.engine.precision).error());
    result.test_error.push_back(evaluate(*net, data.test, l.w, l.arch, config.engine.precision).error());
  }
  result.group = group;

  std::ostringstream summary;
  summary.imbue(std::locale::classic());
  summary << "learner,val_error,test_error\n";
  for (std::size_t k = 0; k < K; ++k)
    summary << k << "," << format_double(result.val_error[k]) << "," << format_double(result.test_error[k]) << "\n";
  write_text(result.dir / "summary.csv", summary.str());
  return result;
}

SearchSummary run_search(const ExperimentConfig& config, const RunOptions& options) {
  if (options.resume && config.seeds.size() != 1)
    throw ConfigError("--resume needs exactly one seed (the checkpoint's)");
  SearchSummary s;
  std::vector<double> errors;
  for (std::uint64_t seed : config.seeds) {
    s.runs.push_back(run_single(config, seed, options));
    const auto& r = s.runs.back();
    std::string line = "seed " + std::to_string(seed) + ": steps " + std::to_string(r.steps) + ", val error";
    for (double e : r.val_error) line += " " + format_double(e);
    log_line(options.log, line);
    errors.push_back(r.mean_val_error());
  }
  s.val_error = mean_std(errors);
  log_line(options.log, "final validation error over " + std::to_string(errors.size()) +
                            " seeds: " + format_mean_std(s.val_error));
  return s;
}

ExperimentConfig baseline_config(const ExperimentConfig& config, std::uint64_t run_seed) {
  ExperimentConfig b = config;
  b.engine.learners = 1;
  b.learner_seeds = {learner_seeds_for(config, run_seed).at(0)};
  return b;
}

CompareSummary run_compare(const ExperimentConfig& config, const RunOptions& options) {
  CompareSummary s;
  std::vector<double> sgl, base;
  std::ostringstream table;
  table.imbue(std::locale::classic());
  table << "seed,sgl_test_error,baseline_test_error,difference\n";
  for (std::uint64_t seed : config.seeds) {
    RunOptions o = options;
    o.out = options.out / "sgl";
    const RunResult a = run_single(config, seed, o);
    o.out = options.out / "baseline";
    const ExperimentConfig bc = baseline_config(config, seed);
    o.config_text = serialize_config(bc);
    const RunResult b = run_single(bc, seed, o);
    CompareRow row{seed, a.mean_test_error(), b.mean_test_error()};
    s.rows.push_back(row);
    sgl.push_back(row.sgl_test_error);
    base.push_back(row.baseline_test_error);
    table << seed << "," << format_double(row.sgl_test_error) << "," << format_double(row.baseline_test_error) << ","
          << format_double(row.sgl_test_error - row.baseline_test_error) << "\n";
    log_line(options.log, "seed " + std::to_string(seed) + ": sgl " + format_double(row.sgl_test_error) +
                              ", baseline " + format_double(row.baseline_test_error));
  }
  s.sgl = mean_std(sgl);
  s.baseline = mean_std(base);
  s.difference = s.sgl.mean - s.baseline.mean;
  fs::create_directories(options.out);
  write_text(options.out / "compare.csv", table.str());
  log_line(options.log, "test error, SGL (K=" + std::to_string(config.engine.learners) +
                            "): " + format_mean_std(s.sgl));
  log_line(options.log, "test error, baseline (K=1): " + format_mean_std(s.baseline));
  log_line(options.log, "difference (SGL - baseline): " + format_double(s.difference));
  return s;
}

GradcheckResult run_gradcheck(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log) {
  const ExperimentData data = build_data(config);
  auto net = std::make_shared<const Network>(network_spec(config, data));
  const GradcheckConfig& gc = config.gradcheck;
  GradcheckResult result;
  result.weights_per_learner = net->weight_layout()->total();
  result.arch_per_learner = net->arch_layout()->total();

  std::vector<std::string> over;
  if (config.engine.learners > gc.max_learners)
    over.push_back(std::to_string(config.engine.learners) + " learners (limit " + std::to_string(gc.max_learners) +
                   ")");
  if (result.weights_per_learner > gc.max_weights)
    over.push_back(std::to_string(result.weights_per_learner) + " weights per learner (limit " +
                   std::to_string(gc.max_weights) + ")");
  if (result.arch_per_learner > gc.max_arch)
    over.push_back(std::to_string(result.arch_per_learner) + " architecture coordinates per learner (limit " +
                   std::to_string(gc.max_arch) + ")");
  if (!over.empty()) {
    std::string msg = "gradcheck: instance exceeds the oracle budget:";
    for (const auto& o : over) msg += "\n  " + o;
    msg +=
        "\nshrink the instance (fewer learners, cell.num_nodes, cell.width, cell.ops or num_cells) "
        "or use configs/gradcheck_tiny.json";
    throw BudgetExceeded(msg);
  }

  EngineConfig ec = config.engine;
  if (ec.precision != Precision::f64) log_line(log, "gradcheck: forcing 64-bit precision");
  ec.precision = Precision::f64;
  ec.flip_correction_sign = gc.corrupt_correction_sign;
  const SglEngine engine(net, ec);

  GroupState group = engine.make_group(learner_seeds_for(config, seed));
  if (gc.arch_init_scale > 0.0) {
    for (auto& l : group.learners) {
      Rng rng(derive_seed(l.seed, 0x9c));
      for (double& a : l.arch.flat()) a = gc.arch_init_scale * standard_normal(rng);
    }
  }
  DataStream stream(data, config.data, ec.learners, seed);
  for (std::size_t i = 0; i < gc.warmup_steps; ++i) engine.step(group, stream.next());
  const StepBatches batches = stream.next();
  result.report = check_hypergradient(engine, group, batches, gc.h, gc.tolerance);
  return result;
}

std::vector<RetrainReport> derive_and_retrain(const ExperimentConfig& config, const fs::path& checkpoint,
                                              std::size_t retrain_steps, std::ostream* log) {
  const ExperimentData data = build_data(config);
  const Network net(network_spec(config, data));
  const Checkpoint ckpt = load_checkpoint(checkpoint, net, config_hash(config));
  const LabeledDataset pool = concat(data.train, data.val);

  std::vector<RetrainReport> reports;
  for (const auto& l : ckpt.group.learners) {
    RetrainReport rep;
    rep.learner = l.id;
    rep.genotype = derive_genotype(l.arch, config.cell, config.genotype_k);
    for (const auto& node : rep.genotype.nodes)
      for (const auto& e : node)
        if (is_parametric(e.op)) ++rep.parametric_ops;
    if (rep.parametric_ops == 0)
      log_line(log, "warning: learner " + std::to_string(l.id) +
                        " genotype has no parametric ops (degenerate architecture); retraining anyway");
    const auto masks = genotype_masks(rep.genotype, config.cell);
    const EdgeMix mix = EdgeMix::fixed(masks);

    Rng rng(derive_seed(l.seed, 0xde));
    ParamVector w = net.init_weights(rng);
    rep.test_error_at_init = evaluate_fixed(net, data.test, w, masks).error();
    MinibatchSampler sampler(pool.size(), std::min(config.retrain.batch_size, pool.size()),
                             derive_seed(ckpt.run_seed, 0xdf));
    for (std::size_t s = 0; s < retrain_steps; ++s) {
      const LabeledBatch batch = batch_of(pool, sampler.next());
      Tape tape;
      auto bw = bind_variable(tape, w);
      w = axpy(w, -config.retrain.lr, grad(fixed_loss(net, bw, mix, batch), bw));
      if (!all_finite(w))
        throw StepError("retrain: learner " + std::to_string(l.id) + " diverged at step " + std::to_string(s + 1));
    }
    rep.test_error = evaluate_fixed(net, data.test, w, masks).error();
    log_line(log, "learner " + std::to_string(l.id) + ": " + std::to_string(rep.parametric_ops) +
                      " parametric ops, test error " + format_double(rep.test_error) + " after " +
                      std::to_string(retrain_steps) + " steps (at init " + format_double(rep.test_error_at_init) +
                      ")");
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace sgl
