#pragma once

// Seeded experiment execution on top of the engine: dataset construction,
// minibatch streams, metrics and checkpoint files, and the four CLI modes.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "sgl/checkpoint.hpp"
#include "sgl/error.hpp"
#include "sgl/engine.hpp"
#include "sgl/experiment.hpp"
#include "sgl/oracle.hpp"

namespace sgl {

// Task data is fixed by the data section of the config; the run seed only
// drives initialization and batch order.
struct ExperimentData {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
  UnlabeledDataset unlabeled;
};

ExperimentData build_data(const ExperimentConfig& config);
NetworkSpec network_spec(const ExperimentConfig& config, const ExperimentData& data);

// Per-iteration batches: one shared training batch, one validation batch
// (shared, or one per learner) and one unlabeled batch.
class DataStream {
 public:
  DataStream(const ExperimentData& data, const DataConfig& config, std::size_t learners, std::uint64_t run_seed);

  StepBatches next();

  void save(Checkpoint& ckpt) const;
  void restore(const Checkpoint& ckpt);

 private:
  const ExperimentData* data_;
  MinibatchSampler train_;
  std::vector<MinibatchSampler> val_;
  MinibatchSampler unlabeled_;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
  double error() const { return 1.0 - accuracy; }
};

Evaluation evaluate(const Network& net, const LabeledDataset& data, const ParamVector& weights,
                    const ArchParams& arch, Precision precision = Precision::f64);

// One row of metrics.csv. Stage fields of the step-0 row are NaN.
struct MetricRecord {
  std::uint64_t step = 0;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_objective;
  std::vector<double> val_loss;
  std::vector<double> val_accuracy;
  std::vector<double> own_norm;
  std::vector<std::vector<double>> cross_norm;
};

std::string metrics_header(std::size_t learners);
std::string metrics_row(const MetricRecord& r);

struct RunOptions {
  std::filesystem::path out = "runs";
  // Verbatim config text copied into each run directory.
  std::string config_text;
  std::optional<std::filesystem::path> resume;
  std::ostream* log = nullptr;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::filesystem::path dir;
  std::uint64_t steps = 0;
  bool early_stopped = false;
  std::vector<double> val_error;
  std::vector<double> test_error;
  GroupState group;

  double mean_val_error() const;
  double mean_test_error() const;
};

RunResult run_single(const ExperimentConfig& config, std::uint64_t seed, const RunOptions& options);

struct MeanStd {
  double mean = 0.0;
  // Sample standard deviation; NaN for fewer than two values.
  double std = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);
std::string format_mean_std(const MeanStd& m);

struct SearchSummary {
  std::vector<RunResult> runs;
  MeanStd val_error;
};

SearchSummary run_search(const ExperimentConfig& config, const RunOptions& options);

struct CompareRow {
  std::uint64_t seed = 0;
  double sgl_test_error = 0.0;
  double baseline_test_error = 0.0;
};

struct CompareSummary {
  std::vector<CompareRow> rows;
  MeanStd sgl;
  MeanStd baseline;
  double difference = 0.0;  // sgl mean minus baseline mean
};

// K = 1 counterpart of `config`: same data and step budget, its single
// learner seeded like learner 0 of the group.
ExperimentConfig baseline_config(const ExperimentConfig& config, std::uint64_t run_seed);

CompareSummary run_compare(const ExperimentConfig& config, const RunOptions& options);

struct BudgetExceeded : ConfigError {
  using ConfigError::ConfigError;
};

struct GradcheckResult {
  GradcheckReport report;
  std::size_t weights_per_learner = 0;
  std::size_t arch_per_learner = 0;
};

// Throws BudgetExceeded when the instance is too large for the oracle.
GradcheckResult run_gradcheck(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log = nullptr);

struct RetrainReport {
  std::size_t learner = 0;
  Genotype genotype;
  std::size_t parametric_ops = 0;
  double test_error_at_init = 0.0;
  double test_error = 0.0;
};

// Fixed network from a genotype: every retained op enters its node unscaled.
std::vector<RetrainReport> derive_and_retrain(const ExperimentConfig& config, const std::filesystem::path& checkpoint,
                                              std::size_t retrain_steps, std::ostream* log = nullptr);

}  // namespace sgl
