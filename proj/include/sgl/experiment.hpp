#pragma once

// Experiment configuration. The on-disk format is JSON with a fixed key set
// per object; unknown keys are rejected with their dotted path.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sgl/engine.hpp"
#include "sgl/search_space.hpp"

namespace sgl {

struct DataSource {
  // "gaussian_mixture" or "csv"
  std::string kind = "gaussian_mixture";
  std::size_t classes = 2;
  std::size_t per_class = 200;
  std::size_t dim = 2;
  double separation = 3.0;
  double noise = 1.0;
  double shift = 0.0;
  double label_noise = 0.0;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> center_seed;
  std::string path;
  int label_column = -1;
  // An unlabeled CSV source may carry no label column at all.
  bool has_labels = true;

  bool operator==(const DataSource&) const = default;
};

struct DataConfig {
  DataSource task;
  DataSource unlabeled;
  double test_fraction = 0.25;
  double train_fraction = 0.5;
  std::size_t train_batch = 64;
  std::size_t val_batch = 64;
  std::size_t unlabeled_batch = 64;
  bool shared_val_batch = true;

  bool operator==(const DataConfig&) const = default;
};

struct RetrainConfig {
  std::size_t steps = 200;
  double lr = 0.1;
  std::size_t batch_size = 64;
  bool operator==(const RetrainConfig&) const = default;
};

struct GradcheckConfig {
  double h = 1e-4;
  double tolerance = 1e-3;
  std::size_t warmup_steps = 0;
  std::size_t max_learners = 3;
  std::size_t max_weights = 200;
  std::size_t max_arch = 60;
  // Architecture logits are redrawn as N(0, scale^2) before checking so the
  // check does not sit at the symmetric uniform-mixture point. 0 keeps them.
  double arch_init_scale = 0.5;
  // Test hook: corrupts the sign of the unrolled correction term.
  bool corrupt_correction_sign = false;
  bool operator==(const GradcheckConfig&) const = default;
};

struct ExperimentConfig {
  std::string name = "sgl";
  std::vector<std::uint64_t> seeds = {1};
  std::size_t steps = 50;
  // Per-seed run directories are created below this one.
  std::string output_dir = "runs";
  std::size_t num_cells = 1;
  CellSpec cell = CellSpec::dense(4, 1, 4, default_op_set());
  EngineConfig engine;
  // Explicit per-learner seeds; empty means derived from the run seed.
  std::vector<std::uint64_t> learner_seeds;
  DataConfig data;
  std::size_t genotype_k = 1;
  std::size_t early_stop_patience = 0;
  std::size_t checkpoint_every = 0;
  RetrainConfig retrain;
  GradcheckConfig gradcheck;

  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Canonical text form; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& config);

// Hash of the settings that determine a trajectory (everything except run
// length, seed list, worker count, naming and post-processing options).
std::uint64_t config_hash(const ExperimentConfig& config);

std::uint64_t fnv1a64(std::string_view bytes);

// Seeds of the K learners for one run seed.
std::vector<std::uint64_t> learner_seeds_for(const ExperimentConfig& config, std::uint64_t run_seed);

std::string genotype_to_json(const Genotype& g, const CellSpec& spec);
Genotype genotype_from_json(const std::string& text, const CellSpec& spec);

}  // namespace sgl
