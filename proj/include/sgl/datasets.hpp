#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgl/random.hpp"

namespace sgl {

// Row-major dense matrix of plain values.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> d);

  std::span<double> row(std::size_t i) { return std::span<double>(data).subspan(i * cols, cols); }
  std::span<const double> row(std::size_t i) const { return std::span<const double>(data).subspan(i * cols, cols); }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  bool operator==(const Matrix&) const = default;
};

Matrix select_rows(const Matrix& m, std::span<const std::size_t> idx);

struct LabeledDataset {
  Matrix inputs;
  std::vector<int> labels;
  std::size_t classes = 0;
  std::string provenance;

  std::size_t size() const { return inputs.rows; }
  std::size_t width() const { return inputs.cols; }
  // Throws DataError if rows and labels disagree or a label is out of range.
  void validate() const;
};

struct UnlabeledDataset {
  Matrix inputs;
  std::size_t size() const { return inputs.rows; }
  std::size_t width() const { return inputs.cols; }
};

// Minibatch of a labeled dataset (values only).
struct LabeledBatch {
  Matrix inputs;
  std::vector<int> labels;
};

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> idx);
LabeledBatch to_batch(const LabeledDataset& data);
LabeledBatch batch_of(const LabeledDataset& data, std::span<const std::size_t> idx);
// Rows of b appended after rows of a.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

struct GaussianMixtureOptions {
  // Isotropic per-coordinate standard deviation of each class.
  double noise = 1.0;
  // Constant added to every coordinate of every class center.
  double shift = 0.0;
  // Fraction of labels replaced by a uniformly drawn class.
  double label_noise = 0.0;
  // Draws centers from this seed instead of the sample seed, so that several
  // datasets can share one set of class centers.
  std::optional<std::uint64_t> center_seed;
};

// Class c is N(center_c, noise^2 I) with center_c = separation * (random unit
// direction) + shift. Rows are grouped by class in generation order.
LabeledDataset make_gaussian_mixture(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                                     std::uint64_t seed, const GaussianMixtureOptions& options = {});

// Class centers used by make_gaussian_mixture for the given parameters.
Matrix gaussian_mixture_centers(std::size_t classes, std::size_t dim, double separation, std::uint64_t seed,
                                const GaussianMixtureOptions& options = {});

// Seeded shuffle, then the first round(fraction * n) rows go to the first set.
std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& data, double fraction,
                                                          std::uint64_t seed);

// Strips labels from another labeled source. Width must match the task width.
UnlabeledDataset cross_unlabeled(const LabeledDataset& other, std::size_t task_width);

// Numeric CSV. The label column defaults to the last column; negative indices
// count from the end. A first row with any non-numeric cell is a header.
LabeledDataset load_csv(const std::filesystem::path& path, std::optional<int> label_column = std::nullopt);
// CSV without a label column.
UnlabeledDataset load_unlabeled_csv(const std::filesystem::path& path);
// Writes inputs then the label as last column, shortest round-trip formatting.
void save_csv(const LabeledDataset& data, const std::filesystem::path& path, bool header = false);

// Sampling without replacement within an epoch; each epoch uses a fresh
// permutation derived from (seed, epoch). The state is two integers so it
// can be checkpointed.
class MinibatchSampler {
 public:
  struct State {
    std::uint64_t epoch = 0;
    std::uint64_t position = 0;
    bool operator==(const State&) const = default;
  };

  MinibatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::size_t> next();

  State state() const { return state_; }
  void restore(State s);
  std::size_t batch_size() const { return batch_; }

 private:
  void build_permutation();

  std::size_t n_;
  std::size_t batch_;
  std::uint64_t seed_;
  State state_;
  std::vector<std::size_t> perm_;
};

std::string format_double(double v);

}  // namespace sgl
