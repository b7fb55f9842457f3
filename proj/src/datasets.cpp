#include "sgl/datasets.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sgl/error.hpp"

namespace sgl {

Matrix::Matrix(std::size_t r, std::size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
  if (data.size() != r * c) throw DataError("matrix: " + std::to_string(r) + "x" + std::to_string(c) + " needs " +
                                            std::to_string(r * c) + " values, got " + std::to_string(data.size()));
}

Matrix select_rows(const Matrix& m, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), m.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = m.row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void LabeledDataset::validate() const {
  if (labels.size() != inputs.rows) {
    throw DataError("dataset: " + std::to_string(inputs.rows) + " rows but " + std::to_string(labels.size()) +
                    " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw DataError("dataset: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                      " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

LabeledDataset subset(const LabeledDataset& data, std::span<const std::size_t> idx) {
  LabeledDataset out;
  out.inputs = select_rows(data.inputs, idx);
  out.labels.reserve(idx.size());
  for (auto i : idx) out.labels.push_back(data.labels[i]);
  out.classes = data.classes;
  out.provenance = data.provenance;
  return out;
}

LabeledBatch to_batch(const LabeledDataset& data) { return {data.inputs, data.labels}; }

LabeledBatch batch_of(const LabeledDataset& data, std::span<const std::size_t> idx) {
  LabeledBatch b;
  b.inputs = select_rows(data.inputs, idx);
  for (auto i : idx) b.labels.push_back(data.labels[i]);
  return b;
}

LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b) {
  if (a.width() != b.width()) throw DataError("concat: widths differ");
  LabeledDataset out = a;
  out.inputs.rows += b.inputs.rows;
  out.inputs.data.insert(out.inputs.data.end(), b.inputs.data.begin(), b.inputs.data.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.classes = std::max(a.classes, b.classes);
  out.provenance = a.provenance + "+" + b.provenance;
  return out;
}

Matrix gaussian_mixture_centers(std::size_t classes, std::size_t dim, double separation, std::uint64_t seed,
                                const GaussianMixtureOptions& options) {
  Rng rng(derive_seed(options.center_seed.value_or(seed), 0xc0));
  Matrix centers(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    auto row = centers.row(c);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : row) {
        v = standard_normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
    } while (norm < 1e-12);
    for (auto& v : row) v = separation * v / norm + options.shift;
  }
  return centers;
}

LabeledDataset make_gaussian_mixture(std::size_t classes, std::size_t per_class, std::size_t dim, double separation,
                                     std::uint64_t seed, const GaussianMixtureOptions& options) {
  if (classes < 2) throw DataError("gaussian mixture: need at least 2 classes");
  if (per_class < 1) throw DataError("gaussian mixture: need at least 1 row per class");
  if (dim < 1) throw DataError("gaussian mixture: dimension must be positive");
  const Matrix centers = gaussian_mixture_centers(classes, dim, separation, seed, options);
  Rng rng(derive_seed(seed, 0x5a));
  LabeledDataset out;
  out.classes = classes;
  out.inputs = Matrix(classes * per_class, dim);
  out.labels.resize(classes * per_class);
  std::size_t r = 0;
  for (std::size_t c = 0; c < classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i, ++r) {
      auto row = out.inputs.row(r);
      for (std::size_t j = 0; j < dim; ++j) row[j] = centers(c, j) + options.noise * standard_normal(rng);
      out.labels[r] = static_cast<int>(c);
    }
  if (options.label_noise > 0.0) {
    Rng flip(derive_seed(seed, 0x1f));
    for (auto& label : out.labels)
      if (uniform01(flip) < options.label_noise) label = static_cast<int>(uniform_index(flip, classes));
  }
  std::ostringstream tag;
  tag << "gaussian_mixture(J=" << classes << ",n=" << per_class << ",d=" << dim << ",sep=" << format_double(separation)
      << ",seed=" << seed << ")";
  out.provenance = tag.str();
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split_train_val(const LabeledDataset& data, double fraction,
                                                          std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw DataError("split: fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x51));
  shuffle(std::span<std::size_t>(idx), rng);
  const auto first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  if (first == 0 || first == data.size()) {
    throw DataError("split: fraction " + format_double(fraction) + " of " + std::to_string(data.size()) +
                    " rows leaves one side empty");
  }
  std::span<const std::size_t> all(idx);
  auto a = subset(data, all.first(first));
  auto b = subset(data, all.subspan(first));
  return {std::move(a), std::move(b)};
}

UnlabeledDataset cross_unlabeled(const LabeledDataset& other, std::size_t task_width) {
  if (other.width() != task_width) {
    throw DataError("unlabeled pool has width " + std::to_string(other.width()) + ", task width is " +
                    std::to_string(task_width));
  }
  if (other.size() == 0) throw DataError("unlabeled pool is empty");
  return {other.inputs};
}

// ---------------------------------------------------------------------------
// CSV

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    cells.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_number(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  const char* first = cell.data();
  if (*first == '+') ++first;
  double v = 0.0;
  auto res = std::from_chars(first, cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) return std::nullopt;
  return v;
}

struct NumericTable {
  std::size_t cols = 0;
  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> line_numbers;
};

NumericTable read_numeric_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file " + path.string());
  NumericTable table;
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto cells = split_line(line);
    std::vector<double> values;
    bool numeric = true;
    for (const auto& c : cells) {
      auto v = parse_number(c);
      if (!v) {
        numeric = false;
        break;
      }
      values.push_back(*v);
    }
    if (first) {
      first = false;
      table.cols = cells.size();
      if (!numeric) continue;  // header row
    }
    if (cells.size() != table.cols) {
      throw DataError(path.string() + ": row " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                      " cells, expected " + std::to_string(table.cols));
    }
    if (!numeric) throw DataError(path.string() + ": row " + std::to_string(line_no) + " has a non-numeric cell");
    table.rows.push_back(std::move(values));
    table.line_numbers.push_back(line_no);
  }
  if (table.rows.empty()) throw DataError(path.string() + ": no data rows");
  return table;
}

}  // namespace

LabeledDataset load_csv(const std::filesystem::path& path, std::optional<int> label_column) {
  const auto table = read_numeric_csv(path);
  if (table.cols < 2) throw DataError(path.string() + ": need at least one feature column and a label column");
  int col = label_column.value_or(-1);
  if (col < 0) col += static_cast<int>(table.cols);
  if (col < 0 || col >= static_cast<int>(table.cols)) {
    throw DataError(path.string() + ": label column " + std::to_string(label_column.value_or(-1)) + " out of range");
  }
  const auto label_col = static_cast<std::size_t>(col);
  LabeledDataset out;
  out.inputs = Matrix(table.rows.size(), table.cols - 1);
  int max_label = -1;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    std::size_t j = 0;
    for (std::size_t c = 0; c < table.cols; ++c) {
      if (c == label_col) continue;
      out.inputs(r, j++) = row[c];
    }
    const double lv = row[label_col];
    if (lv < 0.0 || lv != std::floor(lv) || lv > 1e9) {
      throw DataError(path.string() + ": row " + std::to_string(table.line_numbers[r]) + " has invalid label " +
                      format_double(lv) + " (labels must be non-negative integers)");
    }
    out.labels.push_back(static_cast<int>(lv));
    max_label = std::max(max_label, out.labels.back());
  }
  out.classes = static_cast<std::size_t>(max_label + 1);
  out.provenance = "csv:" + path.filename().string();
  return out;
}

UnlabeledDataset load_unlabeled_csv(const std::filesystem::path& path) {
  const auto table = read_numeric_csv(path);
  UnlabeledDataset out;
  out.inputs = Matrix(table.rows.size(), table.cols);
  for (std::size_t r = 0; r < table.rows.size(); ++r)
    std::copy(table.rows[r].begin(), table.rows[r].end(), out.inputs.row(r).begin());
  return out;
}

void save_csv(const LabeledDataset& data, const std::filesystem::path& path, bool header) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write CSV file " + path.string());
  if (header) {
    for (std::size_t j = 0; j < data.width(); ++j) out << 'x' << j << ',';
    out << "label\n";
  }
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (double v : data.inputs.row(r)) out << format_double(v) << ',';
    out << data.labels[r] << '\n';
  }
}

// ---------------------------------------------------------------------------
// Minibatches

MinibatchSampler::MinibatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_(batch_size), seed_(seed) {
  if (batch_size < 1) throw DataError("minibatch: batch size must be at least 1");
  if (n < 1) throw DataError("minibatch: dataset is empty");
  build_permutation();
}

void MinibatchSampler::build_permutation() {
  perm_.resize(n_);
  std::iota(perm_.begin(), perm_.end(), std::size_t{0});
  Rng rng(derive_seed(seed_, state_.epoch));
  shuffle(std::span<std::size_t>(perm_), rng);
}

std::vector<std::size_t> MinibatchSampler::next() {
  if (state_.position >= n_) {
    ++state_.epoch;
    state_.position = 0;
    build_permutation();
  }
  const std::size_t end = std::min<std::size_t>(n_, state_.position + batch_);
  std::vector<std::size_t> out(perm_.begin() + static_cast<std::ptrdiff_t>(state_.position),
                               perm_.begin() + static_cast<std::ptrdiff_t>(end));
  state_.position = end;
  return out;
}

void MinibatchSampler::restore(State s) {
  if (s.position > n_) throw CheckpointError("minibatch: restored position beyond dataset size");
  state_ = s;
  build_permutation();
}

}  // namespace sgl
