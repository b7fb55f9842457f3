#include "sgl/learner.hpp"

#include <algorithm>
#include <cmath>

namespace sgl {

void NetworkSpec::validate() const {
  if (input_dim == 0) throw ConfigError("network: input_dim must be positive");
  if (classes < 2) throw ConfigError("network: need at least 2 classes");
  if (num_cells < 1) throw ConfigError("network: num_cells must be at least 1");
  cell.validate();
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  auto layout = std::make_shared<ParamLayout>();
  const std::size_t h = spec_.cell.width;
  stem_w_ = layout->add("stem.w", {spec_.input_dim, h});
  stem_b_ = layout->add("stem.b", {h});
  for (std::size_t c = 0; c < spec_.num_cells; ++c)
    cells_.push_back(register_cell_weights(*layout, spec_.cell, "cell" + std::to_string(c)));
  head_w_ = layout->add("head.w", {h, spec_.classes});
  head_b_ = layout->add("head.b", {spec_.classes});
  weights_ = std::move(layout);
  arch_ = make_arch_layout(spec_.cell);
}

ParamVector Network::init_weights(Rng& rng) const {
  ParamVector p(weights_);
  for (std::size_t i = 0; i < weights_->size(); ++i) {
    const auto& e = weights_->entry(i);
    if (e.shape.size() == 1 && e.name.ends_with(".b")) continue;
    const double fan_in = static_cast<double>(e.shape[0]);
    const double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : p.view(i)) v = sd * standard_normal(rng);
  }
  return p;
}

Tensor Network::logits(const Tensor& x, const BoundParams& weights, const EdgeMix& arch) const {
  if (x.rank() != 2 || x.shape()[1] != spec_.input_dim) {
    throw ShapeError("network: input shape " + to_string(x.shape()) + " does not match input width " +
                     std::to_string(spec_.input_dim));
  }
  Tensor prev = add(matmul(x, weights[stem_w_]), weights[stem_b_]);
  Tensor prev_prev = prev;
  for (const auto& slots : cells_) {
    Tensor out;
    if (spec_.cell.num_input_nodes == 2) {
      const Tensor in[] = {prev, prev_prev};
      out = cell_forward(in, spec_.cell, arch, weights, slots);
    } else {
      const Tensor in[] = {prev};
      out = cell_forward(in, spec_.cell, arch, weights, slots);
    }
    prev_prev = prev;
    prev = out;
  }
  return add(matmul(prev, weights[head_w_]), weights[head_b_]);
}

Tensor Network::predict(const Tensor& x, const BoundParams& weights, const EdgeMix& arch) const {
  return softmax(logits(x, weights, arch));
}

LearnerState make_learner(const Network& net, std::size_t id, std::uint64_t seed) {
  LearnerState s;
  s.id = id;
  s.seed = seed;
  s.rng = Rng(seed);
  s.arch = net.init_arch();
  s.v = net.init_weights(s.rng);
  s.w = net.init_weights(s.rng);
  s.adam_m = zeros_like(s.arch);
  s.adam_v = zeros_like(s.arch);
  return s;
}

Tensor input_tensor(Tape& tape, const Matrix& x) { return tape.constant({x.rows, x.cols}, x.data); }

Matrix to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw ShapeError("to_matrix: expected rank 2, got " + to_string(t.shape()));
  return Matrix(t.shape()[0], t.shape()[1], std::vector<double>(t.values().begin(), t.values().end()));
}

Prediction predict_proba(const Network& net, const Matrix& x, const ParamVector& weights, const ArchParams& arch,
                         Precision precision) {
  Tape tape(precision);
  auto w = bind_constant(tape, weights);
  auto a = bind_constant(tape, arch);
  return {to_matrix(net.predict(input_tensor(tape, x), w, EdgeMix::from_logits(a)))};
}

namespace {

Tensor cross_entropy(const Tensor& probs, const Tensor& targets) {
  const double n = static_cast<double>(probs.shape()[0]);
  return scale(sum(mul(targets, log(probs))), -1.0 / n);
}

}  // namespace

Tensor hard_ce_loss(const Network& net, const BoundParams& weights, const EdgeMix& arch, const LabeledBatch& batch) {
  if (batch.labels.size() != batch.inputs.rows) throw ShapeError("hard_ce_loss: labels and inputs differ in count");
  if (batch.inputs.rows == 0) throw ShapeError("hard_ce_loss: empty batch");
  const std::size_t J = net.spec().classes;
  std::vector<double> onehot(batch.labels.size() * J, 0.0);
  for (std::size_t i = 0; i < batch.labels.size(); ++i) {
    const int y = batch.labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= J) {
      throw DataError("hard_ce_loss: label " + std::to_string(y) + " outside [0, " + std::to_string(J) + ")");
    }
    onehot[i * J + static_cast<std::size_t>(y)] = 1.0;
  }
  Tape& tape = *weights[0].tape();
  const Tensor x = input_tensor(tape, batch.inputs);
  const Tensor targets = tape.constant({batch.labels.size(), J}, std::move(onehot));
  return cross_entropy(net.predict(x, weights, arch), targets);
}

Tensor soft_ce_loss(const Network& net, const BoundParams& weights, const EdgeMix& arch, const Tensor& inputs,
                    const Tensor& targets) {
  const std::size_t J = net.spec().classes;
  if (targets.rank() != 2 || targets.shape()[1] != J || targets.shape()[0] != inputs.shape()[0]) {
    throw ShapeError("soft_ce_loss: targets " + to_string(targets.shape()) + " do not match inputs " +
                     to_string(inputs.shape()) + " with " + std::to_string(J) + " classes");
  }
  auto tv = targets.values();
  for (std::size_t r = 0; r < targets.shape()[0]; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      const double t = tv[r * J + j];
      if (t < 0.0) throw DataError("soft_ce_loss: negative target in row " + std::to_string(r));
      s += t;
    }
    if (std::abs(s - 1.0) > target_row_tolerance) {
      throw DataError("soft_ce_loss: target row " + std::to_string(r) + " sums to " + format_double(s));
    }
  }
  return cross_entropy(net.predict(inputs, weights, arch), targets);
}

PseudoLabeledDataset generate_pseudo_dataset(const Network& net, const Tensor& unlabeled,
                                             const BoundParams& producer_weights, const EdgeMix& producer_arch,
                                             std::size_t producer, bool harden) {
  if (unlabeled.rank() != 2 || unlabeled.shape()[0] == 0) {
    throw ShapeError("pseudo labels: unlabeled batch must be a nonempty matrix, got " + to_string(unlabeled.shape()));
  }
  Tensor probs = net.predict(unlabeled, producer_weights, producer_arch);
  if (harden) {
    const std::size_t J = probs.shape()[1];
    std::vector<double> hard(probs.size(), 0.0);
    auto pv = probs.values();
    for (std::size_t r = 0; r < probs.shape()[0]; ++r) {
      const auto row = pv.subspan(r * J, J);
      hard[r * J + static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin())] = 1.0;
    }
    probs = unlabeled.tape()->constant(probs.shape(), std::move(hard));
  }
  return {unlabeled, probs, producer};
}

double accuracy(const Prediction& p, std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < p.probs.rows; ++r) {
    const auto row = p.probs.row(r);
    const auto arg = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    if (arg == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double mean_hard_ce(const Prediction& p, std::span<const int> labels) {
  double s = 0.0;
  for (std::size_t r = 0; r < p.probs.rows; ++r) s -= std::log(std::max(p.probs(r, labels[r]), log_floor));
  return s / static_cast<double>(p.probs.rows);
}

}  // namespace sgl
