#pragma once

#include <cstdint>
#include <memory>
#include <span>

#include "sgl/datasets.hpp"
#include "sgl/params.hpp"
#include "sgl/random.hpp"
#include "sgl/search_space.hpp"

namespace sgl {

struct NetworkSpec {
  std::size_t input_dim = 2;
  std::size_t classes = 2;
  std::size_t num_cells = 1;
  CellSpec cell = CellSpec::dense(3, 1, 3, default_op_set());

  void validate() const;
  bool operator==(const NetworkSpec&) const = default;
};

// stem (affine input_dim -> width), `num_cells` cells sharing one set of
// architecture logits, then an affine classifier head (width -> classes).
class Network {
 public:
  explicit Network(NetworkSpec spec);

  const NetworkSpec& spec() const { return spec_; }
  const LayoutPtr& weight_layout() const { return weights_; }
  const LayoutPtr& arch_layout() const { return arch_; }

  // N(0, 2/fan_in) for matrices and kernels, zeros for biases.
  ParamVector init_weights(Rng& rng) const;
  // All-zero logits (uniform mixture on every edge).
  ArchParams init_arch() const { return ArchParams(arch_); }

  Tensor logits(const Tensor& x, const BoundParams& weights, const EdgeMix& arch) const;
  Tensor predict(const Tensor& x, const BoundParams& weights, const EdgeMix& arch) const;

 private:
  NetworkSpec spec_;
  LayoutPtr weights_;
  LayoutPtr arch_;
  std::size_t stem_w_ = 0, stem_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<CellSlots> cells_;
};

// One learner: architecture A, first weight set V (pseudo-label producer) and
// second weight set W (co-trained classifier), plus its generator.
struct LearnerState {
  std::size_t id = 0;
  std::uint64_t seed = 0;
  ArchParams arch;
  ParamVector v;
  ParamVector w;
  Rng rng;
  // Moment estimates of the architecture optimizer.
  ParamVector adam_m;
  ParamVector adam_v;
  std::uint64_t adam_t = 0;

  bool operator==(const LearnerState&) const = default;
};

// V and W are drawn in that order from the learner's own stream.
LearnerState make_learner(const Network& net, std::size_t id, std::uint64_t seed);

struct Prediction {
  Matrix probs;
};

Tensor input_tensor(Tape& tape, const Matrix& x);

Prediction predict_proba(const Network& net, const Matrix& x, const ParamVector& weights, const ArchParams& arch,
                         Precision precision = Precision::f64);

// mean_i -log p_i[y_i]
Tensor hard_ce_loss(const Network& net, const BoundParams& weights, const EdgeMix& arch, const LabeledBatch& batch);
// mean_i -sum_j t_ij log p_ij. Targets may be attached to the same tape.
Tensor soft_ce_loss(const Network& net, const BoundParams& weights, const EdgeMix& arch, const Tensor& inputs,
                    const Tensor& targets);

inline constexpr double target_row_tolerance = 1e-4;

// Inputs paired with soft labels f(x; producer). The label tensor lives on the
// tape of the producer weights, so gradients flow back to them.
struct PseudoLabeledDataset {
  Tensor inputs;
  Tensor labels;
  std::size_t producer = 0;
};

PseudoLabeledDataset generate_pseudo_dataset(const Network& net, const Tensor& unlabeled,
                                             const BoundParams& producer_weights, const EdgeMix& producer_arch,
                                             std::size_t producer, bool harden = false);

Matrix to_matrix(const Tensor& t);

double accuracy(const Prediction& p, std::span<const int> labels);
double mean_hard_ce(const Prediction& p, std::span<const int> labels);

}  // namespace sgl
