#pragma once

// Small-group learning optimizer. Each iteration runs three barrier-separated
// stages over K learners:
//
//   1. V'_k = V_k - xi_v grad_V L(V_k, A_k, D_tr)
//   2. W'_k = W_k - xi_w grad_W O_k,
//      O_k  = L(W_k, A_k, D_tr) + lambda sum_{j != k} L(W_k, A_k, D_pl_j(V'_j))
//   3. A_k <- A_k - step(own_k + sum_{j != k} cross_{k <- j})
//
// own_k is the one-step-unrolled gradient of learner k's validation loss; the
// cross terms carry the dependence of peer j's validation loss on A_k through
// the pseudo-labels produced by V'_k. All mixed second derivatives are
// central differences of first-order gradients.

#include <memory>
#include <span>
#include <vector>

#include "sgl/datasets.hpp"
#include "sgl/learner.hpp"

namespace sgl {

enum class ArchOptimizer { plain_descent, adam };

std::string to_string(ArchOptimizer o);
ArchOptimizer parse_arch_optimizer(const std::string& text);

// Adam with decoupled weight decay.
struct AdamSettings {
  double lr = 3e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
  bool operator==(const AdamSettings&) const = default;
};

struct EngineConfig {
  std::size_t learners = 2;
  double lambda = 0.1;
  double xi_v = 0.1;
  double xi_w = 0.1;
  // Step size for plain descent on the architecture.
  double eta_a = 3e-4;
  // Numerator of the finite-difference radius fd_scale / ||direction||.
  double fd_scale = 0.01;
  ArchOptimizer arch_optimizer = ArchOptimizer::adam;
  AdamSettings adam;
  // Store V'_k and W'_k as the new V_k and W_k after each step.
  bool commit_inner_updates = true;
  bool harden_pseudo_labels = false;
  // Also differentiate the pseudo-labels through the producer's architecture
  // in the forward pass, not only through V'_k.
  bool label_arch_path = false;
  std::size_t workers = 1;
  Precision precision = Precision::f64;
  // Test hook: flips the sign of the unrolled correction in the own term.
  bool flip_correction_sign = false;

  void validate() const;
  bool operator==(const EngineConfig&) const = default;
};

struct GroupState {
  std::vector<LearnerState> learners;
  std::uint64_t step = 0;
  bool operator==(const GroupState&) const = default;
};

struct StepBatches {
  LabeledBatch train;
  // One shared validation batch, or one per learner.
  std::vector<LabeledBatch> val;
  Matrix unlabeled;

  const LabeledBatch& val_for(std::size_t k) const { return val.size() == 1 ? val[0] : val.at(k); }
};

// Transient results of stages 1 and 2 for one iteration.
struct StageSnapshot {
  std::vector<ParamVector> v_prime;
  std::vector<ParamVector> w_prime;
  // Detached soft labels of each learner on the unlabeled batch.
  std::vector<Matrix> pseudo_labels;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_objective;
};

struct ArchGradient {
  ParamVector own;
  // cross[j] is the contribution of peer j's validation loss (zero for j == k).
  std::vector<ParamVector> cross;
  ParamVector total;
  double val_loss = 0.0;
};

struct StepReport {
  std::uint64_t step = 0;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_objective;
  std::vector<double> val_batch_loss;
  std::vector<double> own_norm;
  // cross_norm[k][j] = ||cross_{k <- j}||
  std::vector<std::vector<double>> cross_norm;
};

class SglEngine {
 public:
  SglEngine(std::shared_ptr<const Network> net, EngineConfig config);

  const Network& network() const { return *net_; }
  const std::shared_ptr<const Network>& network_ptr() const { return net_; }
  const EngineConfig& config() const { return config_; }

  // Learner k is seeded with seeds[k].
  GroupState make_group(std::span<const std::uint64_t> seeds) const;

  ParamVector stage1_update(const LearnerState& learner, const LabeledBatch& train, double* loss = nullptr) const;

  Matrix pseudo_labels(const ParamVector& v_prime, const ArchParams& arch, const Matrix& unlabeled) const;

  // O_k evaluated at weights `w`; `peer_labels` are the soft labels of the
  // peers j != k on `unlabeled`.
  double stage2_objective(const ParamVector& w, const ArchParams& arch, const LabeledBatch& train,
                          const Matrix& unlabeled, std::span<const Matrix> peer_labels) const;
  ParamVector stage2_update(const ParamVector& w, const ArchParams& arch, const LabeledBatch& train,
                            const Matrix& unlabeled, std::span<const Matrix> peer_labels,
                            double* objective = nullptr) const;

  // Stages 1 and 2 for every learner, without committing anything.
  StageSnapshot run_inner_stages(const GroupState& group, const StepBatches& batches) const;

  // grad_{W'} and grad_A of L(W'_k, A_k, D_val), and the loss value.
  struct ValidationGradients {
    ParamVector w;
    ParamVector arch;
    double loss = 0.0;
  };
  ValidationGradients validation_gradients(const ParamVector& w_prime, const ArchParams& arch,
                                           const LabeledBatch& val) const;

  ParamVector own_arch_grad(const GroupState& group, const StageSnapshot& snap, const StepBatches& batches,
                            std::size_t k, const ValidationGradients& val_k) const;

  // Contribution to A_k of learner j's validation loss; u_j is
  // grad_{W'_j} L(W'_j, A_j, D_val).
  ParamVector cross_arch_grad(const GroupState& group, const StageSnapshot& snap, const StepBatches& batches,
                              std::size_t k, std::size_t j, const ParamVector& u_j) const;

  std::vector<ArchGradient> arch_gradients(const GroupState& group, const StageSnapshot& snap,
                                           const StepBatches& batches) const;

  // Applies the configured optimizer to every learner's architecture.
  void stage3_update(GroupState& group, std::span<const ArchGradient> grads) const;

  // One full iteration. On error the group is left untouched.
  StepReport step(GroupState& group, const StepBatches& batches) const;

 private:
  std::vector<Matrix> peers_of(const StageSnapshot& snap, std::size_t k) const;

  std::shared_ptr<const Network> net_;
  EngineConfig config_;
};

// Plain descent: A - eta * g. Adam: decoupled-decay Adam step using the
// learner's moment buffers.
void apply_arch_step(LearnerState& learner, const ParamVector& gradient, const EngineConfig& config);

}  // namespace sgl
