#include "sgl/engine.hpp"

#include <cmath>
#include <optional>
#include <sstream>

#include "sgl/hvp.hpp"
#include "sgl/parallel.hpp"

namespace sgl {

std::string to_string(ArchOptimizer o) { return o == ArchOptimizer::adam ? "adam" : "plain_descent"; }

ArchOptimizer parse_arch_optimizer(const std::string& text) {
  if (text == "adam") return ArchOptimizer::adam;
  if (text == "plain_descent") return ArchOptimizer::plain_descent;
  throw ConfigError("arch_optimizer must be 'adam' or 'plain_descent', got '" + text + "'");
}

void EngineConfig::validate() const {
  if (learners < 1) throw ConfigError("engine.learners must be at least 1");
  if (!(lambda >= 0.0)) throw ConfigError("engine.lambda must be non-negative");
  if (!(xi_v >= 0.0)) throw ConfigError("engine.xi_v must be non-negative");
  if (!(xi_w >= 0.0)) throw ConfigError("engine.xi_w must be non-negative");
  if (!(eta_a > 0.0)) throw ConfigError("engine.eta_a must be positive");
  if (!(fd_scale > 0.0)) throw ConfigError("engine.fd_scale must be positive");
  if (!(adam.lr > 0.0)) throw ConfigError("engine.adam.lr must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("engine.adam.beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("engine.adam.beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("engine.adam.eps must be positive");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("engine.adam.weight_decay must be non-negative");
  if (workers < 1) throw ConfigError("engine.workers must be at least 1");
}

namespace {

// O_k on a tape: hard CE on the training batch plus lambda times the summed
// soft CE on the peers' pseudo-labels.
Tensor stage2_on_tape(const Network& net, double lambda, const BoundParams& w, const EdgeMix& arch,
                      const LabeledBatch& train, const Tensor& unlabeled, std::span<const Tensor> peer_labels) {
  Tensor objective = hard_ce_loss(net, w, arch, train);
  if (lambda == 0.0 || peer_labels.empty()) return objective;
  std::optional<Tensor> soft;
  for (const auto& labels : peer_labels) {
    Tensor term = soft_ce_loss(net, w, arch, unlabeled, labels);
    soft = soft ? add(*soft, term) : term;
  }
  return add(objective, scale(*soft, lambda));
}

std::vector<Tensor> bind_labels(Tape& tape, std::span<const Matrix> labels) {
  std::vector<Tensor> out;
  for (const auto& m : labels) out.push_back(tape.constant({m.rows, m.cols}, m.data));
  return out;
}

ParamVector descend(const ParamVector& p, double step, const ParamVector& g, Precision precision) {
  ParamVector out = axpy(p, -step, g);
  round_to(out, precision);
  return out;
}

std::string norm_text(const ParamVector& p) {
  std::ostringstream os;
  os << norm2(p);
  return os.str();
}

}  // namespace

SglEngine::SglEngine(std::shared_ptr<const Network> net, EngineConfig config)
    : net_(std::move(net)), config_(config) {
  config_.validate();
}

GroupState SglEngine::make_group(std::span<const std::uint64_t> seeds) const {
  if (seeds.size() != config_.learners) {
    throw ConfigError("engine: " + std::to_string(config_.learners) + " learners but " +
                      std::to_string(seeds.size()) + " learner seeds");
  }
  GroupState g;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    g.learners.push_back(make_learner(*net_, k, seeds[k]));
    round_to(g.learners.back().v, config_.precision);
    round_to(g.learners.back().w, config_.precision);
  }
  return g;
}

ParamVector SglEngine::stage1_update(const LearnerState& learner, const LabeledBatch& train, double* loss) const {
  Tape tape(config_.precision);
  auto v = bind_variable(tape, learner.v);
  auto a = bind_constant(tape, learner.arch);
  Tensor l = hard_ce_loss(*net_, v, EdgeMix::from_logits(a), train);
  if (loss) *loss = l.item();
  auto g = grad(l, v);
  if (!all_finite(g)) {
    throw StepError("learner " + std::to_string(learner.id) + ": non-finite stage-1 gradient (loss " +
                    format_double(l.item()) + ")");
  }
  return descend(learner.v, config_.xi_v, g, config_.precision);
}

Matrix SglEngine::pseudo_labels(const ParamVector& v_prime, const ArchParams& arch, const Matrix& unlabeled) const {
  Tape tape(config_.precision);
  auto v = bind_constant(tape, v_prime);
  auto a = bind_constant(tape, arch);
  auto pl = generate_pseudo_dataset(*net_, input_tensor(tape, unlabeled), v, EdgeMix::from_logits(a), 0,
                                    config_.harden_pseudo_labels);
  return to_matrix(pl.labels);
}

double SglEngine::stage2_objective(const ParamVector& w, const ArchParams& arch, const LabeledBatch& train,
                                   const Matrix& unlabeled, std::span<const Matrix> peer_labels) const {
  Tape tape(config_.precision);
  auto wb = bind_constant(tape, w);
  auto ab = bind_constant(tape, arch);
  const auto labels = bind_labels(tape, peer_labels);
  return stage2_on_tape(*net_, config_.lambda, wb, EdgeMix::from_logits(ab), train, input_tensor(tape, unlabeled),
                        labels)
      .item();
}

ParamVector SglEngine::stage2_update(const ParamVector& w, const ArchParams& arch, const LabeledBatch& train,
                                     const Matrix& unlabeled, std::span<const Matrix> peer_labels,
                                     double* objective) const {
  Tape tape(config_.precision);
  auto wb = bind_variable(tape, w);
  auto ab = bind_constant(tape, arch);
  const auto labels = bind_labels(tape, peer_labels);
  Tensor o = stage2_on_tape(*net_, config_.lambda, wb, EdgeMix::from_logits(ab), train,
                            input_tensor(tape, unlabeled), labels);
  if (objective) *objective = o.item();
  auto g = grad(o, wb);
  if (!all_finite(g)) throw StepError("non-finite stage-2 gradient (objective " + format_double(o.item()) + ")");
  return descend(w, config_.xi_w, g, config_.precision);
}

std::vector<Matrix> SglEngine::peers_of(const StageSnapshot& snap, std::size_t k) const {
  std::vector<Matrix> out;
  for (std::size_t j = 0; j < snap.pseudo_labels.size(); ++j)
    if (j != k) out.push_back(snap.pseudo_labels[j]);
  return out;
}

StageSnapshot SglEngine::run_inner_stages(const GroupState& group, const StepBatches& batches) const {
  const std::size_t K = group.learners.size();
  if (K != config_.learners) throw ConfigError("engine: group size does not match configured learner count");
  StageSnapshot snap;
  snap.v_prime.resize(K);
  snap.w_prime.resize(K);
  snap.pseudo_labels.resize(K);
  snap.stage1_loss.resize(K);
  snap.stage2_objective.resize(K);

  parallel_for(K, config_.workers, [&](std::size_t k) {
    const auto& l = group.learners[k];
    snap.v_prime[k] = stage1_update(l, batches.train, &snap.stage1_loss[k]);
    snap.pseudo_labels[k] = pseudo_labels(snap.v_prime[k], l.arch, batches.unlabeled);
  });
  parallel_for(K, config_.workers, [&](std::size_t k) {
    const auto& l = group.learners[k];
    const auto peers = peers_of(snap, k);
    try {
      snap.w_prime[k] =
          stage2_update(l.w, l.arch, batches.train, batches.unlabeled, peers, &snap.stage2_objective[k]);
    } catch (const StepError& e) {
      throw StepError("learner " + std::to_string(k) + ": " + e.what());
    }
  });
  return snap;
}

SglEngine::ValidationGradients SglEngine::validation_gradients(const ParamVector& w_prime, const ArchParams& arch,
                                                               const LabeledBatch& val) const {
  Tape tape(config_.precision);
  auto w = bind_variable(tape, w_prime);
  auto a = bind_variable(tape, arch);
  Tensor l = hard_ce_loss(*net_, w, EdgeMix::from_logits(a), val);
  const BoundParams* sets[] = {&w, &a};
  auto g = grad(l, sets);
  return {std::move(g[0]), std::move(g[1]), l.item()};
}

ParamVector SglEngine::own_arch_grad(const GroupState& group, const StageSnapshot& snap, const StepBatches& batches,
                                     std::size_t k, const ValidationGradients& val_k) const {
  const auto& learner = group.learners[k];
  const auto peers = peers_of(snap, k);
  // grad_A O_k at a shifted copy of the pre-step W_k.
  auto field = [&](const ParamVector& point) {
    Tape tape(config_.precision);
    auto w = bind_constant(tape, point);
    auto a = bind_variable(tape, learner.arch);
    const auto labels = bind_labels(tape, peers);
    Tensor o = stage2_on_tape(*net_, config_.lambda, w, EdgeMix::from_logits(a), batches.train,
                              input_tensor(tape, batches.unlabeled), labels);
    return grad(o, a);
  };
  ParamVector correction = hvp_fd(field, learner.w, val_k.w, config_.fd_scale, learner.arch.layout());
  const double sign = config_.flip_correction_sign ? 1.0 : -1.0;
  return axpy(val_k.arch, sign * config_.xi_w, correction);
}

ParamVector SglEngine::cross_arch_grad(const GroupState& group, const StageSnapshot& snap,
                                       const StepBatches& batches, std::size_t k, std::size_t j,
                                       const ParamVector& u_j) const {
  if (j == k) throw Error("cross_arch_grad: peer index equals learner index");
  const auto& producer = group.learners[k];
  const auto& consumer = group.learners[j];
  ParamVector result = zeros_like(producer.arch);
  const bool through_v = config_.xi_v != 0.0;
  const bool through_arch = config_.label_arch_path;
  if (config_.lambda == 0.0 || (!through_v && !through_arch) || config_.harden_pseudo_labels) return result;

  // Derivative of peer j's pseudo-label loss with respect to what produced
  // the labels (V'_k, and optionally A_k), at W_j shifted along u_j.
  GradientField label_field = [&](const ParamVector& point) {
    Tape tape(config_.precision);
    auto w = bind_constant(tape, point);
    auto a_j = bind_constant(tape, consumer.arch);
    auto v_k = bind_variable(tape, snap.v_prime[k]);
    auto a_k = BoundParams(tape, producer.arch, through_arch);
    const Tensor u = input_tensor(tape, batches.unlabeled);
    auto pl = generate_pseudo_dataset(*net_, u, v_k, EdgeMix::from_logits(a_k), k, false);
    Tensor l = soft_ce_loss(*net_, w, EdgeMix::from_logits(a_j), u, pl.labels);
    const BoundParams* sets[] = {&v_k, &a_k};
    return grad(l, sets);
  };
  const LayoutPtr layouts[] = {snap.v_prime[k].layout(), producer.arch.layout()};
  auto second = hvp_fd(label_field, consumer.w, u_j, config_.fd_scale, layouts);
  const ParamVector& u2 = second[0];

  if (through_v) {
    // (dV'_k/dA_k)^T u2 = -xi_v grad^2_{A,V} L(V_k, A_k, D_tr) u2
    auto train_field = [&](const ParamVector& point) {
      Tape tape(config_.precision);
      auto v = bind_constant(tape, point);
      auto a = bind_variable(tape, producer.arch);
      return grad(hard_ce_loss(*net_, v, EdgeMix::from_logits(a), batches.train), a);
    };
    ParamVector chain = hvp_fd(train_field, producer.v, u2, config_.fd_scale, producer.arch.layout());
    result = axpy(result, config_.xi_w * config_.xi_v * config_.lambda, chain);
  }
  if (through_arch) result = axpy(result, -config_.xi_w * config_.lambda, second[1]);
  return result;
}

std::vector<ArchGradient> SglEngine::arch_gradients(const GroupState& group, const StageSnapshot& snap,
                                                    const StepBatches& batches) const {
  const std::size_t K = group.learners.size();
  std::vector<ValidationGradients> val(K);
  parallel_for(K, config_.workers, [&](std::size_t k) {
    val[k] = validation_gradients(snap.w_prime[k], group.learners[k].arch, batches.val_for(k));
  });

  std::vector<ArchGradient> out(K);
  parallel_for(K, config_.workers, [&](std::size_t k) {
    auto& g = out[k];
    g.val_loss = val[k].loss;
    g.own = own_arch_grad(group, snap, batches, k, val[k]);
    std::optional<ParamVector> cross_sum;
    for (std::size_t j = 0; j < K; ++j) {
      if (j == k) {
        g.cross.push_back(zeros_like(g.own));
        continue;
      }
      g.cross.push_back(cross_arch_grad(group, snap, batches, k, j, val[j].w));
      cross_sum = cross_sum ? *cross_sum + g.cross.back() : g.cross.back();
    }
    g.total = cross_sum ? g.own + *cross_sum : g.own;
    if (!all_finite(g.total)) {
      std::ostringstream msg;
      msg << "learner " << k << ": non-finite architecture gradient (own norm " << norm_text(g.own);
      for (std::size_t j = 0; j < K; ++j)
        if (j != k) msg << ", cross from " << j << " norm " << norm_text(g.cross[j]);
      msg << ")";
      throw StepError(msg.str());
    }
  });
  return out;
}

void apply_arch_step(LearnerState& learner, const ParamVector& gradient, const EngineConfig& config) {
  if (config.arch_optimizer == ArchOptimizer::plain_descent) {
    learner.arch = descend(learner.arch, config.eta_a, gradient, config.precision);
    return;
  }
  const auto& s = config.adam;
  learner.adam_t += 1;
  const double t = static_cast<double>(learner.adam_t);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < gradient.dim(); ++i) {
    const double g = gradient[i];
    learner.adam_m[i] = s.beta1 * learner.adam_m[i] + (1.0 - s.beta1) * g;
    learner.adam_v[i] = s.beta2 * learner.adam_v[i] + (1.0 - s.beta2) * g * g;
    const double mhat = learner.adam_m[i] / c1;
    const double vhat = learner.adam_v[i] / c2;
    double& a = learner.arch[i];
    a -= s.lr * s.weight_decay * a;
    a -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
  }
  round_to(learner.arch, config.precision);
}

void SglEngine::stage3_update(GroupState& group, std::span<const ArchGradient> grads) const {
  for (std::size_t k = 0; k < group.learners.size(); ++k) apply_arch_step(group.learners[k], grads[k].total, config_);
}

StepReport SglEngine::step(GroupState& group, const StepBatches& batches) const {
  const auto snap = run_inner_stages(group, batches);
  const auto grads = arch_gradients(group, snap, batches);

  GroupState next = group;
  if (config_.commit_inner_updates) {
    for (std::size_t k = 0; k < next.learners.size(); ++k) {
      next.learners[k].v = snap.v_prime[k];
      next.learners[k].w = snap.w_prime[k];
    }
  }
  stage3_update(next, grads);
  for (const auto& l : next.learners) {
    if (!all_finite(l.arch) || !all_finite(l.v) || !all_finite(l.w)) {
      throw StepError("learner " + std::to_string(l.id) + ": update produced non-finite parameters");
    }
  }
  next.step += 1;

  StepReport report;
  report.step = next.step;
  report.stage1_loss = snap.stage1_loss;
  report.stage2_objective = snap.stage2_objective;
  for (const auto& g : grads) {
    report.val_batch_loss.push_back(g.val_loss);
    report.own_norm.push_back(norm2(g.own));
    std::vector<double> cn;
    for (const auto& c : g.cross) cn.push_back(norm2(c));
    report.cross_norm.push_back(std::move(cn));
  }
  group = std::move(next);
  return report;
}

}  // namespace sgl
