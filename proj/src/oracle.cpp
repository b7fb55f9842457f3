#include "sgl/oracle.hpp"

#include <chrono>
#include <cmath>
#include <limits>

namespace sgl {

namespace {

// One gradient-descent step on a scalar built from (weights, arch).
template <typename Build>
ParamVector descent_step(const ParamVector& weights, const ArchParams& arch, double step, Build&& build) {
  Tape tape;
  auto w = bind_variable(tape, weights);
  auto a = bind_constant(tape, arch);
  Tensor loss = build(tape, w, EdgeMix::from_logits(a));
  return axpy(weights, -step, grad(loss, w));
}

}  // namespace

std::vector<double> composed_objective_terms(const SglEngine& engine, const GroupState& group,
                                             std::span<const ArchParams> arch_values, const StepBatches& batches) {
  const Network& net = engine.network();
  const EngineConfig& cfg = engine.config();
  const std::size_t K = group.learners.size();
  if (arch_values.size() != K) throw ShapeError("composed objective: one architecture per learner required");

  std::vector<Matrix> labels(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& l = group.learners[k];
    const ParamVector v_prime = descent_step(l.v, arch_values[k], cfg.xi_v, [&](Tape&, auto& w, const EdgeMix& a) {
      return hard_ce_loss(net, w, a, batches.train);
    });
    Tape tape;
    auto v = bind_constant(tape, v_prime);
    auto a = bind_constant(tape, cfg.label_arch_path ? arch_values[k] : l.arch);
    auto pl = generate_pseudo_dataset(net, input_tensor(tape, batches.unlabeled), v, EdgeMix::from_logits(a), k,
                                      cfg.harden_pseudo_labels);
    labels[k] = to_matrix(pl.labels);
  }

  std::vector<double> terms(K);
  for (std::size_t k = 0; k < K; ++k) {
    const auto& l = group.learners[k];
    const ParamVector w_prime =
        descent_step(l.w, arch_values[k], cfg.xi_w, [&](Tape& tape, auto& w, const EdgeMix& a) {
          Tensor o = hard_ce_loss(net, w, a, batches.train);
          if (cfg.lambda == 0.0 || K == 1) return o;
          const Tensor u = input_tensor(tape, batches.unlabeled);
          Tensor soft;
          bool first = true;
          for (std::size_t j = 0; j < K; ++j) {
            if (j == k) continue;
            const Tensor t = tape.constant({labels[j].rows, labels[j].cols}, labels[j].data);
            Tensor term = soft_ce_loss(net, w, a, u, t);
            soft = first ? term : add(soft, term);
            first = false;
          }
          return add(o, scale(soft, cfg.lambda));
        });
    Tape tape;
    auto w = bind_constant(tape, w_prime);
    auto a = bind_constant(tape, arch_values[k]);
    terms[k] = hard_ce_loss(net, w, EdgeMix::from_logits(a), batches.val_for(k)).item();
  }
  return terms;
}

double composed_objective(const SglEngine& engine, const GroupState& group, std::span<const ArchParams> arch_values,
                          const StepBatches& batches) {
  double s = 0.0;
  for (double t : composed_objective_terms(engine, group, arch_values, batches)) s += t;
  return s;
}

double relative_l2_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw ShapeError("relative_l2_error: size mismatch");
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    ref += numeric[i] * numeric[i];
  }
  if (ref == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(diff / ref);
}

GradcheckReport check_hypergradient(const SglEngine& engine, const GroupState& group, const StepBatches& batches,
                                    double h, double tolerance) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t K = group.learners.size();
  GradcheckReport report;
  report.learners = K;
  report.tolerance = tolerance;

  const auto snap = engine.run_inner_stages(group, batches);
  const auto analytic = engine.arch_gradients(group, snap, batches);

  // numeric[k][j]: central difference of term j with respect to A_k.
  std::vector<ArchParams> base;
  for (const auto& l : group.learners) base.push_back(l.arch);
  std::vector<std::vector<std::vector<double>>> numeric(K, std::vector<std::vector<double>>(K));
  for (std::size_t k = 0; k < K; ++k) {
    const std::size_t n = base[k].dim();
    for (auto& col : numeric[k]) col.assign(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) {
      auto shifted = base;
      shifted[k][c] = base[k][c] + h;
      const auto plus = composed_objective_terms(engine, group, shifted, batches);
      shifted[k][c] = base[k][c] - h;
      const auto minus = composed_objective_terms(engine, group, shifted, batches);
      for (std::size_t j = 0; j < K; ++j) numeric[k][j][c] = (plus[j] - minus[j]) / (2.0 * h);
    }
  }

  report.own_error.resize(K);
  report.cross_error.assign(K, std::vector<double>(K, 0.0));
  report.cross_exact_zero.assign(K, std::vector<bool>(K, true));
  for (std::size_t k = 0; k < K; ++k) {
    report.arch_coordinates += base[k].dim();
    report.own_error[k] = relative_l2_error(analytic[k].own.flat(), numeric[k][k]);
    std::vector<double> num_total(base[k].dim(), 0.0);
    for (std::size_t j = 0; j < K; ++j) {
      for (std::size_t c = 0; c < num_total.size(); ++c) num_total[c] += numeric[k][j][c];
      if (j == k) continue;
      report.cross_error[k][j] = relative_l2_error(analytic[k].cross[j].flat(), numeric[k][j]);
      for (double v : analytic[k].cross[j].flat())
        if (v != 0.0) report.cross_exact_zero[k][j] = false;
    }
    report.analytic_total.insert(report.analytic_total.end(), analytic[k].total.flat().begin(),
                                 analytic[k].total.flat().end());
    report.numeric_total.insert(report.numeric_total.end(), num_total.begin(), num_total.end());
  }
  report.total_error = relative_l2_error(report.analytic_total, report.numeric_total);
  report.pass = report.total_error <= tolerance;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace sgl
