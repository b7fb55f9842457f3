#pragma once

// Single-learner one-step-unrolled architecture search, written directly
// against the network losses. Used as the reference trajectory that the
// group engine must reduce to when it has one learner or no coupling.

#include <cmath>

#include "sgl/datasets.hpp"
#include "sgl/engine.hpp"
#include "sgl/learner.hpp"

namespace sgl::test {

struct ReferenceLearner {
  ParamVector v;
  ParamVector w;
  ArchParams arch;
  std::vector<double> m, s;
  std::uint64_t t = 0;
};

inline ReferenceLearner reference_from(const LearnerState& l) {
  return {l.v, l.w, l.arch, std::vector<double>(l.arch.dim(), 0.0), std::vector<double>(l.arch.dim(), 0.0), 0};
}

inline void round_vec(ParamVector& p, Precision prec) {
  for (double& x : p.flat()) x = quantize(x, prec);
}

// Gradients of the hard CE at (w, a) with respect to w and a.
inline std::pair<ParamVector, ParamVector> ce_grads(const Network& net, const ParamVector& w, const ArchParams& a,
                                                    const LabeledBatch& b, Precision prec) {
  Tape t(prec);
  auto wb = bind_variable(t, w);
  auto ab = bind_variable(t, a);
  const Tensor l = hard_ce_loss(net, wb, EdgeMix::from_logits(ab), b);
  const BoundParams* sets[] = {&wb, &ab};
  auto g = grad(l, sets);
  return {g[0], g[1]};
}

inline ParamVector minus_step(const ParamVector& p, double eta, const ParamVector& g, Precision prec) {
  ParamVector out = p;
  for (std::size_t i = 0; i < p.dim(); ++i) out[i] = p[i] - eta * g[i];
  round_vec(out, prec);
  return out;
}

inline void reference_step(const Network& net, const EngineConfig& c, ReferenceLearner& r, const LabeledBatch& train,
                           const LabeledBatch& val) {
  const auto prec = c.precision;
  const ParamVector v_new = minus_step(r.v, c.xi_v, ce_grads(net, r.v, r.arch, train, prec).first, prec);
  const ParamVector w_new = minus_step(r.w, c.xi_w, ce_grads(net, r.w, r.arch, train, prec).first, prec);

  const auto [u, direct] = ce_grads(net, w_new, r.arch, val, prec);
  double un = 0.0;
  for (double x : u.flat()) un += x * x;
  un = std::sqrt(un);
  std::vector<double> g(direct.flat().begin(), direct.flat().end());
  if (un >= 1e-12) {
    const double alpha = c.fd_scale / un;
    ParamVector wp = r.w, wm = r.w;
    for (std::size_t i = 0; i < u.dim(); ++i) {
      wp[i] += alpha * u[i];
      wm[i] -= alpha * u[i];
    }
    const ParamVector ap = ce_grads(net, wp, r.arch, train, prec).second;
    const ParamVector am = ce_grads(net, wm, r.arch, train, prec).second;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c.xi_w * (ap[i] - am[i]) / (2.0 * alpha);
  }

  if (c.arch_optimizer == ArchOptimizer::plain_descent) {
    for (std::size_t i = 0; i < g.size(); ++i) r.arch[i] -= c.eta_a * g[i];
  } else {
    const auto& s = c.adam;
    r.t += 1;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(r.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(r.t));
    for (std::size_t i = 0; i < g.size(); ++i) {
      r.m[i] = s.beta1 * r.m[i] + (1.0 - s.beta1) * g[i];
      r.s[i] = s.beta2 * r.s[i] + (1.0 - s.beta2) * g[i] * g[i];
      r.arch[i] -= s.lr * s.weight_decay * r.arch[i];
      r.arch[i] -= s.lr * (r.m[i] / c1) / (std::sqrt(r.s[i] / c2) + s.eps);
    }
  }
  round_vec(r.arch, prec);
  if (c.commit_inner_updates) {
    r.v = v_new;
    r.w = w_new;
  }
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Worst per-parameter deviation between a group learner and a reference learner.
inline double deviation(const LearnerState& l, const ReferenceLearner& r) {
  return std::max({max_abs_diff(l.v.flat(), r.v.flat()), max_abs_diff(l.w.flat(), r.w.flat()),
                   max_abs_diff(l.arch.flat(), r.arch.flat())});
}

// Fixed minibatch stream over one task for engine-level tests.
struct BatchSource {
  LabeledDataset train, val;
  UnlabeledDataset unlabeled;
  MinibatchSampler ts, vs, us;

  BatchSource(std::size_t classes, double separation, std::uint64_t seed, std::size_t batch = 32)
      : train(make_gaussian_mixture(classes, 60, 2, separation, seed)),
        val(make_gaussian_mixture(classes, 40, 2, separation, seed + 1000, {1.0, 0.0, 0.0, seed})),
        unlabeled(cross_unlabeled(make_gaussian_mixture(classes, 50, 2, separation, seed + 2000,
                                                        {1.0, 0.0, 0.0, seed}),
                                  2)),
        ts(train.size(), batch, derive_seed(seed, 1)),
        vs(val.size(), batch, derive_seed(seed, 2)),
        us(unlabeled.size(), batch, derive_seed(seed, 3)) {}

  StepBatches next() {
    StepBatches b;
    b.train = batch_of(train, ts.next());
    b.val = {batch_of(val, vs.next())};
    const auto ui = us.next();
    b.unlabeled = select_rows(unlabeled.inputs, ui);
    return b;
  }
};

}  // namespace sgl::test
