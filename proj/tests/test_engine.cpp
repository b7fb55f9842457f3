#include <doctest.h>

#include <cmath>

#include "sgl/engine.hpp"
#include "sgl/error.hpp"
#include "reference.hpp"
#include "support.hpp"

using namespace sgl;
using sgl::test::BatchSource;

namespace {

std::shared_ptr<const Network> make_net(std::size_t classes = 2, std::size_t width = 3,
                                        std::vector<CandidateOp> ops = {CandidateOp::zero, CandidateOp::identity,
                                                                        CandidateOp::affine,
                                                                        CandidateOp::affine_tanh}) {
  NetworkSpec s;
  s.input_dim = 2;
  s.classes = classes;
  s.cell = CellSpec::dense(3, 1, width, std::move(ops));
  return std::make_shared<Network>(s);
}

EngineConfig base_config(std::size_t K) {
  EngineConfig c;
  c.learners = K;
  c.lambda = 0.1;
  c.xi_v = 0.3;
  c.xi_w = 0.3;
  c.eta_a = 0.05;
  c.arch_optimizer = ArchOptimizer::plain_descent;
  return c;
}

std::vector<std::uint64_t> seeds_for(std::size_t K, std::uint64_t base = 100) {
  std::vector<std::uint64_t> s;
  for (std::size_t k = 0; k < K; ++k) s.push_back(base + k);
  return s;
}

// Network with a one-dimensional stem and identity cell; only head.b is
// nonzero, so every prediction is softmax(head.b).
std::shared_ptr<const Network> bias_only_net(std::size_t classes) {
  NetworkSpec s;
  s.input_dim = 1;
  s.classes = classes;
  s.cell = CellSpec::dense(2, 1, 1, {CandidateOp::identity});
  return std::make_shared<Network>(s);
}

double full_val_loss(const Network& net, const LabeledDataset& val, const LearnerState& l) {
  return mean_hard_ce(predict_proba(net, val.inputs, l.w, l.arch), val.labels);
}

}  // namespace

TEST_CASE("stage 1: hand-computed descent step on the head bias") {
  const auto net = bias_only_net(2);
  EngineConfig c = base_config(1);
  c.xi_v = 0.4;
  const SglEngine engine(net, c);
  LearnerState l = make_learner(*net, 0, 1);
  for (double& x : l.v.flat()) x = 0.0;
  // p = (0.5, 0.5) for every row, all labels 0: d/db = (-0.5, 0.5).
  const LabeledBatch b{Matrix(3, 1, {1, 2, 3}), {0, 0, 0}};
  double loss = 0.0;
  const ParamVector vp = engine.stage1_update(l, b, &loss);
  CHECK(std::abs(loss - std::log(2.0)) <= 1e-15);
  CHECK(vp.view("head.b")[0] == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(vp.view("head.b")[1] == doctest::Approx(-0.2).epsilon(1e-15));
  for (double x : vp.view("stem.w")) CHECK(x == 0.0);
}

TEST_CASE("stage 1: zero gradient leaves V unchanged") {
  const auto net = bias_only_net(2);
  const SglEngine engine(net, base_config(1));
  LearnerState l = make_learner(*net, 0, 1);
  for (double& x : l.v.flat()) x = 0.0;
  l.v.view("head.b")[0] = 1000.0;
  const LabeledBatch b{Matrix(2, 1, {1, -1}), {0, 0}};
  CHECK(engine.stage1_update(l, b) == l.v);
}

TEST_CASE("stage 1 equals a descent step on a finite-difference gradient") {
  const auto net = make_net(3);
  const SglEngine engine(net, base_config(1));
  BatchSource src(3, 2.0, 5);
  const auto b = src.next();
  const LearnerState l = engine.make_group(seeds_for(1)).learners[0];
  const ParamVector vp = engine.stage1_update(l, b.train);
  const auto num = sgl::test::numeric_gradient(
      [&](const std::vector<double>& x) {
        Tape t;
        auto v = bind_constant(t, ParamVector(l.v.layout(), x));
        auto a = bind_constant(t, l.arch);
        return hard_ce_loss(*net, v, EdgeMix::from_logits(a), b.train).item();
      },
      l.v.values(), 1e-6);
  std::vector<double> expect(l.v.dim());
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = l.v[i] - 0.3 * num[i];
  CHECK(sgl::test::rel_error(vp.values(), expect) <= 1e-8);
}

TEST_CASE("stage 2 objective") {
  const auto net = make_net(3);
  BatchSource src(3, 2.0, 6);
  const auto b = src.next();

  auto hard = [&](const LearnerState& l) {
    Tape t;
    auto w = bind_constant(t, l.w);
    auto a = bind_constant(t, l.arch);
    return hard_ce_loss(*net, w, EdgeMix::from_logits(a), b.train).item();
  };

  SUBCASE("lambda = 0 and K = 1 reduce to hard cross-entropy") {
    EngineConfig c = base_config(3);
    c.lambda = 0.0;
    const SglEngine e0(net, c);
    const auto g = e0.make_group(seeds_for(3));
    const auto snap = e0.run_inner_stages(g, b);
    const std::vector<Matrix> peers = {snap.pseudo_labels[1], snap.pseudo_labels[2]};
    CHECK(e0.stage2_objective(g.learners[0].w, g.learners[0].arch, b.train, b.unlabeled, peers) ==
          hard(g.learners[0]));

    const SglEngine e1(net, base_config(1));
    const auto g1 = e1.make_group(seeds_for(1));
    CHECK(e1.stage2_objective(g1.learners[0].w, g1.learners[0].arch, b.train, b.unlabeled, {}) ==
          hard(g1.learners[0]));
  }

  SUBCASE("K = 3 matches a straight-line evaluation") {
    const SglEngine e(net, base_config(3));
    const auto g = e.make_group(seeds_for(3));
    const auto snap = e.run_inner_stages(g, b);
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& l = g.learners[k];
      const Matrix p_tr = predict_proba(*net, b.train.inputs, l.w, l.arch).probs;
      const Matrix p_u = predict_proba(*net, b.unlabeled, l.w, l.arch).probs;
      double ce = 0.0;
      for (std::size_t i = 0; i < p_tr.rows; ++i) ce -= std::log(p_tr(i, static_cast<std::size_t>(b.train.labels[i])));
      ce /= static_cast<double>(p_tr.rows);
      double soft = 0.0;
      std::vector<Matrix> peers;
      for (std::size_t j = 0; j < 3; ++j) {
        if (j == k) continue;
        // Labels of peer j are its stage-1 predictions.
        const Matrix& t = snap.pseudo_labels[j];
        CHECK(t == predict_proba(*net, b.unlabeled, snap.v_prime[j], g.learners[j].arch).probs);
        double s = 0.0;
        for (std::size_t i = 0; i < t.rows; ++i)
          for (std::size_t c = 0; c < 3; ++c) s -= t(i, c) * std::log(p_u(i, c));
        soft += s / static_cast<double>(t.rows);
        peers.push_back(t);
      }
      const double expect = ce + 0.1 * soft;
      CHECK(std::abs(e.stage2_objective(l.w, l.arch, b.train, b.unlabeled, peers) - expect) <= 1e-12);
      CHECK(std::abs(snap.stage2_objective[k] - expect) <= 1e-12);
    }
  }
}

TEST_CASE("stage 2 update") {
  const auto net = make_net(3);
  BatchSource src(3, 2.0, 7);
  const auto b = src.next();

  SUBCASE("lambda = 0 is a plain cross-entropy descent step") {
    EngineConfig c = base_config(2);
    c.lambda = 0.0;
    const SglEngine e(net, c);
    const auto g = e.make_group(seeds_for(2));
    const auto snap = e.run_inner_stages(g, b);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto& l = g.learners[k];
      const auto [gw, ga] = sgl::test::ce_grads(*net, l.w, l.arch, b.train, Precision::f64);
      CHECK(snap.w_prime[k] == sgl::test::minus_step(l.w, 0.3, gw, Precision::f64));
    }
  }

  SUBCASE("zero-gradient objective leaves W unchanged") {
    const auto bnet = bias_only_net(2);
    EngineConfig c = base_config(1);
    const SglEngine e(bnet, c);
    LearnerState l = make_learner(*bnet, 0, 1);
    for (double& x : l.w.flat()) x = 0.0;
    l.w.view("head.b")[0] = 1000.0;
    const LabeledBatch tb{Matrix(2, 1, {1, -1}), {0, 0}};
    CHECK(e.stage2_update(l.w, l.arch, tb, Matrix(1, 1, {0.0}), {}) == l.w);
  }

  SUBCASE("two learners: step on a finite-difference gradient of the objective") {
    const SglEngine e(net, base_config(2));
    const auto g = e.make_group(seeds_for(2));
    const auto snap = e.run_inner_stages(g, b);
    const auto& l = g.learners[0];
    const std::vector<Matrix> peers = {snap.pseudo_labels[1]};
    const auto num = sgl::test::numeric_gradient(
        [&](const std::vector<double>& x) {
          return e.stage2_objective(ParamVector(l.w.layout(), x), l.arch, b.train, b.unlabeled, peers);
        },
        l.w.values(), 1e-6);
    std::vector<double> expect(l.w.dim());
    for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = l.w[i] - 0.3 * num[i];
    CHECK(sgl::test::rel_error(snap.w_prime[0].values(), expect) <= 1e-8);
  }
}

TEST_CASE("architecture gradient special cases") {
  const auto net = make_net(3);
  BatchSource src(3, 2.0, 8);
  const auto b = src.next();

  SUBCASE("xi_w = 0 leaves only the direct validation gradient") {
    EngineConfig c = base_config(2);
    c.xi_w = 0.0;
    const SglEngine e(net, c);
    const auto g = e.make_group(seeds_for(2));
    const auto snap = e.run_inner_stages(g, b);
    for (std::size_t k = 0; k < 2; ++k) {
      const auto val = e.validation_gradients(snap.w_prime[k], g.learners[k].arch, b.val[0]);
      CHECK(e.own_arch_grad(g, snap, b, k, val) == val.arch);
      // W' = W here, so the direct term is the plain validation gradient.
      CHECK(snap.w_prime[k] == g.learners[k].w);
    }
  }

  for (int which = 0; which < 2; ++which) {
    CAPTURE(which);
    EngineConfig c = base_config(3);
    (which == 0 ? c.lambda : c.xi_v) = 0.0;
    const SglEngine e(net, c);
    const auto g = e.make_group(seeds_for(3));
    const auto snap = e.run_inner_stages(g, b);
    const auto grads = e.arch_gradients(g, snap, b);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < 3; ++j)
        for (double x : grads[k].cross[j].flat()) CHECK(x == 0.0);
  }

  SUBCASE("K = 1 total is the own term") {
    const SglEngine e(net, base_config(1));
    const auto g = e.make_group(seeds_for(1));
    const auto snap = e.run_inner_stages(g, b);
    const auto grads = e.arch_gradients(g, snap, b);
    CHECK(grads[0].total == grads[0].own);
  }
}

TEST_CASE("stage 3 applies the configured optimizer") {
  const auto net = make_net(3);
  BatchSource src(3, 2.0, 9);
  const auto b = src.next();

  SUBCASE("plain descent") {
    const SglEngine e(net, base_config(2));
    auto g = e.make_group(seeds_for(2));
    const auto snap = e.run_inner_stages(g, b);
    const auto grads = e.arch_gradients(g, snap, b);
    const GroupState before = g;
    e.stage3_update(g, grads);
    for (std::size_t k = 0; k < 2; ++k) {
      ParamVector sum = grads[k].own;
      for (std::size_t j = 0; j < 2; ++j) sum = sum + grads[k].cross[j];
      for (std::size_t i = 0; i < sum.dim(); ++i)
        CHECK(g.learners[k].arch[i] == before.learners[k].arch[i] - 0.05 * sum[i]);
    }
  }

  SUBCASE("zero gradient leaves the architecture unchanged under plain descent") {
    const SglEngine e(net, base_config(1));
    auto g = e.make_group(seeds_for(1));
    for (double& x : g.learners[0].arch.flat()) x = 0.25;
    ArchGradient z;
    z.total = zeros_like(g.learners[0].arch);
    const auto before = g.learners[0].arch;
    e.stage3_update(g, std::span<const ArchGradient>(&z, 1));
    CHECK(g.learners[0].arch == before);
  }

  SUBCASE("first Adam step") {
    EngineConfig c = base_config(1);
    c.arch_optimizer = ArchOptimizer::adam;
    LearnerState l = make_learner(*net, 0, 3);
    Rng rng(10);
    for (double& x : l.arch.flat()) x = standard_normal(rng);
    ParamVector gr = zeros_like(l.arch);
    for (double& x : gr.flat()) x = standard_normal(rng);
    const auto before = l.arch;
    apply_arch_step(l, gr, c);
    for (std::size_t i = 0; i < gr.dim(); ++i) {
      // Bias-corrected moments equal g and g^2 after one step.
      const double a = before[i] * (1.0 - 3e-4 * 1e-3);
      CHECK(std::abs(l.arch[i] - (a - 3e-4 * gr[i] / (std::abs(gr[i]) + 1e-8))) <= 1e-15);
    }
    CHECK(l.adam_t == 1);
  }
}

TEST_CASE("K = 1 reduces to the single-learner reference over 50 steps") {
  const auto net = make_net(3);
  for (double lambda : {0.0, 0.1, 5.0}) {
    for (auto opt : {ArchOptimizer::plain_descent, ArchOptimizer::adam}) {
      EngineConfig c = base_config(1);
      c.lambda = lambda;
      c.arch_optimizer = opt;
      const SglEngine e(net, c);
      auto g = e.make_group(seeds_for(1, 40));
      auto ref = sgl::test::reference_from(g.learners[0]);
      BatchSource src(3, 2.0, 11);
      double worst = 0.0;
      for (int s = 0; s < 50; ++s) {
        const auto b = src.next();
        e.step(g, b);
        sgl::test::reference_step(*net, c, ref, b.train, b.val[0]);
        worst = std::max(worst, sgl::test::deviation(g.learners[0], ref));
      }
      CHECK(worst <= 1e-10);
    }
  }
}

TEST_CASE("lambda = 0 decouples the learners") {
  const auto net = make_net(3);
  EngineConfig c = base_config(2);
  c.lambda = 0.0;
  c.arch_optimizer = ArchOptimizer::adam;
  const SglEngine e(net, c);
  auto g = e.make_group(seeds_for(2, 60));
  std::vector<sgl::test::ReferenceLearner> refs = {sgl::test::reference_from(g.learners[0]),
                                                   sgl::test::reference_from(g.learners[1])};
  BatchSource src(3, 2.0, 12);
  double worst = 0.0;
  for (int s = 0; s < 50; ++s) {
    const auto b = src.next();
    e.step(g, b);
    for (std::size_t k = 0; k < 2; ++k) {
      sgl::test::reference_step(*net, c, refs[k], b.train, b.val[0]);
      worst = std::max(worst, sgl::test::deviation(g.learners[k], refs[k]));
    }
  }
  CHECK(worst <= 1e-10);
}

TEST_CASE("identical learners stay bitwise identical") {
  const auto net = make_net(3);
  EngineConfig c = base_config(2);
  c.arch_optimizer = ArchOptimizer::adam;
  const SglEngine e(net, c);
  const std::uint64_t same[] = {7, 7};
  auto g = e.make_group(same);
  BatchSource src(3, 2.0, 13);
  bool equal = true;
  for (int s = 0; s < 40; ++s) {
    e.step(g, src.next());
    const auto& a = g.learners[0];
    const auto& b = g.learners[1];
    equal = equal && a.v == b.v && a.w == b.w && a.arch == b.arch && a.adam_m == b.adam_m && a.adam_v == b.adam_v;
  }
  CHECK(equal);
}

TEST_CASE("permuting the learners permutes the trajectories") {
  const auto net = make_net(3);
  for (std::size_t K : {2u, 3u}) {
    CAPTURE(K);
    const SglEngine e(net, base_config(K));
    auto seeds = seeds_for(K, 200);
    auto perm = seeds;
    std::rotate(perm.begin(), perm.begin() + 1, perm.end());
    auto g = e.make_group(seeds);
    auto h = e.make_group(perm);
    BatchSource s1(3, 2.0, 14), s2(3, 2.0, 14);
    for (int s = 0; s < 20; ++s) {
      e.step(g, s1.next());
      e.step(h, s2.next());
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const auto& a = g.learners[(k + 1) % K];
      const auto& b = h.learners[k];
      worst = std::max({worst, sgl::test::max_abs_diff(a.arch.flat(), b.arch.flat()),
                        sgl::test::max_abs_diff(a.w.flat(), b.w.flat()),
                        sgl::test::max_abs_diff(a.v.flat(), b.v.flat())});
      if (K == 2) CHECK(a.arch == b.arch);
    }
    // With three learners the peer sums are added in a different order.
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("a failing step leaves the group untouched") {
  const auto net = make_net(3);
  const SglEngine e(net, base_config(2));
  auto g = e.make_group(seeds_for(2));
  BatchSource src(3, 2.0, 15);
  e.step(g, src.next());
  const GroupState before = g;

  SUBCASE("invalid training label") {
    auto b = src.next();
    b.train.labels[0] = 7;
    CHECK_THROWS_AS(e.step(g, b), DataError);
  }
  SUBCASE("non-finite unlabeled input") {
    auto b = src.next();
    b.unlabeled(0, 0) = NAN;
    CHECK_THROWS_AS(e.step(g, b), StepError);
  }
  SUBCASE("diverging step") {
    EngineConfig c = base_config(2);
    c.xi_w = 1e300;
    const SglEngine big(net, c);
    CHECK_THROWS_AS(big.step(g, src.next()), StepError);
  }
  CHECK(g == before);
}

TEST_CASE("50 steps lower the validation loss of both learners") {
  const auto net = make_net(2);
  EngineConfig c = base_config(2);
  c.xi_v = c.xi_w = 0.5;
  c.arch_optimizer = ArchOptimizer::adam;
  c.adam.lr = 0.01;
  const SglEngine e(net, c);
  auto g = e.make_group(seeds_for(2, 300));
  BatchSource src(2, 4.0, 16);
  std::vector<double> start;
  for (const auto& l : g.learners) start.push_back(full_val_loss(*net, src.val, l));
  for (int s = 0; s < 50; ++s) e.step(g, src.next());
  for (std::size_t k = 0; k < 2; ++k) {
    CAPTURE(k);
    CHECK(full_val_loss(*net, src.val, g.learners[k]) < start[k]);
  }
}

TEST_CASE("worker count does not change results") {
  const auto net = make_net(3);
  EngineConfig c = base_config(3);
  c.arch_optimizer = ArchOptimizer::adam;
  const SglEngine e1(net, c);
  c.workers = 3;
  const SglEngine e3(net, c);
  auto g1 = e1.make_group(seeds_for(3));
  auto g3 = e3.make_group(seeds_for(3));
  BatchSource s1(3, 2.0, 17), s3(3, 2.0, 17);
  for (int s = 0; s < 10; ++s) {
    const auto r1 = e1.step(g1, s1.next());
    const auto r3 = e3.step(g3, s3.next());
    CHECK(r1.own_norm == r3.own_norm);
    CHECK(r1.cross_norm == r3.cross_norm);
  }
  CHECK(g1 == g3);
}

TEST_CASE("engine configuration validation") {
  const auto net = make_net();
  EngineConfig c = base_config(2);
  c.learners = 0;
  CHECK_THROWS_AS(SglEngine(net, c), ConfigError);
  c = base_config(2);
  c.lambda = -1.0;
  CHECK_THROWS_AS(SglEngine(net, c), ConfigError);
  c = base_config(2);
  c.fd_scale = 0.0;
  CHECK_THROWS_AS(SglEngine(net, c), ConfigError);
  const SglEngine e(net, base_config(2));
  CHECK_THROWS_AS(e.make_group(seeds_for(3)), ConfigError);
}
