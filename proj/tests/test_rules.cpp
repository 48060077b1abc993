#include <doctest.h>

#include <cmath>
#include <limits>

#include "nfr/net.hpp"
#include "nfr/rng.hpp"
#include "nfr/rules.hpp"

using namespace nfr;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// W^T = [[1,-1],[2,0]] fixture used across the backstep examples
BackstepContext fixture_ctx(const Vec& mask) {
  Mat wt(2, 2);
  wt << 1, -1, 2, 0;
  return BackstepContext::from_dense(wt, Tensor::vector({1, 1}).flat(), mask,
                                     Tensor::vector({1, 1}).flat(), true);
}

Network random_mlp_with_trace(std::uint64_t seed, std::vector<int> dims,
                              Tensor* x_out, ForwardTrace* trace_out,
                              double denom_floor = 0.0, bool nonneg_x = false) {
  const Network net = build_random_mlp(dims, {DistKind::Gaussian, 1.0, seed});
  Rng rng(seed ^ 0xABCDEF);
  const int d = dims.front();
  for (int attempt = 0; attempt < 200; ++attempt) {
    Vec x(d);
    for (int i = 0; i < d; ++i) {
      x[i] = nonneg_x ? std::abs(rng.next_normal()) : rng.next_normal();
    }
    const Tensor tx = Tensor::from_flat(Shape{d}, x);
    const ForwardTrace t = forward(net, tx);
    if (denom_floor > 0.0) {
      // keep every pre-activation away from zero so z-denominators behave
      double lo = kInf;
      Vec a = x;
      for (int l = 0; l < net.layer_count(); ++l) {
        const Vec pre = net.layers[l].weights.transposed_view() * a;
        lo = std::min(lo, pre.cwiseAbs().minCoeff());
        a = net.layers[l].relu_after ? pre.cwiseMax(0.0).eval() : pre;
      }
      if (lo < denom_floor) continue;
    }
    *x_out = tx;
    *trace_out = t;
    return net;
  }
  FAIL("no admissible input found");
  return net;
}

int argmax_logit(const ForwardTrace& t) {
  Eigen::Index i = 0;
  t.logits().flat().maxCoeff(&i);
  return static_cast<int>(i);
}

}  // namespace

TEST_CASE("backstep_grad hand values") {
  auto ctx = fixture_ctx(Tensor::vector({1, 1}).flat());
  const Vec out = backstep_grad(ctx, Tensor::vector({1, 1}).flat());
  CHECK(out[0] == 3.0);
  CHECK(out[1] == -1.0);

  auto masked = fixture_ctx(Tensor::vector({0, 0}).flat());
  CHECK(backstep_grad(masked, Tensor::vector({1, 1}).flat()).isZero(0.0));
  CHECK_THROWS(backstep_grad(ctx, Tensor::vector({1, 1, 1}).flat()));
}

TEST_CASE("backstep_gbp masks negative relevance") {
  auto ctx = fixture_ctx(Tensor::vector({1, 1}).flat());
  SUBCASE("nonnegative relevance leaves gbp = grad") {
    const Vec r = Tensor::vector({2, 1}).flat();
    CHECK((backstep_gbp(ctx, r) - backstep_grad(ctx, r)).isZero(0.0));
  }
  SUBCASE("all-negative relevance dies") {
    CHECK(backstep_gbp(ctx, Tensor::vector({-1, -2}).flat()).isZero(0.0));
  }
  SUBCASE("mixed sign contrast against grad") {
    const Vec r = Tensor::vector({1, -1}).flat();
    const Vec g = backstep_gbp(ctx, r);
    CHECK(g[0] == 1.0);
    CHECK(g[1] == -1.0);
    const Vec raw = backstep_grad(ctx, r);
    CHECK(raw[0] == -1.0);
    CHECK(raw[1] == -1.0);
  }
}

TEST_CASE("backstep_rectgrad thresholds the weighted activations") {
  SUBCASE("tau = -inf keeps everything, equals grad") {
    auto ctx = fixture_ctx(Tensor::vector({1, 1}).flat());
    const Vec r = Tensor::vector({1, -1}).flat();
    const Vec out = backstep_rectgrad(ctx, r, 0.0);
    CHECK((out - backstep_grad(ctx, r)).isZero(0.0));
    CHECK(ctx.tau_value == -kInf);
  }
  SUBCASE("explicit tau = 0 keeps only the first entry") {
    Mat wt(2, 2);
    wt << 1, -1, 2, 0;
    auto ctx = BackstepContext::from_dense(
        wt, Tensor::vector({1, 1}).flat(), Tensor::vector({1, 1}).flat(),
        Tensor::vector({2, 1}).flat(), true);
    const Vec out =
        backstep_rectgrad(ctx, Tensor::vector({1, -3}).flat(), 90.0, 0.0);
    CHECK(out[0] == 1.0);
    CHECK(out[1] == -1.0);
    CHECK(ctx.tau_value == 0.0);
  }
  SUBCASE("q = 100 keeps at most the maximal entry") {
    auto ctx = fixture_ctx(Tensor::vector({1, 1}).flat());
    const Vec r = Tensor::vector({3, 2}).flat();
    const Vec s = ctx.a_out.cwiseProduct(r);
    const double tau = nearest_rank_percentile(s, 100.0);
    CHECK(tau == s.maxCoeff());
    int kept = 0;
    for (int i = 0; i < 2; ++i) kept += s[i] > tau ? 1 : 0;
    CHECK(kept == 0);
  }
}

TEST_CASE("nearest rank percentile conventions") {
  const Vec v = Tensor::vector({5, 1, 3, 2, 4}).flat();
  CHECK(nearest_rank_percentile(v, 0.0) == -kInf);
  CHECK(nearest_rank_percentile(v, 20.0) == 1.0);
  CHECK(nearest_rank_percentile(v, 80.0) == 4.0);
  CHECK(nearest_rank_percentile(v, 90.0) == 5.0);
  CHECK(nearest_rank_percentile(v, 100.0) == 5.0);
}

TEST_CASE("backstep_z redistributes by weighted activations") {
  // unit 0 weights (1,1), unit 1 weights (1,-1); x = (1,2)
  Mat wt(2, 2);
  wt << 1, 1, 1, -1;
  auto ctx = BackstepContext::from_dense(
      wt, Tensor::vector({1, 2}).flat(), Tensor::vector({1, 0}).flat(),
      Tensor::vector({3, 0}).flat(), true);
  const Vec out = backstep_z(ctx, Tensor::vector({3, 0}).flat());
  CHECK(out[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(backstep_z(ctx, Vec::Zero(2)).isZero(0.0));
}

TEST_CASE("z backstep conserves the relevance sum across active columns") {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int in = 2 + static_cast<int>(rng.next_below(6));
    const int out = 2 + static_cast<int>(rng.next_below(6));
    Mat wt(out, in);
    Vec a(in), r(out);
    for (int i = 0; i < out * in; ++i) wt(i / in, i % in) = rng.next_normal();
    for (int i = 0; i < in; ++i) a[i] = rng.next_normal();
    for (int i = 0; i < out; ++i) r[i] = rng.next_normal();
    auto ctx = BackstepContext::from_dense(wt, a, Vec::Ones(out), r, true);
    ctx.epsilon = 0.0;  // keep the identity exact; denominators generic here
    bool tiny_denominator = false;
    for (int j = 0; j < out; ++j) {
      if (std::abs(wt.row(j).dot(a)) < 1e-3) tiny_denominator = true;
    }
    if (tiny_denominator) continue;
    CHECK(backstep_z(ctx, r).sum() == doctest::Approx(r.sum()).epsilon(1e-9));
    const Vec rp = r.cwiseAbs();
    int drops = ctx.dropped_columns;
    const Vec zp = backstep_zplus(ctx, rp);
    if (ctx.dropped_columns == drops) {
      CHECK(zp.sum() == doctest::Approx(rp.sum()).epsilon(1e-9));
    }
  }
}

TEST_CASE("backstep_zplus hand value and degenerate column") {
  Mat wt(1, 2);
  wt << 1, -1;
  auto ctx = BackstepContext::from_dense(wt, Tensor::vector({1, 2}).flat(),
                                         Vec::Ones(1), Vec::Ones(1), true);
  const Vec out = backstep_zplus(ctx, Tensor::vector({5}).flat());
  CHECK(out[0] == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(out[1] == 0.0);

  SUBCASE("all-zero positive column drops the relevance with a warning") {
    Mat neg(1, 2);
    neg << -1, -2;
    auto bad = BackstepContext::from_dense(neg, Tensor::vector({1, 2}).flat(),
                                           Vec::Ones(1), Vec::Ones(1), true);
    const Vec dropped = backstep_zplus(bad, Tensor::vector({5}).flat());
    CHECK(dropped.isZero(0.0));
    CHECK(bad.dropped_columns == 1);
  }
  SUBCASE("all-positive weights make zplus equal z") {
    Mat pos(2, 3);
    pos << 1, 2, 0.5, 0.25, 1, 3;
    const Vec a = Tensor::vector({1, 0.5, 2}).flat();
    const Vec r = Tensor::vector({2, -1}).flat();
    auto c1 = BackstepContext::from_dense(pos, a, Vec::Ones(2), r, true);
    auto c2 = BackstepContext::from_dense(pos, a, Vec::Ones(2), r, true);
    CHECK((backstep_zplus(c1, r) - backstep_z(c2, r)).cwiseAbs().maxCoeff() <=
          1e-12);
  }
}

TEST_CASE("backstep_alphabeta against a direct evaluation oracle") {
  SUBCASE("alpha=1 beta=0 equals zplus") {
    Rng rng(9);
    Mat wt(3, 4);
    for (int i = 0; i < 12; ++i) wt(i / 4, i % 4) = rng.next_normal();
    Vec a(4), r(3);
    for (int i = 0; i < 4; ++i) a[i] = rng.next_normal();
    for (int i = 0; i < 3; ++i) r[i] = std::abs(rng.next_normal());
    auto c1 = BackstepContext::from_dense(wt, a, Vec::Ones(3), r, true);
    auto c2 = BackstepContext::from_dense(wt, a, Vec::Ones(3), r, true);
    CHECK((backstep_alphabeta(c1, r, 1.0, 0.0) - backstep_zplus(c2, r))
              .cwiseAbs()
              .maxCoeff() <= 1e-12);
  }
  SUBCASE("alpha=2 beta=1 mixed-sign fixture, brute force") {
    Mat wt(2, 3);
    wt << 1, -2, 0.5, -1, 1.5, 2;
    const Vec a = Tensor::vector({0.5, 1, -2}).flat();
    const Vec r = Tensor::vector({2, -3}).flat();
    auto ctx = BackstepContext::from_dense(wt, a, Vec::Ones(2), r, true);
    const Vec got = backstep_alphabeta(ctx, r, 2.0, 1.0);

    // independent route: literal double loop over the defining sums
    Vec want = Vec::Zero(3);
    for (int j = 0; j < 2; ++j) {
      double sp = 0, sn = 0;
      for (int i = 0; i < 3; ++i) {
        const double z = wt(j, i) * a[i];
        sp += std::max(z, 0.0);
        sn += std::min(z, 0.0);
      }
      for (int i = 0; i < 3; ++i) {
        const double z = wt(j, i) * a[i];
        double term = 0;
        if (sp > 0) term += 2.0 * std::max(z, 0.0) / sp;
        if (sn < 0) term -= 1.0 * std::min(z, 0.0) / sn;
        want[i] += term * r[j];
      }
    }
    CHECK((got - want).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("alpha - beta must be 1 in RuleSpec::validate") {
    RuleSpec rule = RuleSpec::of(RuleKind::LrpAlphaBeta);
    rule.alpha = 2.0;
    rule.beta = 0.5;
    CHECK_THROWS(rule.validate());
  }
}

TEST_CASE("backstep_zB hand value and z+ degeneration") {
  SUBCASE("hand fixture") {
    Mat wt(1, 2);
    wt << 1, 1;
    auto ctx = BackstepContext::from_dense(wt, Tensor::vector({1, -1}).flat(),
                                           Vec::Ones(1), Vec::Ones(1), false);
    const Vec out =
        backstep_zB(ctx, Tensor::vector({4}).flat(),
                    Tensor::vector({-1, -1}).flat(), Tensor::vector({1, 1}).flat());
    CHECK(out[0] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(out[1] == 0.0);
    CHECK(backstep_zB(ctx, Vec::Zero(1), Tensor::vector({-1, -1}).flat(),
                      Tensor::vector({1, 1}).flat())
              .isZero(0.0));
    CHECK_THROWS(backstep_zB(ctx, Tensor::vector({4}).flat(),
                             Tensor::vector({-1}).flat(),
                             Tensor::vector({1, 1}).flat()));
  }
  SUBCASE("lo = 0 with nonnegative weights reduces to z+") {
    Rng rng(13);
    Mat wt(2, 3);
    for (int i = 0; i < 6; ++i) wt(i / 3, i % 3) = std::abs(rng.next_normal());
    Vec a(3);
    for (int i = 0; i < 3; ++i) a[i] = std::abs(rng.next_normal());
    const Vec r = Tensor::vector({1, 2}).flat();
    auto c1 = BackstepContext::from_dense(wt, a, Vec::Ones(2), r, false);
    auto c2 = BackstepContext::from_dense(wt, a, Vec::Ones(2), r, false);
    const Vec zb = backstep_zB(c1, r, Vec::Zero(3), Vec::Constant(3, 100.0));
    CHECK((zb - backstep_zplus(c2, r)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("backprop grad equals central finite differences") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Tensor x;
    ForwardTrace trace;
    const Network net = random_mlp_with_trace(seed, {6, 10, 8, 3}, &x, &trace,
                                              1e-3);
    const int k = argmax_logit(trace);
    const Vec grad =
        backprop(net, trace, RuleSpec::of(RuleKind::Grad), k).bottom().values.flat();
    const double h = 1e-5;
    double worst = 0.0;
    for (int i = 0; i < 6; ++i) {
      Vec xp = x.flat(), xm = x.flat();
      xp[i] += h;
      xm[i] -= h;
      const double fp =
          forward(net, Tensor::from_flat(Shape{6}, xp)).logits()[k];
      const double fm =
          forward(net, Tensor::from_flat(Shape{6}, xm)).logits()[k];
      worst = std::max(worst, std::abs((fp - fm) / (2 * h) - grad[i]));
    }
    const double scale = std::max(grad.cwiseAbs().maxCoeff(), 1e-12);
    CHECK(worst / scale <= 1e-4);
  }
}

TEST_CASE("z rule equals grad .* input at every stop layer") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    Tensor x;
    ForwardTrace trace;
    const Network net =
        random_mlp_with_trace(seed, {5, 12, 9, 4}, &x, &trace, 1e-3);
    const int k = argmax_logit(trace);
    RuleSpec z = RuleSpec::of(RuleKind::LrpZ);
    z.epsilon = 1e-300;  // nets are constructed away from zero denominators
    for (int stop = 0; stop <= 2; ++stop) {
      const Vec rz =
          backprop(net, trace, z, k, stop).at_layer(stop).values.flat();
      const Vec g = backprop(net, trace, RuleSpec::of(RuleKind::Grad), k, stop)
                        .at_layer(stop)
                        .values.flat();
      const Vec gi = g.cwiseProduct(trace.activations[stop].flat());
      const double scale = std::max(gi.cwiseAbs().maxCoeff(), 1e-12);
      CHECK((rz - gi).cwiseAbs().maxCoeff() / scale <= 1e-8);
    }
  }
}

TEST_CASE("gbp equals grad when every intermediate relevance is nonnegative") {
  // all-positive weights and input keep every relevance positive
  Network net;
  net.input_shape = Shape{3};
  net.class_count = 2;
  Rng rng(17);
  auto positive = [&](const Shape& s) {
    Vec v(s.count());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] = 0.1 + std::abs(rng.next_normal());
    }
    return Tensor::from_flat(s, v);
  };
  net.layers.push_back(Layer::dense(positive(Shape{3, 5}), true));
  net.layers.push_back(Layer::dense(positive(Shape{5, 2}), false));
  net.validate();
  const Tensor x = positive(Shape{3});
  const ForwardTrace trace = forward(net, x);
  const Vec g = backprop(net, trace, RuleSpec::of(RuleKind::Grad), 0).bottom().values.flat();
  const Vec gb = backprop(net, trace, RuleSpec::of(RuleKind::Gbp), 0).bottom().values.flat();
  CHECK((g - gb).isZero(0.0));
}

TEST_CASE("pool relevance routes to the recorded winner") {
  Network net;
  net.input_shape = Shape{1, 2, 2};
  net.class_count = 1;
  net.layers.push_back(Layer::maxpool2d(2));
  net.layers.push_back(Layer::flatten());
  net.layers.push_back(Layer::dense(Tensor::constant(Shape{1, 1}, 1.0), false));
  net.validate();
  Vec x(4);
  x << 1, 3, 2, 0;
  const ForwardTrace trace = forward(net, Tensor::from_flat(Shape{1, 2, 2}, x));
  Relevance start{1, Tensor::from_flat(Shape{1, 1, 1}, Tensor::vector({5}).flat())};
  const BackpropResult res = backprop_from(
      net, trace, RuleSpec::of(RuleKind::Grad), start, 0);
  const Vec r0 = res.bottom().values.flat();
  CHECK(r0[0] == 0.0);
  CHECK(r0[1] == 5.0);
  CHECK(r0[2] == 0.0);
  CHECK(r0[3] == 0.0);
}

TEST_CASE("attribute composes the three stages bit-exactly") {
  Tensor x;
  ForwardTrace trace;
  const Network net = random_mlp_with_trace(3, {6, 8, 4}, &x, &trace);
  const int k = argmax_logit(trace);
  for (RuleKind kind : {RuleKind::Grad, RuleKind::GradInput, RuleKind::Gbp,
                        RuleKind::RectGrad, RuleKind::LrpZ, RuleKind::ZPlus}) {
    const RuleSpec rule = RuleSpec::of(kind);
    const Attribution via_op = attribute(net, x, rule, k);
    const BackpropResult res = backprop(net, trace, rule, k);
    const Attribution manual = apply_bottom(rule, res.bottom(), x, trace);
    CHECK(via_op.values.bit_equal(manual.values));
    CHECK(via_op.values.shape() == x.shape());
  }
}

TEST_CASE("grad_input equals lrp_z attribution") {
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    Tensor x;
    ForwardTrace trace;
    const Network net =
        random_mlp_with_trace(seed, {6, 10, 10, 3}, &x, &trace, 1e-3);
    const int k = argmax_logit(trace);
    RuleSpec z = RuleSpec::of(RuleKind::LrpZ);
    const Vec a = attribute(net, x, RuleSpec::of(RuleKind::GradInput), k).values.flat();
    const Vec b = attribute(net, x, z, k).values.flat();
    const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-12);
    CHECK((a - b).cwiseAbs().maxCoeff() / scale <= 1e-8);
  }
}

TEST_CASE("apply_bottom per-rule transformations") {
  const Tensor x = Tensor::vector({2, -3});
  const Relevance r0{0, Tensor::vector({1, 4})};
  const ForwardTrace dummy;
  CHECK(apply_bottom(RuleSpec::of(RuleKind::Gbp), r0, x, dummy)
            .values.bit_equal(r0.values));
  const Tensor gi =
      apply_bottom(RuleSpec::of(RuleKind::GradInput), r0, x, dummy).values;
  CHECK(gi[0] == 2.0);
  CHECK(gi[1] == -12.0);
  const Tensor rect =
      apply_bottom(RuleSpec::of(RuleKind::RectGrad), r0, x, dummy).values;
  CHECK(rect[0] == 2.0);
  CHECK(rect[1] == 0.0);  // negative products die at the bottom relu
  const Tensor gi0 = apply_bottom(RuleSpec::of(RuleKind::GradInput), r0,
                                  Tensor::zeros(Shape{2}), dummy)
                         .values;
  CHECK(gi0.flat().isZero(0.0));
  const Relevance wrong{1, Tensor::vector({1, 4})};
  CHECK_THROWS(apply_bottom(RuleSpec::of(RuleKind::Grad), wrong, x, dummy));
}

TEST_CASE("rectgrad all-negative bottom zeroes the attribution") {
  const Tensor x = Tensor::vector({1, 1});
  const Relevance r0{0, Tensor::vector({-2, -5})};
  const ForwardTrace dummy;
  CHECK(apply_bottom(RuleSpec::of(RuleKind::RectGrad), r0, x, dummy)
            .values.flat()
            .isZero(0.0));
}

TEST_CASE("nfr inequality hand fixture via the backstep kernels") {
  // A_prev = (1,2), W^T = [[1,-1],[2,0]], M = I, r = (1,-1)
  Mat wt(2, 2);
  wt << 1, -1, 2, 0;
  auto ctx = BackstepContext::from_dense(wt, Tensor::vector({1, 2}).flat(),
                                         Vec::Ones(2), Vec::Ones(2), true);
  const Vec r = Tensor::vector({1, -1}).flat();
  const double rhs = ctx.a_prev.dot(backstep_grad(ctx, r));
  const double lhs = ctx.a_prev.dot(backstep_gbp(ctx, r));
  CHECK(rhs == -3.0);
  CHECK(lhs == -1.0);
  CHECK(lhs > rhs);
}

TEST_CASE("nfr_check holds for gbp, zplus and rectgrad tau<=0 on random nets") {
  int layers_checked = 0;
  for (std::uint64_t seed = 40; seed < 52; ++seed) {
    Tensor x;
    ForwardTrace trace;
    const Network net = random_mlp_with_trace(seed, {6, 12, 10, 8, 4}, &x,
                                              &trace, 0.0, /*nonneg_x=*/true);
    const int k = argmax_logit(trace);
    if (trace.logits()[k] <= 0.0) continue;
    for (RuleKind kind : {RuleKind::Gbp, RuleKind::ZPlus, RuleKind::RectGrad}) {
      RuleSpec rule = RuleSpec::of(kind);
      if (kind == RuleKind::RectGrad) rule.rect_tau = 0.0;
      const NfrReport rep = nfr_check(net, trace, rule, k);
      CHECK(rep.layers.size() == 3);
      CHECK(rep.target_logit == trace.logits()[k]);
      for (const NfrLayerRecord& rec : rep.layers) {
        CHECK(rec.holds);
        ++layers_checked;
      }
    }
  }
  CHECK(layers_checked > 50);
  Tensor x;
  ForwardTrace trace;
  const Network net = random_mlp_with_trace(1, {4, 6, 2}, &x, &trace);
  CHECK_THROWS(nfr_check(net, trace, RuleSpec::of(RuleKind::Grad), 0));
}

TEST_CASE("nfr_check with rectgrad q=90 reports rather than asserts") {
  // a large threshold can break the inequality; the report just records it
  int holds = 0, total = 0;
  for (std::uint64_t seed = 60; seed < 70; ++seed) {
    Tensor x;
    ForwardTrace trace;
    const Network net = random_mlp_with_trace(seed, {6, 16, 12, 4}, &x, &trace,
                                              0.0, /*nonneg_x=*/true);
    const int k = argmax_logit(trace);
    RuleSpec rule = RuleSpec::of(RuleKind::RectGrad);
    rule.rect_percentile = 90.0;
    const NfrReport rep = nfr_check(net, trace, rule, k);
    for (const NfrLayerRecord& rec : rep.layers) {
      ++total;
      holds += rec.holds ? 1 : 0;
      CHECK(std::isfinite(rec.lhs));
      CHECK(std::isfinite(rec.rhs));
    }
  }
  CHECK(total == 20);
  MESSAGE("rectgrad q=90 held at ", holds, " of ", total, " relu layers");
}

TEST_CASE("nfr_check flags a no-op filter as equality") {
  // all-positive weights and input: gbp never masks anything
  Network net;
  net.input_shape = Shape{3};
  net.class_count = 1;
  net.layers.push_back(Layer::dense(Tensor::constant(Shape{3, 4}, 0.5), true));
  net.layers.push_back(Layer::dense(Tensor::constant(Shape{4, 1}, 1.0), false));
  net.validate();
  const Tensor x = Tensor::vector({1, 2, 3});
  const ForwardTrace trace = forward(net, x);
  const NfrReport rep = nfr_check(net, trace, RuleSpec::of(RuleKind::Gbp), 0);
  REQUIRE(rep.layers.size() == 1);
  CHECK(rep.layers[0].filter_was_noop);
  CHECK(rep.layers[0].lhs == rep.layers[0].rhs);
  CHECK(rep.layers[0].holds);
}

TEST_CASE("dual filter decomposition is an exact partition") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    const int out = 3 + static_cast<int>(rng.next_below(8));
    const int in = 3 + static_cast<int>(rng.next_below(8));
    Mat wt(out, in);
    for (int i = 0; i < out * in; ++i) wt(i / in, i % in) = rng.next_normal();
    Vec r(out), mask(out), a_out(out);
    for (int i = 0; i < out; ++i) {
      r[i] = rng.next_normal();
      mask[i] = rng.next_unit() < 0.7 ? 1.0 : 0.0;
      a_out[i] = std::abs(rng.next_normal());
    }
    // gbp: the kept and dropped parts partition r entrywise, bit-exactly
    const Vec kept = r.cwiseMax(0.0);
    const Vec dropped = r.cwiseMin(0.0);
    for (int i = 0; i < out; ++i) CHECK(kept[i] + dropped[i] == r[i]);

    auto ctx = BackstepContext::from_dense(wt, Vec::Ones(in), mask, a_out, true);
    const Vec full = backstep_grad(ctx, r);
    const Vec f = backstep_grad(ctx, kept);
    const Vec fminus = backstep_grad(ctx, dropped);
    const double scale = std::max(full.cwiseAbs().maxCoeff(), 1.0);
    CHECK((f + fminus - full).cwiseAbs().maxCoeff() / scale <= 1e-12);

    // rectgrad: complementary threshold masks partition the same way
    const Vec s = a_out.cwiseProduct(r);
    const double tau = nearest_rank_percentile(s, 90.0);
    Vec keep_mask(out), drop_mask(out);
    for (int i = 0; i < out; ++i) {
      keep_mask[i] = s[i] > tau ? 1.0 : 0.0;
      drop_mask[i] = 1.0 - keep_mask[i];
    }
    const Vec fr = backstep_grad(ctx, r.cwiseProduct(keep_mask));
    const Vec frminus = backstep_grad(ctx, r.cwiseProduct(drop_mask));
    CHECK((fr + frminus - full).cwiseAbs().maxCoeff() / scale <= 1e-12);
  }
}

TEST_CASE("dtd runs z+ above and the bounded rule at the input layer") {
  Tensor x;
  ForwardTrace trace;
  const Network net = random_mlp_with_trace(55, {5, 8, 6, 3}, &x, &trace, 1e-3);
  const int k = argmax_logit(trace);
  RuleSpec dtd = RuleSpec::of(RuleKind::Dtd);
  dtd.dtd_lo = Tensor::constant(Shape{5}, -10.0);
  dtd.dtd_hi = Tensor::constant(Shape{5}, 10.0);
  const Attribution att = attribute(net, x, dtd, k);
  CHECK(att.values.shape() == x.shape());
  // relevance above the input layer matches a pure z+ pass
  const BackpropResult full = backprop(net, trace, dtd, k);
  const BackpropResult zp =
      backprop(net, trace, RuleSpec::of(RuleKind::ZPlus), k, 1);
  const Vec a = full.at_layer(1).values.flat();
  const Vec b = zp.at_layer(1).values.flat();
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);

  RuleSpec bad = dtd;
  bad.dtd_lo = Tensor::constant(Shape{5}, 0.5);  // input falls outside
  bad.dtd_hi = Tensor::constant(Shape{5}, 0.6);
  CHECK_THROWS(backprop(net, trace, bad, k));
  RuleSpec flipped = dtd;
  flipped.dtd_lo = Tensor::constant(Shape{5}, 1.0);
  flipped.dtd_hi = Tensor::constant(Shape{5}, -1.0);
  CHECK_THROWS(flipped.validate());
}

TEST_CASE("backprop validates indices") {
  Tensor x;
  ForwardTrace trace;
  const Network net = random_mlp_with_trace(2, {4, 6, 2}, &x, &trace);
  CHECK_THROWS(backprop(net, trace, RuleSpec::of(RuleKind::Grad), 5));
  CHECK_THROWS(backprop(net, trace, RuleSpec::of(RuleKind::Grad), -1));
  CHECK_THROWS(backprop(net, trace, RuleSpec::of(RuleKind::Grad), 0, 7));
}

TEST_CASE("zplus conserves relevance through conv layers") {
  Network net;
  net.input_shape = Shape{2, 4, 4};
  net.class_count = 2;
  Rng rng(401);
  auto positive = [&](const Shape& s) {
    Vec v(s.count());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] = 0.05 + std::abs(rng.next_normal());
    }
    return Tensor::from_flat(s, v);
  };
  net.layers.push_back(Layer::conv2d(positive(Shape{3, 2, 2, 2}), true));
  net.layers.push_back(Layer::flatten());
  net.layers.push_back(Layer::dense(positive(Shape{27, 2}), false));
  net.validate();
  const Tensor x = positive(Shape{2, 4, 4});
  const ForwardTrace trace = forward(net, x);
  const BackpropResult res =
      backprop(net, trace, RuleSpec::of(RuleKind::ZPlus), 0);
  CHECK(res.dropped_columns == 0);  // all-positive kernels cannot drop
  const double seed_sum = trace.logits()[0];
  for (const Relevance& r : res.relevances) {
    CHECK(r.values.flat().sum() == doctest::Approx(seed_sum).epsilon(1e-9));
  }

  // finite-difference spot check of the multi-channel conv gradient
  const Vec grad = backprop(net, trace, RuleSpec::of(RuleKind::Grad), 0)
                       .bottom()
                       .values.flat();
  const double h = 1e-6;
  for (int i : {0, 9, 17, 31}) {
    Vec xp = x.flat(), xm = x.flat();
    xp[i] += h;
    xm[i] -= h;
    const double fp = forward(net, Tensor::from_flat(x.shape(), xp)).logits()[0];
    const double fm = forward(net, Tensor::from_flat(x.shape(), xm)).logits()[0];
    CHECK((fp - fm) / (2 * h) == doctest::Approx(grad[i]).epsilon(1e-5));
  }
}

TEST_CASE("dtd with lo=0 equals zplus on a nonnegative conv net") {
  Network net;
  net.input_shape = Shape{1, 4, 4};
  net.class_count = 2;
  Rng rng(402);
  auto positive = [&](const Shape& s) {
    Vec v(s.count());
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      v[i] = 0.05 + std::abs(rng.next_normal());
    }
    return Tensor::from_flat(s, v);
  };
  net.layers.push_back(Layer::conv2d(positive(Shape{2, 1, 2, 2}), true));
  net.layers.push_back(Layer::flatten());
  net.layers.push_back(Layer::dense(positive(Shape{18, 2}), false));
  net.validate();
  const Tensor x = positive(Shape{1, 4, 4});
  const ForwardTrace trace = forward(net, x);

  RuleSpec dtd = RuleSpec::of(RuleKind::Dtd);
  dtd.dtd_lo = Tensor::zeros(net.input_shape);
  dtd.dtd_hi = Tensor::constant(net.input_shape, 1e6);
  const Vec a = backprop(net, trace, dtd, 0).bottom().values.flat();
  const Vec b = backprop(net, trace, RuleSpec::of(RuleKind::ZPlus), 0)
                    .bottom()
                    .values.flat();
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-9 * b.cwiseAbs().maxCoeff());
}

TEST_CASE("rules traverse conv and pool layers") {
  Network net;
  net.input_shape = Shape{1, 5, 5};
  net.class_count = 2;
  DistSpec g{DistKind::Gaussian, 0.7, 91};
  net.layers.push_back(
      Layer::conv2d(sample_gaussian(Shape{3, 1, 2, 2}, g), true));
  net.layers.push_back(Layer::maxpool2d(2));
  net.layers.push_back(Layer::flatten());
  DistSpec g2{DistKind::Gaussian, 0.4, 92};
  net.layers.push_back(Layer::dense(sample_gaussian(Shape{12, 2}, g2), false));
  net.validate();

  Rng rng(93);
  Vec x(25);
  for (int i = 0; i < 25; ++i) x[i] = std::abs(rng.next_normal());
  const Tensor tx = Tensor::from_flat(Shape{1, 5, 5}, x);
  const ForwardTrace trace = forward(net, tx);
  const int k = argmax_logit(trace);

  // finite differences validate the conv grad path
  const Vec grad =
      backprop(net, trace, RuleSpec::of(RuleKind::Grad), k).bottom().values.flat();
  const double h = 1e-6;
  for (int i = 0; i < 25; i += 7) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fp =
        forward(net, Tensor::from_flat(Shape{1, 5, 5}, xp)).logits()[k];
    const double fm =
        forward(net, Tensor::from_flat(Shape{1, 5, 5}, xm)).logits()[k];
    CHECK((fp - fm) / (2 * h) == doctest::Approx(grad[i]).epsilon(1e-4));
  }

  // the z identity holds through conv + pool as well
  if (trace.logits()[k] != 0.0) {
    RuleSpec z = RuleSpec::of(RuleKind::LrpZ);
    const Vec rz = backprop(net, trace, z, k).bottom().values.flat();
    const Vec gi = grad.cwiseProduct(x);
    const double scale = std::max(gi.cwiseAbs().maxCoeff(), 1e-12);
    CHECK((rz - gi).cwiseAbs().maxCoeff() / scale <= 1e-6);
  }

  // and the nfr check covers the conv relu layer
  const NfrReport rep = nfr_check(net, trace, RuleSpec::of(RuleKind::Gbp), k);
  CHECK(rep.layers.size() == 1);
  CHECK(rep.layers[0].holds);
}
