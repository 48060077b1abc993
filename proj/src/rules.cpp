#include "nfr/rules.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace nfr {

std::string rule_kind_name(RuleKind kind) {
  switch (kind) {
    case RuleKind::Grad: return "grad";
    case RuleKind::GradInput: return "grad_input";
    case RuleKind::Gbp: return "gbp";
    case RuleKind::RectGrad: return "rectgrad";
    case RuleKind::LrpZ: return "lrp_z";
    case RuleKind::LrpAlphaBeta: return "lrp_alphabeta";
    case RuleKind::ZPlus: return "zplus";
    case RuleKind::Dtd: return "dtd";
  }
  throw std::logic_error("rule_kind_name: bad enum");
}

RuleKind rule_kind_from_name(const std::string& name) {
  if (name == "grad") return RuleKind::Grad;
  if (name == "grad_input") return RuleKind::GradInput;
  if (name == "gbp") return RuleKind::Gbp;
  if (name == "rectgrad") return RuleKind::RectGrad;
  if (name == "lrp_z") return RuleKind::LrpZ;
  if (name == "lrp_alphabeta") return RuleKind::LrpAlphaBeta;
  if (name == "zplus") return RuleKind::ZPlus;
  if (name == "dtd") return RuleKind::Dtd;
  throw std::invalid_argument("unknown rule kind '" + name + "'");
}

void RuleSpec::validate() const {
  if (!(epsilon > 0.0)) {
    throw std::invalid_argument("rule: epsilon must be > 0");
  }
  if (kind == RuleKind::RectGrad) {
    if (rect_percentile < 0.0 || rect_percentile > 100.0) {
      throw std::invalid_argument("rule: rect_percentile must be in [0,100]");
    }
  }
  if (kind == RuleKind::LrpAlphaBeta) {
    if (std::abs((alpha - beta) - 1.0) > 1e-12) {
      throw std::invalid_argument("rule: alpha - beta must equal 1");
    }
  }
  if (kind == RuleKind::Dtd) {
    if (dtd_lo.empty() || dtd_hi.empty() ||
        !(dtd_lo.shape() == dtd_hi.shape())) {
      throw std::invalid_argument("rule: dtd needs matching lo/hi bounds");
    }
    for (Eigen::Index i = 0; i < dtd_lo.size(); ++i) {
      if (dtd_lo[i] > dtd_hi[i]) {
        throw std::invalid_argument("rule: dtd bounds need lo <= hi");
      }
    }
  }
}

double nearest_rank_percentile(const Vec& values, double q) {
  if (q <= 0.0) return -std::numeric_limits<double>::infinity();
  std::vector<double> sorted(values.data(), values.data() + values.size());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<std::int64_t>(sorted.size());
  std::int64_t rank = static_cast<std::int64_t>(std::ceil(q / 100.0 * n));
  rank = std::clamp<std::int64_t>(rank, 1, n);
  return sorted[static_cast<std::size_t>(rank - 1)];
}

namespace {

double stabilize_signed(double d, double eps) {
  if (std::abs(d) >= eps) return d;
  return d < 0.0 ? -eps : eps;
}

enum class ZMode { Signed, Plus, AlphaBeta };

/// Ratio redistribution shared by the z-family rules. wt is W^T (out x in);
/// columns with zero relevance contribute nothing and are skipped, which also
/// avoids 0/0 at unused logits.
template <typename M, typename VA, typename VR>
Vec z_redistribute(const M& wt, const VA& a_prev, const VR& r, ZMode mode,
                   double alpha, double beta, double eps, int* dropped) {
  Vec out = Vec::Zero(a_prev.size());
  Vec z(a_prev.size());
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    if (r[j] == 0.0) continue;
    z = wt.row(j).transpose().cwiseProduct(a_prev);
    switch (mode) {
      case ZMode::Signed: {
        const double denom = stabilize_signed(z.sum(), eps);
        out += z * (r[j] / denom);
        break;
      }
      case ZMode::Plus: {
        Vec zp = z.cwiseMax(0.0);
        const double s = zp.sum();
        if (s == 0.0) {
          if (dropped) ++*dropped;  // conservation warning: column dropped
          break;
        }
        out += zp * (r[j] / std::max(s, eps));
        break;
      }
      case ZMode::AlphaBeta: {
        Vec zp = z.cwiseMax(0.0);
        Vec zn = z.cwiseMin(0.0);
        const double sp = zp.sum();
        const double sn = zn.sum();
        Vec term = Vec::Zero(z.size());
        if (sp > 0.0) term += zp * (alpha / std::max(sp, eps));
        if (sn < 0.0) term += zn * (-beta / std::min(sn, -eps));
        out += term * r[j];
        break;
      }
    }
  }
  return out;
}

/// Bounded first-layer rule: term_i = z_ij - lo_i w+_ij - hi_i w-_ij.
template <typename M, typename VA, typename VR>
Vec zb_redistribute(const M& wt, const VA& a_prev, const VA& lo, const VA& hi,
                    const VR& r, double eps) {
  Vec out = Vec::Zero(a_prev.size());
  Vec term(a_prev.size());
  for (Eigen::Index j = 0; j < r.size(); ++j) {
    if (r[j] == 0.0) continue;
    auto w = wt.row(j).transpose().array();
    term = (w * a_prev.array() - lo.array() * w.max(0.0) -
            hi.array() * w.min(0.0))
               .matrix();
    const double denom = stabilize_signed(term.sum(), eps);
    out += term * (r[j] / denom);
  }
  return out;
}

}  // namespace

BackstepContext BackstepContext::from_dense(const Mat& weights_t,
                                            const Vec& a_prev, const Vec& mask,
                                            const Vec& a_out, bool relu) {
  BackstepContext ctx;
  ctx.weights_t = weights_t;
  ctx.a_prev = a_prev;
  ctx.mask = mask;
  ctx.a_out = a_out;
  ctx.relu = relu;
  if (weights_t.cols() != a_prev.size() || weights_t.rows() != mask.size() ||
      mask.size() != a_out.size()) {
    throw std::invalid_argument("backstep: inconsistent context shapes");
  }
  return ctx;
}

Vec backstep_grad(const BackstepContext& ctx, const Vec& r) {
  if (r.size() != ctx.weights_t.rows()) {
    throw std::invalid_argument("backstep: relevance size mismatch");
  }
  return ctx.weights_t.transpose() * ctx.mask.cwiseProduct(r);
}

Vec backstep_gbp(const BackstepContext& ctx, const Vec& r) {
  if (r.size() != ctx.weights_t.rows()) {
    throw std::invalid_argument("backstep: relevance size mismatch");
  }
  const Vec rr = ctx.relu ? r.cwiseMax(0.0) : r;
  return ctx.weights_t.transpose() * ctx.mask.cwiseProduct(rr);
}

Vec backstep_rectgrad(BackstepContext& ctx, const Vec& r, double percentile,
                      std::optional<double> fixed_tau) {
  if (r.size() != ctx.weights_t.rows()) {
    throw std::invalid_argument("backstep: relevance size mismatch");
  }
  Vec rr = r;
  if (ctx.relu) {
    const Vec s = ctx.a_out.cwiseProduct(r);
    const double tau =
        fixed_tau ? *fixed_tau : nearest_rank_percentile(s, percentile);
    ctx.tau_value = tau;
    rr = r.cwiseProduct((s.array() > tau).cast<double>().matrix());
  } else {
    ctx.tau_value = -std::numeric_limits<double>::infinity();
  }
  return ctx.weights_t.transpose() * ctx.mask.cwiseProduct(rr);
}

Vec backstep_z(BackstepContext& ctx, const Vec& r) {
  if (r.size() != ctx.weights_t.rows()) {
    throw std::invalid_argument("backstep: relevance size mismatch");
  }
  return z_redistribute(ctx.weights_t, ctx.a_prev, r, ZMode::Signed, 0, 0,
                        ctx.epsilon, nullptr);
}

Vec backstep_alphabeta(BackstepContext& ctx, const Vec& r, double alpha,
                       double beta) {
  if (r.size() != ctx.weights_t.rows()) {
    throw std::invalid_argument("backstep: relevance size mismatch");
  }
  return z_redistribute(ctx.weights_t, ctx.a_prev, r, ZMode::AlphaBeta, alpha,
                        beta, ctx.epsilon, nullptr);
}

Vec backstep_zplus(BackstepContext& ctx, const Vec& r) {
  if (r.size() != ctx.weights_t.rows()) {
    throw std::invalid_argument("backstep: relevance size mismatch");
  }
  int dropped = 0;
  Vec out = z_redistribute(ctx.weights_t, ctx.a_prev, r, ZMode::Plus, 0, 0,
                           ctx.epsilon, &dropped);
  ctx.dropped_columns += dropped;
  // gamma is the factor the filter form W+ M r would need to conserve sum(r)
  const double filter_sum =
      (ctx.weights_t.cwiseMax(0.0).transpose() * ctx.mask.cwiseProduct(r)).sum();
  ctx.gamma = filter_sum != 0.0 ? out.sum() / filter_sum : 1.0;
  return out;
}

Vec backstep_zB(BackstepContext& ctx, const Vec& r, const Vec& lo,
                const Vec& hi) {
  if (r.size() != ctx.weights_t.rows()) {
    throw std::invalid_argument("backstep: relevance size mismatch");
  }
  if (lo.size() != ctx.a_prev.size() || hi.size() != ctx.a_prev.size()) {
    throw std::invalid_argument("backstep: bounds shape mismatch");
  }
  return zb_redistribute(ctx.weights_t, ctx.a_prev, lo, hi, r, ctx.epsilon);
}

namespace {

using KernelMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                 Eigen::Dynamic,
                                                 Eigen::RowMajor>>;

struct ConvGeom {
  int ic, h, w, oc, kh, kw, oh, ow, patch_len, n_pos;
};

ConvGeom conv_geom(const Layer& l, const Shape& in_shape) {
  const Shape& k = l.weights.shape();
  ConvGeom g;
  g.oc = k.dims[0];
  g.ic = k.dims[1];
  g.kh = k.dims[2];
  g.kw = k.dims[3];
  g.h = in_shape.dims[1];
  g.w = in_shape.dims[2];
  g.oh = g.h - g.kh + 1;
  g.ow = g.w - g.kw + 1;
  g.patch_len = g.ic * g.kh * g.kw;
  g.n_pos = g.oh * g.ow;
  return g;
}

void gather_patch_indices(const ConvGeom& g, int pos, std::vector<int>& idx) {
  const int y = pos / g.ow, x = pos % g.ow;
  idx.resize(static_cast<std::size_t>(g.patch_len));
  int t = 0;
  for (int c = 0; c < g.ic; ++c) {
    for (int dy = 0; dy < g.kh; ++dy) {
      for (int dx = 0; dx < g.kw; ++dx) {
        idx[static_cast<std::size_t>(t++)] = (c * g.h + y + dy) * g.w + x + dx;
      }
    }
  }
}

/// Gradient-family linear transpose of one weighted layer; r_eff already has
/// the rule's relevance filter and the ReLU mask applied.
Vec linear_transpose(const Network& net, int layer_idx, const Vec& r_eff,
                     bool positive_weights) {
  const Layer& l = net.layers[static_cast<std::size_t>(layer_idx)];
  const Shape& in_shape = net.activation_shape(layer_idx);
  if (l.kind == LayerKind::Dense) {
    auto wt = l.weights.transposed_view();
    if (positive_weights) return wt.transpose().cwiseMax(0.0) * r_eff;
    return wt.transpose() * r_eff;
  }
  const ConvGeom g = conv_geom(l, in_shape);
  KernelMap kmat(l.weights.flat().data(), g.oc, g.patch_len);
  Vec out = Vec::Zero(in_shape.count());
  // (patch_len, n_pos) relevance per input patch slot, then col2im scatter
  Mat rmat(g.n_pos, g.oc);
  for (int c = 0; c < g.oc; ++c) {
    rmat.col(c) = r_eff.segment(static_cast<Eigen::Index>(c) * g.n_pos, g.n_pos);
  }
  Mat prel = positive_weights ? (rmat * kmat.cwiseMax(0.0)).eval()
                              : (rmat * kmat).eval();  // (n_pos, patch_len)
  std::vector<int> idx;
  for (int p = 0; p < g.n_pos; ++p) {
    gather_patch_indices(g, p, idx);
    for (int t = 0; t < g.patch_len; ++t) {
      out[idx[static_cast<std::size_t>(t)]] += prel(p, t);
    }
  }
  return out;
}

Vec masked(const ForwardTrace& trace, int layer_idx, const Vec& r) {
  auto it = trace.relu_masks.find(layer_idx);
  if (it == trace.relu_masks.end()) return r;
  return it->second.flat().cwiseProduct(r);
}

/// One full backstep of `rule` through layer layer_idx, relevance r on its
/// output, result on its input.
Vec engine_backstep(const Network& net, const ForwardTrace& trace,
                    int layer_idx, const RuleSpec& rule, const Vec& r,
                    BackpropResult& result) {
  const Layer& l = net.layers[static_cast<std::size_t>(layer_idx)];
  const Shape& in_shape = net.activation_shape(layer_idx);
  const bool relu = l.relu_after;

  switch (l.kind) {
    case LayerKind::Flatten:
      return r;
    case LayerKind::MaxPool2d: {
      const auto& winners = trace.pool_winners.at(layer_idx);
      Vec out = Vec::Zero(in_shape.count());
      for (std::size_t o = 0; o < winners.size(); ++o) {
        out[winners[o]] += r[static_cast<Eigen::Index>(o)];
      }
      return out;
    }
    case LayerKind::Dense:
    case LayerKind::Conv2d:
      break;
  }

  const Vec& a_prev = trace.activations[static_cast<std::size_t>(layer_idx)].flat();
  const Vec& a_out =
      trace.activations[static_cast<std::size_t>(layer_idx) + 1].flat();

  // gradient family: filter the relevance at the ReLU, then route linearly
  if (rule.gradient_family()) {
    Vec rr = r;
    if (relu) {
      switch (rule.kind) {
        case RuleKind::Gbp:
          rr = r.cwiseMax(0.0);
          break;
        case RuleKind::RectGrad: {
          const Vec s = a_out.cwiseProduct(r);
          const double tau =
              rule.rect_tau ? *rule.rect_tau
                            : nearest_rank_percentile(s, rule.rect_percentile);
          result.rect_taus[layer_idx + 1] = tau;
          rr = r.cwiseProduct((s.array() > tau).cast<double>().matrix());
          break;
        }
        default:
          break;
      }
    }
    return linear_transpose(net, layer_idx, masked(trace, layer_idx, rr),
                            false);
  }

  // z family
  ZMode mode = ZMode::Signed;
  double alpha = 1.0, beta = 0.0;
  bool use_zb = false;
  switch (rule.kind) {
    case RuleKind::LrpZ: mode = ZMode::Signed; break;
    case RuleKind::ZPlus: mode = ZMode::Plus; break;
    case RuleKind::LrpAlphaBeta:
      mode = ZMode::AlphaBeta;
      alpha = rule.alpha;
      beta = rule.beta;
      break;
    case RuleKind::Dtd:
      if (layer_idx == 0) {
        use_zb = true;
      } else {
        mode = ZMode::Plus;
      }
      break;
    default:
      throw std::logic_error("engine_backstep: unexpected rule");
  }

  int dropped = 0;
  if (l.kind == LayerKind::Dense) {
    auto wt = l.weights.transposed_view();
    Vec out;
    if (use_zb) {
      out = zb_redistribute(wt, a_prev, rule.dtd_lo.flat(), rule.dtd_hi.flat(),
                            r, rule.epsilon);
    } else {
      out = z_redistribute(wt, a_prev, r, mode, alpha, beta, rule.epsilon,
                           &dropped);
    }
    result.dropped_columns += dropped;
    return out;
  }

  // conv: every output position is one dense (patch -> channels) block
  const ConvGeom g = conv_geom(l, in_shape);
  KernelMap kmat(l.weights.flat().data(), g.oc, g.patch_len);
  Vec out = Vec::Zero(in_shape.count());
  std::vector<int> idx;
  Vec ap(g.patch_len), lo(g.patch_len), hi(g.patch_len), rcol(g.oc);
  for (int p = 0; p < g.n_pos; ++p) {
    for (int c = 0; c < g.oc; ++c) {
      rcol[c] = r[static_cast<Eigen::Index>(c) * g.n_pos + p];
    }
    if (rcol.isZero(0.0)) continue;
    gather_patch_indices(g, p, idx);
    for (int t = 0; t < g.patch_len; ++t) ap[t] = a_prev[idx[static_cast<std::size_t>(t)]];
    Vec contrib;
    if (use_zb) {
      for (int t = 0; t < g.patch_len; ++t) {
        lo[t] = rule.dtd_lo.flat()[idx[static_cast<std::size_t>(t)]];
        hi[t] = rule.dtd_hi.flat()[idx[static_cast<std::size_t>(t)]];
      }
      contrib = zb_redistribute(kmat, ap, lo, hi, rcol, rule.epsilon);
    } else {
      contrib = z_redistribute(kmat, ap, rcol, mode, alpha, beta, rule.epsilon,
                               &dropped);
    }
    for (int t = 0; t < g.patch_len; ++t) {
      out[idx[static_cast<std::size_t>(t)]] += contrib[t];
    }
  }
  result.dropped_columns += dropped;
  return out;
}

void check_dtd_bounds(const Network& net, const ForwardTrace& trace,
                      const RuleSpec& rule) {
  if (rule.kind != RuleKind::Dtd) return;
  if (!(rule.dtd_lo.shape() == net.input_shape)) {
    throw std::invalid_argument("backprop: dtd bounds shape mismatch");
  }
  for (Eigen::Index i = 0; i < trace.input.size(); ++i) {
    if (trace.input[i] < rule.dtd_lo[i] || trace.input[i] > rule.dtd_hi[i]) {
      throw std::invalid_argument("backprop: input outside dtd bounds");
    }
  }
}

BackpropResult run_backprop(const Network& net, const ForwardTrace& trace,
                            const RuleSpec& rule, int k, int stop_layer,
                            int rule_depth) {
  rule.validate();
  const int L = net.layer_count();
  if (k < 0 || k >= net.class_count) {
    throw std::invalid_argument("backprop: class index out of range");
  }
  if (stop_layer < 0 || stop_layer > L) {
    throw std::invalid_argument("backprop: stop layer out of range");
  }
  check_dtd_bounds(net, trace, rule);

  BackpropResult result;
  const bool rule_on_top = rule_depth >= 1;
  const bool z_seed = !rule.gradient_family() && rule_on_top;
  result.seed_kind = z_seed ? "logit" : "unit";

  Vec r = Vec::Zero(net.class_count);
  r[k] = z_seed ? trace.logits().flat()[k] : 1.0;
  result.relevances.push_back(
      {L, Tensor::from_flat(net.activation_shape(L), r)});

  int weighted_seen = 0;
  static const RuleSpec kGrad = RuleSpec::of(RuleKind::Grad);
  for (int layer_idx = L - 1; layer_idx >= stop_layer; --layer_idx) {
    const Layer& l = net.layers[static_cast<std::size_t>(layer_idx)];
    const RuleSpec* step_rule = &rule;
    if (l.has_weights()) {
      ++weighted_seen;
      if (weighted_seen > rule_depth) step_rule = &kGrad;
    }
    r = engine_backstep(net, trace, layer_idx, *step_rule, r, result);
    result.relevances.push_back(
        {layer_idx, Tensor::from_flat(net.activation_shape(layer_idx), r)});
  }
  return result;
}

}  // namespace

const Relevance& BackpropResult::at_layer(int l) const {
  for (const Relevance& r : relevances) {
    if (r.layer_index == l) return r;
  }
  throw std::out_of_range("backprop result: no relevance at layer " +
                          std::to_string(l));
}

BackpropResult backprop(const Network& net, const ForwardTrace& trace,
                        const RuleSpec& rule, int k, int stop_layer) {
  return run_backprop(net, trace, rule, k, stop_layer, net.layer_count());
}

BackpropResult backprop_cascade(const Network& net, const ForwardTrace& trace,
                                const RuleSpec& rule, int k, int depth) {
  int weighted_total = 0;
  for (const Layer& l : net.layers) weighted_total += l.has_weights() ? 1 : 0;
  if (depth < 0 || depth > weighted_total) {
    throw std::invalid_argument("cascade: depth " + std::to_string(depth) +
                                " out of range [0," +
                                std::to_string(weighted_total) + "]");
  }
  return run_backprop(net, trace, rule, k, 0, depth);
}

BackpropResult backprop_from(const Network& net, const ForwardTrace& trace,
                             const RuleSpec& rule, Relevance start,
                             int stop_layer) {
  rule.validate();
  const int L = net.layer_count();
  if (start.layer_index < 0 || start.layer_index > L) {
    throw std::invalid_argument("backprop_from: start layer out of range");
  }
  if (stop_layer < 0 || stop_layer > start.layer_index) {
    throw std::invalid_argument("backprop_from: stop layer out of range");
  }
  if (!(start.values.shape() == net.activation_shape(start.layer_index))) {
    throw std::invalid_argument("backprop_from: relevance shape mismatch");
  }
  check_dtd_bounds(net, trace, rule);
  BackpropResult result;
  result.seed_kind = "explicit";
  Vec r = start.values.flat();
  result.relevances.push_back(std::move(start));
  for (int layer_idx = result.relevances[0].layer_index - 1;
       layer_idx >= stop_layer; --layer_idx) {
    r = engine_backstep(net, trace, layer_idx, rule, r, result);
    result.relevances.push_back(
        {layer_idx, Tensor::from_flat(net.activation_shape(layer_idx), r)});
  }
  return result;
}

Attribution apply_bottom(const RuleSpec& rule, const Relevance& r0,
                         const Tensor& x, const ForwardTrace& trace) {
  if (r0.layer_index != 0) {
    throw std::invalid_argument("apply_bottom: relevance is at layer " +
                                std::to_string(r0.layer_index) +
                                ", expected the input layer");
  }
  if (!(r0.values.shape() == x.shape())) {
    throw std::invalid_argument("apply_bottom: relevance/input shape mismatch");
  }
  Attribution att;
  att.rule = rule;
  switch (rule.kind) {
    case RuleKind::Grad:
    case RuleKind::Gbp:
    case RuleKind::LrpZ:
    case RuleKind::LrpAlphaBeta:
    case RuleKind::ZPlus:
    case RuleKind::Dtd:
      att.values = r0.values;
      break;
    case RuleKind::GradInput:
      att.values = Tensor::from_flat(
          x.shape(), r0.values.flat().cwiseProduct(x.flat()));
      break;
    case RuleKind::RectGrad:
      att.values = Tensor::from_flat(
          x.shape(), r0.values.flat().cwiseProduct(x.flat()).cwiseMax(0.0));
      break;
  }
  return att;
}

Attribution attribute(const Network& net, const Tensor& x,
                      const RuleSpec& rule, int k) {
  const ForwardTrace trace = forward(net, x);
  const BackpropResult res = backprop(net, trace, rule, k);
  Attribution att = apply_bottom(rule, res.bottom(), x, trace);
  att.target_class = k;
  att.seed_kind = res.seed_kind;
  return att;
}

bool NfrReport::all_hold() const {
  for (const NfrLayerRecord& rec : layers) {
    if (!rec.holds) return false;
  }
  return true;
}

NfrReport nfr_check(const Network& net, const ForwardTrace& trace,
                    const RuleSpec& rule, int k) {
  if (rule.kind != RuleKind::Gbp && rule.kind != RuleKind::RectGrad &&
      rule.kind != RuleKind::ZPlus) {
    throw std::invalid_argument("nfr_check: rule " + rule_kind_name(rule.kind) +
                                " is not a filtering rule here");
  }
  const BackpropResult res = backprop(net, trace, rule, k);
  NfrReport report;
  report.target_logit = trace.logits().flat()[k];

  for (int layer_idx = 0; layer_idx < net.layer_count(); ++layer_idx) {
    const Layer& l = net.layers[static_cast<std::size_t>(layer_idx)];
    if (!l.relu_after) continue;
    const int out_act = layer_idx + 1;
    const Vec& r = res.at_layer(out_act).values.flat();
    const Vec& a_prev =
        trace.activations[static_cast<std::size_t>(layer_idx)].flat();
    const Vec& a_out = trace.activations[static_cast<std::size_t>(out_act)].flat();

    const Vec unfiltered =
        linear_transpose(net, layer_idx, masked(trace, layer_idx, r), false);
    Vec filtered;
    switch (rule.kind) {
      case RuleKind::Gbp:
        filtered = linear_transpose(
            net, layer_idx, masked(trace, layer_idx, r.cwiseMax(0.0)), false);
        break;
      case RuleKind::RectGrad: {
        const Vec s = a_out.cwiseProduct(r);
        const double tau =
            rule.rect_tau ? *rule.rect_tau
                          : nearest_rank_percentile(s, rule.rect_percentile);
        const Vec rr = r.cwiseProduct((s.array() > tau).cast<double>().matrix());
        filtered = linear_transpose(net, layer_idx,
                                    masked(trace, layer_idx, rr), false);
        break;
      }
      case RuleKind::ZPlus:
        // un-normalized filter form W+ M r
        filtered = linear_transpose(net, layer_idx,
                                    masked(trace, layer_idx, r), true);
        break;
      default:
        break;
    }

    NfrLayerRecord rec;
    rec.layer_index = out_act;
    rec.lhs = a_prev.dot(filtered);
    rec.rhs = a_prev.dot(unfiltered);
    rec.filter_was_noop =
        filtered.size() == unfiltered.size() &&
        std::memcmp(filtered.data(), unfiltered.data(),
                    sizeof(double) * static_cast<std::size_t>(filtered.size())) == 0;
    rec.holds = rec.lhs > rec.rhs || std::abs(rec.lhs - rec.rhs) <= 1e-9;
    report.layers.push_back(rec);
  }
  return report;
}

}  // namespace nfr
