#pragma once

#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nfr/net.hpp"
#include "nfr/tensor.hpp"

namespace nfr {

enum class RuleKind {
  Grad,
  GradInput,
  Gbp,
  RectGrad,
  LrpZ,
  LrpAlphaBeta,
  ZPlus,
  Dtd
};

std::string rule_kind_name(RuleKind kind);
RuleKind rule_kind_from_name(const std::string& name);

/// Which modified-BP rule with which parameters.
///   rect_percentile: RectGrad keeps entries of s = A_l .* r_l strictly above
///                    the per-layer nearest-rank percentile; q = 0 maps to
///                    tau = -inf, i.e. plain gradient. rect_tau overrides the
///                    percentile with a fixed threshold.
///   alpha/beta:      LRP alpha-beta, constrained to alpha - beta = 1.
///   dtd_lo/dtd_hi:   per-pixel input bounds for the DTD bottom-layer rule.
///   epsilon:         stabilizer applied to z-family column denominators with
///                    magnitude below epsilon (sign-matched).
struct RuleSpec {
  RuleKind kind = RuleKind::Grad;
  double rect_percentile = 90.0;
  std::optional<double> rect_tau;
  double alpha = 1.0;
  double beta = 0.0;
  Tensor dtd_lo;
  Tensor dtd_hi;
  double epsilon = 1e-9;

  void validate() const;
  /// Rules seeded with the unit vector e_k; z-family rules seed with f_k.
  bool gradient_family() const {
    return kind == RuleKind::Grad || kind == RuleKind::GradInput ||
           kind == RuleKind::Gbp || kind == RuleKind::RectGrad;
  }
  static RuleSpec of(RuleKind kind) {
    RuleSpec s;
    s.kind = kind;
    return s;
  }
};

/// Relevance vector r_l attached to activation index l (0 = input).
struct Relevance {
  int layer_index = 0;
  Tensor values;
};

/// Final input-shaped map after the rule's bottom process.
struct Attribution {
  Tensor values;
  RuleSpec rule;
  int target_class = 0;
  std::string seed_kind;  // "unit" or "logit", recorded because it scales r
};

/// One weighted layer viewed as a (W, A_prev) pair, for unit-level backsteps
/// and hand fixtures. `weights_t` is W^T, i.e. rows are output units.
struct BackstepContext {
  Mat weights_t;
  Vec a_prev;
  Vec mask;   // per output unit; all-ones when relu = false
  Vec a_out;  // post-ReLU activation of this layer (RectGrad's s uses it)
  bool relu = true;
  double epsilon = 1e-9;

  // set by the backsteps that define them
  double tau_value = -std::numeric_limits<double>::infinity();
  double gamma = 1.0;  // realized sum-preserving factor of the z+ filter form
  int dropped_columns = 0;

  static BackstepContext from_dense(const Mat& weights_t, const Vec& a_prev,
                                    const Vec& mask, const Vec& a_out,
                                    bool relu);
};

Vec backstep_grad(const BackstepContext& ctx, const Vec& r);
Vec backstep_gbp(const BackstepContext& ctx, const Vec& r);
Vec backstep_rectgrad(BackstepContext& ctx, const Vec& r, double percentile,
                      std::optional<double> fixed_tau = std::nullopt);
Vec backstep_z(BackstepContext& ctx, const Vec& r);
Vec backstep_alphabeta(BackstepContext& ctx, const Vec& r, double alpha,
                       double beta);
Vec backstep_zplus(BackstepContext& ctx, const Vec& r);
Vec backstep_zB(BackstepContext& ctx, const Vec& r, const Vec& lo,
                const Vec& hi);

/// Nearest-rank percentile with the RectGrad conventions: q <= 0 -> -inf.
double nearest_rank_percentile(const Vec& values, double q);

/// Full backward pass: relevances[l] holds r_l for stop_layer <= l <= L.
struct BackpropResult {
  std::vector<Relevance> relevances;  // ordered top (L) down to stop_layer
  std::string seed_kind;
  int dropped_columns = 0;
  std::map<int, double> rect_taus;  // realized tau per layer index

  const Relevance& at_layer(int l) const;
  const Relevance& bottom() const { return relevances.back(); }
};

/// Seeds r_L (e_k for gradient-family rules, f_k at index k for z-family),
/// then applies the rule's backstep layer by layer down to stop_layer. DTD
/// uses z+ backsteps everywhere except the input-adjacent layer, which uses
/// the bounded z^B rule.
BackpropResult backprop(const Network& net, const ForwardTrace& trace,
                        const RuleSpec& rule, int k, int stop_layer = 0);

/// Piecewise pass: the topmost `depth` weighted layers use the rule's
/// backstep, every weighted layer below uses the plain gradient one. depth 0
/// is the pure gradient pipeline (seeded e_k even for z-family rules).
BackpropResult backprop_cascade(const Network& net, const ForwardTrace& trace,
                                const RuleSpec& rule, int k, int depth);

/// Continues a backward pass from an explicit relevance at start.layer_index
/// down to stop_layer, applying the rule's backstep at every step.
BackpropResult backprop_from(const Network& net, const ForwardTrace& trace,
                             const RuleSpec& rule, Relevance start,
                             int stop_layer = 0);

/// The rule's bottom process. Ratio-form z rules already weight by the input
/// along the way, so their bottom is the identity on r_0; grad_input
/// multiplies by x, rectgrad applies relu(r0 .* x).
Attribution apply_bottom(const RuleSpec& rule, const Relevance& r0,
                         const Tensor& x, const ForwardTrace& trace);

/// forward + backprop + apply_bottom.
Attribution attribute(const Network& net, const Tensor& x,
                      const RuleSpec& rule, int k);

/// Per-ReLU-layer record of the negative-filtering inequality
///   lhs = <A_{l-1}, F(W_l M_l) r_l>  vs  rhs = <A_{l-1}, W_l M_l r_l>.
struct NfrLayerRecord {
  int layer_index = 0;  // activation index l of the backstep input
  double lhs = 0.0;
  double rhs = 0.0;
  bool filter_was_noop = false;
  bool holds = false;
};

struct NfrReport {
  std::vector<NfrLayerRecord> layers;
  double target_logit = 0.0;  // the inequality direction assumes f_k > 0 for z+
  bool all_hold() const;
};

/// Evaluates the inequality at every ReLU backstep with the actual r_l from
/// the rule's own run. Supported rules: gbp, rectgrad, zplus (checked with
/// the un-normalized filter W+ M r per its filter form).
NfrReport nfr_check(const Network& net, const ForwardTrace& trace,
                    const RuleSpec& rule, int k);

}  // namespace nfr
