#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nfr/net.hpp"
#include "nfr/rules.hpp"
#include "nfr/sampling.hpp"
#include "nfr/tensor.hpp"

namespace nfr {

struct AlignmentReport {
  double value = 0.0;  // cosine of the flattened tensors
  double r_norm = 0.0;
  double x_norm = 0.0;
};

/// Cosine between an attribution and the input. Zero-norm inputs are an
/// undefined-alignment error.
AlignmentReport alignment(const Tensor& r, const Tensor& x);

/// Which class an experiment attributes: the argmax logit or a fixed index.
struct TargetClass {
  bool argmax = true;
  int fixed = 0;
  int resolve(const ForwardTrace& trace) const;
  static TargetClass argmax_logit() { return {}; }
  static TargetClass of(int k) { return {false, k}; }
};

/// Top `depth` weighted layers backstep with the target rule, the rest with
/// the plain gradient; the target rule's bottom process is applied.
Attribution cascade_substitute(const Network& net, const ForwardTrace& trace,
                               const RuleSpec& rule, int depth, int k);

/// Sets r_l := A_l at activation index layer_l, backpropagates with
/// rule_below to the input, applies rule_below's bottom process.
Attribution activation_substitute(const Network& net, const ForwardTrace& trace,
                                  int layer_l, const RuleSpec& rule_below,
                                  int k);

/// Either an NFR rule or the direct-activation substitution curve.
struct CascadeTarget {
  bool activation = false;
  RuleSpec rule;

  std::string label() const {
    return activation ? "activation" : rule_kind_name(rule.kind);
  }
  static CascadeTarget of_rule(const RuleSpec& r) { return {false, r}; }
  static CascadeTarget of_activation() { return {true, {}}; }
};

struct CascadePoint {
  int depth = 0;
  double mean = 0.0;
  double stddev = 0.0;
  int trials = 0;
};

struct CascadeCurveResult {
  std::string rule_label;
  std::vector<CascadePoint> points;
};

/// Mean/std of alignment(substituted attribution, x) over the samples, per
/// substitution depth. include_bottom=false (the default) measures the raw
/// r_0 instead of the post-bottom attribution.
CascadeCurveResult cascade_curve(const Network& net,
                                 const std::vector<Tensor>& samples,
                                 const CascadeTarget& target,
                                 const TargetClass& k_mode,
                                 const std::vector<int>& depths,
                                 bool include_bottom = false);

struct LayerGeometry {
  int layer_index = 0;  // index into net.layers
  double mean_abs_cos = 0.0;
  double norm_mean = 0.0;
  double norm_std = 0.0;
};

/// Pairwise |cos| between neuron weight vectors and the L2-norm statistics,
/// per weighted layer. Layers with more than max_pairs pairs are subsampled
/// with the given seed.
std::vector<LayerGeometry> orthogonality_stats(const Network& net,
                                               int max_pairs = 10000,
                                               std::uint64_t seed = 0);

struct TrialSummary {
  double mean = 0.0;
  double stddev = 0.0;
  int trials = 0;
};

/// Fresh one-hidden-layer nets per trial (dims d -> n_hidden -> 1), inputs
/// drawn entrywise |N(0,1)|; returns the alignment of the raw backpropagated
/// r_0 (no bottom process) against x. rule_label is one of gbp / zplus /
/// rectgrad / activation.
TrialSummary theorem1_experiment(int d, int n_hidden, const DistSpec& dist,
                                 const std::string& rule_label, int trials,
                                 std::uint64_t master_seed);

struct Theorem2Result {
  double holds_fraction = 0.0;
  double equality_gap = 0.0;  // |alpha_a - alpha_b| on the all-equal fixture
  int trials = 0;
};

/// Per trial: orthogonal equal-norm hidden frame, random input, r_a = c * A
/// versus i.i.d. r_b, both pushed to the input through the W M sigma(r)
/// backstep; counts how often alignment(R_a, x) >= alignment(R_b, x).
Theorem2Result theorem2_experiment(int d, int n, int trials,
                                   std::uint64_t master_seed);

enum class PerturbMode { Randomize, Remove };

struct PerturbSpec {
  PerturbMode mode = PerturbMode::Randomize;
  DistSpec dist;               // randomize
  double keep_fraction = 1.0;  // remove
};

struct SanityRow {
  int sample = 0;
  double before = 0.0;
  double after = 0.0;
  double delta = 0.0;  // before - after
};

/// alignment(attribution, x) before and after perturbing the listed layers.
/// The target class is resolved on the unperturbed net. A perturbed run whose
/// attribution collapses to all zeros records alignment 0.
std::vector<SanityRow> sanity_experiment(const Network& net,
                                         const std::vector<Tensor>& samples,
                                         const RuleSpec& rule,
                                         const std::vector<int>& layer_indices,
                                         const PerturbSpec& perturb,
                                         const TargetClass& k_mode);

/// Two-class 8x8-style blob images for desk-scale trained stand-ins: class 0
/// puts a Gaussian bump in the upper-left quadrant, class 1 in the lower
/// right, plus per-pixel |N(0,1)| noise. Inputs are flat side*side vectors.
LabeledDataset synthetic_blob_dataset(int count, int side, double noise,
                                      std::uint64_t seed);

enum class SplitWhich { Max, Min };

/// Backprops the rule to layer_l, keeps relevance only at the top-fraction
/// (Max) or bottom-fraction (Min) of the layer's nonzero activations, then
/// continues to the input and applies the bottom process.
Attribution activation_split_attrib(const Network& net,
                                    const ForwardTrace& trace, int layer_l,
                                    double fraction, SplitWhich which,
                                    const RuleSpec& rule, int k);

}  // namespace nfr
