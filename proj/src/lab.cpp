#include "nfr/lab.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "nfr/parallel.hpp"
#include "nfr/rng.hpp"

namespace nfr {

namespace {

TrialSummary summarize(const std::vector<double>& values) {
  TrialSummary s;
  s.trials = static_cast<int>(values.size());
  if (values.empty()) return s;
  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  s.mean = mean;
  s.stddev = std::sqrt(var / values.size());
  return s;
}

Vec abs_gaussian(int n, Rng& rng) {
  Vec x(n);
  for (int i = 0; i < n; ++i) x[i] = std::abs(rng.next_normal());
  return x;
}

double alignment_or_zero(const Tensor& r, const Tensor& x) {
  if (norm2(r) == 0.0) return 0.0;
  return alignment(r, x).value;
}

}  // namespace

AlignmentReport alignment(const Tensor& r, const Tensor& x) {
  if (r.size() != x.size()) {
    throw std::invalid_argument("alignment: element counts differ");
  }
  AlignmentReport rep;
  rep.r_norm = norm2(r);
  rep.x_norm = norm2(x);
  if (rep.r_norm == 0.0 || rep.x_norm == 0.0) {
    throw std::invalid_argument("alignment: undefined for zero-norm input");
  }
  rep.value = dot(r, x) / (rep.r_norm * rep.x_norm);
  return rep;
}

int TargetClass::resolve(const ForwardTrace& trace) const {
  if (!argmax) return fixed;
  Eigen::Index best = 0;
  trace.logits().flat().maxCoeff(&best);
  return static_cast<int>(best);
}

Attribution cascade_substitute(const Network& net, const ForwardTrace& trace,
                               const RuleSpec& rule, int depth, int k) {
  const BackpropResult res = backprop_cascade(net, trace, rule, k, depth);
  Attribution att = apply_bottom(rule, res.bottom(), trace.input, trace);
  att.target_class = k;
  att.seed_kind = res.seed_kind;
  return att;
}

Attribution activation_substitute(const Network& net, const ForwardTrace& trace,
                                  int layer_l, const RuleSpec& rule_below,
                                  int k) {
  if (layer_l < 0 || layer_l > net.layer_count()) {
    throw std::invalid_argument("activation_substitute: layer out of range");
  }
  Relevance start{layer_l, trace.activations[static_cast<std::size_t>(layer_l)]};
  const BackpropResult res = backprop_from(net, trace, rule_below, start, 0);
  Attribution att = apply_bottom(rule_below, res.bottom(), trace.input, trace);
  att.target_class = k;
  att.seed_kind = "activation";
  return att;
}

CascadeCurveResult cascade_curve(const Network& net,
                                 const std::vector<Tensor>& samples,
                                 const CascadeTarget& target,
                                 const TargetClass& k_mode,
                                 const std::vector<int>& depths,
                                 bool include_bottom) {
  if (samples.empty()) {
    throw std::invalid_argument("cascade_curve: no samples");
  }
  CascadeCurveResult curve;
  curve.rule_label = target.label();
  const int L = net.layer_count();
  for (int depth : depths) {
    std::vector<double> alphas(samples.size());
    parallel_for(static_cast<int>(samples.size()), [&](int s) {
      const Tensor& x = samples[static_cast<std::size_t>(s)];
      const ForwardTrace trace = forward(net, x);
      const int k = k_mode.resolve(trace);
      Tensor r0;
      if (target.activation) {
        r0 = activation_substitute(net, trace, L - depth,
                                   RuleSpec::of(RuleKind::Grad), k)
                 .values;
      } else if (include_bottom) {
        r0 = cascade_substitute(net, trace, target.rule, depth, k).values;
      } else {
        r0 = backprop_cascade(net, trace, target.rule, k, depth)
                 .bottom()
                 .values;
      }
      alphas[static_cast<std::size_t>(s)] = alignment_or_zero(r0, x);
    });
    const TrialSummary s = summarize(alphas);
    curve.points.push_back({depth, s.mean, s.stddev, s.trials});
  }
  return curve;
}

std::vector<LayerGeometry> orthogonality_stats(const Network& net,
                                               int max_pairs,
                                               std::uint64_t seed) {
  std::vector<LayerGeometry> out;
  for (int li = 0; li < net.layer_count(); ++li) {
    const Layer& l = net.layers[static_cast<std::size_t>(li)];
    if (!l.has_weights()) continue;
    // neuron vectors: dense rows of W^T; conv kernels flattened per channel
    const int units = l.kind == LayerKind::Dense ? l.weights.shape().dims[1]
                                                 : l.weights.shape().dims[0];
    const int dim = static_cast<int>(l.weights.size() / units);
    auto neuron = [&](int j) -> Vec {
      if (l.kind == LayerKind::Dense) {
        return l.weights.transposed_view().row(j).transpose();
      }
      return l.weights.flat().segment(static_cast<Eigen::Index>(j) * dim, dim);
    };

    LayerGeometry g;
    g.layer_index = li;
    Vec norms(units);
    for (int j = 0; j < units; ++j) norms[j] = neuron(j).norm();
    g.norm_mean = norms.mean();
    g.norm_std = std::sqrt((norms.array() - g.norm_mean).square().mean());

    double cos_sum = 0.0;
    int cos_count = 0;
    const std::int64_t all_pairs =
        static_cast<std::int64_t>(units) * (units - 1) / 2;
    if (units >= 2 && all_pairs <= max_pairs) {
      for (int a = 0; a < units; ++a) {
        const Vec va = neuron(a);
        for (int b = a + 1; b < units; ++b) {
          const Vec vb = neuron(b);
          const double na = norms[a], nb = norms[b];
          if (na == 0.0 || nb == 0.0) continue;
          cos_sum += std::abs(va.dot(vb) / (na * nb));
          ++cos_count;
        }
      }
    } else if (units >= 2) {
      Rng rng(derive_seed(seed, 0x67656FULL, static_cast<std::uint64_t>(li)));
      for (int p = 0; p < max_pairs; ++p) {
        int a = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(units)));
        int b = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(units)));
        if (a == b) continue;
        const double na = norms[a], nb = norms[b];
        if (na == 0.0 || nb == 0.0) continue;
        cos_sum += std::abs(neuron(a).dot(neuron(b)) / (na * nb));
        ++cos_count;
      }
    }
    g.mean_abs_cos = cos_count ? cos_sum / cos_count : 0.0;
    out.push_back(g);
  }
  if (out.empty()) {
    throw std::invalid_argument("orthogonality_stats: no weighted layers");
  }
  return out;
}

TrialSummary theorem1_experiment(int d, int n_hidden, const DistSpec& dist,
                                 const std::string& rule_label, int trials,
                                 std::uint64_t master_seed) {
  if (d < 1 || n_hidden < 1 || trials < 1) {
    throw std::invalid_argument("theorem1: bad dimensions");
  }
  const bool is_activation = rule_label == "activation";
  RuleSpec rule;
  if (!is_activation) {
    const RuleKind kind = rule_kind_from_name(rule_label);
    if (kind != RuleKind::Gbp && kind != RuleKind::ZPlus &&
        kind != RuleKind::RectGrad) {
      throw std::invalid_argument("theorem1: rule must be gbp/zplus/rectgrad/activation");
    }
    rule = RuleSpec::of(kind);
  }

  std::vector<double> alphas(static_cast<std::size_t>(trials));
  parallel_for(trials, [&](int t) {
    DistSpec net_dist = dist;
    net_dist.seed = derive_seed(master_seed, 1, static_cast<std::uint64_t>(t));
    const Network net = build_random_mlp({d, n_hidden, 1}, net_dist);
    const bool need_positive_logit = !is_activation && !rule.gradient_family();
    Tensor x;
    ForwardTrace trace;
    for (int attempt = 0;; ++attempt) {
      Rng xr(derive_seed(master_seed, 2,
                         static_cast<std::uint64_t>(t) * 1000 + attempt));
      x = Tensor::from_flat(Shape{d}, abs_gaussian(d, xr));
      trace = forward(net, x);
      if (!need_positive_logit || trace.logits().flat()[0] > 0.0 ||
          attempt >= 100) {
        break;
      }
    }
    Tensor r0;
    if (is_activation) {
      r0 = activation_substitute(net, trace, 1, RuleSpec::of(RuleKind::Grad), 0)
               .values;
    } else {
      r0 = backprop(net, trace, rule, 0).bottom().values;
    }
    alphas[static_cast<std::size_t>(t)] = alignment_or_zero(r0, x);
  });
  return summarize(alphas);
}

Theorem2Result theorem2_experiment(int d, int n, int trials,
                                   std::uint64_t master_seed) {
  if (n > d) {
    throw std::invalid_argument("theorem2: infeasible, n > d");
  }
  if (d < 1 || n < 1 || trials < 1) {
    throw std::invalid_argument("theorem2: bad dimensions");
  }

  std::vector<int> holds(static_cast<std::size_t>(trials), 0);
  parallel_for(trials, [&](int t) {
    const std::uint64_t net_seed =
        derive_seed(master_seed, 11, static_cast<std::uint64_t>(t));
    const Network net = build_orthogonal_net(d, n, 1.0, net_seed);
    const Layer& hidden = net.layers[0];

    Rng rng(derive_seed(master_seed, 12, static_cast<std::uint64_t>(t)));
    Vec x(d), a;
    // need at least one active hidden unit
    do {
      for (int i = 0; i < d; ++i) x[i] = rng.next_normal();
      a = (hidden.weights.transposed_view() * x).cwiseMax(0.0);
    } while (a.isZero(0.0));
    const Vec mask = (a.array() > 0.0).cast<double>();

    const double c = rng.next_uniform(0.1, 10.0);
    const Vec r_a = c * a;
    Vec r_b(n), rb_filtered;
    do {
      for (int j = 0; j < n; ++j) r_b[j] = rng.next_normal();
      rb_filtered = mask.cwiseProduct(r_b.cwiseMax(0.0));
    } while (rb_filtered.isZero(0.0));

    auto wt = hidden.weights.transposed_view();
    const Vec R_a = wt.transpose() * mask.cwiseProduct(r_a.cwiseMax(0.0));
    const Vec R_b = wt.transpose() * rb_filtered;
    const double alpha_a = R_a.dot(x) / (R_a.norm() * x.norm());
    const double alpha_b = R_b.dot(x) / (R_b.norm() * x.norm());
    holds[static_cast<std::size_t>(t)] = alpha_a + 1e-12 >= alpha_b ? 1 : 0;
  });

  Theorem2Result result;
  result.trials = trials;
  result.holds_fraction =
      std::accumulate(holds.begin(), holds.end(), 0.0) / trials;

  // equality fixture: x = sum of the frame vectors makes every activation
  // equal, and r_b proportional to A must tie exactly
  const Network net =
      build_orthogonal_net(d, n, 1.0, derive_seed(master_seed, 13, 0));
  auto wt = net.layers[0].weights.transposed_view();
  Vec x = Vec::Zero(d);
  for (int j = 0; j < n; ++j) x += wt.row(j).transpose();
  const Vec a = (wt * x).cwiseMax(0.0);
  const Vec r_a = 2.0 * a;
  const Vec r_b = 0.5 * a;
  const Vec R_a = wt.transpose() * r_a.cwiseMax(0.0);
  const Vec R_b = wt.transpose() * r_b.cwiseMax(0.0);
  const double alpha_a = R_a.dot(x) / (R_a.norm() * x.norm());
  const double alpha_b = R_b.dot(x) / (R_b.norm() * x.norm());
  result.equality_gap = std::abs(alpha_a - alpha_b);
  return result;
}

std::vector<SanityRow> sanity_experiment(const Network& net,
                                         const std::vector<Tensor>& samples,
                                         const RuleSpec& rule,
                                         const std::vector<int>& layer_indices,
                                         const PerturbSpec& perturb,
                                         const TargetClass& k_mode) {
  const Network perturbed =
      perturb.mode == PerturbMode::Randomize
          ? randomize_weights(net, layer_indices, perturb.dist)
          : remove_weights(net, layer_indices, perturb.keep_fraction);

  std::vector<SanityRow> rows(samples.size());
  parallel_for(static_cast<int>(samples.size()), [&](int s) {
    const Tensor& x = samples[static_cast<std::size_t>(s)];
    const ForwardTrace base_trace = forward(net, x);
    const int k = k_mode.resolve(base_trace);
    const Tensor before = attribute(net, x, rule, k).values;
    const Tensor after = attribute(perturbed, x, rule, k).values;
    SanityRow row;
    row.sample = s;
    row.before = alignment_or_zero(before, x);
    row.after = alignment_or_zero(after, x);
    row.delta = row.before - row.after;
    rows[static_cast<std::size_t>(s)] = row;
  });
  return rows;
}

LabeledDataset synthetic_blob_dataset(int count, int side, double noise,
                                      std::uint64_t seed) {
  if (count < 1 || side < 2) {
    throw std::invalid_argument("synthetic_blob_dataset: bad arguments");
  }
  Rng rng(seed);
  LabeledDataset data;
  const double sigma = side / 6.0;
  const double lo_center = side / 4.0, hi_center = 3.0 * side / 4.0;
  for (int s = 0; s < count; ++s) {
    const int label = static_cast<int>(rng.next_below(2));
    const double c = label == 0 ? lo_center : hi_center;
    const double cy = c + rng.next_uniform(-1.0, 1.0);
    const double cx = c + rng.next_uniform(-1.0, 1.0);
    Vec img(static_cast<Eigen::Index>(side) * side);
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
        img[static_cast<Eigen::Index>(y) * side + x] =
            std::exp(-d2 / (2.0 * sigma * sigma)) +
            noise * std::abs(rng.next_normal());
      }
    }
    data.inputs.push_back(Tensor::from_flat(Shape{side * side}, img));
    data.labels.push_back(label);
  }
  return data;
}

Attribution activation_split_attrib(const Network& net,
                                    const ForwardTrace& trace, int layer_l,
                                    double fraction, SplitWhich which,
                                    const RuleSpec& rule, int k) {
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw std::invalid_argument("activation_split: fraction must be in (0,1]");
  }
  if (layer_l < 0 || layer_l > net.layer_count()) {
    throw std::invalid_argument("activation_split: layer out of range");
  }
  const BackpropResult top = backprop(net, trace, rule, k, layer_l);
  const Vec& r_l = top.at_layer(layer_l).values.flat();
  const Vec& a =
      trace.activations[static_cast<std::size_t>(layer_l)].flat();

  std::vector<int> nonzero;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] > 0.0) nonzero.push_back(static_cast<int>(i));
  }
  if (nonzero.empty()) {
    throw std::runtime_error("activation_split: empty-split, no nonzero activations");
  }
  std::sort(nonzero.begin(), nonzero.end(),
            [&](int i, int j) { return a[i] < a[j]; });
  const auto keep =
      static_cast<std::size_t>(std::ceil(fraction * nonzero.size()));
  Vec masked_r = Vec::Zero(r_l.size());
  if (which == SplitWhich::Max) {
    for (std::size_t i = nonzero.size() - keep; i < nonzero.size(); ++i) {
      masked_r[nonzero[i]] = r_l[nonzero[i]];
    }
  } else {
    for (std::size_t i = 0; i < keep; ++i) {
      masked_r[nonzero[i]] = r_l[nonzero[i]];
    }
  }

  Relevance start{layer_l,
                  Tensor::from_flat(net.activation_shape(layer_l), masked_r)};
  const BackpropResult bottom = backprop_from(net, trace, rule, start, 0);
  Attribution att = apply_bottom(rule, bottom.bottom(), trace.input, trace);
  att.target_class = k;
  att.seed_kind = "split";
  return att;
}

}  // namespace nfr
