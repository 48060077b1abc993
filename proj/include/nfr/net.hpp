#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nfr/sampling.hpp"
#include "nfr/tensor.hpp"

namespace nfr {

enum class LayerKind { Dense, Conv2d, MaxPool2d, Flatten };

std::string layer_kind_name(LayerKind kind);
LayerKind layer_kind_from_name(const std::string& name);

/// One layer of a bias-free feed-forward net.
///   Dense:     weights (in, out); pre = W^T a_prev
///   Conv2d:    weights (out_c, in_c, kh, kw); stride 1, valid padding
///   MaxPool2d: pool window `pool`, stride `pool_stride`, no weights
///   Flatten:   no weights
/// relu_after marks the hidden nonlinearity; the final dense layer has none.
struct Layer {
  LayerKind kind = LayerKind::Dense;
  Tensor weights;
  bool relu_after = false;
  int pool = 0;
  int pool_stride = 0;

  bool has_weights() const {
    return kind == LayerKind::Dense || kind == LayerKind::Conv2d;
  }

  static Layer dense(Tensor w, bool relu) {
    Layer l;
    l.kind = LayerKind::Dense;
    l.weights = std::move(w);
    l.relu_after = relu;
    return l;
  }
  static Layer conv2d(Tensor kernels, bool relu) {
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.weights = std::move(kernels);
    l.relu_after = relu;
    return l;
  }
  static Layer maxpool2d(int pool, int stride = 0) {
    Layer l;
    l.kind = LayerKind::MaxPool2d;
    l.pool = pool;
    l.pool_stride = stride > 0 ? stride : pool;
    return l;
  }
  static Layer flatten() {
    Layer l;
    l.kind = LayerKind::Flatten;
    return l;
  }
};

/// Layered ReLU model. layers[i] maps activation i to activation i+1, where
/// activation 0 is the input and the last activation is the logits.
struct Network {
  std::vector<Layer> layers;
  Shape input_shape;
  int class_count = 0;
  std::string init_desc = "unspecified";

  // Filled by validate(): activation_shapes[l] for l = 0..layers.size().
  std::vector<Shape> activation_shapes;

  void validate();
  int layer_count() const { return static_cast<int>(layers.size()); }
  const Shape& activation_shape(int l) const { return activation_shapes.at(l); }
  /// Weight column k of the final dense layer (the vector producing logit k).
  Vec final_weight_column(int k) const;
  bool bit_equal(const Network& other) const;
};

/// Forward pass record: activations A_l (index 0 = input, last = logits),
/// ReLU masks keyed by layer index, max-pool winner flat indices keyed by
/// layer index.
struct ForwardTrace {
  Tensor input;
  std::vector<Tensor> activations;
  std::map<int, Tensor> relu_masks;
  std::map<int, std::vector<int>> pool_winners;

  const Tensor& logits() const { return activations.back(); }
};

ForwardTrace forward(const Network& net, const Tensor& x);

/// Dense ReLU MLP with the given activation widths; weights drawn per dist
/// with per-layer seeds derived from dist.seed. Gaussian draws are scaled by
/// 1/sqrt(fan_in) (times dist.scale) to keep activations O(1); ring and
/// uniform_cube use dist.scale as-is.
Network build_random_mlp(const std::vector<int>& dims, const DistSpec& dist);

/// One-hidden-layer net whose n hidden weight vectors are pairwise orthogonal
/// with L2 norm exactly `norm` (Gram-Schmidt on Gaussian draws). Output layer
/// is a single unit of ones.
Network build_orthogonal_net(int d, int n, double norm, std::uint64_t seed);

/// Redraws the selected weighted layers from dist (matching shapes, per-layer
/// derived seeds); all other layers are carried over bit-identically.
Network randomize_weights(const Network& net,
                          const std::vector<int>& layer_indices,
                          const DistSpec& dist);

/// Dense layers: zeroes all input-dimension rows except the first
/// ceil(keep_fraction * in). Conv layers: zeroes all kernel entries except
/// row 0 and column 0 of each kh x kw kernel.
Network remove_weights(const Network& net,
                       const std::vector<int>& layer_indices,
                       double keep_fraction);

struct LabeledDataset {
  std::vector<Tensor> inputs;
  std::vector<int> labels;
};

/// Softmax cross-entropy SGD on the logits, one sample per step, seeded
/// shuffle per epoch. Dense-only networks.
Network train_sgd(const Network& net, const LabeledDataset& data, int epochs,
                  double lr, std::uint64_t seed);

double training_accuracy(const Network& net, const LabeledDataset& data);

}  // namespace nfr
