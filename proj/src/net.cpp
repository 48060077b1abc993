#include "nfr/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nfr/rng.hpp"

namespace nfr {

std::string layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::Flatten: return "flatten";
  }
  throw std::logic_error("layer_kind_name: bad enum");
}

LayerKind layer_kind_from_name(const std::string& name) {
  if (name == "dense") return LayerKind::Dense;
  if (name == "conv2d") return LayerKind::Conv2d;
  if (name == "maxpool2d") return LayerKind::MaxPool2d;
  if (name == "flatten") return LayerKind::Flatten;
  throw std::invalid_argument("unknown layer kind '" + name + "'");
}

void Network::validate() {
  if (layers.empty()) throw std::invalid_argument("network: no layers");
  if (!input_shape.valid()) {
    throw std::invalid_argument("network: invalid input shape");
  }
  activation_shapes.clear();
  activation_shapes.push_back(input_shape);
  Shape cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    const std::string where = "layer " + std::to_string(i);
    switch (l.kind) {
      case LayerKind::Dense: {
        if (l.weights.shape().rank() != 2) {
          throw std::invalid_argument(where + ": dense weights must be (in,out)");
        }
        if (cur.rank() != 1 || cur.dims[0] != l.weights.shape().dims[0]) {
          throw std::invalid_argument(where + ": dense input " + cur.str() +
                                      " does not match weights " +
                                      l.weights.shape().str());
        }
        cur = Shape{l.weights.shape().dims[1]};
        break;
      }
      case LayerKind::Conv2d: {
        const Shape& k = l.weights.shape();
        if (k.rank() != 4) {
          throw std::invalid_argument(where +
                                      ": conv weights must be (oc,ic,kh,kw)");
        }
        if (cur.rank() != 3 || cur.dims[0] != k.dims[1]) {
          throw std::invalid_argument(where + ": conv input " + cur.str() +
                                      " does not match kernels " + k.str());
        }
        const int oh = cur.dims[1] - k.dims[2] + 1;
        const int ow = cur.dims[2] - k.dims[3] + 1;
        if (oh < 1 || ow < 1) {
          throw std::invalid_argument(where + ": kernel larger than input");
        }
        cur = Shape{k.dims[0], oh, ow};
        break;
      }
      case LayerKind::MaxPool2d: {
        if (cur.rank() != 3) {
          throw std::invalid_argument(where + ": maxpool needs (C,H,W) input");
        }
        if (l.pool < 1 || l.pool_stride < 1) {
          throw std::invalid_argument(where + ": bad pool/stride");
        }
        const int oh = (cur.dims[1] - l.pool) / l.pool_stride + 1;
        const int ow = (cur.dims[2] - l.pool) / l.pool_stride + 1;
        if (cur.dims[1] < l.pool || cur.dims[2] < l.pool) {
          throw std::invalid_argument(where + ": pool window larger than input");
        }
        cur = Shape{cur.dims[0], oh, ow};
        break;
      }
      case LayerKind::Flatten: {
        cur = Shape{static_cast<int>(cur.count())};
        break;
      }
    }
    if (l.relu_after && !l.has_weights()) {
      throw std::invalid_argument(where + ": relu on a weightless layer");
    }
    activation_shapes.push_back(cur);
  }
  const Layer& last = layers.back();
  if (last.kind != LayerKind::Dense || last.relu_after) {
    throw std::invalid_argument("network: last layer must be dense without relu");
  }
  if (cur.rank() != 1 || cur.dims[0] != class_count) {
    throw std::invalid_argument("network: output extent " + cur.str() +
                                " does not match class count " +
                                std::to_string(class_count));
  }
}

Vec Network::final_weight_column(int k) const {
  const Layer& last = layers.back();
  if (k < 0 || k >= class_count) {
    throw std::invalid_argument("class index " + std::to_string(k) +
                                " out of range");
  }
  return last.weights.transposed_view().row(k).transpose();
}

bool Network::bit_equal(const Network& other) const {
  if (layers.size() != other.layers.size()) return false;
  if (!(input_shape == other.input_shape) || class_count != other.class_count) {
    return false;
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& a = layers[i];
    const Layer& b = other.layers[i];
    if (a.kind != b.kind || a.relu_after != b.relu_after || a.pool != b.pool ||
        a.pool_stride != b.pool_stride) {
      return false;
    }
    if (a.has_weights() && !a.weights.bit_equal(b.weights)) return false;
  }
  return true;
}

namespace {

Vec conv2d_forward(const Layer& l, const Shape& in_shape, const Vec& a) {
  const Shape& k = l.weights.shape();
  const int ic = k.dims[1], kh = k.dims[2], kw = k.dims[3], oc = k.dims[0];
  const int h = in_shape.dims[1], w = in_shape.dims[2];
  const int oh = h - kh + 1, ow = w - kw + 1;
  const int patch_len = ic * kh * kw;
  const int n_pos = oh * ow;

  // im2col: every output position becomes one row of P.
  Mat patches(n_pos, patch_len);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      const int p = y * ow + x;
      int t = 0;
      for (int c = 0; c < ic; ++c) {
        for (int dy = 0; dy < kh; ++dy) {
          for (int dx = 0; dx < kw; ++dx) {
            patches(p, t++) = a[(c * h + y + dy) * w + x + dx];
          }
        }
      }
    }
  }
  // kernels as (oc, patch_len): the row-major (oc,ic,kh,kw) buffer is already
  // laid out that way.
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      kmat(l.weights.flat().data(), oc, patch_len);
  Mat out = patches * kmat.transpose();  // (n_pos, oc)
  Vec flat(static_cast<Eigen::Index>(oc) * n_pos);
  for (int c = 0; c < oc; ++c) {
    flat.segment(static_cast<Eigen::Index>(c) * n_pos, n_pos) = out.col(c);
  }
  return flat;
}

Vec maxpool_forward(const Layer& l, const Shape& in_shape, const Vec& a,
                    std::vector<int>& winners) {
  const int c = in_shape.dims[0], h = in_shape.dims[1], w = in_shape.dims[2];
  const int oh = (h - l.pool) / l.pool_stride + 1;
  const int ow = (w - l.pool) / l.pool_stride + 1;
  Vec out(static_cast<Eigen::Index>(c) * oh * ow);
  winners.resize(static_cast<std::size_t>(c) * oh * ow);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (int dy = 0; dy < l.pool; ++dy) {
          for (int dx = 0; dx < l.pool; ++dx) {
            const int idx =
                (ch * h + y * l.pool_stride + dy) * w + x * l.pool_stride + dx;
            // ties go to the lowest flat index so backward routing is unique
            if (a[idx] > best) {
              best = a[idx];
              best_idx = idx;
            }
          }
        }
        const int o = (ch * oh + y) * ow + x;
        out[o] = best;
        winners[static_cast<std::size_t>(o)] = best_idx;
      }
    }
  }
  return out;
}

}  // namespace

ForwardTrace forward(const Network& net, const Tensor& x) {
  if (!(x.shape() == net.input_shape)) {
    throw std::invalid_argument("forward: input shape " + x.shape().str() +
                                " does not match network " +
                                net.input_shape.str());
  }
  ForwardTrace trace;
  trace.input = x;
  trace.activations.reserve(net.layers.size() + 1);
  trace.activations.push_back(x);
  Vec a = x.flat();
  for (int i = 0; i < net.layer_count(); ++i) {
    const Layer& l = net.layers[i];
    const Shape& in_shape = net.activation_shape(i);
    const Shape& out_shape = net.activation_shape(i + 1);
    Vec pre;
    switch (l.kind) {
      case LayerKind::Dense:
        pre = l.weights.transposed_view() * a;
        break;
      case LayerKind::Conv2d:
        pre = conv2d_forward(l, in_shape, a);
        break;
      case LayerKind::MaxPool2d: {
        std::vector<int> winners;
        pre = maxpool_forward(l, in_shape, a, winners);
        trace.pool_winners[i] = std::move(winners);
        break;
      }
      case LayerKind::Flatten:
        pre = a;
        break;
    }
    if (l.relu_after) {
      Vec mask = (pre.array() > 0.0).cast<double>();
      a = pre.cwiseProduct(mask);
      trace.relu_masks[i] = Tensor::from_flat(out_shape, mask);
    } else {
      a = pre;
    }
    trace.activations.push_back(Tensor::from_flat(out_shape, a));
  }
  return trace;
}

Network build_random_mlp(const std::vector<int>& dims, const DistSpec& dist) {
  if (dims.size() < 2) {
    throw std::invalid_argument("build_random_mlp: need at least 2 dims");
  }
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("build_random_mlp: dims must be >= 1");
  }
  dist.validate();
  Network net;
  net.input_shape = Shape{dims[0]};
  net.class_count = dims.back();
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const int fan_in = dims[i], fan_out = dims[i + 1];
    DistSpec layer_spec = dist;
    layer_spec.seed = derive_seed(dist.seed, 0x6C61796572ULL, i);
    if (dist.kind == DistKind::Gaussian) {
      layer_spec.scale = dist.scale / std::sqrt(static_cast<double>(fan_in));
    }
    // neuron weight vectors are the rows here; the dense layer stores (in,out)
    Tensor rows = sample_weight_rows(fan_out, fan_in, layer_spec);
    Vec w(static_cast<Eigen::Index>(fan_in) * fan_out);
    auto rv = rows.matrix_view();
    for (int r = 0; r < fan_out; ++r) {
      for (int c = 0; c < fan_in; ++c) w[static_cast<Eigen::Index>(c) * fan_out + r] = rv(r, c);
    }
    net.layers.push_back(Layer::dense(
        Tensor::from_flat(Shape{fan_in, fan_out}, std::move(w)),
        i + 2 < dims.size()));
  }
  net.init_desc = dist_kind_name(dist.kind) + "(scale=" +
                  std::to_string(dist.scale) +
                  (dist.kind == DistKind::Gaussian ? ",fan_in_scaled" : "") +
                  ")/seed=" + std::to_string(dist.seed);
  net.validate();
  return net;
}

Network build_orthogonal_net(int d, int n, double norm, std::uint64_t seed) {
  if (n > d) {
    throw std::invalid_argument(
        "build_orthogonal_net: infeasible, n > d (" + std::to_string(n) +
        " > " + std::to_string(d) + ")");
  }
  if (d < 1 || n < 1 || !(norm > 0.0)) {
    throw std::invalid_argument("build_orthogonal_net: bad arguments");
  }
  Rng rng(seed);
  // Gram-Schmidt on Gaussian draws; redraw a vector if it degenerates.
  Mat q(d, n);
  for (int j = 0; j < n; ++j) {
    while (true) {
      Vec v(d);
      for (int i = 0; i < d; ++i) v[i] = rng.next_normal();
      for (int p = 0; p < j; ++p) v -= q.col(p).dot(v) * q.col(p);
      // second pass tightens orthogonality to fp precision
      for (int p = 0; p < j; ++p) v -= q.col(p).dot(v) * q.col(p);
      const double nv = v.norm();
      if (nv > 1e-8) {
        q.col(j) = v / nv;
        break;
      }
    }
  }
  Vec w1(static_cast<Eigen::Index>(d) * n);
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < n; ++j) w1[static_cast<Eigen::Index>(i) * n + j] = norm * q(i, j);
  }
  Network net;
  net.input_shape = Shape{d};
  net.class_count = 1;
  net.layers.push_back(
      Layer::dense(Tensor::from_flat(Shape{d, n}, std::move(w1)), true));
  net.layers.push_back(
      Layer::dense(Tensor::constant(Shape{n, 1}, 1.0), false));
  net.init_desc = "orthogonal(norm=" + std::to_string(norm) +
                  ")/seed=" + std::to_string(seed);
  net.validate();
  return net;
}

Network randomize_weights(const Network& net,
                          const std::vector<int>& layer_indices,
                          const DistSpec& dist) {
  dist.validate();
  Network out = net;
  for (int idx : layer_indices) {
    if (idx < 0 || idx >= net.layer_count()) {
      throw std::invalid_argument("randomize_weights: layer index out of range");
    }
    Layer& l = out.layers[static_cast<std::size_t>(idx)];
    if (!l.has_weights()) {
      throw std::invalid_argument("randomize_weights: layer " +
                                  std::to_string(idx) + " has no weights");
    }
    DistSpec layer_spec = dist;
    layer_spec.seed = derive_seed(dist.seed, 0x72616E64ULL,
                                  static_cast<std::uint64_t>(idx));
    if (l.kind == LayerKind::Dense) {
      const int in = l.weights.shape().dims[0], o = l.weights.shape().dims[1];
      if (dist.kind == DistKind::Gaussian) {
        layer_spec.scale = dist.scale / std::sqrt(static_cast<double>(in));
      }
      Tensor rows = sample_weight_rows(o, in, layer_spec);
      Vec w(static_cast<Eigen::Index>(in) * o);
      auto rv = rows.matrix_view();
      for (int r = 0; r < o; ++r) {
        for (int c = 0; c < in; ++c) w[static_cast<Eigen::Index>(c) * o + r] = rv(r, c);
      }
      l.weights = Tensor::from_flat(l.weights.shape(), std::move(w));
    } else {
      const Shape& ks = l.weights.shape();
      const int oc = ks.dims[0];
      const int patch = static_cast<int>(ks.count() / oc);
      if (dist.kind == DistKind::Gaussian) {
        layer_spec.scale = dist.scale / std::sqrt(static_cast<double>(patch));
      }
      Tensor rows = sample_weight_rows(oc, patch, layer_spec);
      l.weights = rows.reshaped(ks);
    }
  }
  out.validate();
  return out;
}

Network remove_weights(const Network& net,
                       const std::vector<int>& layer_indices,
                       double keep_fraction) {
  if (!(keep_fraction > 0.0) || keep_fraction > 1.0) {
    throw std::invalid_argument("remove_weights: keep_fraction must be in (0,1]");
  }
  Network out = net;
  for (int idx : layer_indices) {
    if (idx < 0 || idx >= net.layer_count()) {
      throw std::invalid_argument("remove_weights: layer index out of range");
    }
    Layer& l = out.layers[static_cast<std::size_t>(idx)];
    if (!l.has_weights()) {
      throw std::invalid_argument("remove_weights: layer " +
                                  std::to_string(idx) + " has no weights");
    }
    if (l.kind == LayerKind::Dense) {
      const int in = l.weights.shape().dims[0], o = l.weights.shape().dims[1];
      const int keep = static_cast<int>(std::ceil(keep_fraction * in));
      Vec w = l.weights.flat();
      for (int r = keep; r < in; ++r) {
        w.segment(static_cast<Eigen::Index>(r) * o, o).setZero();
      }
      l.weights = Tensor::from_flat(l.weights.shape(), std::move(w));
    } else {
      const Shape& ks = l.weights.shape();
      const int kh = ks.dims[2], kw = ks.dims[3];
      Vec w = l.weights.flat();
      const std::int64_t kernels = ks.count() / (kh * kw);
      for (std::int64_t kidx = 0; kidx < kernels; ++kidx) {
        for (int y = 1; y < kh; ++y) {
          for (int x = 1; x < kw; ++x) {
            w[kidx * kh * kw + y * kw + x] = 0.0;
          }
        }
      }
      l.weights = Tensor::from_flat(ks, std::move(w));
    }
  }
  out.validate();
  return out;
}

}  // namespace nfr
