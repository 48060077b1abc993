#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "nfr/net.hpp"
#include "nfr/rng.hpp"

namespace nfr {

namespace {

Vec softmax(const Vec& f) {
  Vec p = (f.array() - f.maxCoeff()).exp();
  return p / p.sum();
}

}  // namespace

Network train_sgd(const Network& net, const LabeledDataset& data, int epochs,
                  double lr, std::uint64_t seed) {
  if (data.inputs.empty()) {
    throw std::invalid_argument("train_sgd: empty dataset");
  }
  if (data.inputs.size() != data.labels.size()) {
    throw std::invalid_argument("train_sgd: inputs/labels length mismatch");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("train_sgd: lr must be > 0");
  for (const Layer& l : net.layers) {
    if (l.kind != LayerKind::Dense) {
      throw std::invalid_argument("train_sgd: dense-only networks supported");
    }
  }
  for (std::size_t s = 0; s < data.inputs.size(); ++s) {
    if (!(data.inputs[s].shape() == net.input_shape)) {
      throw std::invalid_argument("train_sgd: sample " + std::to_string(s) +
                                  " shape mismatch");
    }
    if (data.labels[s] < 0 || data.labels[s] >= net.class_count) {
      throw std::invalid_argument("train_sgd: label out of range");
    }
  }
  if (epochs <= 0) return net;

  Network out = net;
  const int L = out.layer_count();
  std::vector<Mat> wt(L);  // working copies as (out,in), i.e. W^T
  for (int l = 0; l < L; ++l) wt[l] = out.layers[l].weights.transposed_view();

  Rng rng(seed);
  std::vector<std::size_t> order(data.inputs.size());
  std::iota(order.begin(), order.end(), 0u);

  std::vector<Vec> acts(L + 1), masks(L);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Fisher-Yates with the project RNG, so the visit order is seed-stable
    for (std::size_t i = order.size(); i > 1; --i) {
      const std::size_t j = rng.next_below(i);
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t s : order) {
      acts[0] = data.inputs[s].flat();
      for (int l = 0; l < L; ++l) {
        Vec pre = wt[l] * acts[l];
        if (out.layers[l].relu_after) {
          masks[l] = (pre.array() > 0.0).cast<double>();
          acts[l + 1] = pre.cwiseProduct(masks[l]);
        } else {
          acts[l + 1] = pre;
        }
      }
      Vec g = softmax(acts[L]);  // dLoss/dlogits for cross-entropy
      g[data.labels[s]] -= 1.0;
      for (int l = L - 1; l >= 0; --l) {
        Vec g_below;
        if (l > 0) {
          g_below = wt[l].transpose() * g;
          g_below = g_below.cwiseProduct(masks[l - 1]);
        }
        wt[l].noalias() -= lr * g * acts[l].transpose();
        if (l > 0) g = std::move(g_below);
      }
    }
  }

  for (int l = 0; l < L; ++l) {
    const Shape& ws = out.layers[l].weights.shape();
    Vec flat(ws.count());
    for (int i = 0; i < ws.dims[0]; ++i) {
      for (int j = 0; j < ws.dims[1]; ++j) {
        flat[static_cast<Eigen::Index>(i) * ws.dims[1] + j] = wt[l](j, i);
      }
    }
    out.layers[l].weights = Tensor::from_flat(ws, std::move(flat));
  }
  out.init_desc = net.init_desc + "+sgd(epochs=" + std::to_string(epochs) +
                  ",seed=" + std::to_string(seed) + ")";
  out.validate();
  return out;
}

double training_accuracy(const Network& net, const LabeledDataset& data) {
  if (data.inputs.empty()) return 0.0;
  int correct = 0;
  for (std::size_t s = 0; s < data.inputs.size(); ++s) {
    const ForwardTrace t = forward(net, data.inputs[s]);
    Eigen::Index argmax = 0;
    t.logits().flat().maxCoeff(&argmax);
    if (static_cast<int>(argmax) == data.labels[s]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.inputs.size());
}

}  // namespace nfr
