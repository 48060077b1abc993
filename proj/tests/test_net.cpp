#include <doctest.h>

#include <cmath>

#include "nfr/net.hpp"
#include "nfr/rng.hpp"

using namespace nfr;

namespace {

// hidden dense layer W^T = [[1,-1]] followed by a pass-through output unit
Network tiny_two_layer() {
  Network net;
  net.input_shape = Shape{2};
  net.class_count = 1;
  net.layers.push_back(Layer::dense(
      Tensor::from_flat(Shape{2, 1}, Tensor::vector({1, -1}).flat()), true));
  net.layers.push_back(Layer::dense(Tensor::constant(Shape{1, 1}, 1.0), false));
  net.validate();
  return net;
}

Network small_cnn() {
  Network net;
  net.input_shape = Shape{1, 4, 4};
  net.class_count = 2;
  Vec k(8);  // two 2x2 kernels
  k << 1, 0, 0, 1, 0.5, -0.5, 1, 0;
  net.layers.push_back(Layer::conv2d(Tensor::from_flat(Shape{2, 1, 2, 2}, k), true));
  net.layers.push_back(Layer::maxpool2d(2));
  net.layers.push_back(Layer::flatten());
  Vec w = Vec::Zero(2 * 2);
  w << 1, -1, 0.5, 2;
  net.layers.push_back(Layer::dense(Tensor::from_flat(Shape{2, 2}, w), false));
  net.validate();
  return net;
}

}  // namespace

TEST_CASE("forward records the ReLU trace faithfully") {
  const Network net = tiny_two_layer();
  SUBCASE("negative pre-activation masks out") {
    const ForwardTrace t = forward(net, Tensor::vector({2, 3}));
    CHECK(t.activations[1][0] == 0.0);
    CHECK(t.relu_masks.at(0)[0] == 0.0);
    CHECK(t.logits()[0] == 0.0);
  }
  SUBCASE("positive pre-activation passes") {
    const ForwardTrace t = forward(net, Tensor::vector({3, 2}));
    CHECK(t.activations[1][0] == 1.0);
    CHECK(t.relu_masks.at(0)[0] == 1.0);
  }
  SUBCASE("zero input gives zero everywhere") {
    const ForwardTrace t = forward(net, Tensor::zeros(Shape{2}));
    CHECK(t.activations[1][0] == 0.0);
    CHECK(t.logits()[0] == 0.0);
  }
  CHECK_THROWS(forward(net, Tensor::vector({1, 2, 3})));
}

TEST_CASE("relu trace consistency A = M .* (W^T A_prev) on random MLPs") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Network net =
        build_random_mlp({6, 9, 7, 3}, {DistKind::Gaussian, 1.0, seed});
    Rng rng(seed + 100);
    Vec x(6);
    for (int i = 0; i < 6; ++i) x[i] = rng.next_normal();
    const ForwardTrace t = forward(net, Tensor::from_flat(Shape{6}, x));
    for (int l = 0; l < net.layer_count(); ++l) {
      if (!net.layers[l].relu_after) continue;
      const Vec pre = net.layers[l].weights.transposed_view() *
                      t.activations[l].flat();
      const Vec expect = t.relu_masks.at(l).flat().cwiseProduct(pre);
      CHECK((t.activations[l + 1].flat() - expect).cwiseAbs().maxCoeff() == 0.0);
      for (Eigen::Index j = 0; j < pre.size(); ++j) {
        CHECK(t.relu_masks.at(l)[j] == (pre[j] > 0.0 ? 1.0 : 0.0));
        CHECK(t.activations[l + 1][j] >= 0.0);
      }
    }
  }
}

TEST_CASE("conv forward matches hand evaluation and pool records winners") {
  Network net;
  net.input_shape = Shape{1, 3, 3};
  net.class_count = 1;
  Vec k(4);
  k << 1, 0, 0, 1;  // 2x2 identity-diagonal kernel
  net.layers.push_back(Layer::conv2d(Tensor::from_flat(Shape{1, 1, 2, 2}, k), true));
  net.layers.push_back(Layer::maxpool2d(2));
  net.layers.push_back(Layer::flatten());
  net.layers.push_back(Layer::dense(Tensor::constant(Shape{1, 1}, 1.0), false));
  net.validate();

  Vec x(9);
  x << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  const ForwardTrace t = forward(net, Tensor::from_flat(Shape{1, 3, 3}, x));
  const Vec conv = t.activations[1].flat();
  CHECK(conv[0] == 6.0);   // 1+5
  CHECK(conv[1] == 8.0);   // 2+6
  CHECK(conv[2] == 12.0);  // 4+8
  CHECK(conv[3] == 14.0);  // 5+9
  CHECK(t.activations[2][0] == 14.0);
  CHECK(t.pool_winners.at(1)[0] == 3);  // flat index of the 14
  CHECK(t.logits()[0] == 14.0);
}

TEST_CASE("maxpool ties break to the lowest flat index") {
  Network net;
  net.input_shape = Shape{1, 2, 2};
  net.class_count = 1;
  net.layers.push_back(Layer::maxpool2d(2));
  net.layers.push_back(Layer::flatten());
  net.layers.push_back(Layer::dense(Tensor::constant(Shape{1, 1}, 1.0), false));
  net.validate();
  const ForwardTrace t = forward(net, Tensor::constant(Shape{1, 2, 2}, 3.0));
  CHECK(t.pool_winners.at(0)[0] == 0);
}

TEST_CASE("build_random_mlp is deterministic and ring rows share norms") {
  const DistSpec g{DistKind::Gaussian, 1.0, 4242};
  CHECK(build_random_mlp({2, 3, 2}, g).bit_equal(build_random_mlp({2, 3, 2}, g)));

  const DistSpec r{DistKind::Ring, 1.0, 7};
  const Network net = build_random_mlp({8, 5, 2}, r);
  auto wt = net.layers[0].weights.transposed_view();
  for (int j = 0; j < 5; ++j) {
    CHECK(wt.row(j).norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK_THROWS(build_random_mlp({4}, g));
}

TEST_CASE("build_orthogonal_net produces an exact frame") {
  const Network net = build_orthogonal_net(16, 9, 2.5, 99);
  auto wt = net.layers[0].weights.transposed_view();
  for (int i = 0; i < 9; ++i) {
    CHECK(wt.row(i).norm() == doctest::Approx(2.5).epsilon(1e-12));
    for (int j = i + 1; j < 9; ++j) {
      CHECK(std::abs(wt.row(i).dot(wt.row(j))) <= 1e-9);
    }
  }
  CHECK_THROWS(build_orthogonal_net(4, 5, 1.0, 1));

  // orthonormal d = n = 8: x = sum of frame vectors activates all units at 1
  const Network net8 = build_orthogonal_net(8, 8, 1.0, 3);
  auto w8 = net8.layers[0].weights.transposed_view();
  Vec x = Vec::Zero(8);
  for (int j = 0; j < 8; ++j) x += w8.row(j).transpose();
  const ForwardTrace t = forward(net8, Tensor::from_flat(Shape{8}, x));
  for (int j = 0; j < 8; ++j) {
    CHECK(t.activations[1][j] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("randomize_weights touches exactly the listed layers") {
  const Network net =
      build_random_mlp({5, 8, 8, 3}, {DistKind::Gaussian, 1.0, 5});
  const DistSpec redraw{DistKind::Gaussian, 1.0, 777};

  CHECK(randomize_weights(net, {}, redraw).bit_equal(net));

  const Network top = randomize_weights(net, {2}, redraw);
  CHECK(top.layers[0].weights.bit_equal(net.layers[0].weights));
  CHECK(top.layers[1].weights.bit_equal(net.layers[1].weights));
  CHECK_FALSE(top.layers[2].weights.bit_equal(net.layers[2].weights));
  CHECK(top.layers[2].weights.shape() == net.layers[2].weights.shape());

  Rng rng(31);
  Vec x(5);
  for (int i = 0; i < 5; ++i) x[i] = rng.next_normal();
  const Tensor input = Tensor::from_flat(Shape{5}, x);
  CHECK_FALSE(forward(top, input).logits().bit_equal(forward(net, input).logits()));

  CHECK_THROWS(randomize_weights(net, {9}, redraw));
}

TEST_CASE("randomize_weights rejects weightless layers") {
  Network net;
  net.input_shape = Shape{1, 4, 4};
  net.class_count = 1;
  Vec k(4);
  k << 1, 0, 0, 1;
  net.layers.push_back(Layer::conv2d(Tensor::from_flat(Shape{1, 1, 2, 2}, k), true));
  net.layers.push_back(Layer::maxpool2d(3));
  net.layers.push_back(Layer::flatten());
  net.layers.push_back(Layer::dense(Tensor::constant(Shape{1, 1}, 1.0), false));
  net.validate();
  CHECK_THROWS(randomize_weights(net, {1}, {DistKind::Gaussian, 1.0, 0}));
}

TEST_CASE("remove_weights keeps the declared rows and kernel cross") {
  const Network net =
      build_random_mlp({400, 6, 2}, {DistKind::Gaussian, 1.0, 12});
  CHECK(remove_weights(net, {0}, 1.0).bit_equal(net));

  const Network cut = remove_weights(net, {0}, 0.0025);
  auto w = cut.layers[0].weights.matrix_view();  // (in, out)
  int surviving_rows = 0;
  for (int r = 0; r < 400; ++r) {
    if (w.row(r).cwiseAbs().maxCoeff() > 0.0) ++surviving_rows;
  }
  CHECK(surviving_rows == 1);
  CHECK(cut.layers[1].weights.bit_equal(net.layers[1].weights));
  CHECK_THROWS(remove_weights(net, {0}, 0.0));
  CHECK_THROWS(remove_weights(net, {0}, 1.5));

  const Network cnn = small_cnn();
  const Network cut_cnn = remove_weights(cnn, {0}, 0.5);
  // 2x2 kernels keep row 0 and column 0 unchanged, zero the rest
  const auto& kflat = cut_cnn.layers[0].weights.flat();
  const auto& orig = cnn.layers[0].weights.flat();
  for (int kernel = 0; kernel < 2; ++kernel) {
    CHECK(kflat[kernel * 4 + 3] == 0.0);
    for (int i = 0; i < 3; ++i) CHECK(kflat[kernel * 4 + i] == orig[kernel * 4 + i]);
  }
}

TEST_CASE("remove_weights on a 3x3 kernel keeps 5 of 9 entries") {
  Network net;
  net.input_shape = Shape{1, 4, 4};
  net.class_count = 1;
  DistSpec g{DistKind::Gaussian, 1.0, 3};
  net.layers.push_back(
      Layer::conv2d(sample_gaussian(Shape{1, 1, 3, 3}, g), true));
  net.layers.push_back(Layer::flatten());
  net.layers.push_back(Layer::dense(Tensor::constant(Shape{4, 1}, 1.0), false));
  net.validate();
  const Network cut = remove_weights(net, {0}, 0.9);
  int nonzero = 0;
  for (Eigen::Index i = 0; i < 9; ++i) {
    nonzero += cut.layers[0].weights.flat()[i] != 0.0 ? 1 : 0;
  }
  CHECK(nonzero == 5);
}

TEST_CASE("train_sgd contracts") {
  LabeledDataset data;
  Rng rng(60);
  for (int i = 0; i < 60; ++i) {
    Vec x(4);
    const int label = i % 2;
    // linearly separable two-class blobs
    for (int d = 0; d < 4; ++d) {
      x[d] = 0.3 * rng.next_normal() + (label == 0 ? 1.0 : -1.0) * (d < 2 ? 1.0 : -1.0);
    }
    data.inputs.push_back(Tensor::from_flat(Shape{4}, x));
    data.labels.push_back(label);
  }
  const Network net =
      build_random_mlp({4, 16, 2}, {DistKind::Gaussian, 1.0, 1});

  CHECK(train_sgd(net, data, 0, 0.1, 9).bit_equal(net));
  CHECK(train_sgd(net, data, 3, 0.1, 9).bit_equal(train_sgd(net, data, 3, 0.1, 9)));

  const Network trained = train_sgd(net, data, 20, 0.1, 9);
  CHECK(training_accuracy(trained, data) >= 0.95);

  LabeledDataset bad = data;
  bad.labels[0] = 5;
  CHECK_THROWS(train_sgd(net, bad, 1, 0.1, 9));
  CHECK_THROWS(train_sgd(small_cnn(), data, 1, 0.1, 9));
}

TEST_CASE("piecewise linearity away from the kinks") {
  // central finite differences of the logit match the trace-implied linear map
  const Network net =
      build_random_mlp({5, 8, 3}, {DistKind::Gaussian, 1.0, 21});
  Rng rng(22);
  Vec x(5);
  ForwardTrace t;
  while (true) {
    for (int i = 0; i < 5; ++i) x[i] = rng.next_normal();
    t = forward(net, Tensor::from_flat(Shape{5}, x));
    const Vec pre0 = net.layers[0].weights.transposed_view() * x;
    if (pre0.cwiseAbs().minCoeff() > 1e-2) break;
  }
  const double h = 1e-6;
  for (int i = 0; i < 5; ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fp = forward(net, Tensor::from_flat(Shape{5}, xp)).logits()[0];
    const double fm = forward(net, Tensor::from_flat(Shape{5}, xm)).logits()[0];
    const double fd = (fp - fm) / (2 * h);
    // analytic: W1 M W2 column 0
    const Vec v = net.layers[1].weights.transposed_view().row(0).transpose();
    const Vec grad = net.layers[0].weights.transposed_view().transpose() *
                     t.relu_masks.at(0).flat().cwiseProduct(v);
    CHECK(fd == doctest::Approx(grad[i]).epsilon(1e-6));
  }
}
