#include <gtest/gtest.h>

#include <cmath>

#include "msfr/gradcheck.hpp"
#include "msfr/layers.hpp"
#include "test_util.hpp"

namespace msfr {
namespace {

constexpr double kTol = 1e-4;

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const int o = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor y({n, o, oh, ow});
  for (int in = 0; in < n; ++in)
    for (int oc = 0; oc < o; ++oc)
      for (int r = 0; r < oh; ++r)
        for (int q = 0; q < ow; ++q) {
          double s = b[oc];
          for (int ic = 0; ic < c; ++ic)
            for (int u = 0; u < kh; ++u)
              for (int v = 0; v < kw; ++v) {
                const int yy = r * stride - pad + u, xx = q * stride - pad + v;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                s += w.at(oc, ic, u, v) * x.at(in, ic, yy, xx);
              }
          y.at(in, oc, r, q) = s;
        }
  return y;
}

TEST(Conv2d, MatchesNaiveLoops) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const int stride = rng.range(1, 2), pad = rng.range(0, 1), k = 2 * rng.range(0, 1) + 1;
    const Tensor x = test::random_tensor({rng.range(1, 2), rng.range(1, 3), rng.range(k, 9), rng.range(k, 9)}, rng);
    const Tensor w = test::random_tensor({rng.range(1, 4), x.dim(1), k, k}, rng);
    const Tensor b = test::random_tensor({w.dim(0)}, rng);
    const Tensor got = conv2d(x, w, b, stride, pad);
    const Tensor want = naive_conv(x, w, b, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Conv2d, OutputExtent) {
  EXPECT_EQ(conv_out_extent(8, 3, 1, 1), 8);
  EXPECT_EQ(conv_out_extent(8, 3, 2, 1), 4);
  EXPECT_EQ(conv_out_extent(5, 1, 1, 0), 5);
}

TEST(Conv2d, RejectsChannelMismatch) {
  EXPECT_THROW(conv2d(Tensor({1, 2, 4, 4}), Tensor({3, 3, 3, 3}), Tensor({3}), 1, 1), std::invalid_argument);
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  Rng rng(7);
  Tensor x = test::random_tensor({1, 2, 5, 5}, rng);
  Tensor w = test::random_tensor({3, 2, 3, 3}, rng);
  Tensor b = test::random_tensor({3}, rng);
  const Tensor r = test::random_tensor({1, 3, 5, 5}, rng);
  auto loss = [&] { return dot(conv2d(x, w, b, 1, 1), r); };
  const ConvGrads g = conv2d_backward(x, w, 1, 1, r);
  EXPECT_TRUE(finite_difference_check(loss, x.data(), g.input.data()).passed(kTol));
  EXPECT_TRUE(finite_difference_check(loss, w.data(), g.weight.data()).passed(kTol));
  EXPECT_TRUE(finite_difference_check(loss, b.data(), g.bias.data()).passed(kTol));
}

TEST(GradCheckHarness, DetectsCorruptedBackward) {
  Rng rng(8);
  Tensor x = test::random_tensor({1, 2, 5, 5}, rng);
  const Tensor w = test::random_tensor({3, 2, 3, 3}, rng), b = test::random_tensor({3}, rng);
  const Tensor r = test::random_tensor({1, 3, 5, 5}, rng);
  auto loss = [&] { return dot(conv2d(x, w, b, 1, 1), r); };
  Tensor wrong = conv2d_backward(x, w, 1, 1, r).input;
  wrong *= 2.0;
  const GradCheckResult res = finite_difference_check(loss, x.data(), wrong.data());
  EXPECT_FALSE(res.passed(kTol));
  EXPECT_NEAR(res.max_rel_error, 0.5, 1e-6);  // |2n - n| / |2n|
}

TEST(GradCheckHarness, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(gradcheck_relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(gradcheck_relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gradcheck_relative_error(0.0, 1e-9), 1e-9 / 1e-8);
}

TEST(MaxPool, HandExample) {
  const Tensor x({1, 1, 2, 4}, {1, 5, 2, 2, 3, 4, 8, 0});
  const PoolResult p = maxpool2d(x, 2, 2);
  EXPECT_EQ(p.output.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(p.output[0], 5.0);
  EXPECT_EQ(p.output[1], 8.0);
  EXPECT_EQ(p.argmax, (std::vector<std::size_t>{1, 6}));
}

TEST(MaxPool, TiesGoToLowestIndex) {
  const PoolResult p = maxpool2d(Tensor({1, 1, 2, 2}, 3.0), 2, 2);
  EXPECT_EQ(p.argmax[0], 0u);
}

TEST(MaxPool, GradientMatchesFiniteDifferences) {
  Rng rng(9);
  // distinct values spaced well beyond h keep every window away from a tie
  Tensor x({1, 3, 6, 6});
  std::vector<double> v(x.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.01 * double(i);
  rng.shuffle(v);
  for (std::size_t i = 0; i < v.size(); ++i) x[i] = v[i];
  const Tensor r = test::random_tensor({1, 3, 3, 3}, rng);
  auto loss = [&] { return dot(maxpool2d(x, 2, 2).output, r); };
  const PoolResult p = maxpool2d(x, 2, 2);
  const Tensor g = maxpool2d_backward(x.shape(), p.argmax, r);
  EXPECT_TRUE(finite_difference_check(loss, x.data(), g.data()).passed(kTol));
}

TEST(Relu, ForwardAndGradient) {
  Rng rng(10);
  Tensor x = test::random_tensor({2, 3, 4, 4}, rng);
  for (double& v : x.data()) v += (v >= 0 ? 1e-3 : -1e-3);
  const Tensor y = relu(x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i] > 0 ? x[i] : 0.0);
  const Tensor r = test::random_tensor(x.shape(), rng);
  auto loss = [&] { return dot(relu(x), r); };
  const Tensor g = relu_backward(x, r);
  EXPECT_TRUE(finite_difference_check(loss, x.data(), g.data()).passed(kTol));
  Tensor g2 = r;
  relu_backward_inplace(y, g2);
  EXPECT_EQ(g2, g);
}

TEST(FullyConnected, GradientMatchesFiniteDifferences) {
  Rng rng(12);
  Tensor x = test::random_tensor({2, 4}, rng), w = test::random_tensor({4, 3}, rng), b = test::random_tensor({3}, rng);
  const Tensor y = fully_connected(x, w, b);
  EXPECT_NEAR(y[0], x[0] * w[0] + x[1] * w[3] + x[2] * w[6] + x[3] * w[9] + b[0], 1e-14);
  const Tensor r = test::random_tensor({2, 3}, rng);
  auto loss = [&] { return dot(fully_connected(x, w, b), r); };
  const FcGrads g = fully_connected_backward(x, w, r);
  EXPECT_TRUE(finite_difference_check(loss, x.data(), g.input.data()).passed(kTol));
  EXPECT_TRUE(finite_difference_check(loss, w.data(), g.weight.data()).passed(kTol));
  EXPECT_TRUE(finite_difference_check(loss, b.data(), g.bias.data()).passed(kTol));
}

TEST(SoftmaxCrossEntropy, UniformLogits) {
  const Tensor logits({2, 2}, 0.0);
  const std::vector<int> labels{0, 1};
  const SoftmaxXent s = softmax_cross_entropy(logits, labels);
  EXPECT_NEAR(s.loss, std::log(2.0), 1e-15);
  EXPECT_NEAR(s.probs[0], 0.5, 1e-15);
}

TEST(SoftmaxCrossEntropy, StableForLargeLogits) {
  const Tensor logits({1, 2}, {1000.0, -1000.0});
  const std::vector<int> labels{0};
  const SoftmaxXent s = softmax_cross_entropy(logits, labels);
  EXPECT_TRUE(std::isfinite(s.loss));
  EXPECT_NEAR(s.loss, 0.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(13);
  Tensor logits = test::random_tensor({3, 4}, rng, -2, 2);
  const std::vector<int> labels{2, 0, 3};
  auto loss = [&] { return softmax_cross_entropy(logits, labels).loss; };
  const Tensor g = softmax_cross_entropy_backward(softmax_cross_entropy(logits, labels), labels);
  EXPECT_TRUE(finite_difference_check(loss, logits.data(), g.data()).passed(kTol));
}

TEST(SmoothL1, PiecewiseValues) {
  const Tensor mask({1}, 1.0), zero({1}, 0.0);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor({1}, 0.5), zero, mask), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor({1}, 2.0), zero, mask), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor({1}, -2.0), zero, mask), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1(Tensor({1}, 2.0), zero, Tensor({1}, 0.0)), 0.0);
}

TEST(SmoothL1, GradientMatchesFiniteDifferences) {
  Rng rng(14);
  Tensor pred = test::random_tensor({4, 4}, rng, -3, 3);
  const Tensor target = test::random_tensor({4, 4}, rng, -1, 1);
  Tensor mask({4, 4});
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = rng.uniform() < 0.6 ? 1.0 : 0.0;
    const double d = pred[i] - target[i];
    if (std::abs(std::abs(d) - 1.0) < 1e-3) pred[i] += 0.01;
  }
  auto loss = [&] { return smooth_l1(pred, target, mask); };
  const Tensor g = smooth_l1_backward(pred, target, mask);
  EXPECT_TRUE(finite_difference_check(loss, pred.data(), g.data()).passed(kTol));
}

TEST(Init, GlorotUniformRange) {
  Rng rng(15);
  Tensor t({64, 32});
  glorot_uniform(t, 32, 64, rng);
  const double a = std::sqrt(6.0 / 96.0);
  double mean = 0.0;
  for (double v : t.data()) {
    EXPECT_LE(std::abs(v), a);
    mean += v;
  }
  EXPECT_NEAR(mean / double(t.size()), 0.0, 0.02);
}

}  // namespace
}  // namespace msfr
