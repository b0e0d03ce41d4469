#include <cmath>
#include <filesystem>
#include <random>

#include <gtest/gtest.h>

#include "attreval/autodiff.hpp"
#include "attreval/errors.hpp"

using namespace attreval;
using namespace attreval::autodiff;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : t.storage()) v = n(rng);
  return t;
}

Graph small_graph(std::size_t m, std::size_t t, std::size_t stride = 1) {
  Graph g(InputSpec{m, t}, {LayerSpec::conv1d(5, 3, stride), LayerSpec::relu(), LayerSpec::conv1d(4, 5),
                            LayerSpec::relu(), LayerSpec::global_avg_pool(), LayerSpec::dense(6),
                            LayerSpec::relu(), LayerSpec::dense(3), LayerSpec::softmax()});
  g.initialize(11);
  // non-zero biases so their gradients are exercised
  Rng rng(5);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (auto& p : g.parameters())
    for (double& v : p.bias.storage()) v = u(rng);
  return g;
}

double weighted_logits(const Graph& g, const Tensor& x, const Tensor& w) {
  Tensor logits = g.forward(x).logits();
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += logits[i] * w[i];
  return s;
}

// Direct "same" convolution, independent of the library's im2col layout.
std::vector<double> direct_conv(std::span<const double> x, std::size_t cin, std::size_t len,
                                const Tensor& weight, const Tensor& bias) {
  const std::size_t cout = weight.dim(0);
  const std::size_t k = weight.dim(1);
  const long pad = static_cast<long>(k / 2);
  std::vector<double> y(cout * len, 0.0);
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t t = 0; t < len; ++t) {
      double s = bias.empty() ? 0.0 : bias[o];
      for (std::size_t j = 0; j < k; ++j) {
        const long p = static_cast<long>(t + j) - pad;
        if (p < 0 || p >= static_cast<long>(len)) continue;
        for (std::size_t c = 0; c < cin; ++c) s += weight[(o * k + j) * cin + c] * x[c * len + p];
      }
      y[o * len + t] = s;
    }
  return y;
}

}  // namespace

TEST(Autodiff, ConvMatchesDirectConvolution) {
  const std::size_t m = 3, t = 17;
  // conv followed by pooling; compare pooled means channel by channel
  Graph g(InputSpec{m, t}, {LayerSpec::conv1d(4, 5), LayerSpec::global_avg_pool()});
  g.initialize(3);
  for (double& v : g.parameters()[0].bias.storage()) v = 0.25;
  Tensor x = random_tensor({2, m, t}, 7);
  Tensor out = g.forward(x).logits();
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<double> xs(x.data() + b * m * t, x.data() + (b + 1) * m * t);
    auto y = direct_conv(xs, m, t, g.parameters()[0].weight, g.parameters()[0].bias);
    for (std::size_t o = 0; o < 4; ++o) {
      double mean = 0.0;
      for (std::size_t i = 0; i < t; ++i) mean += y[o * t + i];
      EXPECT_NEAR(out.at(b, o), mean / t, 1e-12);
    }
  }
}

TEST(Autodiff, StridedConvMatchesDirectConvolution) {
  const std::size_t m = 2, t = 11;
  Graph g(InputSpec{m, t}, {LayerSpec::conv1d(3, 3, 2), LayerSpec::dense(3)});
  g.initialize(9);
  // dense weight that picks out conv output (channel c, position p) for c*6+p
  auto& w = g.parameters()[1].weight;
  std::fill(w.storage().begin(), w.storage().end(), 0.0);
  w.at(0, 0 * 6 + 0) = 1.0;
  w.at(1, 1 * 6 + 3) = 1.0;
  w.at(2, 2 * 6 + 5) = 1.0;
  Tensor x = random_tensor({m, t}, 1);
  Tensor out = g.forward(x).logits();
  auto y = direct_conv(x.storage(), m, t, g.parameters()[0].weight, g.parameters()[0].bias);
  EXPECT_NEAR(out[0], y[0 * t + 0], 1e-12);
  EXPECT_NEAR(out[1], y[1 * t + 6], 1e-12);
  EXPECT_NEAR(out[2], y[2 * t + 10], 1e-12);
}

class GradientCheck : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCheck, InputAndParameterGradientsMatchFiniteDifferences) {
  const std::size_t stride = GetParam();
  const std::size_t m = 2, t = 9, batch = 3;
  Graph g = small_graph(m, t, stride);
  Tensor x = random_tensor({batch, m, t}, 21);
  Tensor w = random_tensor({batch, 3}, 22);

  ForwardOptions opts;
  opts.keep_cache = true;
  ForwardPass pass = g.forward(x, opts);
  Gradients grads = g.backward(pass, w);

  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (weighted_logits(g, xp, w) - weighted_logits(g, xm, w)) / (2 * h);
    EXPECT_NEAR(grads.input[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "input " << i;
  }
  for (std::size_t layer = 0; layer < g.layers().size(); ++layer) {
    for (int which = 0; which < 2; ++which) {
      Tensor& param = which == 0 ? g.parameters()[layer].weight : g.parameters()[layer].bias;
      const Tensor& analytic = which == 0 ? grads.parameters[layer].weight : grads.parameters[layer].bias;
      for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param[i];
        param[i] = saved + h;
        const double up = weighted_logits(g, x, w);
        param[i] = saved - h;
        const double down = weighted_logits(g, x, w);
        param[i] = saved;
        const double fd = (up - down) / (2 * h);
        EXPECT_NEAR(analytic[i], fd, 1e-6 * std::max(1.0, std::abs(fd)))
            << "layer " << layer << (which == 0 ? " weight " : " bias ") << i;
      }
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Strides, GradientCheck, ::testing::Values(1u, 2u));

TEST(Autodiff, ProbabilityTargetGradient) {
  Graph g = small_graph(2, 8);
  Tensor x = random_tensor({2, 8}, 4);
  Tensor grad = g.input_gradient(x, 1, ScoreTarget::probability);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (g.probabilities(xp)[1] - g.probabilities(xm)[1]) / (2 * h);
    EXPECT_NEAR(grad[i], fd, 1e-7);
  }
}

TEST(Autodiff, BatchedInputGradientEqualsPerSample) {
  Graph g = small_graph(2, 8);
  Tensor xb = random_tensor({4, 2, 8}, 8);
  Tensor batched = g.input_gradient(xb, 0, ScoreTarget::logit);
  for (std::size_t b = 0; b < 4; ++b) {
    Tensor single = g.input_gradient(unstack(xb, b), 0, ScoreTarget::logit);
    for (std::size_t i = 0; i < single.size(); ++i) EXPECT_NEAR(batched[b * 16 + i], single[i], 1e-12);
  }
}

TEST(Autodiff, DropoutIsInactiveAtInference) {
  Graph g(InputSpec{2, 8}, {LayerSpec::conv1d(4, 3, 1, 0.5), LayerSpec::relu(), LayerSpec::global_avg_pool(),
                            LayerSpec::dense(2)});
  g.initialize(1);
  Tensor x = random_tensor({2, 8}, 2);
  EXPECT_EQ(g.forward(x).logits(), g.forward(x).logits());
  Rng rng(3);
  ForwardOptions train;
  train.training = true;
  train.dropout_rng = &rng;
  EXPECT_NE(g.forward(x, train).logits(), g.forward(x).logits());
  train.dropout_rng = nullptr;
  EXPECT_THROW(g.forward(x, train), StateError);
}

TEST(Autodiff, DropoutGradientMatchesFiniteDifferenceUnderFixedMask) {
  Graph g(InputSpec{2, 8}, {LayerSpec::conv1d(4, 3, 1, 0.3), LayerSpec::relu(), LayerSpec::global_avg_pool(),
                            LayerSpec::dense(2, 0.3)});
  g.initialize(1);
  Tensor x = random_tensor({2, 8}, 2);
  auto run = [&](const Tensor& in, bool cache) {
    Rng rng(99);
    ForwardOptions o;
    o.training = true;
    o.keep_cache = cache;
    o.dropout_rng = &rng;
    return g.forward(in, o);
  };
  Tensor seed({2}, 0.0);
  seed[1] = 1.0;
  Gradients grads = g.backward(run(x, true), seed);
  const double h = 1e-6;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    const double fd = (run(xp, false).logits()[1] - run(xm, false).logits()[1]) / (2 * h);
    EXPECT_NEAR(grads.input[i], fd, 1e-6);
  }
}

TEST(Autodiff, BackwardNeedsCachedPassFromSameGraph) {
  Graph g = small_graph(2, 8);
  Graph other = small_graph(2, 8);
  Tensor x = random_tensor({2, 8}, 1);
  Tensor seed({3}, 1.0);
  EXPECT_THROW(g.backward(g.forward(x), seed), StateError);
  ForwardOptions o;
  o.keep_cache = true;
  EXPECT_THROW(other.backward(g.forward(x, o), seed), StateError);
}

TEST(Autodiff, RejectsBadConfigurationsAndInputs) {
  EXPECT_THROW(Graph(InputSpec{2, 8}, {LayerSpec::conv1d(4, 4)}), ConfigError);
  EXPECT_THROW(Graph(InputSpec{2, 0}, {LayerSpec::conv1d(4, 3), LayerSpec::dense(2)}), ConfigError);
  EXPECT_THROW(Graph(InputSpec{2, 8}, {LayerSpec::softmax(), LayerSpec::dense(2)}), ConfigError);
  Graph g = small_graph(2, 8);
  EXPECT_THROW(g.forward(random_tensor({3, 8}, 1)), ConfigError);
  EXPECT_THROW(g.input_gradient(random_tensor({2, 8}, 1), 3, ScoreTarget::logit), ParameterError);
}

TEST(Autodiff, NonFiniteActivationIsReported) {
  Graph g = small_graph(2, 8);
  Tensor x = random_tensor({2, 8}, 1);
  x[3] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(g.forward(x), NumericError);
}

TEST(Autodiff, SoftmaxRowsSumToOneAndAreStable) {
  Tensor logits({2, 3}, std::vector<double>{1000.0, 1001.0, 999.0, -5.0, 0.0, 5.0});
  Tensor p = softmax(logits);
  for (std::size_t r = 0; r < 2; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += p.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-15);
  }
  // exp(1)/(1+e+e^-1)
  EXPECT_NEAR(p.at(0, 1), std::exp(1.0) / (std::exp(0.0) + std::exp(1.0) + std::exp(-1.0)), 1e-15);
}

TEST(Autodiff, CheckpointRoundTripIsExact) {
  Graph g = small_graph(2, 8);
  const auto path = std::filesystem::temp_directory_path() / "attreval_ckpt_test.json";
  save_checkpoint(g, path.string(), R"({"note": "x"})");
  Graph back = load_checkpoint(path.string());
  EXPECT_TRUE(back == g);
  Tensor x = random_tensor({2, 8}, 5);
  EXPECT_EQ(back.forward(x).logits(), g.forward(x).logits());
  std::filesystem::remove(path);
}

TEST(Autodiff, CheckpointRejectsWrongFormat) {
  EXPECT_THROW(checkpoint_from_json(R"({"format": "other", "version": 1})"), ParseError);
  EXPECT_THROW(checkpoint_from_json("not json"), ParseError);
  Graph g = small_graph(2, 8);
  std::string text = checkpoint_to_json(g);
  auto pos = text.find("\"version\":1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 11, "\"version\":99");
  EXPECT_THROW(checkpoint_from_json(text), ParseError);
}
