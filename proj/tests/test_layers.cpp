#include <doctest.h>

#include <cmath>

#include "advbench/errors.hpp"
#include "advbench/network.hpp"

using namespace advbench;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  Rng r(seed);
  for (auto& v : t.flat()) v = r.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("conv2d matches a direct convolution") {
  Network net({LayerSpec::conv2d(4, 3)}, {6, 6, 2}, 11);
  Tensor x = random_tensor({3, 6, 6, 2}, 21);
  Tensor y = net.forward(x, InferenceMode::Standard);
  CHECK(y.shape() == Shape{3, 4, 4, 4});

  const Tensor& w = *net.layer(0).params()[0];  // (K, K, Cin, Cout)
  const Tensor& b = *net.layer(0).params()[1];
  for (int64_t n = 0; n < 3; ++n) {
    for (int64_t oh = 0; oh < 4; ++oh) {
      for (int64_t ow = 0; ow < 4; ++ow) {
        for (int64_t co = 0; co < 4; ++co) {
          double acc = b[co];
          for (int64_t kh = 0; kh < 3; ++kh) {
            for (int64_t kw = 0; kw < 3; ++kw) {
              for (int64_t ci = 0; ci < 2; ++ci) {
                acc += static_cast<double>(x[((n * 6 + oh + kh) * 6 + ow + kw) * 2 + ci]) *
                       w[((kh * 3 + kw) * 2 + ci) * 4 + co];
              }
            }
          }
          CHECK(y[((n * 4 + oh) * 4 + ow) * 4 + co] == doctest::Approx(acc).epsilon(1e-5));
        }
      }
    }
  }
}

TEST_CASE("conv2d rejects inputs it cannot cover") {
  CHECK_THROWS_AS(Network({LayerSpec::conv2d(2, 5)}, {3, 3, 1}, 1), EngineError);
  Network net({LayerSpec::conv2d(2, 3)}, {6, 6, 1}, 1);
  CHECK_THROWS_AS(net.forward(random_tensor({2, 5, 5, 1}, 3), InferenceMode::Standard), EngineError);
}

TEST_CASE("maxpool picks the max and routes the gradient to the first winner") {
  Network net({LayerSpec::maxpool2d(2, 2)}, {2, 2, 1}, 1);
  Tensor x({1, 2, 2, 1}, {0.5f, 0.5f, 0.25f, 0.5f});  // tie between three cells
  ForwardCache cache;
  Tensor y = net.forward(x, InferenceMode::Standard, nullptr, &cache);
  CHECK(y.numel() == 1);
  CHECK(y[0] == 0.5f);

  Tensor gy({1, 1, 1, 1}, {1.0f});
  Gradients g = net.backward(cache, gy, false, true);
  CHECK(g.input_gradient[0] == 1.0f);  // first of the tied cells
  CHECK(g.input_gradient[1] == 0.0f);
  CHECK(g.input_gradient[3] == 0.0f);
}

TEST_CASE("relu clamps negatives and gates the gradient") {
  Network net({LayerSpec::relu()}, {4}, 1);
  Tensor x({2, 4}, {-1.0f, 2.0f, -0.5f, 0.0f, 3.0f, -2.0f, 1.0f, -0.1f});
  ForwardCache cache;
  Tensor y = net.forward(x, InferenceMode::Standard, nullptr, &cache);
  CHECK(y[0] == 0.0f);
  CHECK(y[1] == 2.0f);
  CHECK(y[4] == 3.0f);

  Tensor gy = Tensor::full({2, 4}, 1.0f);
  Gradients g = net.backward(cache, gy, false, true);
  CHECK(g.input_gradient[0] == 0.0f);
  CHECK(g.input_gradient[1] == 1.0f);
  CHECK(g.input_gradient[3] == 0.0f);  // zero pre-activation gets no gradient
}

TEST_CASE("softmax rows sum to one and zero logits are uniform") {
  Network net({LayerSpec::flatten(), LayerSpec::dense(10), LayerSpec::softmax()}, {2, 2, 1}, 5);
  for (Tensor* p : net.layer(1).params()) {
    for (auto& v : p->flat()) v = 0.0f;
  }
  Tensor x = random_tensor({4, 2, 2, 1}, 17);
  Tensor y = net.forward(x, InferenceMode::Standard);
  for (int64_t r = 0; r < 4; ++r) {
    double sum = 0.0;
    for (int64_t j = 0; j < 10; ++j) {
      CHECK(y[r * 10 + j] == doctest::Approx(0.1).epsilon(1e-6));
      sum += y[r * 10 + j];
    }
    CHECK(std::abs(sum - 1.0) < 1e-5);
  }
}

TEST_CASE("dropout is inert in standard mode and calibrated in train mode") {
  Network net({LayerSpec::dropout(0.45f)}, {64}, 1);
  Tensor x = Tensor::full({2, 64}, 1.0f);

  Rng r1(1), r2(999);
  Tensor a = net.forward(x, InferenceMode::Standard, &r1);
  Tensor b = net.forward(x, InferenceMode::Standard, &r2);
  for (int64_t i = 0; i < a.numel(); ++i) {
    CHECK(a[i] == 1.0f);
    CHECK(a[i] == b[i]);
  }

  // Inverted scaling: the mask-mean of a kept-and-rescaled unit activation
  // equals the activation. 10000 masks, 3 standard errors.
  const float p = 0.45f;
  const int trials = 10000;
  double sum = 0.0;
  Rng r(7);
  Tensor one = Tensor::full({1, 64}, 1.0f);
  for (int t = 0; t < trials; ++t) {
    Tensor y = net.forward(one, InferenceMode::StochasticDropout, &r);
    sum += y[0];
  }
  const double mean = sum / trials;
  const double se = std::sqrt(p / (1.0 - p) / trials);
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("dropout requires a generator only when active") {
  Network net({LayerSpec::dropout(0.5f)}, {4}, 1);
  Tensor x = Tensor::full({1, 4}, 1.0f);
  CHECK_NOTHROW(net.forward(x, InferenceMode::Standard));
  CHECK_THROWS_AS(net.forward(x, InferenceMode::StochasticDropout), EngineError);

  Network zero({LayerSpec::dropout(0.0f)}, {4}, 1);
  Tensor y = zero.forward(x, InferenceMode::StochasticDropout);  // rate 0: no draw needed
  for (int64_t i = 0; i < 4; ++i) CHECK(y[i] == 1.0f);
}

TEST_CASE("batchnorm in batch-stat modes normalizes the batch") {
  Network net({LayerSpec::batchnorm()}, {10}, 1);
  Tensor x({32, 10});
  Rng r(3);
  for (auto& v : x.flat()) v = 2.0f + 3.0f * r.normal();
  for (int64_t n = 0; n < 32; ++n) x[n * 10 + 4] = 7.5f;  // constant feature

  Tensor y = net.forward(x, InferenceMode::BatchStats);
  for (int64_t f = 0; f < 10; ++f) {
    double mean = 0.0, var = 0.0;
    for (int64_t n = 0; n < 32; ++n) mean += y[n * 10 + f];
    mean /= 32.0;
    for (int64_t n = 0; n < 32; ++n) {
      const double d = y[n * 10 + f] - mean;
      var += d * d;
    }
    var /= 32.0;
    CHECK(std::abs(mean) < 1e-4);
    if (f == 4) {
      for (int64_t n = 0; n < 32; ++n) CHECK(y[n * 10 + 4] == 0.0f);  // epsilon-guarded
    } else {
      CHECK(std::abs(var - 1.0) < 1e-3);
    }
  }
}

TEST_CASE("batchnorm standard mode uses running statistics only") {
  Network net({LayerSpec::batchnorm()}, {4}, 1);
  Tensor x({8, 4});
  Rng r(5);
  for (auto& v : x.flat()) v = 5.0f + r.normal();

  // Fresh running stats are mean 0 / var 1, so standard mode passes values
  // through (gamma=1, beta=0, eps tiny).
  Tensor y = net.forward(x, InferenceMode::Standard);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-4));

  // A train-mode step updates them.
  ForwardCache cache;
  Rng rng(1);
  net.forward_train(x, rng, cache);
  const Tensor& run_mean = *net.layer(0).state()[0];
  CHECK(run_mean[0] == doctest::Approx(0.9 * 0.0 + 0.1 * 5.0).epsilon(0.2));

  // BatchStats ignores and does not touch running statistics.
  Tensor before = *net.layer(0).state()[0];
  net.forward(x, InferenceMode::BatchStats);
  const Tensor& after = *net.layer(0).state()[0];
  for (int64_t i = 0; i < before.numel(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("network rejects incompatible chains with a shape diagnostic") {
  try {
    Network net({LayerSpec::dense(10)}, {4, 4, 1}, 1);
    FAIL("expected EngineError");
  } catch (const EngineError& e) {
    CHECK(std::string(e.what()).find("flatten") != std::string::npos);
  }
}

TEST_CASE("standard-mode forward is deterministic") {
  Network net(
      {LayerSpec::conv2d(3, 3), LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(5),
       LayerSpec::softmax()},
      {5, 5, 1}, 42);
  Tensor x = random_tensor({2, 5, 5, 1}, 9, 0.0f, 1.0f);
  Tensor a = net.forward(x, InferenceMode::Standard);
  Tensor b = net.forward(x, InferenceMode::Standard);
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("same spec and seed build identical networks, different seeds differ") {
  std::vector<LayerSpec> spec{LayerSpec::flatten(), LayerSpec::dense(8), LayerSpec::relu(),
                              LayerSpec::dense(3), LayerSpec::softmax()};
  Network a(spec, {2, 2, 1}, 7), b(spec, {2, 2, 1}, 7), c(spec, {2, 2, 1}, 8);
  auto pa = a.all_params(), pb = b.all_params(), pc = c.all_params();
  bool any_diff = false;
  for (size_t i = 0; i < pa.size(); ++i) {
    for (int64_t j = 0; j < pa[i]->numel(); ++j) {
      CHECK((*pa[i])[j] == (*pb[i])[j]);
      if ((*pa[i])[j] != (*pc[i])[j]) any_diff = true;
    }
  }
  CHECK(any_diff);
}

TEST_CASE("dense shapes follow the spec arithmetic") {
  Network net({LayerSpec::flatten(), LayerSpec::dense(10)}, {28, 28, 1}, 3);
  CHECK(net.layer(1).params()[0]->shape() == Shape{784, 10});
  CHECK(net.layer(1).params()[1]->shape() == Shape{10});
}
