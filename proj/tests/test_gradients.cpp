#include <doctest.h>

#include <cmath>

#include "advbench/errors.hpp"
#include "advbench/network.hpp"

using namespace advbench;

namespace {

Tensor random_tensor(Shape shape, uint64_t seed, float lo, float hi) {
  Tensor t(std::move(shape));
  Rng r(seed);
  for (auto& v : t.flat()) v = r.uniform(lo, hi);
  return t;
}

Labels random_labels(int64_t n, int64_t classes, uint64_t seed) {
  Labels y(static_cast<size_t>(n));
  Rng r(seed);
  for (auto& label : y) label = static_cast<uint8_t>(r.below(classes));
  return y;
}

}  // namespace

TEST_CASE("finite differences confirm the dense path") {
  Network net({LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dense(3), LayerSpec::softmax()}, {4}, 7);
  Tensor x = random_tensor({4, 4}, 11, -1.0f, 1.0f);
  Labels y = random_labels(4, 3, 13);
  CHECK(gradient_check(net, x, y, LossKind::SoftmaxCrossEntropy, 50, 1e-3, 5) < 1e-3);
}

TEST_CASE("finite differences confirm the conv/pool path") {
  Network net(
      {LayerSpec::conv2d(4, 3), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2), LayerSpec::flatten(),
       LayerSpec::dense(3), LayerSpec::softmax()},
      {6, 6, 2}, 3);
  Tensor x = random_tensor({3, 6, 6, 2}, 21, 0.0f, 1.0f);
  Labels y = random_labels(3, 3, 23);
  CHECK(gradient_check(net, x, y, LossKind::SoftmaxCrossEntropy, 60, 1e-3, 6) < 1e-3);
}

TEST_CASE("finite differences confirm batch-norm through batch statistics") {
  Network net({LayerSpec::dense(6), LayerSpec::batchnorm(), LayerSpec::relu(), LayerSpec::dense(3),
               LayerSpec::softmax()},
              {5}, 9);
  Tensor x = random_tensor({8, 5}, 31, -1.0f, 1.0f);
  Labels y = random_labels(8, 3, 33);
  CHECK(gradient_check(net, x, y, LossKind::SoftmaxCrossEntropy, 60, 1e-3, 7) < 1e-3);
}

TEST_CASE("finite differences confirm dropout with a frozen mask stream") {
  Network net({LayerSpec::dense(8), LayerSpec::relu(), LayerSpec::dropout(0.4f), LayerSpec::dense(3),
               LayerSpec::softmax()},
              {6}, 2);
  Tensor x = random_tensor({4, 6}, 41, -1.0f, 1.0f);
  Labels y = random_labels(4, 3, 43);
  CHECK(gradient_check(net, x, y, LossKind::SoftmaxCrossEntropy, 50, 1e-3, 8) < 1e-3);
}

TEST_CASE("finite differences confirm the sigmoid/BCE head") {
  Network net({LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(1), LayerSpec::sigmoid()}, {4}, 4);
  Tensor x = random_tensor({5, 4}, 51, -1.0f, 1.0f);
  Labels y = random_labels(5, 2, 53);
  CHECK(gradient_check(net, x, y, LossKind::SigmoidBinaryCrossEntropy, 40, 1e-3, 9) < 1e-3);
}

TEST_CASE("finite differences confirm the MSE path") {
  Network net({LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(4), LayerSpec::sigmoid()}, {4}, 6);
  Tensor x = random_tensor({5, 4}, 61, -1.0f, 1.0f);
  Tensor target = random_tensor({5, 4}, 63, 0.1f, 0.9f);
  CHECK(gradient_check_mse(net, x, target, 40, 1e-3, 10) < 1e-3);
}

TEST_CASE("a linear model with squared loss is exact under central differences") {
  Network net({LayerSpec::dense(2)}, {4}, 1);
  // Dyadic values keep every float operation exact, so the only error left
  // is the (zero) truncation term of a quadratic.
  Tensor* w = net.layer(0).params()[0];
  Tensor* b = net.layer(0).params()[1];
  Rng r(77);
  for (auto& v : w->flat()) v = static_cast<float>(r.below(129) - 64) / 256.0f;
  for (auto& v : b->flat()) v = static_cast<float>(r.below(129) - 64) / 256.0f;
  Tensor x({4, 4});
  for (auto& v : x.flat()) v = static_cast<float>(r.below(129) - 64) / 256.0f;
  Tensor target({4, 2});
  for (auto& v : target.flat()) v = static_cast<float>(r.below(129) - 64) / 256.0f;
  CHECK(gradient_check_mse(net, x, target, 40, 0x1.0p-10, 12) < 1e-6);
}

TEST_CASE("gradient_check rejects degenerate h") {
  Network net({LayerSpec::dense(2), LayerSpec::softmax()}, {3}, 1);
  Tensor x = random_tensor({2, 3}, 5, -1.0f, 1.0f);
  Labels y = random_labels(2, 2, 6);
  CHECK_THROWS_AS(gradient_check(net, x, y, LossKind::SoftmaxCrossEntropy, 10, 0.0, 1), EngineError);
  CHECK_THROWS_AS(gradient_check(net, x, y, LossKind::SoftmaxCrossEntropy, 0, 1e-3, 1), EngineError);
}

TEST_CASE("loss_and_input_grad at a perfect prediction is zero") {
  Network net({LayerSpec::dense(3), LayerSpec::softmax()}, {2}, 1);
  Tensor* w = net.layer(0).params()[0];
  Tensor* b = net.layer(0).params()[1];
  for (auto& v : w->flat()) v = 0.0f;
  (*b)[0] = 60.0f;  // class 0 wins with probability 1 up to float precision
  (*b)[1] = 0.0f;
  (*b)[2] = 0.0f;
  Tensor x({2, 2}, {0.3f, 0.7f, 0.1f, 0.9f});
  auto [loss, grad] = loss_and_input_grad(net, x, Labels{0, 0});
  CHECK(loss <= 1e-6);
  for (int64_t i = 0; i < grad.numel(); ++i) CHECK(std::abs(grad[i]) <= 1e-6);
}

TEST_CASE("loss_and_input_grad matches finite differences on input coordinates") {
  Network net({LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(3), LayerSpec::softmax()}, {5}, 8);
  Tensor x = random_tensor({3, 5}, 71, 0.0f, 1.0f);
  Labels y = random_labels(3, 3, 73);
  auto [loss, grad] = loss_and_input_grad(net, x, y);
  CHECK(loss >= 0.0);

  Rng pick(99);
  const double h = 1e-3;
  for (int t = 0; t < 20; ++t) {
    const int64_t i = pick.below(x.numel());
    Tensor xp = x;
    const float hi = static_cast<float>(xp[i] + h), lo = static_cast<float>(xp[i] - h);
    xp[i] = hi;
    const double lp = loss_and_input_grad(net, xp, y).first;
    xp[i] = lo;
    const double lm = loss_and_input_grad(net, xp, y).first;
    const double numeric = (lp - lm) / (static_cast<double>(hi) - lo);
    const double rel = std::abs(grad[i] - numeric) / std::max({std::abs((double)grad[i]), std::abs(numeric), 1e-4});
    CHECK(rel < 1e-3);
  }
}

TEST_CASE("duplicated batch rows get identical input gradients") {
  Network net({LayerSpec::dense(6), LayerSpec::relu(), LayerSpec::dense(3), LayerSpec::softmax()}, {5}, 8);
  Tensor x = random_tensor({4, 5}, 81, 0.0f, 1.0f);
  for (int64_t j = 0; j < 5; ++j) x[3 * 5 + j] = x[1 * 5 + j];
  Labels y{0, 2, 1, 2};
  auto [loss, grad] = loss_and_input_grad(net, x, y);
  (void)loss;
  for (int64_t j = 0; j < 5; ++j) CHECK(grad[1 * 5 + j] == grad[3 * 5 + j]);
}

TEST_CASE("loss_and_input_grad rejects out-of-range labels") {
  Network net({LayerSpec::dense(3), LayerSpec::softmax()}, {2}, 1);
  Tensor x({1, 2}, {0.5f, 0.5f});
  CHECK_THROWS_AS(loss_and_input_grad(net, x, Labels{7}), EngineError);
}

TEST_CASE("zero upstream loss produces zero gradients everywhere") {
  Network net({LayerSpec::dense(4), LayerSpec::relu(), LayerSpec::dense(2), LayerSpec::softmax()}, {3}, 5);
  Tensor x = random_tensor({2, 3}, 91, 0.0f, 1.0f);
  ForwardCache cache;
  net.forward(x, InferenceMode::Standard, nullptr, &cache);
  Tensor zero_grad({2, 2});
  Gradients g = net.backward(cache, zero_grad, true, true);
  for (const auto& pg : g.per_layer) {
    for (const Tensor& t : pg) {
      for (float v : t.flat()) CHECK(v == 0.0f);
    }
  }
  for (float v : g.input_gradient.flat()) CHECK(v == 0.0f);
}

TEST_CASE("backward rejects a cache from another network") {
  Network a({LayerSpec::dense(2), LayerSpec::softmax()}, {3}, 1);
  Network b({LayerSpec::dense(2), LayerSpec::softmax()}, {3}, 1);
  Tensor x = random_tensor({2, 3}, 95, 0.0f, 1.0f);
  ForwardCache cache;
  a.forward(x, InferenceMode::Standard, nullptr, &cache);
  Tensor grad({2, 2});
  CHECK_NOTHROW(a.backward(cache, grad, false, true));
  CHECK_THROWS_AS(b.backward(cache, grad, false, true), EngineError);
}
