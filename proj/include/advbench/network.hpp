#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "advbench/layers.hpp"
#include "advbench/optimizer.hpp"
#include "advbench/rng.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

using Labels = std::vector<uint8_t>;

// Activation record of one forward pass; backward consumes it.
struct ForwardCache {
  std::vector<LayerCache> layers;
  Tensor output;
  InferenceMode mode = InferenceMode::Standard;
  const void* owner = nullptr;
  int64_t batch = 0;
};

// Gradients of a scalar loss with respect to every learnable tensor, plus
// the gradient with respect to the input batch (when requested).
struct Gradients {
  std::vector<ParamGrads> per_layer;  // aligned with the network's layers
  Tensor input_gradient;
  bool params_finite() const;
};

enum class LossKind { SoftmaxCrossEntropy, SigmoidBinaryCrossEntropy, MeanSquaredError };

// An ordered stack of layers with parameters and running statistics.
// A trained Network is immutable and safe to share read-only across
// evaluation workers; training has a single writer.
class Network {
 public:
  Network() = default;
  // Validates that consecutive layer shapes are compatible for `input_shape`
  // (per-sample, e.g. 28x28x1) and initializes parameters deterministically
  // from `seed`: He for weight layers feeding a ReLU, Glorot otherwise;
  // batch-norm gamma=1, beta=0, running mean 0, running variance 1.
  Network(std::vector<LayerSpec> specs, Shape input_shape, uint64_t seed);

  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  const std::vector<LayerSpec>& specs() const { return specs_; }
  const Shape& input_shape() const { return input_shape_; }
  const Shape& output_shape() const { return output_shape_; }
  size_t layer_count() const { return layers_.size(); }
  const Layer& layer(size_t i) const { return *layers_[i]; }
  Layer& layer(size_t i) { return *layers_[i]; }
  uint64_t seed() const { return seed_; }

  int64_t param_count() const;
  std::vector<Tensor*> all_params();
  std::vector<const Tensor*> all_params() const;
  std::vector<Tensor*> all_state();
  std::vector<const Tensor*> all_state() const;

  // Forward pass in any mode. Pure: running statistics are never written
  // (use forward_train inside a training step). Throws EngineError on a
  // shape mismatch or a non-finite activation (named with its layer index).
  Tensor forward(const Tensor& x, InferenceMode mode, Rng* rng = nullptr,
                 ForwardCache* cache = nullptr) const;

  // Train-mode forward that also folds the fresh batch statistics into the
  // batch-norm running statistics.
  Tensor forward_train(const Tensor& x, Rng& rng, ForwardCache& cache);

  // Backpropagation from a gradient at the network output. The cache must
  // come from this network's forward with caching enabled.
  Gradients backward(const ForwardCache& cache, const Tensor& grad_output,
                     bool want_param_grads = true, bool want_input_grad = true) const;
  // Same, starting below the top `skip_top` layers (fused loss heads).
  Gradients backward_from(const ForwardCache& cache, const Tensor& grad, size_t skip_top,
                          bool want_param_grads, bool want_input_grad) const;

  // argmax of the output per row; ties go to the lowest class index.
  Labels predict(const Tensor& x, InferenceMode mode, Rng* rng = nullptr) const;

  std::vector<size_t> dropout_layer_indices() const;
  void set_dropout_rates(const std::vector<float>& rates);  // one per dropout layer
  Network with_dropout_rates(const std::vector<float>& rates) const;

 private:
  std::vector<LayerSpec> specs_;
  std::vector<std::unique_ptr<Layer>> layers_;
  Shape input_shape_, output_shape_;
  uint64_t seed_ = 0;
};

// ---- losses ------------------------------------------------------------

// Mean negative log-likelihood of `probs` (rows sum to 1) at `y`.
double cross_entropy_loss(const Tensor& probs, const Labels& y);
// Mean binary cross-entropy of sigmoid scores (N) or (N,1) against 0/1 `y`.
double binary_cross_entropy_loss(const Tensor& scores, const Labels& y);
// Per-element mean squared error.
double mse_loss(const Tensor& output, const Tensor& target);

struct LossResult {
  double loss = 0.0;
  Gradients grads;
};

// Loss plus gradients for a cached forward pass. Softmax and sigmoid heads
// use the fused formulation (probs - onehot)/N at the head input.
LossResult loss_and_gradients(const Network& net, const ForwardCache& cache, const Labels& y,
                              LossKind kind, bool want_param_grads = true, bool want_input_grad = false);
// MSE against a dense target (autoencoders).
LossResult loss_and_gradients_mse(const Network& net, const ForwardCache& cache, const Tensor& target,
                                  bool want_param_grads = true, bool want_input_grad = false);

// Attack primitive: mean cross-entropy and its gradient with respect to the
// input batch, computed in Standard inference mode.
std::pair<double, Tensor> loss_and_input_grad(const Network& net, const Tensor& x, const Labels& y);

// Finite-difference audit. Compares analytic gradients against central
// differences ((f(x+h) - f(x-h)) / 2h) on `n_coords` randomly selected
// parameter and input coordinates; returns the worst relative error.
// The forward pass runs in Train mode with a fixed mask stream so
// stochastic layers see identical masks on every evaluation.
double gradient_check(Network& net, const Tensor& x, const Labels& y, LossKind kind, int n_coords,
                      double h, uint64_t seed);
double gradient_check_mse(Network& net, const Tensor& x, const Tensor& target, int n_coords, double h,
                          uint64_t seed);

// ---- training loop ------------------------------------------------------

struct FitOptions {
  int epochs = 1;
  int64_t batch_size = 128;
  OptimizerState optimizer = OptimizerState::adam(1e-3f);
  LossKind loss = LossKind::SoftmaxCrossEntropy;
  uint64_t seed = 0;
  bool shuffle = true;
  // Called after every epoch with (epoch index, mean train loss); return
  // false to stop early.
  std::function<bool(int, double)> on_epoch;
};

// Minibatch training on (images, labels). Deterministic for a fixed
// (network, options, data order).
void fit(Network& net, const Tensor& images, const Labels& labels, const FitOptions& opts);

// Gathers rows (axis-0 slices) of `src` at `idx` into a new tensor.
Tensor gather_rows(const Tensor& src, const std::vector<int32_t>& idx);

}  // namespace advbench
