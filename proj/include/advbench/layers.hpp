#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "advbench/rng.hpp"
#include "advbench/tensor.hpp"

namespace advbench {

enum class LayerKind { Conv2D, MaxPool2D, Dense, ReLU, Flatten, Dropout, BatchNorm, Softmax, Sigmoid };

const char* layer_kind_name(LayerKind k);
std::optional<LayerKind> layer_kind_from_name(std::string_view name);

// How a forward pass treats stochastic layers and normalization statistics:
//   Train             dropout masks on; batch-norm normalizes with batch
//                     statistics (and the train step folds them into the
//                     running statistics)
//   Standard          dropout off; batch-norm uses running statistics
//   StochasticDropout dropout masks on at inference; running statistics
//   BatchStats        dropout off; batch-norm recomputes statistics from the
//                     inference batch, running statistics ignored
enum class InferenceMode { Train, Standard, StochasticDropout, BatchStats };

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int64_t channels = 0;      // Conv2D output channels
  int64_t kernel = 0;        // Conv2D kernel size (square)
  int64_t stride = 1;        // Conv2D stride
  int64_t pool = 2;          // MaxPool2D window
  int64_t pool_stride = 2;   // MaxPool2D stride
  int64_t units = 0;         // Dense width
  float rate = 0.0f;         // Dropout rate in [0, 1)
  float bn_eps = 1e-5f;      // BatchNorm variance stabilizer
  float bn_momentum = 0.9f;  // BatchNorm running-statistics momentum

  static LayerSpec conv2d(int64_t channels, int64_t kernel, int64_t stride = 1);
  static LayerSpec maxpool2d(int64_t pool = 2, int64_t stride = 2);
  static LayerSpec dense(int64_t units);
  static LayerSpec relu();
  static LayerSpec flatten();
  static LayerSpec dropout(float rate);
  static LayerSpec batchnorm(float eps = 1e-5f, float momentum = 0.9f);
  static LayerSpec softmax();
  static LayerSpec sigmoid();

  void validate() const;  // throws EngineError on bad hyperparameters
  bool operator==(const LayerSpec&) const = default;
};

// Per-layer forward record consumed by backward. Only the fields a layer
// needs are populated.
struct LayerCache {
  Tensor input;
  Shape in_shape;               // kept even when the values are not
  Tensor output;                // softmax / sigmoid
  Tensor mask;                  // dropout keep-and-rescale mask
  std::vector<int32_t> argmax;  // max-pool winner offset per output element
  Tensor x_hat;                 // batch-norm normalized activations
  Tensor inv_std;               // per-feature 1/sqrt(var + eps) actually used
  Tensor mean, var;             // batch statistics when batch stats were used
  bool batch_stats = false;
};

// Parameter gradients for one layer; slots align with Layer::params().
using ParamGrads = std::vector<Tensor>;

class Layer {
 public:
  explicit Layer(LayerSpec spec) : spec_(spec) {}
  virtual ~Layer() = default;

  const LayerSpec& spec() const { return spec_; }
  LayerKind kind() const { return spec_.kind; }

  // Per-sample output shape; throws EngineError with a shape diagnostic when
  // the input is incompatible.
  virtual Shape out_shape(const Shape& in) const = 0;

  // Forward one batch. Pure with respect to layer state: running statistics
  // are read, never written (Network::forward_train owns that update).
  // `rng` must be non-null when `mode` enables this layer's stochasticity.
  virtual Tensor forward(const Tensor& x, InferenceMode mode, Rng* rng, LayerCache* cache) const = 0;

  // Gradient with respect to the layer input given the gradient with respect
  // to its output. When `pg` is non-null it receives parameter gradients.
  virtual Tensor backward(const Tensor& grad_out, const LayerCache& cache, ParamGrads* pg) const = 0;

  virtual std::vector<Tensor*> params() { return {}; }
  std::vector<const Tensor*> params() const;
  // Persistent non-learned state (batch-norm running statistics).
  virtual std::vector<Tensor*> state() { return {}; }
  std::vector<const Tensor*> state() const;

  // Allocates and fills parameters. `followed_by_relu` selects He over
  // Glorot initialization for weight-bearing layers.
  virtual void init_params(const Shape& in_shape, bool followed_by_relu, Rng& rng) {}

  // Batch-norm only: folds the batch statistics recorded in `cache` into the
  // running statistics.
  virtual void update_running_stats(const LayerCache& cache) {}

  virtual std::unique_ptr<Layer> clone() const = 0;

  // Dropout only: replaces the rate (used to apply a test-time schedule).
  void set_rate(float rate) { spec_.rate = rate; }

 protected:
  LayerSpec spec_;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec);

}  // namespace advbench
