#include "advbench/network.hpp"

#include <algorithm>
#include <cmath>

#include "advbench/errors.hpp"

namespace advbench {
namespace {

// The next activation downstream of a weight layer decides He vs Glorot.
bool feeds_relu(const std::vector<LayerSpec>& specs, size_t i) {
  for (size_t j = i + 1; j < specs.size(); ++j) {
    switch (specs[j].kind) {
      case LayerKind::MaxPool2D:
      case LayerKind::Flatten:
      case LayerKind::Dropout:
      case LayerKind::BatchNorm:
        continue;
      case LayerKind::ReLU:
        return true;
      default:
        return false;
    }
  }
  return false;
}

void check_labels(const Labels& y, int64_t n, int64_t classes) {
  if (static_cast<int64_t>(y.size()) != n) {
    throw EngineError("label count " + std::to_string(y.size()) + " does not match batch " + std::to_string(n));
  }
  for (uint8_t label : y) {
    if (label >= classes) {
      throw EngineError("label " + std::to_string(int(label)) + " out of range for " +
                        std::to_string(classes) + " classes");
    }
  }
}

}  // namespace

Network::Network(std::vector<LayerSpec> specs, Shape input_shape, uint64_t seed)
    : specs_(std::move(specs)), input_shape_(std::move(input_shape)), seed_(seed) {
  if (specs_.empty()) throw EngineError("network needs at least one layer");
  Rng root(derive_seed(seed_, 0x1A17));
  Shape shape = input_shape_;
  for (size_t i = 0; i < specs_.size(); ++i) {
    specs_[i].validate();
    auto layer = make_layer(specs_[i]);
    Shape next;
    try {
      next = layer->out_shape(shape);
    } catch (const EngineError& e) {
      throw EngineError("layer " + std::to_string(i) + " (" + layer_kind_name(specs_[i].kind) +
                        "): " + e.what());
    }
    Rng layer_rng = root.split(i);
    layer->init_params(shape, feeds_relu(specs_, i), layer_rng);
    layers_.push_back(std::move(layer));
    shape = std::move(next);
  }
  output_shape_ = shape;
}

Network::Network(const Network& other)
    : specs_(other.specs_),
      input_shape_(other.input_shape_),
      output_shape_(other.output_shape_),
      seed_(other.seed_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) *this = Network(other);
  return *this;
}

int64_t Network::param_count() const {
  int64_t n = 0;
  for (const Tensor* t : all_params()) n += t->numel();
  return n;
}

std::vector<Tensor*> Network::all_params() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    for (Tensor* t : l->params()) out.push_back(t);
  }
  return out;
}

std::vector<const Tensor*> Network::all_params() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    for (const Tensor* t : static_cast<const Layer&>(*l).params()) out.push_back(t);
  }
  return out;
}

std::vector<Tensor*> Network::all_state() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    for (Tensor* t : l->state()) out.push_back(t);
  }
  return out;
}

std::vector<const Tensor*> Network::all_state() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_) {
    for (const Tensor* t : static_cast<const Layer&>(*l).state()) out.push_back(t);
  }
  return out;
}

Tensor Network::forward(const Tensor& x, InferenceMode mode, Rng* rng, ForwardCache* cache) const {
  if (x.rank() != input_shape_.size() + 1) {
    throw EngineError("input rank " + std::to_string(x.rank()) + " does not match network input " +
                      shape_str(input_shape_) + " plus batch axis");
  }
  for (size_t i = 0; i < input_shape_.size(); ++i) {
    if (x.dim(i + 1) != input_shape_[i]) {
      throw EngineError("input shape " + shape_str(x.shape()) + " does not match network input " +
                        shape_str(input_shape_));
    }
  }
  require_finite(x, "network input");
  if (cache) {
    cache->layers.assign(layers_.size(), LayerCache{});
    cache->mode = mode;
    cache->owner = this;
    cache->batch = x.dim(0);
  }
  Tensor cur = x;
  for (size_t i = 0; i < layers_.size(); ++i) {
    cur = layers_[i]->forward(cur, mode, rng, cache ? &cache->layers[i] : nullptr);
    if (!cur.all_finite()) {
      throw EngineError("non-finite activation at layer " + std::to_string(i) + " (" +
                        layer_kind_name(layers_[i]->kind()) + ")");
    }
  }
  if (cache) cache->output = cur;
  return cur;
}

Tensor Network::forward_train(const Tensor& x, Rng& rng, ForwardCache& cache) {
  Tensor out = forward(x, InferenceMode::Train, &rng, &cache);
  for (size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->kind() == LayerKind::BatchNorm) layers_[i]->update_running_stats(cache.layers[i]);
  }
  return out;
}

Gradients Network::backward(const ForwardCache& cache, const Tensor& grad_output, bool want_param_grads,
                            bool want_input_grad) const {
  return backward_from(cache, grad_output, 0, want_param_grads, want_input_grad);
}

Gradients Network::backward_from(const ForwardCache& cache, const Tensor& grad, size_t skip_top,
                                 bool want_param_grads, bool want_input_grad) const {
  if (cache.owner != this || cache.layers.size() != layers_.size()) {
    throw EngineError("forward cache does not belong to this network");
  }
  if (grad.dim(0) != cache.batch) {
    throw EngineError("gradient batch " + std::to_string(grad.dim(0)) + " does not match cached batch " +
                      std::to_string(cache.batch));
  }
  Gradients out;
  out.per_layer.resize(layers_.size());
  Tensor cur = grad;
  for (size_t ri = layers_.size() - skip_top; ri-- > 0;) {
    ParamGrads pg;
    const bool want_pg = want_param_grads && !static_cast<const Layer&>(*layers_[ri]).params().empty();
    cur = layers_[ri]->backward(cur, cache.layers[ri], want_pg ? &pg : nullptr);
    out.per_layer[ri] = std::move(pg);
  }
  if (want_input_grad) out.input_gradient = std::move(cur);
  return out;
}

Labels Network::predict(const Tensor& x, InferenceMode mode, Rng* rng) const {
  Tensor out = forward(x, mode, rng);
  const int64_t n = out.dim(0), k = out.numel() / out.dim(0);
  Labels labels(static_cast<size_t>(n));
  for (int64_t r = 0; r < n; ++r) {
    const float* row = out.data() + r * k;
    int64_t best = 0;
    for (int64_t j = 1; j < k; ++j) {
      if (row[j] > row[best]) best = j;  // ties keep the lowest index
    }
    labels[static_cast<size_t>(r)] = static_cast<uint8_t>(best);
  }
  return labels;
}

std::vector<size_t> Network::dropout_layer_indices() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i]->kind() == LayerKind::Dropout) out.push_back(i);
  }
  return out;
}

void Network::set_dropout_rates(const std::vector<float>& rates) {
  auto idx = dropout_layer_indices();
  if (rates.size() != idx.size()) {
    throw EngineError("schedule has " + std::to_string(rates.size()) + " rates but the network has " +
                      std::to_string(idx.size()) + " dropout layers");
  }
  for (size_t i = 0; i < idx.size(); ++i) {
    if (!(rates[i] >= 0.0f && rates[i] < 1.0f)) throw EngineError("dropout rate must be in [0, 1)");
    layers_[idx[i]]->set_rate(rates[i]);
    specs_[idx[i]].rate = rates[i];
  }
}

Network Network::with_dropout_rates(const std::vector<float>& rates) const {
  Network copy(*this);
  copy.set_dropout_rates(rates);
  return copy;
}

bool Gradients::params_finite() const {
  for (const auto& pg : per_layer) {
    for (const Tensor& t : pg) {
      if (!t.all_finite()) return false;
    }
  }
  return true;
}

// ---- losses ------------------------------------------------------------

double cross_entropy_loss(const Tensor& probs, const Labels& y) {
  const int64_t n = probs.dim(0), k = probs.dim(1);
  check_labels(y, n, k);
  double sum = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const double p = std::max(static_cast<double>(probs[r * k + y[static_cast<size_t>(r)]]), 1e-30);
    sum -= std::log(p);
  }
  return sum / static_cast<double>(n);
}

double binary_cross_entropy_loss(const Tensor& scores, const Labels& y) {
  const int64_t n = scores.dim(0);
  check_labels(y, n, 2);
  double sum = 0.0;
  for (int64_t r = 0; r < n; ++r) {
    const double s = std::clamp(static_cast<double>(scores[r]), 1e-12, 1.0 - 1e-12);
    sum -= y[static_cast<size_t>(r)] ? std::log(s) : std::log(1.0 - s);
  }
  return sum / static_cast<double>(n);
}

double mse_loss(const Tensor& output, const Tensor& target) {
  if (!output.same_shape(target)) {
    throw EngineError("mse shapes differ: " + shape_str(output.shape()) + " vs " + shape_str(target.shape()));
  }
  double sum = 0.0;
  for (int64_t i = 0; i < output.numel(); ++i) {
    const double d = static_cast<double>(output[i]) - target[i];
    sum += d * d;
  }
  return sum / static_cast<double>(output.numel());
}

LossResult loss_and_gradients(const Network& net, const ForwardCache& cache, const Labels& y, LossKind kind,
                              bool want_param_grads, bool want_input_grad) {
  LossResult res;
  const Tensor& out = cache.output;
  const int64_t n = out.dim(0);
  switch (kind) {
    case LossKind::SoftmaxCrossEntropy: {
      if (net.layer(net.layer_count() - 1).kind() != LayerKind::Softmax) {
        throw EngineError("softmax cross-entropy requires a softmax head");
      }
      const int64_t k = out.dim(1);
      res.loss = cross_entropy_loss(out, y);
      Tensor grad({n, k});
      const float inv_n = 1.0f / static_cast<float>(n);
      for (int64_t r = 0; r < n; ++r) {
        for (int64_t j = 0; j < k; ++j) {
          const float target = (j == y[static_cast<size_t>(r)]) ? 1.0f : 0.0f;
          grad[r * k + j] = (out[r * k + j] - target) * inv_n;
        }
      }
      res.grads = net.backward_from(cache, grad, 1, want_param_grads, want_input_grad);
      return res;
    }
    case LossKind::SigmoidBinaryCrossEntropy: {
      if (net.layer(net.layer_count() - 1).kind() != LayerKind::Sigmoid) {
        throw EngineError("binary cross-entropy requires a sigmoid head");
      }
      res.loss = binary_cross_entropy_loss(out, y);
      Tensor grad(out.shape());
      const float inv_n = 1.0f / static_cast<float>(n);
      for (int64_t r = 0; r < n; ++r) {
        grad[r] = (out[r] - static_cast<float>(y[static_cast<size_t>(r)])) * inv_n;
      }
      res.grads = net.backward_from(cache, grad, 1, want_param_grads, want_input_grad);
      return res;
    }
    case LossKind::MeanSquaredError:
      throw EngineError("use loss_and_gradients_mse for dense targets");
  }
  throw EngineError("unknown loss kind");
}

LossResult loss_and_gradients_mse(const Network& net, const ForwardCache& cache, const Tensor& target,
                                  bool want_param_grads, bool want_input_grad) {
  LossResult res;
  const Tensor& out = cache.output;
  res.loss = mse_loss(out, target);
  Tensor grad(out.shape());
  const float scale = 2.0f / static_cast<float>(out.numel());
  for (int64_t i = 0; i < out.numel(); ++i) grad[i] = (out[i] - target[i]) * scale;
  res.grads = net.backward(cache, grad, want_param_grads, want_input_grad);
  return res;
}

std::pair<double, Tensor> loss_and_input_grad(const Network& net, const Tensor& x, const Labels& y) {
  ForwardCache cache;
  net.forward(x, InferenceMode::Standard, nullptr, &cache);
  LossResult res = loss_and_gradients(net, cache, y, LossKind::SoftmaxCrossEntropy,
                                      /*want_param_grads=*/false, /*want_input_grad=*/true);
  return {res.loss, std::move(res.grads.input_gradient)};
}

// ---- gradient check ------------------------------------------------------

namespace {

double loss_of(const Network& net, const Tensor& x, const Labels* y, const Tensor* target, LossKind kind,
               uint64_t mask_seed) {
  Rng rng(mask_seed);
  Tensor out = net.forward(x, InferenceMode::Train, &rng);
  switch (kind) {
    case LossKind::SoftmaxCrossEntropy: return cross_entropy_loss(out, *y);
    case LossKind::SigmoidBinaryCrossEntropy: return binary_cross_entropy_loss(out, *y);
    case LossKind::MeanSquaredError: return mse_loss(out, *target);
  }
  throw EngineError("unknown loss kind");
}

double gradient_check_impl(Network& net, const Tensor& x, const Labels* y, const Tensor* target,
                           LossKind kind, int n_coords, double h, uint64_t seed) {
  if (n_coords < 1) throw EngineError("gradient_check requires n_coords >= 1");
  if (!(h > 0.0)) throw EngineError("gradient_check requires h > 0");

  const uint64_t mask_seed = derive_seed(seed, 0xA5);
  Rng mask_rng(mask_seed);
  ForwardCache cache;
  net.forward(x, InferenceMode::Train, &mask_rng, &cache);
  LossResult res = (kind == LossKind::MeanSquaredError)
                       ? loss_and_gradients_mse(net, cache, *target, true, true)
                       : loss_and_gradients(net, cache, *y, kind, true, true);

  // Analytic gradient slots aligned with all_params(), then the input.
  std::vector<Tensor*> params = net.all_params();
  std::vector<const Tensor*> grads;
  for (const auto& pg : res.grads.per_layer) {
    for (const Tensor& t : pg) grads.push_back(&t);
  }
  int64_t param_total = 0;
  for (const Tensor* p : params) param_total += p->numel();
  const int64_t total = param_total + x.numel();

  Tensor x_mut = x;
  Rng pick(derive_seed(seed, 0xC0));
  double worst = 0.0;
  for (int t = 0; t < n_coords; ++t) {
    const int64_t coord = pick.below(total);
    float* slot = nullptr;
    double analytic = 0.0;
    const Tensor* probe = &x_mut;
    if (coord < param_total) {
      int64_t off = coord;
      for (size_t pi = 0; pi < params.size(); ++pi) {
        if (off < params[pi]->numel()) {
          slot = params[pi]->data() + off;
          analytic = (*grads[pi])[off];
          break;
        }
        off -= params[pi]->numel();
      }
      probe = nullptr;
    } else {
      const int64_t off = coord - param_total;
      slot = x_mut.data() + off;
      analytic = res.grads.input_gradient[off];
    }

    const float old = *slot;
    const float hi = static_cast<float>(old + h);
    const float lo = static_cast<float>(old - h);
    *slot = hi;
    const double loss_hi = loss_of(net, probe ? x_mut : x, y, target, kind, mask_seed);
    *slot = lo;
    const double loss_lo = loss_of(net, probe ? x_mut : x, y, target, kind, mask_seed);
    *slot = old;
    const double numeric = (loss_hi - loss_lo) / (static_cast<double>(hi) - lo);
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-4});
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace

double gradient_check(Network& net, const Tensor& x, const Labels& y, LossKind kind, int n_coords, double h,
                      uint64_t seed) {
  return gradient_check_impl(net, x, &y, nullptr, kind, n_coords, h, seed);
}

double gradient_check_mse(Network& net, const Tensor& x, const Tensor& target, int n_coords, double h,
                          uint64_t seed) {
  return gradient_check_impl(net, x, nullptr, &target, LossKind::MeanSquaredError, n_coords, h, seed);
}

}  // namespace advbench
