#include <cstring>
#include <numeric>

#include "advbench/errors.hpp"
#include "advbench/network.hpp"

namespace advbench {

Tensor gather_rows(const Tensor& src, const std::vector<int32_t>& idx) {
  const int64_t n = src.dim(0);
  const int64_t per = src.numel() / n;
  Shape shape = src.shape();
  shape[0] = static_cast<int64_t>(idx.size());
  Tensor out(shape);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= n) throw EngineError("gather index out of range");
    std::memcpy(out.data() + static_cast<int64_t>(i) * per, src.data() + idx[i] * per,
                static_cast<size_t>(per) * sizeof(float));
  }
  return out;
}

void fit(Network& net, const Tensor& images, const Labels& labels, const FitOptions& opts) {
  const int64_t n = images.dim(0);
  if (static_cast<int64_t>(labels.size()) != n) throw EngineError("fit: image/label count mismatch");
  if (opts.batch_size < 1) throw EngineError("fit: batch size must be >= 1");

  OptimizerState state = opts.optimizer;
  std::vector<int32_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    if (opts.shuffle) {
      std::iota(order.begin(), order.end(), 0);
      Rng shuffle_rng(derive_seed(opts.seed, 2u * static_cast<uint64_t>(epoch)));
      shuffle_rng.shuffle(order);
    }
    const uint64_t epoch_seed = derive_seed(opts.seed, 2u * static_cast<uint64_t>(epoch) + 1u);
    double loss_sum = 0.0;
    int64_t batches = 0;
    for (int64_t b0 = 0; b0 < n; b0 += opts.batch_size) {
      const int64_t b1 = std::min(n, b0 + opts.batch_size);
      std::vector<int32_t> batch_idx(order.begin() + b0, order.begin() + b1);
      Tensor xb = gather_rows(images, batch_idx);
      Labels yb(static_cast<size_t>(b1 - b0));
      for (int64_t i = b0; i < b1; ++i) yb[static_cast<size_t>(i - b0)] = labels[static_cast<size_t>(order[static_cast<size_t>(i)])];

      // One generator per batch, derived from (seed, batch index).
      Rng batch_rng(derive_seed(epoch_seed, static_cast<uint64_t>(batches)));
      ForwardCache cache;
      net.forward_train(xb, batch_rng, cache);
      LossResult res = loss_and_gradients(net, cache, yb, opts.loss, true, false);
      optimizer_step(net, res.grads, state);
      loss_sum += res.loss;
      batches++;
    }
    if (opts.on_epoch && !opts.on_epoch(epoch, loss_sum / static_cast<double>(batches))) break;
  }
}

}  // namespace advbench
