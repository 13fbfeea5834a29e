#include "advbench/optimizer.hpp"

#include <cmath>

#include "advbench/errors.hpp"
#include "advbench/network.hpp"
#include "advbench/parallel.hpp"

namespace advbench {

OptimizerState OptimizerState::sgd(float lr) {
  OptimizerState s;
  s.kind = OptimizerKind::SGD;
  s.lr = lr;
  return s;
}

OptimizerState OptimizerState::adam(float lr, float beta1, float beta2, float eps) {
  OptimizerState s;
  s.kind = OptimizerKind::Adam;
  s.lr = lr;
  s.beta1 = beta1;
  s.beta2 = beta2;
  s.eps = eps;
  return s;
}

void optimizer_step(Network& net, const Gradients& grads, OptimizerState& state) {
  if (!(state.lr > 0.0f)) throw EngineError("learning rate must be > 0");
  std::vector<Tensor*> params = net.all_params();
  std::vector<const Tensor*> g;
  for (const auto& pg : grads.per_layer) {
    for (const Tensor& t : pg) g.push_back(&t);
  }
  if (g.size() != params.size()) {
    throw EngineError("gradient count " + std::to_string(g.size()) + " does not mirror parameter count " +
                      std::to_string(params.size()));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (!g[i]->same_shape(*params[i])) {
      throw EngineError("gradient shape " + shape_str(g[i]->shape()) + " does not mirror parameter shape " +
                        shape_str(params[i]->shape()));
    }
    if (!g[i]->all_finite()) throw EngineError("non-finite gradient; step refused");
  }

  if (state.kind == OptimizerKind::SGD) {
    for (size_t i = 0; i < params.size(); ++i) {
      float* w = params[i]->data();
      const float* gr = g[i]->data();
      const float lr = state.lr;
      parallel_chunks(params[i]->numel(), 1 << 16, [&](int64_t, int64_t i0, int64_t i1) {
        for (int64_t j = i0; j < i1; ++j) w[j] -= lr * gr[j];
      });
    }
    state.step_count++;
    return;
  }

  // Adam with bias correction.
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw EngineError("optimizer state does not mirror parameters");
  state.step_count++;
  const double t = static_cast<double>(state.step_count);
  const float corr1 = static_cast<float>(1.0 / (1.0 - std::pow(state.beta1, t)));
  const float corr2 = static_cast<float>(1.0 / (1.0 - std::pow(state.beta2, t)));
  for (size_t i = 0; i < params.size(); ++i) {
    float* w = params[i]->data();
    float* m = state.m[i].data();
    float* v = state.v[i].data();
    const float* gr = g[i]->data();
    const float b1 = state.beta1, b2 = state.beta2, lr = state.lr, eps = state.eps;
    parallel_chunks(params[i]->numel(), 1 << 16, [&](int64_t, int64_t i0, int64_t i1) {
      for (int64_t j = i0; j < i1; ++j) {
        m[j] = b1 * m[j] + (1.0f - b1) * gr[j];
        v[j] = b2 * v[j] + (1.0f - b2) * gr[j] * gr[j];
        const float mhat = m[j] * corr1;
        const float vhat = v[j] * corr2;
        w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      }
    });
  }
}

}  // namespace advbench
