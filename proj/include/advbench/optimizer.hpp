#pragma once

#include <cstdint>
#include <vector>

#include "advbench/tensor.hpp"

namespace advbench {

class Network;
struct Gradients;

enum class OptimizerKind { SGD, Adam };

// Optimizer configuration plus per-parameter accumulators. Moment tensors
// are allocated on the first step and mirror the parameter shapes.
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t step_count = 0;
  std::vector<Tensor> m, v;

  static OptimizerState sgd(float lr);
  static OptimizerState adam(float lr, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f);
};

// In-place parameter update. Refuses the step (EngineError) when any
// gradient is non-finite or shapes do not mirror the parameters.
void optimizer_step(Network& net, const Gradients& grads, OptimizerState& state);

}  // namespace advbench
