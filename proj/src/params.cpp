// SPDX-License-Identifier: Apache-2.0
#include "psfl/params.hpp"

#include <stdexcept>

namespace psfl {

void sgd_step(ParameterSet& params, const GradientMap& grads, double lr, double momentum,
              SgdState* state) {
  for (auto& [name, entry] : params) {
    auto it = grads.find(name);
    if (it == grads.end()) continue;
    const Tensor& g = it->second;
    if (!g.same_shape(entry.value))
      throw std::invalid_argument("sgd_step: gradient shape mismatch for " + name);

    if (momentum != 0.0 && state != nullptr) {
      auto& v = state->velocity[name];
      if (v.numel() == 0) v = Tensor::zeros(entry.value.shape());
      for (int64_t i = 0; i < entry.value.numel(); ++i) {
        if (entry.mask[i] == 0.0) {
          entry.value[i] = 0.0;
          continue;
        }
        v[i] = momentum * v[i] + g[i];
        entry.value[i] -= lr * v[i];
      }
    } else {
      for (int64_t i = 0; i < entry.value.numel(); ++i) {
        if (entry.mask[i] == 0.0) {
          entry.value[i] = 0.0;
          continue;
        }
        entry.value[i] -= lr * g[i];
      }
    }
  }
}

void axpy_gradients(GradientMap& dst, const GradientMap& src, double scale) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      Tensor t = Tensor::zeros(g.shape());
      for (int64_t i = 0; i < g.numel(); ++i) t[i] = scale * g[i];
      dst[name] = std::move(t);
    } else {
      if (!it->second.same_shape(g))
        throw std::invalid_argument("axpy_gradients: shape mismatch for " + name);
      for (int64_t i = 0; i < g.numel(); ++i) it->second[i] += scale * g[i];
    }
  }
}

}  // namespace psfl
