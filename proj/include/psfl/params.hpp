// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "psfl/tensor.hpp"

namespace psfl {

/// Parameter identifier -> gradient tensor of identical shape.
using GradientMap = std::map<std::string, Tensor>;

/// One named weight tensor plus its persistent binary prune mask
/// (1 = active, 0 = pruned; masked positions hold the value exactly 0).
/// Non-prunable tensors keep an all-active mask forever.
struct ParamEntry {
  Tensor value;
  Tensor mask;
  bool prunable = true;
};

/// Flat named collection of weight tensors; the unit of aggregation,
/// pruning, and transfer. Iteration order is the lexicographic name order,
/// which keeps every consumer deterministic.
class ParameterSet {
public:
  void add(const std::string& name, Tensor value, bool prunable = true) {
    ParamEntry e;
    e.mask = Tensor::ones(value.shape());
    e.value = std::move(value);
    e.prunable = prunable;
    entries_[name] = std::move(e);
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  Tensor& value(const std::string& name) { return entries_.at(name).value; }
  const Tensor& value(const std::string& name) const { return entries_.at(name).value; }
  Tensor& mask(const std::string& name) { return entries_.at(name).mask; }
  const Tensor& mask(const std::string& name) const { return entries_.at(name).mask; }
  bool prunable(const std::string& name) const { return entries_.at(name).prunable; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& [k, e] : entries_) n += e.value.numel();
    return n;
  }

  int64_t prunable_count() const {
    int64_t n = 0;
    for (const auto& [k, e] : entries_)
      if (e.prunable) n += e.value.numel();
    return n;
  }

  /// Active positions across all tensors (non-prunable masks are all-ones).
  int64_t active_count() const {
    int64_t n = 0;
    for (const auto& [k, e] : entries_)
      for (int64_t i = 0; i < e.mask.numel(); ++i)
        if (e.mask[i] != 0.0) ++n;
    return n;
  }

  int64_t active_prunable_count() const {
    int64_t n = 0;
    for (const auto& [k, e] : entries_) {
      if (!e.prunable) continue;
      for (int64_t i = 0; i < e.mask.numel(); ++i)
        if (e.mask[i] != 0.0) ++n;
    }
    return n;
  }

  /// Zero every masked value (idempotent).
  void apply_mask() {
    for (auto& [k, e] : entries_)
      for (int64_t i = 0; i < e.mask.numel(); ++i)
        if (e.mask[i] == 0.0) e.value[i] = 0.0;
  }

  GradientMap zero_gradients() const {
    GradientMap g;
    for (const auto& [k, e] : entries_) g[k] = Tensor::zeros(e.value.shape());
    return g;
  }

private:
  std::map<std::string, ParamEntry> entries_;
};

/// Plain SGD with optional momentum. Masked positions receive no update and
/// are re-zeroed, so pruned weights stay exactly 0 through local training.
struct SgdState {
  std::map<std::string, Tensor> velocity;
};

void sgd_step(ParameterSet& params, const GradientMap& grads, double lr, double momentum = 0.0,
              SgdState* state = nullptr);

/// Accumulate `src` into `dst` with coefficient `scale` (shapes must agree).
void axpy_gradients(GradientMap& dst, const GradientMap& src, double scale);

}  // namespace psfl
