// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "psfl/params.hpp"
#include "psfl/rng.hpp"
#include "psfl/tensor.hpp"

namespace psfl::ad {

/// Floor applied inside log() for the probability losses.
inline constexpr double kLogFloor = 1e-12;

class Graph;

/// Handle to a node of a Graph. Values are immutable once created; a graph
/// instance is confined to one thread of execution, but any number of
/// independent graphs may run concurrently.
struct Value {
  Graph* graph = nullptr;
  int id = -1;
  const Tensor& val() const;
};

/// Define-by-run reverse-mode tape. Forward values are computed eagerly as
/// ops are applied; backward() walks the tape in reverse creation order.
class Graph {
public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Value leaf(Tensor value, bool requires_grad = false);

  /// Named differentiable leaf; names must be unique within a graph.
  Value param(const std::string& name, const Tensor& value);

  Value constant(Tensor value) { return leaf(std::move(value), false); }

  Value make_node(Tensor value, const std::vector<Value>& inputs, BackwardFn backward);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  const Tensor& value(Value v) const { return value(v.id); }
  bool node_requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }

  /// Runs reverse accumulation from a scalar loss node.
  void backward(Value loss);

  /// Gradient of the last backward() w.r.t. a node (zeros if untouched).
  Tensor grad(Value v) const;

  /// Gradients for every named param; params off the loss path map to zeros.
  GradientMap param_grads() const;

  void accumulate(int id, const Tensor& g);

  size_t node_count() const { return nodes_.size(); }

private:
  struct Node {
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
  std::map<std::string, int> params_;
};

// ---- primitive ops ----------------------------------------------------

Value add(Value a, Value b);
Value add_bias(Value a, Value bias);  // [m,n] + [n], broadcast over rows
Value scale(Value a, double c);
Value matmul(Value a, Value b);     // [m,k] x [k,n]
Value matmul_nt(Value a, Value b);  // [m,k] x [n,k]^T
Value relu(Value a);                // subgradient at 0 taken as 0
Value conv2d(Value x, Value w, Value bias, int64_t stride, int64_t pad);
Value conv_transpose2d(Value x, Value w, Value bias, int64_t stride, int64_t pad, int64_t out_h,
                       int64_t out_w);
Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5);
Value reshape(Value x, std::vector<int64_t> shape);
Value concat_cols(const std::vector<Value>& xs);
Value softmax_rows(Value x);  // rank-1 input treated as one row

/// [H,W,C] image -> [N, P*P*C] rows of flattened patches, N = H*W/P^2.
/// Patches are visited row-major; within a patch the layout is (u, v, c).
Value patchify(Value image, int64_t patch);
Value unpatchify(Value rows, int64_t patch, int64_t h, int64_t w, int64_t c);
Value hwc_to_chw(Value image);
Value chw_to_hwc(Value image);

// ---- losses (scalar outputs) -------------------------------------------

Value mse(Value a, Value b);
Value cross_entropy(Value onehot, Value probs);
Value kl_divergence(Value p, Value q);

// ---- gradient verification ----------------------------------------------

struct LossEval {
  double loss = 0.0;
  GradientMap grads;
};

/// Evaluates loss and analytic gradients at a parameter point. Must be
/// deterministic: the checker aborts if two calls at the same point differ.
using LossFn = std::function<LossEval(const ParameterSet&)>;

/// Max over sampled coordinates of
///   |analytic - central_difference| / max(|analytic|, |central|, 1e-8).
/// Coordinates whose first estimate misses the 1e-3 band are re-evaluated at
/// epsilon/8 (guards against finite differencing across a ReLU kink).
double finite_difference_check(const LossFn& fn, const ParameterSet& params, double epsilon,
                               int samples, Rng& rng);

}  // namespace psfl::ad
