#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "psr/tensor.hpp"

namespace psr {

// Reverse-mode tape over Tensor. Graphs are built eagerly by the op
// functions below; backward() walks the DAG once in reverse topological
// order. Nodes whose inputs carry no gradient keep no tape, so pure
// inference forwards hold nothing beyond their own values.
struct Var {
  Tensor val;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Var>> parents;
  std::function<void(Var&)> backprop;  // accumulates this->grad into parents

  void ensure_grad() {
    if (grad.shape != val.shape) grad = Tensor::zeros(val.shape);
  }
};

using VarPtr = std::shared_ptr<Var>;

VarPtr make_const(Tensor v);
VarPtr make_param(Tensor v);

// Seeds d(root)/d(root) = 1 (root must be scalar) and accumulates into
// every reachable parameter's grad. Grads are not cleared first.
void backward(const VarPtr& root);
void zero_grad(const std::vector<VarPtr>& params);

// ---- elementwise ----
VarPtr add(const VarPtr& a, const VarPtr& b);
VarPtr sub(const VarPtr& a, const VarPtr& b);
VarPtr mul(const VarPtr& a, const VarPtr& b);
VarPtr add_scalar(const VarPtr& a, double s);
VarPtr mul_scalar(const VarPtr& a, double s);
VarPtr square(const VarPtr& a);
VarPtr silu(const VarPtr& a);
VarPtr sigmoid(const VarPtr& a);

// ---- reductions ----
VarPtr mean_all(const VarPtr& a);
VarPtr l1_loss(const VarPtr& a, const VarPtr& b);   // mean |a-b|
VarPtr mse_loss(const VarPtr& a, const VarPtr& b);  // mean (a-b)^2

// ---- shape ----
VarPtr reshape(const VarPtr& a, std::vector<int64_t> shape);
VarPtr concat_channels(const std::vector<VarPtr>& xs);  // [N,C_i,H,W] -> [N,sum C_i,H,W]

// ---- neural net primitives ----
// x [N,Ci,H,W], w [Co,Ci,kh,kw], b [Co]; zero padding.
VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad);
// x [N,D], w [O,D], b [O].
VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b);
// x [N,C,H,W], gamma/beta [C].
VarPtr group_norm(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, int groups);
VarPtr nearest_upsample2(const VarPtr& x);
// x [N,C,H,W] + v [N,C] broadcast over the spatial dims.
VarPtr add_channel_vec(const VarPtr& x, const VarPtr& v);
// Batched matmul over leading dim: a [N,p,q] (or [N,q,p] if trans_a), b likewise.
VarPtr bmm(const VarPtr& a, const VarPtr& b, bool trans_a, bool trans_b);
VarPtr softmax_lastdim(const VarPtr& a);

}  // namespace psr
