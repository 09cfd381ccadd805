#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "segchange/tensor.hpp"

namespace segchange::ad {

// Reverse-mode autodiff over Tensor values. Graphs are built per forward
// pass; parameters are long-lived leaves whose gradients accumulate until
// explicitly zeroed, so minibatch members can be backpropagated one at a
// time.
struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily to value's shape
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backprop;  // adds into parents' grads

  void ensure_grad() {
    if (!grad.same_shape(value)) grad = Tensor(value.shape());
  }
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor v);
Var param(Tensor v);

// Seeds root->grad with `seed` (root must be scalar) and accumulates into
// every reachable grad; pre-existing leaf gradients are added to, not reset.
void backward(const Var& root, double seed = 1.0);

// --- elementwise ---
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var abs(Var a);
Var sigmoid(Var a);

// --- linear algebra ---
Var matmul(Var a, Var b);            // (m,k)x(k,n) -> (m,n)
Var transpose(Var a);                // 2-D
Var linear(Var x, Var w, Var b);     // x:(n,in) w:(out,in) b:(out) -> (n,out)
Var add_rowvec(Var a, Var r);        // a:(n,d) + broadcast r:(1,d)
Var softmax_rows(Var a);             // stabilized, per row

// --- reductions / structure ---
Var sum(Var a);                      // -> (1)
Var mean(Var a);                     // -> (1)
Var colwise_max(Var a);              // (r,c) -> (c); ties go to lowest row
Var reshape(Var a, std::vector<int> shape);
Var concat_rows(Var a, Var b);       // (n1,d)+(n2,d) -> (n1+n2,d)
Var concat_channels(Var a, Var b);   // (c1,h,w)+(c2,h,w) -> (c1+c2,h,w)
Var slice_rows(Var a, int r0, int r1);

// --- conv / spatial ---
Var conv2d(Var x, Var w, Var b, int stride, int pad);  // x:(C,H,W) w:(OC,C,kh,kw)
Var upsample_nearest2(Var x);                          // (C,H,W) -> (C,2H,2W)
Var upsample_bilinear(Var x, int factor);              // align_corners=false
Var global_avg_pool(Var x);                            // (C,H,W) -> (C)
Var channel_scale(Var x, Var s);                       // x:(C,H,W) * s:(C)

// --- normalization ---
Var layernorm_rows(Var x, Var gain, Var bias, double eps = 1e-5);      // (n,d)
Var layernorm_channels(Var x, Var gain, Var bias, double eps = 1e-5);  // (C,H,W)

// --- token/map views ---
Var tokens_from_map(Var x);                // (C,H,W) -> (H*W, C), row-major
Var map_from_tokens(Var t, int h, int w);  // inverse

// Pairwise additive attention scores: out[i][j] = sum_k w[k]*max(0, u[i][k]+v[j][k]).
// Recomputes the ReLU mask in the backward pass instead of storing an
// (n,m,k) intermediate.
Var additive_scores(Var u, Var v, Var w);

// --- losses (targets are plain data, not differentiated) ---
Var bce_with_logits_mean(Var logits, const Tensor& target);
// 1 - (2*sum(p*t)+1)/(sum(p)+sum(t)+1) with p = sigmoid(logits).
Var dice_loss(Var logits, const Tensor& target);

}  // namespace segchange::ad
