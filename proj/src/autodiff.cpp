#include "segchange/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "segchange/errors.hpp"

namespace segchange::ad {

namespace {

void require(bool cond, const char* msg) {
  if (!cond) throw ShapeError(msg);
}

Var make_node(Tensor value, std::vector<Var> parents) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  return n;
}

}  // namespace

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

Var param(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  n->ensure_grad();
  return n;
}

void backward(const Var& root, double seed) {
  require(root->value.numel() == 1, "backward: root must be scalar");
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  visited.insert(root.get());
  stack.push_back({root.get(), 0});
  while (!stack.empty()) {
    auto& top = stack.back();
    Node* n = top.first;
    if (top.second < n->parents.size()) {
      Node* p = n->parents[top.second++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (Node* n : order) n->ensure_grad();
  root->grad[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop();
  }
}

// ---------------------------------------------------------------- elementwise

Var add(Var a, Var b) {
  require(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] + b->value[i];
  auto n = make_node(std::move(out), {a, b});
  n->backprop = [self = n.get(), pa = a.get(), pb = b.get()] {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self->grad.numel(); ++i) pa->grad[i] += self->grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self->grad.numel(); ++i) pb->grad[i] += self->grad[i];
  };
  return n;
}

Var sub(Var a, Var b) {
  require(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] - b->value[i];
  auto n = make_node(std::move(out), {a, b});
  n->backprop = [self = n.get(), pa = a.get(), pb = b.get()] {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self->grad.numel(); ++i) pa->grad[i] += self->grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self->grad.numel(); ++i) pb->grad[i] -= self->grad[i];
  };
  return n;
}

Var mul(Var a, Var b) {
  require(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * b->value[i];
  auto n = make_node(std::move(out), {a, b});
  n->backprop = [self = n.get(), pa = a.get(), pb = b.get()] {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self->grad.numel(); ++i)
        pa->grad[i] += self->grad[i] * pb->value[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < self->grad.numel(); ++i)
        pb->grad[i] += self->grad[i] * pa->value[i];
  };
  return n;
}

Var scale(Var a, double s) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] * s;
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get(), s] {
    if (pa->requires_grad)
      for (std::size_t i = 0; i < self->grad.numel(); ++i) pa->grad[i] += self->grad[i] * s;
  };
  return n;
}

Var relu(Var a) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->value[i] > 0.0 ? a->value[i] : 0.0;
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get()] {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.numel(); ++i)
      if (pa->value[i] > 0.0) pa->grad[i] += self->grad[i];
  };
  return n;
}

Var abs(Var a) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(a->value[i]);
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get()] {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.numel(); ++i) {
      const double x = pa->value[i];
      if (x > 0.0)
        pa->grad[i] += self->grad[i];
      else if (x < 0.0)
        pa->grad[i] -= self->grad[i];
    }
  };
  return n;
}

Var sigmoid(Var a) {
  Tensor out(a->value.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) {
    const double x = a->value[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get()] {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.numel(); ++i) {
      const double y = self->value[i];
      pa->grad[i] += self->grad[i] * y * (1.0 - y);
    }
  };
  return n;
}

// ------------------------------------------------------------- linear algebra

Var matmul(Var a, Var b) {
  require(a->value.ndim() == 2 && b->value.ndim() == 2, "matmul: need 2-D operands");
  require(a->value.dim(1) == b->value.dim(0), "matmul: inner dims differ");
  const int m = a->value.dim(0), k = a->value.dim(1), p = b->value.dim(1);
  Tensor out({m, p});
  for (int i = 0; i < m; ++i) {
    double* orow = out.data() + static_cast<std::size_t>(i) * p;
    const double* arow = a->value.data() + static_cast<std::size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b->value.data() + static_cast<std::size_t>(kk) * p;
      for (int j = 0; j < p; ++j) orow[j] += av * brow[j];
    }
  }
  auto n = make_node(std::move(out), {a, b});
  n->backprop = [self = n.get(), pa = a.get(), pb = b.get(), m, k, p] {
    // dA = dC * B^T ; dB = A^T * dC
    if (pa->requires_grad) {
      for (int i = 0; i < m; ++i) {
        const double* grow = self->grad.data() + static_cast<std::size_t>(i) * p;
        double* garow = pa->grad.data() + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double* brow = pb->value.data() + static_cast<std::size_t>(kk) * p;
          double acc = 0.0;
          for (int j = 0; j < p; ++j) acc += grow[j] * brow[j];
          garow[kk] += acc;
        }
      }
    }
    if (pb->requires_grad) {
      for (int i = 0; i < m; ++i) {
        const double* grow = self->grad.data() + static_cast<std::size_t>(i) * p;
        const double* arow = pa->value.data() + static_cast<std::size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const double av = arow[kk];
          if (av == 0.0) continue;
          double* gbrow = pb->grad.data() + static_cast<std::size_t>(kk) * p;
          for (int j = 0; j < p; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  };
  return n;
}

Var transpose(Var a) {
  require(a->value.ndim() == 2, "transpose: need 2-D");
  const int r = a->value.dim(0), c = a->value.dim(1);
  Tensor out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = a->value.at(i, j);
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get(), r, c] {
    if (!pa->requires_grad) return;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) pa->grad.at(i, j) += self->grad.at(j, i);
  };
  return n;
}

Var linear(Var x, Var w, Var b) {
  require(x->value.ndim() == 2 && w->value.ndim() == 2 && b->value.ndim() == 1,
          "linear: bad ranks");
  require(x->value.dim(1) == w->value.dim(1), "linear: in-width mismatch");
  require(w->value.dim(0) == b->value.dim(0), "linear: bias width mismatch");
  const int n_rows = x->value.dim(0), in = x->value.dim(1), out_w = w->value.dim(0);
  Tensor out({n_rows, out_w});
  for (int i = 0; i < n_rows; ++i) {
    const double* xrow = x->value.data() + static_cast<std::size_t>(i) * in;
    double* orow = out.data() + static_cast<std::size_t>(i) * out_w;
    for (int o = 0; o < out_w; ++o) {
      const double* wrow = w->value.data() + static_cast<std::size_t>(o) * in;
      double acc = b->value[o];
      for (int k = 0; k < in; ++k) acc += xrow[k] * wrow[k];
      orow[o] = acc;
    }
  }
  auto n = make_node(std::move(out), {x, w, b});
  n->backprop = [self = n.get(), px = x.get(), pw = w.get(), pb = b.get(), n_rows, in, out_w] {
    const bool need_w = pw->requires_grad, need_x = px->requires_grad;
    for (int i = 0; i < n_rows; ++i) {
      const double* grow = self->grad.data() + static_cast<std::size_t>(i) * out_w;
      const double* xrow = px->value.data() + static_cast<std::size_t>(i) * in;
      for (int o = 0; o < out_w; ++o) {
        const double g = grow[o];
        if (g == 0.0) continue;
        if (pb->requires_grad) pb->grad[o] += g;
        const double* wrow = pw->value.data() + static_cast<std::size_t>(o) * in;
        if (need_w) {
          double* gwrow = pw->grad.data() + static_cast<std::size_t>(o) * in;
          for (int k = 0; k < in; ++k) gwrow[k] += g * xrow[k];
        }
        if (need_x) {
          double* gxrow = px->grad.data() + static_cast<std::size_t>(i) * in;
          for (int k = 0; k < in; ++k) gxrow[k] += g * wrow[k];
        }
      }
    }
  };
  return n;
}

Var add_rowvec(Var a, Var r) {
  require(a->value.ndim() == 2 && r->value.ndim() == 2 && r->value.dim(0) == 1,
          "add_rowvec: need (n,d) and (1,d)");
  require(a->value.dim(1) == r->value.dim(1), "add_rowvec: width mismatch");
  const int rows = a->value.dim(0), d = a->value.dim(1);
  Tensor out({rows, d});
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = a->value.at(i, j) + r->value.at(0, j);
  auto n = make_node(std::move(out), {a, r});
  n->backprop = [self = n.get(), pa = a.get(), pr = r.get(), rows, d] {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < d; ++j) {
        const double g = self->grad.at(i, j);
        if (pa->requires_grad) pa->grad.at(i, j) += g;
        if (pr->requires_grad) pr->grad.at(0, j) += g;
      }
  };
  return n;
}

Var softmax_rows(Var a) {
  require(a->value.ndim() == 2, "softmax_rows: need 2-D");
  const int rows = a->value.dim(0), cols = a->value.dim(1);
  Tensor out({rows, cols});
  for (int i = 0; i < rows; ++i) {
    const double* x = a->value.data() + static_cast<std::size_t>(i) * cols;
    double* y = out.data() + static_cast<std::size_t>(i) * cols;
    double mx = x[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
    double z = 0.0;
    for (int j = 0; j < cols; ++j) {
      y[j] = std::exp(x[j] - mx);
      z += y[j];
    }
    for (int j = 0; j < cols; ++j) y[j] /= z;
  }
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get(), rows, cols] {
    if (!pa->requires_grad) return;
    for (int i = 0; i < rows; ++i) {
      const double* y = self->value.data() + static_cast<std::size_t>(i) * cols;
      const double* g = self->grad.data() + static_cast<std::size_t>(i) * cols;
      double dot = 0.0;
      for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
      double* gx = pa->grad.data() + static_cast<std::size_t>(i) * cols;
      for (int j = 0; j < cols; ++j) gx[j] += y[j] * (g[j] - dot);
    }
  };
  return n;
}

// ---------------------------------------------------------------- reductions

Var sum(Var a) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) acc += a->value[i];
  auto n = make_node(Tensor::scalar(acc), {a});
  n->backprop = [self = n.get(), pa = a.get()] {
    if (!pa->requires_grad) return;
    const double g = self->grad[0];
    for (std::size_t i = 0; i < pa->grad.numel(); ++i) pa->grad[i] += g;
  };
  return n;
}

Var mean(Var a) {
  return scale(sum(a), 1.0 / static_cast<double>(a->value.numel()));
}

Var colwise_max(Var a) {
  require(a->value.ndim() == 2, "colwise_max: need 2-D");
  const int rows = a->value.dim(0), cols = a->value.dim(1);
  Tensor out({cols});
  std::vector<int> argmax(static_cast<std::size_t>(cols), 0);
  for (int j = 0; j < cols; ++j) {
    double best = a->value.at(0, j);
    int bi = 0;
    for (int i = 1; i < rows; ++i) {
      if (a->value.at(i, j) > best) {
        best = a->value.at(i, j);
        bi = i;
      }
    }
    out[static_cast<std::size_t>(j)] = best;
    argmax[static_cast<std::size_t>(j)] = bi;
  }
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get(), cols, argmax = std::move(argmax)] {
    if (!pa->requires_grad) return;
    for (int j = 0; j < cols; ++j)
      pa->grad.at(argmax[static_cast<std::size_t>(j)], j) += self->grad[static_cast<std::size_t>(j)];
  };
  return n;
}

Var reshape(Var a, std::vector<int> shape) {
  Tensor out = a->value.reshaped(std::move(shape));
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get()] {
    if (!pa->requires_grad) return;
    for (std::size_t i = 0; i < self->grad.numel(); ++i) pa->grad[i] += self->grad[i];
  };
  return n;
}

Var concat_rows(Var a, Var b) {
  require(a->value.ndim() == 2 && b->value.ndim() == 2, "concat_rows: need 2-D");
  require(a->value.dim(1) == b->value.dim(1), "concat_rows: width mismatch");
  const int n1 = a->value.dim(0), n2 = b->value.dim(0), d = a->value.dim(1);
  Tensor out({n1 + n2, d});
  for (std::size_t i = 0; i < a->value.numel(); ++i) out[i] = a->value[i];
  for (std::size_t i = 0; i < b->value.numel(); ++i) out[a->value.numel() + i] = b->value[i];
  auto n = make_node(std::move(out), {a, b});
  n->backprop = [self = n.get(), pa = a.get(), pb = b.get()] {
    const std::size_t na = pa->value.numel();
    if (pa->requires_grad)
      for (std::size_t i = 0; i < na; ++i) pa->grad[i] += self->grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < pb->value.numel(); ++i) pb->grad[i] += self->grad[na + i];
  };
  return n;
}

Var concat_channels(Var a, Var b) {
  require(a->value.ndim() == 3 && b->value.ndim() == 3, "concat_channels: need 3-D");
  require(a->value.dim(1) == b->value.dim(1) && a->value.dim(2) == b->value.dim(2),
          "concat_channels: spatial mismatch");
  const int c1 = a->value.dim(0), c2 = b->value.dim(0);
  const int h = a->value.dim(1), w = a->value.dim(2);
  Tensor out({c1 + c2, h, w});
  for (std::size_t i = 0; i < a->value.numel(); ++i) out[i] = a->value[i];
  for (std::size_t i = 0; i < b->value.numel(); ++i) out[a->value.numel() + i] = b->value[i];
  auto n = make_node(std::move(out), {a, b});
  n->backprop = [self = n.get(), pa = a.get(), pb = b.get()] {
    const std::size_t na = pa->value.numel();
    if (pa->requires_grad)
      for (std::size_t i = 0; i < na; ++i) pa->grad[i] += self->grad[i];
    if (pb->requires_grad)
      for (std::size_t i = 0; i < pb->value.numel(); ++i) pb->grad[i] += self->grad[na + i];
  };
  return n;
}

Var slice_rows(Var a, int r0, int r1) {
  require(a->value.ndim() == 2, "slice_rows: need 2-D");
  require(0 <= r0 && r0 < r1 && r1 <= a->value.dim(0), "slice_rows: bad range");
  const int d = a->value.dim(1);
  Tensor out({r1 - r0, d});
  for (int i = r0; i < r1; ++i)
    for (int j = 0; j < d; ++j) out.at(i - r0, j) = a->value.at(i, j);
  auto n = make_node(std::move(out), {a});
  n->backprop = [self = n.get(), pa = a.get(), r0, r1, d] {
    if (!pa->requires_grad) return;
    for (int i = r0; i < r1; ++i)
      for (int j = 0; j < d; ++j) pa->grad.at(i, j) += self->grad.at(i - r0, j);
  };
  return n;
}

// ------------------------------------------------------------- conv / spatial

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  require(x->value.ndim() == 3 && w->value.ndim() == 4 && b->value.ndim() == 1,
          "conv2d: bad ranks");
  require(x->value.dim(0) == w->value.dim(1), "conv2d: channel mismatch");
  require(w->value.dim(0) == b->value.dim(0), "conv2d: bias mismatch");
  require(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int OC = w->value.dim(0), KH = w->value.dim(2), KW = w->value.dim(3);
  const int OH = (H + 2 * pad - KH) / stride + 1;
  const int OW = (W + 2 * pad - KW) / stride + 1;
  require(OH >= 1 && OW >= 1, "conv2d: output collapses");
  Tensor out({OC, OH, OW});
  for (int oc = 0; oc < OC; ++oc) {
    for (int oy = 0; oy < OH; ++oy) {
      const int iy0 = oy * stride - pad;
      for (int ox = 0; ox < OW; ++ox) {
        const int ix0 = ox * stride - pad;
        double acc = b->value[oc];
        for (int ic = 0; ic < C; ++ic) {
          for (int ky = std::max(0, -iy0); ky < std::min(KH, H - iy0); ++ky) {
            const double* xrow =
                x->value.data() + (static_cast<std::size_t>(ic) * H + (iy0 + ky)) * W;
            const double* wrow =
                w->value.data() +
                ((static_cast<std::size_t>(oc) * C + ic) * KH + ky) * KW;
            for (int kx = std::max(0, -ix0); kx < std::min(KW, W - ix0); ++kx)
              acc += xrow[ix0 + kx] * wrow[kx];
          }
        }
        out.at(oc, oy, ox) = acc;
      }
    }
  }
  auto n = make_node(std::move(out), {x, w, b});
  n->backprop = [self = n.get(), px = x.get(), pw = w.get(), pb = b.get(), stride, pad, C, H, W,
                 OC, KH, KW] {
    const int OH = self->value.dim(1), OW = self->value.dim(2);
    const bool gx = px->requires_grad, gw = pw->requires_grad, gb = pb->requires_grad;
    for (int oc = 0; oc < OC; ++oc) {
      for (int oy = 0; oy < OH; ++oy) {
        const int iy0 = oy * stride - pad;
        for (int ox = 0; ox < OW; ++ox) {
          const double g = self->grad.at(oc, oy, ox);
          if (g == 0.0) continue;
          const int ix0 = ox * stride - pad;
          if (gb) pb->grad[oc] += g;
          for (int ic = 0; ic < C; ++ic) {
            for (int ky = std::max(0, -iy0); ky < std::min(KH, H - iy0); ++ky) {
              const std::size_t xoff = (static_cast<std::size_t>(ic) * H + (iy0 + ky)) * W;
              const std::size_t woff =
                  ((static_cast<std::size_t>(oc) * C + ic) * KH + ky) * KW;
              for (int kx = std::max(0, -ix0); kx < std::min(KW, W - ix0); ++kx) {
                if (gw) pw->grad[woff + kx] += g * px->value[xoff + ix0 + kx];
                if (gx) px->grad[xoff + ix0 + kx] += g * pw->value[woff + kx];
              }
            }
          }
        }
      }
    }
  };
  return n;
}

Var upsample_nearest2(Var x) {
  require(x->value.ndim() == 3, "upsample_nearest2: need 3-D");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  Tensor out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int xx = 0; xx < 2 * W; ++xx) out.at(c, y, xx) = x->value.at(c, y / 2, xx / 2);
  auto n = make_node(std::move(out), {x});
  n->backprop = [self = n.get(), px = x.get(), C, H, W] {
    if (!px->requires_grad) return;
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < 2 * H; ++y)
        for (int xx = 0; xx < 2 * W; ++xx)
          px->grad.at(c, y / 2, xx / 2) += self->grad.at(c, y, xx);
  };
  return n;
}

Var upsample_bilinear(Var x, int factor) {
  require(x->value.ndim() == 3, "upsample_bilinear: need 3-D");
  require(factor >= 1, "upsample_bilinear: factor >= 1");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int OH = H * factor, OW = W * factor;
  // align_corners=false: src = (dst + 0.5)/factor - 0.5, edges clamped.
  auto src_of = [factor](int o, int limit, int& i0, int& i1, double& t) {
    double s = (o + 0.5) / factor - 0.5;
    if (s < 0.0) s = 0.0;
    if (s > limit - 1) s = limit - 1;
    i0 = static_cast<int>(std::floor(s));
    if (i0 > limit - 1) i0 = limit - 1;
    i1 = std::min(i0 + 1, limit - 1);
    t = s - i0;
  };
  Tensor out({C, OH, OW});
  for (int c = 0; c < C; ++c) {
    for (int oy = 0; oy < OH; ++oy) {
      int y0, y1;
      double ty;
      src_of(oy, H, y0, y1, ty);
      for (int ox = 0; ox < OW; ++ox) {
        int x0, x1;
        double tx;
        src_of(ox, W, x0, x1, tx);
        out.at(c, oy, ox) = (1 - ty) * (1 - tx) * x->value.at(c, y0, x0) +
                            (1 - ty) * tx * x->value.at(c, y0, x1) +
                            ty * (1 - tx) * x->value.at(c, y1, x0) +
                            ty * tx * x->value.at(c, y1, x1);
      }
    }
  }
  auto n = make_node(std::move(out), {x});
  n->backprop = [self = n.get(), px = x.get(), C, H, W, OH, OW, src_of] {
    if (!px->requires_grad) return;
    for (int c = 0; c < C; ++c) {
      for (int oy = 0; oy < OH; ++oy) {
        int y0, y1;
        double ty;
        src_of(oy, H, y0, y1, ty);
        for (int ox = 0; ox < OW; ++ox) {
          int x0, x1;
          double tx;
          src_of(ox, W, x0, x1, tx);
          const double g = self->grad.at(c, oy, ox);
          px->grad.at(c, y0, x0) += g * (1 - ty) * (1 - tx);
          px->grad.at(c, y0, x1) += g * (1 - ty) * tx;
          px->grad.at(c, y1, x0) += g * ty * (1 - tx);
          px->grad.at(c, y1, x1) += g * ty * tx;
        }
      }
    }
  };
  return n;
}

Var global_avg_pool(Var x) {
  require(x->value.ndim() == 3, "global_avg_pool: need 3-D");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const double inv = 1.0 / (static_cast<double>(H) * W);
  Tensor out({C});
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) acc += x->value.at(c, y, xx);
    out[static_cast<std::size_t>(c)] = acc * inv;
  }
  auto n = make_node(std::move(out), {x});
  n->backprop = [self = n.get(), px = x.get(), C, H, W, inv] {
    if (!px->requires_grad) return;
    for (int c = 0; c < C; ++c) {
      const double g = self->grad[static_cast<std::size_t>(c)] * inv;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) px->grad.at(c, y, xx) += g;
    }
  };
  return n;
}

Var channel_scale(Var x, Var s) {
  require(x->value.ndim() == 3 && s->value.ndim() == 1, "channel_scale: bad ranks");
  require(x->value.dim(0) == s->value.dim(0), "channel_scale: channel mismatch");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c) {
    const double sv = s->value[static_cast<std::size_t>(c)];
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) out.at(c, y, xx) = x->value.at(c, y, xx) * sv;
  }
  auto n = make_node(std::move(out), {x, s});
  n->backprop = [self = n.get(), px = x.get(), ps = s.get(), C, H, W] {
    for (int c = 0; c < C; ++c) {
      const double sv = ps->value[static_cast<std::size_t>(c)];
      double sacc = 0.0;
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) {
          const double g = self->grad.at(c, y, xx);
          if (px->requires_grad) px->grad.at(c, y, xx) += g * sv;
          sacc += g * px->value.at(c, y, xx);
        }
      if (ps->requires_grad) ps->grad[static_cast<std::size_t>(c)] += sacc;
    }
  };
  return n;
}

// -------------------------------------------------------------- normalization

namespace {

// Shared LN kernel over contiguous rows of width d.
void ln_forward(const double* x, const double* gain, const double* bias, double eps, int rows,
                int d, std::size_t row_stride, double* y, double* mu_out, double* inv_sd_out) {
  for (int i = 0; i < rows; ++i) {
    const double* xr = x + static_cast<std::size_t>(i) * row_stride;
    double* yr = y + static_cast<std::size_t>(i) * row_stride;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    const double inv_sd = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < d; ++j) yr[j] = gain[j] * ((xr[j] - mu) * inv_sd) + bias[j];
    mu_out[i] = mu;
    inv_sd_out[i] = inv_sd;
  }
}

void ln_backward(const double* x, const double* gain, const double* mu, const double* inv_sd,
                 const double* gy, int rows, int d, std::size_t row_stride, bool need_x,
                 double* gx, bool need_gb, double* ggain, double* gbias) {
  for (int i = 0; i < rows; ++i) {
    const double* xr = x + static_cast<std::size_t>(i) * row_stride;
    const double* gr = gy + static_cast<std::size_t>(i) * row_stride;
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (int j = 0; j < d; ++j) {
      const double xhat = (xr[j] - mu[i]) * inv_sd[i];
      const double dxhat = gr[j] * gain[j];
      mean_dxhat += dxhat;
      mean_dxhat_xhat += dxhat * xhat;
      if (need_gb) {
        ggain[j] += gr[j] * xhat;
        gbias[j] += gr[j];
      }
    }
    mean_dxhat /= d;
    mean_dxhat_xhat /= d;
    if (need_x) {
      double* gxr = gx + static_cast<std::size_t>(i) * row_stride;
      for (int j = 0; j < d; ++j) {
        const double xhat = (xr[j] - mu[i]) * inv_sd[i];
        const double dxhat = gr[j] * gain[j];
        gxr[j] += inv_sd[i] * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
      }
    }
  }
}

}  // namespace

Var layernorm_rows(Var x, Var gain, Var bias, double eps) {
  require(x->value.ndim() == 2, "layernorm_rows: need 2-D");
  const int rows = x->value.dim(0), d = x->value.dim(1);
  require(gain->value.ndim() == 1 && gain->value.dim(0) == d, "layernorm_rows: gain width");
  require(bias->value.ndim() == 1 && bias->value.dim(0) == d, "layernorm_rows: bias width");
  Tensor out({rows, d});
  std::vector<double> mu(static_cast<std::size_t>(rows)), inv_sd(static_cast<std::size_t>(rows));
  ln_forward(x->value.data(), gain->value.data(), bias->value.data(), eps, rows, d,
             static_cast<std::size_t>(d), out.data(), mu.data(), inv_sd.data());
  auto n = make_node(std::move(out), {x, gain, bias});
  n->backprop = [self = n.get(), px = x.get(), pg = gain.get(), pb = bias.get(), rows, d,
                 mu = std::move(mu), inv_sd = std::move(inv_sd)] {
    ln_backward(px->value.data(), pg->value.data(), mu.data(), inv_sd.data(), self->grad.data(),
                rows, d, static_cast<std::size_t>(d), px->requires_grad, px->grad.data(),
                pg->requires_grad, pg->grad.data(), pb->grad.data());
  };
  return n;
}

Var layernorm_channels(Var x, Var gain, Var bias, double eps) {
  require(x->value.ndim() == 3, "layernorm_channels: need 3-D");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  require(gain->value.ndim() == 1 && gain->value.dim(0) == C, "layernorm_channels: gain width");
  require(bias->value.ndim() == 1 && bias->value.dim(0) == C, "layernorm_channels: bias width");
  // Normalize across channels at each spatial position: view as (H*W, C)
  // tokens, run the row kernel, view back.
  const int n_pos = H * W;
  Tensor xt({n_pos, C});
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < n_pos; ++p) xt.at(p, c) = x->value[static_cast<std::size_t>(c) * n_pos + p];
  Tensor yt({n_pos, C});
  std::vector<double> mu(static_cast<std::size_t>(n_pos)), inv_sd(static_cast<std::size_t>(n_pos));
  ln_forward(xt.data(), gain->value.data(), bias->value.data(), eps, n_pos, C,
             static_cast<std::size_t>(C), yt.data(), mu.data(), inv_sd.data());
  Tensor out({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < n_pos; ++p) out[static_cast<std::size_t>(c) * n_pos + p] = yt.at(p, c);
  auto n = make_node(std::move(out), {x, gain, bias});
  n->backprop = [self = n.get(), px = x.get(), pg = gain.get(), pb = bias.get(), C, n_pos,
                 xt = std::move(xt), mu = std::move(mu), inv_sd = std::move(inv_sd)] {
    Tensor gyt({n_pos, C});
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < n_pos; ++p)
        gyt.at(p, c) = self->grad[static_cast<std::size_t>(c) * n_pos + p];
    Tensor gxt({n_pos, C});
    ln_backward(xt.data(), pg->value.data(), mu.data(), inv_sd.data(), gyt.data(), n_pos, C,
                static_cast<std::size_t>(C), px->requires_grad, gxt.data(), pg->requires_grad,
                pg->grad.data(), pb->grad.data());
    if (px->requires_grad)
      for (int c = 0; c < C; ++c)
        for (int p = 0; p < n_pos; ++p)
          px->grad[static_cast<std::size_t>(c) * n_pos + p] += gxt.at(p, c);
  };
  return n;
}

// ----------------------------------------------------------- token/map views

Var tokens_from_map(Var x) {
  require(x->value.ndim() == 3, "tokens_from_map: need 3-D");
  const int C = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int n_tok = H * W;
  Tensor out({n_tok, C});
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < n_tok; ++p) out.at(p, c) = x->value[static_cast<std::size_t>(c) * n_tok + p];
  auto n = make_node(std::move(out), {x});
  n->backprop = [self = n.get(), px = x.get(), C, n_tok] {
    if (!px->requires_grad) return;
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < n_tok; ++p)
        px->grad[static_cast<std::size_t>(c) * n_tok + p] += self->grad.at(p, c);
  };
  return n;
}

Var map_from_tokens(Var t, int h, int w) {
  require(t->value.ndim() == 2, "map_from_tokens: need 2-D");
  require(t->value.dim(0) == h * w, "map_from_tokens: token count != h*w");
  const int C = t->value.dim(1), n_tok = h * w;
  Tensor out({C, h, w});
  for (int c = 0; c < C; ++c)
    for (int p = 0; p < n_tok; ++p) out[static_cast<std::size_t>(c) * n_tok + p] = t->value.at(p, c);
  auto n = make_node(std::move(out), {t});
  n->backprop = [self = n.get(), pt = t.get(), C, n_tok] {
    if (!pt->requires_grad) return;
    for (int c = 0; c < C; ++c)
      for (int p = 0; p < n_tok; ++p)
        pt->grad.at(p, c) += self->grad[static_cast<std::size_t>(c) * n_tok + p];
  };
  return n;
}

// ------------------------------------------------------------ attention score

Var additive_scores(Var u, Var v, Var w) {
  require(u->value.ndim() == 2 && v->value.ndim() == 2 && w->value.ndim() == 1,
          "additive_scores: bad ranks");
  require(u->value.dim(1) == v->value.dim(1) && u->value.dim(1) == w->value.dim(0),
          "additive_scores: width mismatch");
  const int nu = u->value.dim(0), nv = v->value.dim(0), d = u->value.dim(1);
  Tensor out({nu, nv});
  for (int i = 0; i < nu; ++i) {
    const double* ur = u->value.data() + static_cast<std::size_t>(i) * d;
    for (int j = 0; j < nv; ++j) {
      const double* vr = v->value.data() + static_cast<std::size_t>(j) * d;
      double acc = 0.0;
      for (int k = 0; k < d; ++k) {
        const double pre = ur[k] + vr[k];
        if (pre > 0.0) acc += w->value[static_cast<std::size_t>(k)] * pre;
      }
      out.at(i, j) = acc;
    }
  }
  auto n = make_node(std::move(out), {u, v, w});
  n->backprop = [self = n.get(), pu = u.get(), pv = v.get(), pw = w.get(), nu, nv, d] {
    const bool need_u = pu->requires_grad, need_v = pv->requires_grad,
               need_w = pw->requires_grad;
    for (int i = 0; i < nu; ++i) {
      const double* ur = pu->value.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j < nv; ++j) {
        const double g = self->grad.at(i, j);
        if (g == 0.0) continue;
        const double* vr = pv->value.data() + static_cast<std::size_t>(j) * d;
        for (int k = 0; k < d; ++k) {
          const double pre = ur[k] + vr[k];
          if (pre <= 0.0) continue;
          const double gw = g * pw->value[static_cast<std::size_t>(k)];
          if (need_u) pu->grad.at(i, k) += gw;
          if (need_v) pv->grad.at(j, k) += gw;
          if (need_w) pw->grad[static_cast<std::size_t>(k)] += g * pre;
        }
      }
    }
  };
  return n;
}

// ------------------------------------------------------------------- losses

Var bce_with_logits_mean(Var logits, const Tensor& target) {
  require(logits->value.same_shape(target), "bce: shape mismatch");
  const std::size_t n_el = logits->value.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n_el; ++i) {
    const double x = logits->value[i];
    const double t = target[i];
    acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  acc /= static_cast<double>(n_el);
  auto n = make_node(Tensor::scalar(acc), {logits});
  n->backprop = [self = n.get(), pl = logits.get(), target, n_el] {
    if (!pl->requires_grad) return;
    const double g = self->grad[0] / static_cast<double>(n_el);
    for (std::size_t i = 0; i < n_el; ++i) {
      const double x = pl->value[i];
      const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      pl->grad[i] += g * (s - target[i]);
    }
  };
  return n;
}

Var dice_loss(Var logits, const Tensor& target) {
  require(logits->value.same_shape(target), "dice: shape mismatch");
  const std::size_t n_el = logits->value.numel();
  std::vector<double> p(n_el);
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < n_el; ++i) {
    const double x = logits->value[i];
    p[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    inter += p[i] * target[i];
    psum += p[i];
    tsum += target[i];
  }
  const double num = 2.0 * inter + 1.0;
  const double den = psum + tsum + 1.0;
  auto n = make_node(Tensor::scalar(1.0 - num / den), {logits});
  n->backprop = [self = n.get(), pl = logits.get(), target, p = std::move(p), num, den, n_el] {
    if (!pl->requires_grad) return;
    const double g = self->grad[0];
    for (std::size_t i = 0; i < n_el; ++i) {
      // d/dp_i of (1 - num/den) = (num - 2*t_i*den) / den^2
      const double dp = (num - 2.0 * target[i] * den) / (den * den);
      pl->grad[i] += g * dp * p[i] * (1.0 - p[i]);
    }
  };
  return n;
}

}  // namespace segchange::ad
