#include "psr/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace psr {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

VarPtr make_const(Tensor v) {
  auto n = std::make_shared<Var>();
  n->val = std::move(v);
  return n;
}

VarPtr make_param(Tensor v) {
  auto n = std::make_shared<Var>();
  n->val = std::move(v);
  n->requires_grad = true;
  return n;
}

namespace {

VarPtr make_node(Tensor v, std::vector<VarPtr> parents, std::function<void(Var&)> bp) {
  auto n = std::make_shared<Var>();
  n->val = std::move(v);
  for (const auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

}  // namespace

void backward(const VarPtr& root) {
  if (root->val.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // Reverse topological order via iterative post-order DFS.
  std::vector<Var*> order;
  std::unordered_set<Var*> visited;
  std::vector<std::pair<Var*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Var* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backprop) (*it)->backprop(**it);
}

void zero_grad(const std::vector<VarPtr>& params) {
  for (const auto& p : params) {
    p->ensure_grad();
    p->grad.fill(0.0);
  }
}

// ---- elementwise ----

VarPtr add(const VarPtr& a, const VarPtr& b) {
  check_same_shape(a->val, b->val, "add");
  Tensor v = a->val;
  for (int64_t i = 0; i < v.numel(); ++i) v[i] += b->val[i];
  return make_node(std::move(v), {a, b}, [a, b](Var& out) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < out.grad.numel(); ++i) a->grad[i] += out.grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < out.grad.numel(); ++i) b->grad[i] += out.grad[i];
    }
  });
}

VarPtr sub(const VarPtr& a, const VarPtr& b) {
  check_same_shape(a->val, b->val, "sub");
  Tensor v = a->val;
  for (int64_t i = 0; i < v.numel(); ++i) v[i] -= b->val[i];
  return make_node(std::move(v), {a, b}, [a, b](Var& out) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < out.grad.numel(); ++i) a->grad[i] += out.grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < out.grad.numel(); ++i) b->grad[i] -= out.grad[i];
    }
  });
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
  check_same_shape(a->val, b->val, "mul");
  Tensor v = a->val;
  for (int64_t i = 0; i < v.numel(); ++i) v[i] *= b->val[i];
  return make_node(std::move(v), {a, b}, [a, b](Var& out) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int64_t i = 0; i < out.grad.numel(); ++i) a->grad[i] += out.grad[i] * b->val[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t i = 0; i < out.grad.numel(); ++i) b->grad[i] += out.grad[i] * a->val[i];
    }
  });
}

VarPtr add_scalar(const VarPtr& a, double s) {
  Tensor v = a->val;
  for (double& x : v.data) x += s;
  return make_node(std::move(v), {a}, [a](Var& out) {
    a->ensure_grad();
    for (int64_t i = 0; i < out.grad.numel(); ++i) a->grad[i] += out.grad[i];
  });
}

VarPtr mul_scalar(const VarPtr& a, double s) {
  Tensor v = a->val;
  for (double& x : v.data) x *= s;
  return make_node(std::move(v), {a}, [a, s](Var& out) {
    a->ensure_grad();
    for (int64_t i = 0; i < out.grad.numel(); ++i) a->grad[i] += s * out.grad[i];
  });
}

VarPtr square(const VarPtr& a) {
  Tensor v = a->val;
  for (double& x : v.data) x *= x;
  return make_node(std::move(v), {a}, [a](Var& out) {
    a->ensure_grad();
    for (int64_t i = 0; i < out.grad.numel(); ++i) a->grad[i] += 2.0 * a->val[i] * out.grad[i];
  });
}

VarPtr silu(const VarPtr& a) {
  Tensor v = a->val;
  for (double& x : v.data) x = x / (1.0 + std::exp(-x));
  return make_node(std::move(v), {a}, [a](Var& out) {
    a->ensure_grad();
    for (int64_t i = 0; i < out.grad.numel(); ++i) {
      double x = a->val[i];
      double s = 1.0 / (1.0 + std::exp(-x));
      a->grad[i] += out.grad[i] * (s + x * s * (1.0 - s));
    }
  });
}

VarPtr sigmoid(const VarPtr& a) {
  Tensor v = a->val;
  for (double& x : v.data) x = 1.0 / (1.0 + std::exp(-x));
  return make_node(std::move(v), {a}, [a](Var& out) {
    a->ensure_grad();
    for (int64_t i = 0; i < out.grad.numel(); ++i) {
      double s = out.val[i];
      a->grad[i] += out.grad[i] * s * (1.0 - s);
    }
  });
}

// ---- reductions ----

VarPtr mean_all(const VarPtr& a) {
  double acc = 0.0;
  for (double x : a->val.data) acc += x;
  int64_t n = a->val.numel();
  Tensor v({1});
  v[0] = acc / static_cast<double>(n);
  return make_node(std::move(v), {a}, [a, n](Var& out) {
    a->ensure_grad();
    double g = out.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) a->grad[i] += g;
  });
}

VarPtr l1_loss(const VarPtr& a, const VarPtr& b) {
  check_same_shape(a->val, b->val, "l1_loss");
  int64_t n = a->val.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += std::abs(a->val[i] - b->val[i]);
  Tensor v({1});
  v[0] = acc / static_cast<double>(n);
  return make_node(std::move(v), {a, b}, [a, b, n](Var& out) {
    double g = out.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      double d = a->val[i] - b->val[i];
      double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad[i] += g * s;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad[i] -= g * s;
      }
    }
  });
}

VarPtr mse_loss(const VarPtr& a, const VarPtr& b) {
  check_same_shape(a->val, b->val, "mse_loss");
  int64_t n = a->val.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double d = a->val[i] - b->val[i];
    acc += d * d;
  }
  Tensor v({1});
  v[0] = acc / static_cast<double>(n);
  return make_node(std::move(v), {a, b}, [a, b, n](Var& out) {
    double g = 2.0 * out.grad[0] / static_cast<double>(n);
    for (int64_t i = 0; i < n; ++i) {
      double d = a->val[i] - b->val[i];
      if (a->requires_grad) {
        a->ensure_grad();
        a->grad[i] += g * d;
      }
      if (b->requires_grad) {
        b->ensure_grad();
        b->grad[i] -= g * d;
      }
    }
  });
}

// ---- shape ----

VarPtr reshape(const VarPtr& a, std::vector<int64_t> shape) {
  Tensor v = a->val.reshaped(std::move(shape));
  return make_node(std::move(v), {a}, [a](Var& out) {
    a->ensure_grad();
    for (int64_t i = 0; i < out.grad.numel(); ++i) a->grad[i] += out.grad[i];
  });
}

VarPtr concat_channels(const std::vector<VarPtr>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
  int64_t n = xs[0]->val.dim(0), h = xs[0]->val.dim(2), w = xs[0]->val.dim(3);
  int64_t ctot = 0;
  for (const auto& x : xs) {
    if (x->val.ndim() != 4 || x->val.dim(0) != n || x->val.dim(2) != h || x->val.dim(3) != w)
      throw std::invalid_argument("concat_channels: incompatible shapes");
    ctot += x->val.dim(1);
  }
  Tensor v({n, ctot, h, w});
  int64_t plane = h * w;
  int64_t coff = 0;
  for (const auto& x : xs) {
    int64_t c = x->val.dim(1);
    for (int64_t in = 0; in < n; ++in)
      std::copy_n(x->val.data.begin() + in * c * plane, c * plane,
                  v.data.begin() + (in * ctot + coff) * plane);
    coff += c;
  }
  return make_node(std::move(v), xs, [xs, n, ctot, plane](Var& out) {
    int64_t coff = 0;
    for (const auto& x : xs) {
      int64_t c = x->val.dim(1);
      if (x->requires_grad) {
        x->ensure_grad();
        for (int64_t in = 0; in < n; ++in)
          for (int64_t i = 0; i < c * plane; ++i)
            x->grad[in * c * plane + i] += out.grad[(in * ctot + coff) * plane + i];
      }
      coff += c;
    }
  });
}

// ---- conv2d ----

namespace {

struct ConvDims {
  int64_t n, ci, h, w, co, kh, kw, ho, wo;
  int stride, pad;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, int stride, int pad) {
  if (x.ndim() != 4 || wt.ndim() != 4) throw std::invalid_argument("conv2d: rank mismatch");
  if (x.dim(1) != wt.dim(1)) throw std::invalid_argument("conv2d: channel mismatch");
  ConvDims d;
  d.n = x.dim(0);
  d.ci = x.dim(1);
  d.h = x.dim(2);
  d.w = x.dim(3);
  d.co = wt.dim(0);
  d.kh = wt.dim(2);
  d.kw = wt.dim(3);
  d.stride = stride;
  d.pad = pad;
  d.ho = (d.h + 2 * pad - d.kh) / stride + 1;
  d.wo = (d.w + 2 * pad - d.kw) / stride + 1;
  if (d.ho < 1 || d.wo < 1) throw std::invalid_argument("conv2d: output would be empty");
  return d;
}

void im2col(const double* x, const ConvDims& d, double* col) {
  // col is [ci*kh*kw, ho*wo]
  int64_t owo = d.ho * d.wo;
  for (int64_t c = 0; c < d.ci; ++c)
    for (int64_t i = 0; i < d.kh; ++i)
      for (int64_t j = 0; j < d.kw; ++j) {
        double* dst = col + ((c * d.kh + i) * d.kw + j) * owo;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          int64_t iy = oy * d.stride + i - d.pad;
          if (iy < 0 || iy >= d.h) {
            for (int64_t ox = 0; ox < d.wo; ++ox) dst[oy * d.wo + ox] = 0.0;
            continue;
          }
          const double* src = x + (c * d.h + iy) * d.w;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            int64_t ix = ox * d.stride + j - d.pad;
            dst[oy * d.wo + ox] = (ix >= 0 && ix < d.w) ? src[ix] : 0.0;
          }
        }
      }
}

void col2im_add(const double* col, const ConvDims& d, double* dx) {
  int64_t owo = d.ho * d.wo;
  for (int64_t c = 0; c < d.ci; ++c)
    for (int64_t i = 0; i < d.kh; ++i)
      for (int64_t j = 0; j < d.kw; ++j) {
        const double* src = col + ((c * d.kh + i) * d.kw + j) * owo;
        for (int64_t oy = 0; oy < d.ho; ++oy) {
          int64_t iy = oy * d.stride + i - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          double* dst = dx + (c * d.h + iy) * d.w;
          for (int64_t ox = 0; ox < d.wo; ++ox) {
            int64_t ix = ox * d.stride + j - d.pad;
            if (ix >= 0 && ix < d.w) dst[ix] += src[oy * d.wo + ox];
          }
        }
      }
}

}  // namespace

VarPtr conv2d(const VarPtr& x, const VarPtr& w, const VarPtr& b, int stride, int pad) {
  ConvDims d = conv_dims(x->val, w->val, stride, pad);
  if (b->val.numel() != d.co) throw std::invalid_argument("conv2d: bias size mismatch");
  int64_t k2 = d.ci * d.kh * d.kw, owo = d.ho * d.wo;
  Tensor y({d.n, d.co, d.ho, d.wo});

#pragma omp parallel for schedule(static)
  for (int64_t in = 0; in < d.n; ++in) {
    std::vector<double> col(static_cast<size_t>(k2 * owo));
    im2col(x->val.data.data() + in * d.ci * d.h * d.w, d, col.data());
    CMapMat W(w->val.data.data(), d.co, k2);
    CMapMat C(col.data(), k2, owo);
    MapMat Y(y.data.data() + in * d.co * owo, d.co, owo);
    Y.noalias() = W * C;
    for (int64_t c = 0; c < d.co; ++c) Y.row(c).array() += b->val[c];
  }

  return make_node(std::move(y), {x, w, b}, [x, w, b, d, k2, owo](Var& out) {
    // Per-sample weight-gradient partials, reduced in index order so the
    // result is identical no matter how many threads ran.
    std::vector<Tensor> dw_part, db_part;
    bool need_w = w->requires_grad;
    bool need_b = b->requires_grad;
    bool need_x = x->requires_grad;
    if (need_w) dw_part.assign(static_cast<size_t>(d.n), Tensor::zeros({d.co, k2}));
    if (need_b) db_part.assign(static_cast<size_t>(d.n), Tensor::zeros({d.co}));
    if (need_x) x->ensure_grad();

#pragma omp parallel for schedule(static)
    for (int64_t in = 0; in < d.n; ++in) {
      std::vector<double> col(static_cast<size_t>(k2 * owo));
      im2col(x->val.data.data() + in * d.ci * d.h * d.w, d, col.data());
      CMapMat Cm(col.data(), k2, owo);
      CMapMat dY(out.grad.data.data() + in * d.co * owo, d.co, owo);
      if (need_w) {
        MapMat dW(dw_part[static_cast<size_t>(in)].data.data(), d.co, k2);
        dW.noalias() = dY * Cm.transpose();
      }
      if (need_b) {
        // Plain sequential sums; vectorized reductions over raw maps pick
        // alignment-dependent peeling and break run-to-run determinism.
        const double* dy = out.grad.data.data() + in * d.co * owo;
        for (int64_t c = 0; c < d.co; ++c) {
          double acc = 0.0;
          for (int64_t i = 0; i < owo; ++i) acc += dy[c * owo + i];
          db_part[static_cast<size_t>(in)][c] = acc;
        }
      }
      if (need_x) {
        std::vector<double> dcol(static_cast<size_t>(k2 * owo));
        MapMat dC(dcol.data(), k2, owo);
        CMapMat W(w->val.data.data(), d.co, k2);
        dC.noalias() = W.transpose() * dY;
        col2im_add(dcol.data(), d, x->grad.data.data() + in * d.ci * d.h * d.w);
      }
    }

    if (need_w) {
      w->ensure_grad();
      for (int64_t in = 0; in < d.n; ++in)
        for (int64_t i = 0; i < w->grad.numel(); ++i)
          w->grad[i] += dw_part[static_cast<size_t>(in)][i];
    }
    if (need_b) {
      b->ensure_grad();
      for (int64_t in = 0; in < d.n; ++in)
        for (int64_t c = 0; c < d.co; ++c) b->grad[c] += db_part[static_cast<size_t>(in)][c];
    }
  });
}

VarPtr linear(const VarPtr& x, const VarPtr& w, const VarPtr& b) {
  if (x->val.ndim() != 2 || w->val.ndim() != 2)
    throw std::invalid_argument("linear: rank mismatch");
  int64_t n = x->val.dim(0), din = x->val.dim(1), dout = w->val.dim(0);
  if (w->val.dim(1) != din || b->val.numel() != dout)
    throw std::invalid_argument("linear: shape mismatch");
  Tensor y({n, dout});
  {
    CMapMat X(x->val.data.data(), n, din);
    CMapMat W(w->val.data.data(), dout, din);
    MapMat Y(y.data.data(), n, dout);
    Y.noalias() = X * W.transpose();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < dout; ++j) Y(i, j) += b->val[j];
  }
  return make_node(std::move(y), {x, w, b}, [x, w, b, n, din, dout](Var& out) {
    CMapMat dY(out.grad.data.data(), n, dout);
    if (x->requires_grad) {
      x->ensure_grad();
      MapMat dX(x->grad.data.data(), n, din);
      CMapMat W(w->val.data.data(), dout, din);
      dX.noalias() += dY * W;
    }
    if (w->requires_grad) {
      w->ensure_grad();
      MapMat dW(w->grad.data.data(), dout, din);
      CMapMat X(x->val.data.data(), n, din);
      dW.noalias() += dY.transpose() * X;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int64_t j = 0; j < dout; ++j) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) acc += out.grad[i * dout + j];
        b->grad[j] += acc;
      }
    }
  });
}

VarPtr group_norm(const VarPtr& x, const VarPtr& gamma, const VarPtr& beta, int groups) {
  if (x->val.ndim() != 4) throw std::invalid_argument("group_norm: rank mismatch");
  int64_t n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
  if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible");
  if (gamma->val.numel() != c || beta->val.numel() != c)
    throw std::invalid_argument("group_norm: affine size mismatch");
  constexpr double eps = 1e-5;
  int64_t cg = c / groups, m = cg * h * w, plane = h * w;

  Tensor y(x->val.shape);
  // Cache mean / inverse stddev per (sample, group) for the backward pass.
  auto stats = std::make_shared<Tensor>(Tensor::zeros({n, static_cast<int64_t>(groups), 2}));

#pragma omp parallel for schedule(static)
  for (int64_t ing = 0; ing < n * groups; ++ing) {
    int64_t in = ing / groups, g = ing % groups;
    const double* xs = x->val.data.data() + (in * c + g * cg) * plane;
    double mean = 0.0;
    for (int64_t i = 0; i < m; ++i) mean += xs[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (int64_t i = 0; i < m; ++i) {
      double dv = xs[i] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(m);
    double inv_std = 1.0 / std::sqrt(var + eps);
    stats->at(in, g, 0) = mean;
    stats->at(in, g, 1) = inv_std;
    double* ys = y.data.data() + (in * c + g * cg) * plane;
    for (int64_t cc = 0; cc < cg; ++cc) {
      double ga = gamma->val[g * cg + cc], be = beta->val[g * cg + cc];
      for (int64_t i = 0; i < plane; ++i)
        ys[cc * plane + i] = ga * (xs[cc * plane + i] - mean) * inv_std + be;
    }
  }

  return make_node(std::move(y), {x, gamma, beta},
                   [x, gamma, beta, stats, n, c, groups, cg, m, plane](Var& out) {
    bool need_x = x->requires_grad;
    bool need_affine = gamma->requires_grad || beta->requires_grad;
    if (need_x) x->ensure_grad();
    std::vector<Tensor> dg_part, db_part;
    if (need_affine) {
      dg_part.assign(static_cast<size_t>(n), Tensor::zeros({c}));
      db_part.assign(static_cast<size_t>(n), Tensor::zeros({c}));
    }

#pragma omp parallel for schedule(static)
    for (int64_t in = 0; in < n; ++in) {
      for (int64_t g = 0; g < groups; ++g) {
        const double* xs = x->val.data.data() + (in * c + g * cg) * plane;
        const double* dy = out.grad.data.data() + (in * c + g * cg) * plane;
        double mean = stats->at(in, g, 0), inv_std = stats->at(in, g, 1);
        // dxhat sums for the normalization backward.
        double s1 = 0.0, s2 = 0.0;
        for (int64_t cc = 0; cc < cg; ++cc) {
          double ga = gamma->val[g * cg + cc];
          for (int64_t i = 0; i < plane; ++i) {
            double xh = (xs[cc * plane + i] - mean) * inv_std;
            double dxh = dy[cc * plane + i] * ga;
            s1 += dxh;
            s2 += dxh * xh;
            if (need_affine) {
              dg_part[static_cast<size_t>(in)][g * cg + cc] += dy[cc * plane + i] * xh;
              db_part[static_cast<size_t>(in)][g * cg + cc] += dy[cc * plane + i];
            }
          }
        }
        if (need_x) {
          double* dx = x->grad.data.data() + (in * c + g * cg) * plane;
          double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t cc = 0; cc < cg; ++cc) {
            double ga = gamma->val[g * cg + cc];
            for (int64_t i = 0; i < plane; ++i) {
              double xh = (xs[cc * plane + i] - mean) * inv_std;
              double dxh = dy[cc * plane + i] * ga;
              dx[cc * plane + i] += inv_std * (dxh - inv_m * (s1 + xh * s2));
            }
          }
        }
      }
    }

    if (gamma->requires_grad) {
      gamma->ensure_grad();
      for (int64_t in = 0; in < n; ++in)
        for (int64_t j = 0; j < c; ++j) gamma->grad[j] += dg_part[static_cast<size_t>(in)][j];
    }
    if (beta->requires_grad) {
      beta->ensure_grad();
      for (int64_t in = 0; in < n; ++in)
        for (int64_t j = 0; j < c; ++j) beta->grad[j] += db_part[static_cast<size_t>(in)][j];
    }
  });
}

VarPtr nearest_upsample2(const VarPtr& x) {
  if (x->val.ndim() != 4) throw std::invalid_argument("nearest_upsample2: rank mismatch");
  int64_t n = x->val.dim(0), c = x->val.dim(1), h = x->val.dim(2), w = x->val.dim(3);
  Tensor y({n, c, 2 * h, 2 * w});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const double* src = x->val.data.data() + nc * h * w;
    double* dst = y.data.data() + nc * 4 * h * w;
    for (int64_t iy = 0; iy < h; ++iy)
      for (int64_t ix = 0; ix < w; ++ix) {
        double v = src[iy * w + ix];
        dst[(2 * iy) * 2 * w + 2 * ix] = v;
        dst[(2 * iy) * 2 * w + 2 * ix + 1] = v;
        dst[(2 * iy + 1) * 2 * w + 2 * ix] = v;
        dst[(2 * iy + 1) * 2 * w + 2 * ix + 1] = v;
      }
  }
  return make_node(std::move(y), {x}, [x, n, c, h, w](Var& out) {
    x->ensure_grad();
    for (int64_t nc = 0; nc < n * c; ++nc) {
      const double* dy = out.grad.data.data() + nc * 4 * h * w;
      double* dx = x->grad.data.data() + nc * h * w;
      for (int64_t iy = 0; iy < h; ++iy)
        for (int64_t ix = 0; ix < w; ++ix)
          dx[iy * w + ix] += dy[(2 * iy) * 2 * w + 2 * ix] + dy[(2 * iy) * 2 * w + 2 * ix + 1] +
                             dy[(2 * iy + 1) * 2 * w + 2 * ix] +
                             dy[(2 * iy + 1) * 2 * w + 2 * ix + 1];
    }
  });
}

VarPtr add_channel_vec(const VarPtr& x, const VarPtr& v) {
  if (x->val.ndim() != 4 || v->val.ndim() != 2)
    throw std::invalid_argument("add_channel_vec: rank mismatch");
  int64_t n = x->val.dim(0), c = x->val.dim(1), plane = x->val.dim(2) * x->val.dim(3);
  if (v->val.dim(0) != n || v->val.dim(1) != c)
    throw std::invalid_argument("add_channel_vec: shape mismatch");
  Tensor y = x->val;
  for (int64_t in = 0; in < n; ++in)
    for (int64_t cc = 0; cc < c; ++cc) {
      double add = v->val.at(in, cc);
      double* dst = y.data.data() + (in * c + cc) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] += add;
    }
  return make_node(std::move(y), {x, v}, [x, v, n, c, plane](Var& out) {
    if (x->requires_grad) {
      x->ensure_grad();
      for (int64_t i = 0; i < out.grad.numel(); ++i) x->grad[i] += out.grad[i];
    }
    if (v->requires_grad) {
      v->ensure_grad();
      for (int64_t in = 0; in < n; ++in)
        for (int64_t cc = 0; cc < c; ++cc) {
          const double* dy = out.grad.data.data() + (in * c + cc) * plane;
          double acc = 0.0;
          for (int64_t i = 0; i < plane; ++i) acc += dy[i];
          v->grad.at(in, cc) += acc;
        }
    }
  });
}

VarPtr bmm(const VarPtr& a, const VarPtr& b, bool trans_a, bool trans_b) {
  if (a->val.ndim() != 3 || b->val.ndim() != 3) throw std::invalid_argument("bmm: rank mismatch");
  int64_t n = a->val.dim(0);
  if (b->val.dim(0) != n) throw std::invalid_argument("bmm: batch mismatch");
  int64_t ar = a->val.dim(1), ac = a->val.dim(2);
  int64_t br = b->val.dim(1), bc = b->val.dim(2);
  int64_t p = trans_a ? ac : ar, q = trans_a ? ar : ac;
  int64_t q2 = trans_b ? bc : br, r = trans_b ? br : bc;
  if (q != q2) throw std::invalid_argument("bmm: inner dimension mismatch");
  Tensor y({n, p, r});

#pragma omp parallel for schedule(static)
  for (int64_t in = 0; in < n; ++in) {
    CMapMat A(a->val.data.data() + in * ar * ac, ar, ac);
    CMapMat B(b->val.data.data() + in * br * bc, br, bc);
    MapMat Y(y.data.data() + in * p * r, p, r);
    if (!trans_a && !trans_b)
      Y.noalias() = A * B;
    else if (trans_a && !trans_b)
      Y.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b)
      Y.noalias() = A * B.transpose();
    else
      Y.noalias() = A.transpose() * B.transpose();
  }

  return make_node(std::move(y), {a, b},
                   [a, b, trans_a, trans_b, n, ar, ac, br, bc, p, r](Var& out) {
    if (a->requires_grad) a->ensure_grad();
    if (b->requires_grad) b->ensure_grad();
#pragma omp parallel for schedule(static)
    for (int64_t in = 0; in < n; ++in) {
      CMapMat A(a->val.data.data() + in * ar * ac, ar, ac);
      CMapMat B(b->val.data.data() + in * br * bc, br, bc);
      CMapMat dY(out.grad.data.data() + in * p * r, p, r);
      if (a->requires_grad) {
        MapMat dA(a->grad.data.data() + in * ar * ac, ar, ac);
        // dA = dY * op(B)^T, transposed back into A's layout when needed.
        if (!trans_a && !trans_b)
          dA.noalias() += dY * B.transpose();
        else if (!trans_a && trans_b)
          dA.noalias() += dY * B;
        else if (trans_a && !trans_b)
          dA.noalias() += B * dY.transpose();
        else
          dA.noalias() += B.transpose() * dY.transpose();
      }
      if (b->requires_grad) {
        MapMat dB(b->grad.data.data() + in * br * bc, br, bc);
        if (!trans_a && !trans_b)
          dB.noalias() += A.transpose() * dY;
        else if (!trans_a && trans_b)
          dB.noalias() += dY.transpose() * A;
        else if (trans_a && !trans_b)
          dB.noalias() += A * dY;
        else
          dB.noalias() += dY.transpose() * A.transpose();
      }
    }
  });
}

VarPtr softmax_lastdim(const VarPtr& a) {
  int64_t last = a->val.dim(a->val.ndim() - 1);
  int64_t rows = a->val.numel() / last;
  Tensor y = a->val;
  for (int64_t r = 0; r < rows; ++r) {
    double* row = y.data.data() + r * last;
    double mx = row[0];
    for (int64_t i = 1; i < last; ++i) mx = std::max(mx, row[i]);
    double sum = 0.0;
    for (int64_t i = 0; i < last; ++i) {
      row[i] = std::exp(row[i] - mx);
      sum += row[i];
    }
    for (int64_t i = 0; i < last; ++i) row[i] /= sum;
  }
  return make_node(std::move(y), {a}, [a, rows, last](Var& out) {
    a->ensure_grad();
    for (int64_t r = 0; r < rows; ++r) {
      const double* yv = out.val.data.data() + r * last;
      const double* dy = out.grad.data.data() + r * last;
      double dot = 0.0;
      for (int64_t i = 0; i < last; ++i) dot += yv[i] * dy[i];
      double* da = a->grad.data.data() + r * last;
      for (int64_t i = 0; i < last; ++i) da[i] += yv[i] * (dy[i] - dot);
    }
  });
}

}  // namespace psr
