#pragma once

#include <array>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "slyk/autograd.hpp"
#include "slyk/losses.hpp"

namespace slyk::nn {

namespace detail {

template <class T>
Tensor<T>* grad_of(Node<T>& self, std::size_t i) {
  auto& in = *self.inputs[i];
  return in.requires_grad ? &in.grad_buffer() : nullptr;
}

template <class T>
using StridedMap = Eigen::Map<MatrixRM<T>, 0, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const MatrixRM<T>, 0, Eigen::OuterStride<>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  SLYK_EXPECT(a.shape() == b.shape(), "add: shape mismatch " << to_string(a.shape()) << " vs " << to_string(b.shape()));
  Tensor<T> out = a.value();
  out.add_(b.value());
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t i = 0; i < 2; ++i)
      if (auto* g = detail::grad_of(self, i)) g->add_(self.grad);
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v *= s;
  return make_result<T>(std::move(out), {a}, [s](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += s * self.grad[i];
  });
}

template <class T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (self.value[i] > T(0)) (*g)[i] += self.grad[i];
  });
}

template <class T>
Var<T> tanh(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.values()) v = std::tanh(v);
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) {
        const T y = self.value[i];
        (*g)[i] += (T(1) - y * y) * self.grad[i];
      }
  });
}

/// Inverted dropout; identity when p == 0 or when not training.
template <class T>
Var<T> dropout(const Var<T>& a, double p, bool training, std::mt19937_64& rng) {
  SLYK_EXPECT(p >= 0.0 && p < 1.0, "dropout: rate " << p << " outside [0, 1)");
  if (!training || p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  const T s = T(1) / T(1.0 - p);
  std::vector<T> mask(a.size());
  for (auto& m : mask) m = keep(rng) ? s : T(0);
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return make_result<T>(std::move(out), {a}, [mask = std::move(mask)](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += mask[i] * self.grad[i];
  });
}

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  return make_result<T>(std::move(out), {a}, [](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// 2D feature ops, (N, D)

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  SLYK_EXPECT(!parts.empty(), "concat: no inputs");
  const int n = parts.front().dim(0);
  std::vector<int> widths;
  int total = 0;
  for (const auto& p : parts) {
    SLYK_EXPECT(p.value().rank() == 2 && p.dim(0) == n, "concat: expected (" << n << ", d) inputs, got "
                                                                             << to_string(p.shape()));
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  Tensor<T> out({n, total});
  auto o = out.matrix();
  int off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    o.middleCols(off, widths[i]) = parts[i].value().matrix();
    off += widths[i];
  }
  return make_result<T>(std::move(out), parts, [widths](Node<T>& self) {
    auto go = self.grad.matrix();
    int off = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (auto* g = detail::grad_of(self, i)) g->matrix() += go.middleCols(off, widths[i]);
      off += widths[i];
    }
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, int begin, int end) {
  SLYK_EXPECT(a.value().rank() == 2 && 0 <= begin && begin <= end && end <= a.dim(1),
              "slice_cols: [" << begin << ", " << end << ") of " << to_string(a.shape()));
  Tensor<T> out({a.dim(0), end - begin});
  out.matrix() = a.value().matrix().middleCols(begin, end - begin);
  return make_result<T>(std::move(out), {a}, [begin, end](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) g->matrix().middleCols(begin, end - begin) += self.grad.matrix();
  });
}

/// y = x W^T + b with x (N, in), W (out, in), b (out).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>* b = nullptr) {
  SLYK_EXPECT(x.value().rank() == 2 && w.value().rank() == 2 && x.dim(1) == w.dim(1),
              "linear: input " << to_string(x.shape()) << " does not match weight " << to_string(w.shape()));
  const int n = x.dim(0), out_dim = w.dim(0);
  Tensor<T> out({n, out_dim});
  out.matrix().noalias() = x.value().matrix() * w.value().matrix().transpose();
  std::vector<Var<T>> inputs{x, w};
  if (b) {
    SLYK_EXPECT(static_cast<int>(b->size()) == out_dim, "linear: bias size mismatch");
    out.matrix().rowwise() += b->value().matrix(1).row(0);
    inputs.push_back(*b);
  }
  return make_result<T>(std::move(out), std::move(inputs), [](Node<T>& self) {
    auto go = self.grad.matrix();
    const auto& xv = self.inputs[0]->value;
    const auto& wv = self.inputs[1]->value;
    if (auto* g = detail::grad_of(self, 0)) g->matrix().noalias() += go * wv.matrix();
    if (auto* g = detail::grad_of(self, 1)) g->matrix().noalias() += go.transpose() * xv.matrix();
    if (self.inputs.size() > 2)
      if (auto* g = detail::grad_of(self, 2)) g->matrix(1) += go.colwise().sum();
  });
}

// ---------------------------------------------------------------------------
// Convolution, NCHW, square kernel

struct ConvGeometry {
  int n, c, h, w, out_c, k, stride, pad, oh, ow;
};

template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::size_t ncols = static_cast<std::size_t>(g.n) * g.oh * g.ow;
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        T* row = cols + (static_cast<std::size_t>(c * g.k + ki) * g.k + kj) * ncols;
        for (int n = 0; n < g.n; ++n) {
          const T* plane = x + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          for (int oy = 0; oy < g.oh; ++oy) {
            T* dst = row + (static_cast<std::size_t>(n) * g.oh + oy) * g.ow;
            const int iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) {
              std::fill(dst, dst + g.ow, T(0));
              continue;
            }
            const T* src = plane + static_cast<std::size_t>(iy) * g.w;
            for (int ox = 0; ox < g.ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
            }
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* dx) {
  const std::size_t ncols = static_cast<std::size_t>(g.n) * g.oh * g.ow;
  for (int c = 0; c < g.c; ++c)
    for (int ki = 0; ki < g.k; ++ki)
      for (int kj = 0; kj < g.k; ++kj) {
        const T* row = cols + (static_cast<std::size_t>(c * g.k + ki) * g.k + kj) * ncols;
        for (int n = 0; n < g.n; ++n) {
          T* plane = dx + (static_cast<std::size_t>(n) * g.c + c) * g.h * g.w;
          for (int oy = 0; oy < g.oh; ++oy) {
            const int iy = oy * g.stride - g.pad + ki;
            if (iy < 0 || iy >= g.h) continue;
            const T* src = row + (static_cast<std::size_t>(n) * g.oh + oy) * g.ow;
            T* dst = plane + static_cast<std::size_t>(iy) * g.w;
            for (int ox = 0; ox < g.ow; ++ox) {
              const int ix = ox * g.stride - g.pad + kj;
              if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
            }
          }
        }
      }
}

/// x (N, C, H, W), w (O, C, k, k), b (O).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* b, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = w.shape();
  SLYK_EXPECT(xs.size() == 4, "conv2d: expected NCHW input, got " << to_string(xs));
  SLYK_EXPECT(ws.size() == 4 && ws[1] == xs[1] && ws[2] == ws[3],
              "conv2d: weight " << to_string(ws) << " incompatible with input " << to_string(xs));
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;
  SLYK_EXPECT(g.oh > 0 && g.ow > 0, "conv2d: input " << to_string(xs) << " too small for kernel " << g.k);

  const int ckk = g.c * g.k * g.k;
  const int hw = g.oh * g.ow;
  const int ncols = g.n * hw;
  auto cols = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(ckk) * ncols);
  im2col(x.value().data(), g, cols->data());

  MatrixRM<T> y = w.value().matrix(g.out_c) * ConstMatMap<T>(cols->data(), ckk, ncols);
  if (b) y.colwise() += b->value().matrix(1).row(0).transpose();

  Tensor<T> out({g.n, g.out_c, g.oh, g.ow});
  for (int n = 0; n < g.n; ++n)
    for (int o = 0; o < g.out_c; ++o)
      std::copy_n(y.data() + static_cast<std::size_t>(o) * ncols + static_cast<std::size_t>(n) * hw, hw,
                  out.data() + (static_cast<std::size_t>(n) * g.out_c + o) * hw);

  std::vector<Var<T>> inputs{x, w};
  if (b) inputs.push_back(*b);
  return make_result<T>(std::move(out), std::move(inputs), [g, cols, ckk, hw, ncols](Node<T>& self) {
    MatrixRM<T> dy(g.out_c, ncols);
    for (int n = 0; n < g.n; ++n)
      for (int o = 0; o < g.out_c; ++o)
        std::copy_n(self.grad.data() + (static_cast<std::size_t>(n) * g.out_c + o) * hw, hw,
                    dy.data() + static_cast<std::size_t>(o) * ncols + static_cast<std::size_t>(n) * hw);
    const auto& wv = self.inputs[1]->value;
    if (auto* gw = detail::grad_of(self, 1))
      gw->matrix(g.out_c).noalias() += dy * ConstMatMap<T>(cols->data(), ckk, ncols).transpose();
    if (self.inputs.size() > 2)
      if (auto* gb = detail::grad_of(self, 2)) gb->matrix(1) += dy.rowwise().sum().transpose();
    if (auto* gx = detail::grad_of(self, 0)) {
      MatrixRM<T> dcols = wv.matrix(g.out_c).transpose() * dy;
      col2im_add(dcols.data(), g, gx->data());
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, C) or (N, C, H, W)

template <class T>
struct BatchNormBuffers {
  Tensor<T>* running_mean;
  Tensor<T>* running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormBuffers<T> buf,
                  bool training) {
  const auto& xs = x.shape();
  SLYK_EXPECT(xs.size() == 2 || xs.size() == 4, "batch_norm: expected (N, C) or NCHW, got " << to_string(xs));
  const int n = xs[0], c = xs[1];
  const int s = xs.size() == 4 ? xs[2] * xs[3] : 1;
  SLYK_EXPECT(static_cast<int>(gamma.size()) == c && static_cast<int>(beta.size()) == c,
              "batch_norm: channel mismatch");
  const T* xv = x.value().data();
  const std::size_t m = static_cast<std::size_t>(n) * s;
  std::vector<T> mean(c), invstd(c);
  auto& rm = *buf.running_mean;
  auto& rv = *buf.running_var;
  for (int ch = 0; ch < c; ++ch) {
    if (training) {
      T sum = 0;
      for (int i = 0; i < n; ++i) {
        const T* p = xv + (static_cast<std::size_t>(i) * c + ch) * s;
        for (int j = 0; j < s; ++j) sum += p[j];
      }
      const T mu = sum / T(m);
      T sq = 0;
      for (int i = 0; i < n; ++i) {
        const T* p = xv + (static_cast<std::size_t>(i) * c + ch) * s;
        for (int j = 0; j < s; ++j) sq += (p[j] - mu) * (p[j] - mu);
      }
      const T var = sq / T(m);
      mean[ch] = mu;
      invstd[ch] = T(1) / std::sqrt(var + T(buf.eps));
      const T unbiased = m > 1 ? var * T(m) / T(m - 1) : var;
      rm[ch] = T(1 - buf.momentum) * rm[ch] + T(buf.momentum) * mu;
      rv[ch] = T(1 - buf.momentum) * rv[ch] + T(buf.momentum) * unbiased;
    } else {
      mean[ch] = rm[ch];
      invstd[ch] = T(1) / std::sqrt(rv[ch] + T(buf.eps));
    }
  }
  Tensor<T> out(xs);
  auto xhat = std::make_shared<AlignedVector<T>>(x.size());
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * s;
      const T gm = gamma.value()[ch], bt = beta.value()[ch];
      for (int j = 0; j < s; ++j) {
        const T h = (xv[base + j] - mean[ch]) * invstd[ch];
        (*xhat)[base + j] = h;
        out[base + j] = gm * h + bt;
      }
    }
  return make_result<T>(
      std::move(out), {x, gamma, beta}, [n, c, s, m, training, xhat, invstd = std::move(invstd)](Node<T>& self) {
        const T* gy = self.grad.data();
        const auto& gm = self.inputs[1]->value;
        std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
        for (int i = 0; i < n; ++i)
          for (int ch = 0; ch < c; ++ch) {
            const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * s;
            for (int j = 0; j < s; ++j) {
              sum_dy[ch] += gy[base + j];
              sum_dy_xhat[ch] += gy[base + j] * (*xhat)[base + j];
            }
          }
        if (auto* g = detail::grad_of(self, 1))
          for (int ch = 0; ch < c; ++ch) (*g)[ch] += sum_dy_xhat[ch];
        if (auto* g = detail::grad_of(self, 2))
          for (int ch = 0; ch < c; ++ch) (*g)[ch] += sum_dy[ch];
        if (auto* g = detail::grad_of(self, 0)) {
          T* gx = g->data();
          for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
              const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * s;
              const T k = gm[ch] * invstd[ch];
              if (training) {
                const T a = sum_dy[ch] / T(m), bcoef = sum_dy_xhat[ch] / T(m);
                for (int j = 0; j < s; ++j) gx[base + j] += k * (gy[base + j] - a - (*xhat)[base + j] * bcoef);
              } else {
                for (int j = 0; j < s; ++j) gx[base + j] += k * gy[base + j];
              }
            }
        }
      });
}

// ---------------------------------------------------------------------------
// Token ops for attention over spatial positions

/// (N, C, H, W) -> (N*H*W, C): one row per spatial position.
template <class T>
Var<T> to_tokens(const Var<T>& x) {
  const auto& xs = x.shape();
  SLYK_EXPECT(xs.size() == 4, "to_tokens: expected NCHW, got " << to_string(xs));
  const int n = xs[0], c = xs[1], l = xs[2] * xs[3];
  Tensor<T> out({n * l, c});
  for (int i = 0; i < n; ++i)
    out.matrix().middleRows(static_cast<Eigen::Index>(i) * l, l) =
        ConstMatMap<T>(x.value().data() + static_cast<std::size_t>(i) * c * l, c, l).transpose();
  return make_result<T>(std::move(out), {x}, [n, c, l](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (int i = 0; i < n; ++i)
        MatMap<T>(g->data() + static_cast<std::size_t>(i) * c * l, c, l) +=
            self.grad.matrix().middleRows(static_cast<Eigen::Index>(i) * l, l).transpose();
  });
}

/// (N*L, C) -> (N, C), mean over each sample's L tokens.
template <class T>
Var<T> token_mean(const Var<T>& x, int n) {
  SLYK_EXPECT(x.value().rank() == 2 && n > 0 && x.dim(0) % n == 0, "token_mean: bad shape " << to_string(x.shape()));
  const int l = x.dim(0) / n, c = x.dim(1);
  Tensor<T> out({n, c});
  for (int i = 0; i < n; ++i)
    out.matrix().row(i) = x.value().matrix().middleRows(static_cast<Eigen::Index>(i) * l, l).colwise().mean();
  return make_result<T>(std::move(out), {x}, [n, l](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (int i = 0; i < n; ++i)
        g->matrix().middleRows(static_cast<Eigen::Index>(i) * l, l).rowwise() +=
            self.grad.matrix().row(i) / T(l);
  });
}

/// Global average pool, (N, C, H, W) -> (N, C).
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& xs = x.shape();
  SLYK_EXPECT(xs.size() == 4, "global_avg_pool: expected NCHW, got " << to_string(xs));
  const int n = xs[0], c = xs[1], l = xs[2] * xs[3];
  Tensor<T> out({n, c});
  const auto planes = x.value().matrix(static_cast<Eigen::Index>(n) * c);
  for (Eigen::Index r = 0; r < planes.rows(); ++r) out[static_cast<std::size_t>(r)] = planes.row(r).mean();
  return make_result<T>(std::move(out), {x}, [n, c, l](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      auto gm = g->matrix(static_cast<Eigen::Index>(n) * c);
      for (Eigen::Index r = 0; r < gm.rows(); ++r) gm.row(r).array() += self.grad[static_cast<std::size_t>(r)] / T(l);
    }
  });
}

/// Scaled dot-product attention split into `heads` along the channel axis.
/// q, k, v: (N*L, C) -> (N*L, C).
template <class T>
Var<T> attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, int n, int heads) {
  SLYK_EXPECT(q.shape() == k.shape() && q.shape() == v.shape() && q.value().rank() == 2,
              "attention: q/k/v shape mismatch");
  SLYK_EXPECT(n > 0 && q.dim(0) % n == 0, "attention: token count " << q.dim(0) << " not divisible by batch " << n);
  const int l = q.dim(0) / n, c = q.dim(1);
  SLYK_EXPECT(heads > 0 && c % heads == 0, "attention: " << heads << " heads do not divide " << c << " channels");
  const int d = c / heads;
  const T sc = T(1) / std::sqrt(T(d));
  auto probs = std::make_shared<AlignedVector<T>>(static_cast<std::size_t>(n) * heads * l * l);
  Tensor<T> out({n * l, c});
  using CMap = detail::ConstStridedMap<T>;
  using SMap = detail::StridedMap<T>;
  const Eigen::OuterStride<> stride(c);
  for (int i = 0; i < n; ++i)
    for (int h = 0; h < heads; ++h) {
      const std::size_t off = static_cast<std::size_t>(i) * l * c + static_cast<std::size_t>(h) * d;
      CMap qm(q.value().data() + off, l, d, stride), km(k.value().data() + off, l, d, stride),
          vm(v.value().data() + off, l, d, stride);
      MatMap<T> p(probs->data() + (static_cast<std::size_t>(i) * heads + h) * l * l, l, l);
      p.noalias() = (qm * km.transpose()) * sc;
      for (int r = 0; r < l; ++r) {
        const T mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
      }
      SMap(out.data() + off, l, d, stride).noalias() = p * vm;
    }
  return make_result<T>(std::move(out), {q, k, v}, [n, l, c, d, heads, sc, probs](Node<T>& self) {
    const Eigen::OuterStride<> stride(c);
    auto* gq = detail::grad_of(self, 0);
    auto* gk = detail::grad_of(self, 1);
    auto* gv = detail::grad_of(self, 2);
    const auto& qv = self.inputs[0]->value;
    const auto& kv = self.inputs[1]->value;
    const auto& vv = self.inputs[2]->value;
    MatrixRM<T> dp(l, l), ds(l, l);
    for (int i = 0; i < n; ++i)
      for (int h = 0; h < heads; ++h) {
        const std::size_t off = static_cast<std::size_t>(i) * l * c + static_cast<std::size_t>(h) * d;
        detail::ConstStridedMap<T> go(self.grad.data() + off, l, d, stride), qm(qv.data() + off, l, d, stride),
            km(kv.data() + off, l, d, stride), vm(vv.data() + off, l, d, stride);
        ConstMatMap<T> p(probs->data() + (static_cast<std::size_t>(i) * heads + h) * l * l, l, l);
        if (gv) detail::StridedMap<T>(gv->data() + off, l, d, stride).noalias() += p.transpose() * go;
        if (!gq && !gk) continue;
        dp.noalias() = go * vm.transpose();
        const auto rowdot = (dp.array() * p.array()).rowwise().sum().eval();
        ds = p.array() * (dp.array().colwise() - rowdot);
        if (gq) detail::StridedMap<T>(gq->data() + off, l, d, stride).noalias() += (ds * km) * sc;
        if (gk) detail::StridedMap<T>(gk->data() + off, l, d, stride).noalias() += (ds.transpose() * qm) * sc;
      }
  });
}

// ---------------------------------------------------------------------------
// Scalar objectives (autograd wrappers around slyk::losses)

template <class T>
Var<T> ssl_loss(const Var<T>& q_v, const Var<T>& q_v2, const Var<T>& z_v, const Var<T>& z_v2,
                const Tensor<T>& zt_v, const Tensor<T>& zt_v2, losses::SslTerms terms) {
  auto r = losses::ssl_loss<T>(q_v.value().matrix(), q_v2.value().matrix(), z_v.value().matrix(),
                               z_v2.value().matrix(), zt_v.matrix(), zt_v2.matrix(), terms);
  auto grads = std::make_shared<std::array<losses::Batch<T>, 4>>(
      std::array<losses::Batch<T>, 4>{std::move(r.grad_q_v), std::move(r.grad_q_v2), std::move(r.grad_z_v),
                                      std::move(r.grad_z_v2)});
  return make_result<T>(Tensor<T>({1}, r.value), {q_v, q_v2, z_v, z_v2}, [grads](Node<T>& self) {
    const T s = self.grad[0];
    for (std::size_t i = 0; i < 4; ++i)
      if (auto* g = detail::grad_of(self, i)) g->matrix() += s * (*grads)[i];
  });
}

/// Weighted gaze loss; `breakdown` receives the batch statistics.
template <class T>
Var<T> sup_loss(const Var<T>& pred, const Tensor<T>& target, const losses::EvConfig& cfg,
                losses::SupLossBreakdown<T>* breakdown = nullptr) {
  SLYK_EXPECT(pred.shape() == target.shape(), "sup_loss: prediction " << to_string(pred.shape()) << " vs target "
                                                                      << to_string(target.shape()));
  const auto b = losses::sup_loss<T>(target.matrix(), pred.value().matrix(), cfg);
  if (breakdown) *breakdown = b;
  auto grad = std::make_shared<losses::Batch<T>>(
      losses::sup_loss_gradient<T>(target.matrix(), pred.value().matrix(), cfg));
  return make_result<T>(Tensor<T>({1}, b.total), {pred}, [grad](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) g->matrix() += self.grad[0] * (*grad);
  });
}

template <class T>
Var<T> mae_loss(const Var<T>& pred, const Tensor<T>& target) {
  SLYK_EXPECT(pred.shape() == target.shape(), "mae_loss: shape mismatch");
  const T value = losses::mae<T>(target.matrix(), pred.value().matrix());
  auto grad = std::make_shared<losses::Batch<T>>(losses::mae_gradient<T>(target.matrix(), pred.value().matrix()));
  return make_result<T>(Tensor<T>({1}, value), {pred}, [grad](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) g->matrix() += self.grad[0] * (*grad);
  });
}

template <class T>
Var<T> weighted_cross_entropy(const Var<T>& logits, std::span<const int> labels, std::span<const T> weights) {
  auto r = losses::weighted_cross_entropy<T>(logits.value().matrix(), labels, weights);
  auto grad = std::make_shared<losses::Batch<T>>(std::move(r.grad_logits));
  return make_result<T>(Tensor<T>({1}, r.value), {logits}, [grad](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0)) g->matrix() += self.grad[0] * (*grad);
  });
}

/// Mean of all elements (test helper and generic reduction).
template <class T>
Var<T> mean_all(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  const T inv = T(1) / T(a.size());
  return make_result<T>(Tensor<T>({1}, s * inv), {a}, [inv](Node<T>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (auto& v : g->values()) v += self.grad[0] * inv;
  });
}

}  // namespace slyk::nn
