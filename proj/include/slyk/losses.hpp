#pragma once

// Training objectives as pure functions over row-major batches (one sample per
// row). Each objective returns its value together with the analytic gradient
// with respect to the trainable inputs; the autograd layer wraps these.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

#include "slyk/errors.hpp"

namespace slyk::losses {

template <class T>
using Batch = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using BatchRef = Eigen::Ref<const Batch<T>>;

// ---------------------------------------------------------------------------
// Negative cosine similarity

template <class T>
T negative_cosine(std::span<const T> a, std::span<const T> b) {
  SLYK_EXPECT(a.size() == b.size(), "negative_cosine: dimension mismatch " << a.size() << " vs " << b.size());
  T ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  SLYK_EXPECT(aa > T(0) && bb > T(0), "negative_cosine: zero-norm input");
  return -ab / (std::sqrt(aa) * std::sqrt(bb));
}

template <class T>
struct CosineResult {
  T value{};
  Batch<T> grad_a;  // d value / d a
  Batch<T> grad_b;  // d value / d b
};

/// Batch mean of -cos(a_i, b_i).
template <class T>
CosineResult<T> negative_cosine_batch(const BatchRef<T>& a, const BatchRef<T>& b) {
  SLYK_EXPECT(a.rows() == b.rows() && a.cols() == b.cols(),
              "negative_cosine: shape mismatch " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x"
                                                 << b.cols());
  SLYK_EXPECT(a.rows() > 0, "negative_cosine: empty batch");
  const auto n = a.rows();
  CosineResult<T> r;
  r.grad_a.resize(a.rows(), a.cols());
  r.grad_b.resize(b.rows(), b.cols());
  T total = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const T na = a.row(i).norm();
    const T nb = b.row(i).norm();
    SLYK_EXPECT(na > T(0) && nb > T(0), "negative_cosine: zero-norm input in row " << i);
    const T c = a.row(i).dot(b.row(i)) / (na * nb);
    total += c;
    const T s = T(-1) / T(n);
    r.grad_a.row(i) = s * (b.row(i) / (na * nb) - c * a.row(i) / (na * na));
    r.grad_b.row(i) = s * (a.row(i) / (na * nb) - c * b.row(i) / (nb * nb));
  }
  r.value = -total / T(n);
  return r;
}

// ---------------------------------------------------------------------------
// Symmetrized self-supervised objective

enum class SslTerms {
  kFour,  // prediction-vs-target and projection-vs-target, both view orders
  kTwo,   // plain BYOL: prediction-vs-target only
};

template <class T>
struct SslLossInputs {
  Batch<T> q_v, q_v2;    // online predictions for views v, v'
  Batch<T> z_v, z_v2;    // online projections
  Batch<T> zt_v, zt_v2;  // target projections (constants)
};

template <class T>
struct SslLossResult {
  T value{};
  Batch<T> grad_q_v, grad_q_v2, grad_z_v, grad_z_v2;
};

template <class T>
SslLossResult<T> ssl_loss(const BatchRef<T>& q_v, const BatchRef<T>& q_v2, const BatchRef<T>& z_v,
                          const BatchRef<T>& z_v2, const BatchRef<T>& zt_v, const BatchRef<T>& zt_v2,
                          SslTerms terms = SslTerms::kFour) {
  const auto same = [&](const BatchRef<T>& m) { return m.rows() == q_v.rows() && m.cols() == q_v.cols(); };
  SLYK_EXPECT(same(q_v2) && same(zt_v) && same(zt_v2), "ssl_loss: prediction/target shape mismatch");
  SslLossResult<T> r;
  const auto p1 = negative_cosine_batch<T>(q_v, zt_v2);
  const auto p2 = negative_cosine_batch<T>(q_v2, zt_v);
  if (terms == SslTerms::kTwo) {
    r.value = (p1.value + p2.value) / T(2);
    r.grad_q_v = p1.grad_a / T(2);
    r.grad_q_v2 = p2.grad_a / T(2);
    r.grad_z_v = Batch<T>::Zero(z_v.rows(), z_v.cols());
    r.grad_z_v2 = Batch<T>::Zero(z_v2.rows(), z_v2.cols());
    return r;
  }
  SLYK_EXPECT(same(z_v) && same(z_v2), "ssl_loss: projection shape mismatch");
  const auto p3 = negative_cosine_batch<T>(z_v, zt_v2);
  const auto p4 = negative_cosine_batch<T>(z_v2, zt_v);
  r.value = (p1.value + p2.value + p3.value + p4.value) / T(4);
  r.grad_q_v = p1.grad_a / T(4);
  r.grad_q_v2 = p2.grad_a / T(4);
  r.grad_z_v = p3.grad_a / T(4);
  r.grad_z_v2 = p4.grad_a / T(4);
  return r;
}

template <class T>
SslLossResult<T> ssl_loss(const SslLossInputs<T>& in, SslTerms terms = SslTerms::kFour) {
  return ssl_loss<T>(in.q_v, in.q_v2, in.z_v, in.z_v2, in.zt_v, in.zt_v2, terms);
}

// ---------------------------------------------------------------------------
// Inverse-explained-variance weighted regression loss

struct EvConfig {
  double omega_max = 10.0;
  double sst_epsilon = 1e-12;
  bool omega_in_graph = false;
};

template <class T>
void expect_paired(const BatchRef<T>& y, const BatchRef<T>& yhat, Eigen::Index min_rows, const char* what) {
  SLYK_EXPECT(y.rows() == yhat.rows() && y.cols() == yhat.cols(),
              what << ": shape mismatch " << y.rows() << "x" << y.cols() << " vs " << yhat.rows() << "x"
                   << yhat.cols());
  SLYK_EXPECT(y.rows() >= min_rows, what << ": need at least " << min_rows << " samples, got " << y.rows());
}

/// (1/n) sum_i ||y_i - yhat_i||_2
template <class T>
T mae(const BatchRef<T>& y, const BatchRef<T>& yhat) {
  expect_paired<T>(y, yhat, 1, "mae");
  return (y - yhat).rowwise().norm().sum() / T(y.rows());
}

template <class T>
struct EvWeight {
  T omega{};
  T v_ex{};
  T sst{};
  T sse{};
  bool degenerate = false;
  bool clipped = false;
};

template <class T>
EvWeight<T> ev_weight(const BatchRef<T>& y, const BatchRef<T>& yhat, const EvConfig& cfg = {}) {
  expect_paired<T>(y, yhat, 2, "ev_weight");
  EvWeight<T> w;
  const auto mean = y.colwise().mean();
  w.sst = (y.rowwise() - mean).squaredNorm();
  w.sse = (y - yhat).squaredNorm();
  if (!(w.sst >= T(cfg.sst_epsilon))) {
    w.degenerate = true;
    w.omega = T(0);
    w.v_ex = std::numeric_limits<T>::quiet_NaN();
    return w;
  }
  const T ratio = w.sse / w.sst;
  w.v_ex = T(1) - ratio;
  w.omega = std::clamp(ratio, T(0), T(cfg.omega_max));
  w.clipped = ratio > T(cfg.omega_max);
  return w;
}

template <class T>
struct SupLossBreakdown {
  T mae{};
  T sst{};
  T sse{};
  T v_ex{};
  T omega{};
  T total{};
  bool degenerate = false;
};

template <class T>
SupLossBreakdown<T> sup_loss(const BatchRef<T>& y, const BatchRef<T>& yhat, const EvConfig& cfg = {}) {
  const auto w = ev_weight<T>(y, yhat, cfg);
  SupLossBreakdown<T> b;
  b.mae = mae<T>(y, yhat);
  b.sst = w.sst;
  b.sse = w.sse;
  b.v_ex = w.v_ex;
  b.omega = w.omega;
  b.degenerate = w.degenerate;
  b.total = b.mae * (w.omega + T(1));
  return b;
}

/// d mae / d yhat. Rows with zero residual get the zero subgradient.
template <class T>
Batch<T> mae_gradient(const BatchRef<T>& y, const BatchRef<T>& yhat) {
  expect_paired<T>(y, yhat, 1, "mae");
  Batch<T> g(yhat.rows(), yhat.cols());
  const T inv_n = T(1) / T(y.rows());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const auto r = (yhat.row(i) - y.row(i)).eval();
    const T n = r.norm();
    if (n > T(0)) {
      g.row(i) = inv_n * r / n;
    } else {
      g.row(i).setZero();
    }
  }
  return g;
}

/// d total / d yhat. With omega_in_graph off, omega is a constant coefficient.
template <class T>
Batch<T> sup_loss_gradient(const BatchRef<T>& y, const BatchRef<T>& yhat, const EvConfig& cfg = {}) {
  const auto w = ev_weight<T>(y, yhat, cfg);
  Batch<T> g = mae_gradient<T>(y, yhat) * (w.omega + T(1));
  if (cfg.omega_in_graph && !w.degenerate && !w.clipped) {
    // d(SSE/SST)/d yhat_i = 2 (yhat_i - y_i) / SST
    g += mae<T>(y, yhat) * (T(2) / w.sst) * (yhat - y);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Class-weighted cross-entropy

template <class T>
struct CrossEntropyResult {
  T value{};
  Batch<T> grad_logits;
};

/// sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i]
template <class T>
CrossEntropyResult<T> weighted_cross_entropy(const BatchRef<T>& logits, std::span<const int> labels,
                                             std::span<const T> class_weights) {
  const auto n = logits.rows();
  const auto c = logits.cols();
  SLYK_EXPECT(n > 0, "weighted_cross_entropy: empty batch");
  SLYK_EXPECT(static_cast<Eigen::Index>(labels.size()) == n, "weighted_cross_entropy: label count mismatch");
  SLYK_EXPECT(static_cast<Eigen::Index>(class_weights.size()) == c,
              "weighted_cross_entropy: expected " << c << " class weights, got " << class_weights.size());
  for (const T w : class_weights) SLYK_EXPECT(w > T(0), "weighted_cross_entropy: class weights must be positive");
  CrossEntropyResult<T> r;
  r.grad_logits.resize(n, c);
  T num = 0, den = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    SLYK_EXPECT(label >= 0 && label < c, "weighted_cross_entropy: label " << label << " outside [0, " << c << ")");
    const T m = logits.row(i).maxCoeff();
    const auto e = (logits.row(i).array() - m).exp().eval();
    const T z = e.sum();
    const T w = class_weights[static_cast<std::size_t>(label)];
    num += w * (std::log(z) - (logits(i, label) - m));
    den += w;
    r.grad_logits.row(i) = w * (e / z).matrix();
    r.grad_logits(i, label) -= w;
  }
  r.value = num / den;
  r.grad_logits /= den;
  return r;
}

}  // namespace slyk::losses
