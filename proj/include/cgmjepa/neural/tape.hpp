#pragma once

// Reverse-mode automatic differentiation over row-major matrices.
//
// A Tape records one forward computation. Nodes are appended in evaluation
// order, so a reverse sweep over the node list is a valid topological order.
// Parameters enter as leaves that read the ParameterSet storage in place; their
// gradients are accumulated into a caller-owned Gradients buffer.

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

#include "cgmjepa/neural/tensor.hpp"

namespace cgmjepa::nn {

struct Var {
  int id = -1;
};

template <class T>
class Tape {
 public:
  explicit Tape(const ParameterSet<T>* params = nullptr) : params_(params) {}

  const Mat<T>& value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.ref ? *n.ref : n.val;
  }
  const Mat<T>& grad(Var v) const { return nodes_[v.id].grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }
  T scalar(Var v) const { return value(v)(0, 0); }

  // ---- leaves -------------------------------------------------------------

  Var constant(Mat<T> v) { return push(std::move(v), false); }

  // requires_grad defaults to the parameter's trainable flag.
  Var param(int index, int requires_grad = -1) {
    if (!params_) throw Error("tape has no parameter set");
    const auto& p = (*params_)[index];
    Node n;
    n.ref = &p.value;
    n.param = index;
    n.needs_grad = requires_grad < 0 ? p.trainable : requires_grad != 0;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  // Value-preserving cut of the gradient path.
  Var detach(Var a) { return push(value(a), false); }

  // ---- elementwise / structural ops ---------------------------------------

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Var out = push(value(a) + value(b), any(a, b));
    on_backward(out, [this, a, b, out] {
      accumulate(a, grad(out));
      accumulate(b, grad(out));
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Var out = push(value(a) - value(b), any(a, b));
    on_backward(out, [this, a, b, out] {
      accumulate(a, grad(out));
      accumulate(b, -grad(out));
    });
    return out;
  }

  Var add_const(Var a, const Mat<T>& c) {
    if (c.rows() != value(a).rows() || c.cols() != value(a).cols()) throw Error("add_const: shape mismatch");
    Var out = push(value(a) + c, any(a));
    on_backward(out, [this, a, out] { accumulate(a, grad(out)); });
    return out;
  }

  Var scale(Var a, T s) {
    Var out = push(value(a) * s, any(a));
    on_backward(out, [this, a, out, s] { accumulate(a, grad(out) * s); });
    return out;
  }

  // a + s * b for same-shaped a, b.
  Var add_scaled(Var a, Var b, T s) {
    check_same(a, b, "add_scaled");
    Var out = push(value(a) + s * value(b), any(a, b));
    on_backward(out, [this, a, b, out, s] {
      accumulate(a, grad(out));
      accumulate(b, grad(out) * s);
    });
    return out;
  }

  Var matmul(Var a, Var b) {
    if (value(a).cols() != value(b).rows()) throw Error("matmul: inner dimension mismatch");
    Var out = push(value(a) * value(b), any(a, b));
    on_backward(out, [this, a, b, out] {
      if (needs(a)) accumulate(a, grad(out) * value(b).transpose());
      if (needs(b)) accumulate(b, value(a).transpose() * grad(out));
    });
    return out;
  }

  // x (n x in) * W (in x out) + b (1 x out)
  Var linear(Var x, Var w, Var b) {
    const Mat<T>& X = value(x);
    const Mat<T>& W = value(w);
    const Mat<T>& B = value(b);
    if (X.cols() != W.rows() || B.rows() != 1 || B.cols() != W.cols()) throw Error("linear: shape mismatch");
    Mat<T> y = X * W;
    y.rowwise() += B.row(0);
    Var out = push(std::move(y), any(x, w, b));
    on_backward(out, [this, x, w, b, out] {
      const Mat<T>& G = grad(out);
      if (needs(x)) accumulate(x, G * value(w).transpose());
      if (needs(w)) accumulate(w, value(x).transpose() * G);
      if (needs(b)) accumulate(b, G.colwise().sum());
    });
    return out;
  }

  // Exact GELU: 0.5 x (1 + erf(x / sqrt 2)).
  Var gelu(Var a) {
    const Mat<T>& A = value(a);
    Mat<T> y(A.rows(), A.cols());
    for (Eigen::Index i = 0; i < A.size(); ++i) {
      const T x = A.data()[i];
      y.data()[i] = T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
    }
    Var out = push(std::move(y), any(a));
    on_backward(out, [this, a, out] {
      const Mat<T>& A = value(a);
      const Mat<T>& G = grad(out);
      Mat<T> d(A.rows(), A.cols());
      const T inv_sqrt_2pi = T(1.0 / std::sqrt(2.0 * std::numbers::pi));
      for (Eigen::Index i = 0; i < A.size(); ++i) {
        const T x = A.data()[i];
        const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2)));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
        d.data()[i] = G.data()[i] * (cdf + x * pdf);
      }
      accumulate(a, d);
    });
    return out;
  }

  // Row-wise layer normalization with affine gamma/beta (1 x d).
  Var layer_norm(Var x, Var gamma, Var beta, T eps = T(1e-6)) {
    const Mat<T>& X = value(x);
    const Eigen::Index n = X.rows(), d = X.cols();
    Mat<T> xhat(n, d);
    Mat<T> inv_sd(n, 1);
    for (Eigen::Index r = 0; r < n; ++r) {
      const T mu = X.row(r).mean();
      const T var = (X.row(r).array() - mu).square().mean();
      inv_sd(r, 0) = T(1) / std::sqrt(var + eps);
      xhat.row(r) = (X.row(r).array() - mu) * inv_sd(r, 0);
    }
    Mat<T> y = (xhat.array().rowwise() * value(gamma).row(0).array()).matrix();
    y.rowwise() += value(beta).row(0);
    Var out = push(std::move(y), any(x, gamma, beta));
    on_backward(out, [this, x, gamma, beta, out, xhat = std::move(xhat), inv_sd = std::move(inv_sd)] {
      const Mat<T>& G = grad(out);
      if (needs(gamma)) accumulate(gamma, (G.array() * xhat.array()).colwise().sum().matrix());
      if (needs(beta)) accumulate(beta, G.colwise().sum());
      if (needs(x)) {
        Mat<T> dxhat = (G.array().rowwise() * value(gamma).row(0).array()).matrix();
        Mat<T> dx(G.rows(), G.cols());
        for (Eigen::Index r = 0; r < G.rows(); ++r) {
          const T m1 = dxhat.row(r).mean();
          const T m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
          dx.row(r) = ((dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_sd(r, 0)).matrix();
        }
        accumulate(x, dx);
      }
    });
    return out;
  }

  // Scaled dot-product attention split into `heads` column groups.
  // q: n x d, k, v: m x d. If weights_out is given, the per-head softmax
  // matrices (n x m) are copied into it.
  Var attention(Var q, Var k, Var v, int heads, std::vector<Mat<T>>* weights_out = nullptr) {
    const Mat<T>& Q = value(q);
    const Mat<T>& K = value(k);
    const Mat<T>& V = value(v);
    const Eigen::Index d = Q.cols();
    if (K.cols() != d || V.cols() != d || K.rows() != V.rows() || heads <= 0 || d % heads != 0)
      throw Error("attention: shape mismatch");
    const Eigen::Index dh = d / heads;
    const T scale = T(1) / std::sqrt(T(dh));
    std::vector<Mat<T>> A(heads);
    Mat<T> y(Q.rows(), d);
    for (int h = 0; h < heads; ++h) {
      Mat<T> s = (Q.middleCols(h * dh, dh) * K.middleCols(h * dh, dh).transpose()) * scale;
      for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp().matrix();
        s.row(r) /= s.row(r).sum();
      }
      y.middleCols(h * dh, dh) = s * V.middleCols(h * dh, dh);
      A[h] = std::move(s);
    }
    if (weights_out) *weights_out = A;
    Var out = push(std::move(y), any(q, k, v));
    on_backward(out, [this, q, k, v, out, heads, dh, scale, A = std::move(A)] {
      const Mat<T>& G = grad(out);
      const Mat<T>& Q = value(q);
      const Mat<T>& K = value(k);
      const Mat<T>& V = value(v);
      Mat<T> dQ = Mat<T>::Zero(Q.rows(), Q.cols());
      Mat<T> dK = Mat<T>::Zero(K.rows(), K.cols());
      Mat<T> dV = Mat<T>::Zero(V.rows(), V.cols());
      for (int h = 0; h < heads; ++h) {
        const auto Gh = G.middleCols(h * dh, dh);
        dV.middleCols(h * dh, dh) = A[h].transpose() * Gh;
        Mat<T> dA = Gh * V.middleCols(h * dh, dh).transpose();
        Mat<T> dS(dA.rows(), dA.cols());
        for (Eigen::Index r = 0; r < dA.rows(); ++r) {
          const T dot = (dA.row(r).array() * A[h].row(r).array()).sum();
          dS.row(r) = (A[h].row(r).array() * (dA.row(r).array() - dot)).matrix();
        }
        dS *= scale;
        dQ.middleCols(h * dh, dh) = dS * K.middleCols(h * dh, dh);
        dK.middleCols(h * dh, dh) = dS.transpose() * Q.middleCols(h * dh, dh);
      }
      if (needs(q)) accumulate(q, dQ);
      if (needs(k)) accumulate(k, dK);
      if (needs(v)) accumulate(v, dV);
    });
    return out;
  }

  Var gather_rows(Var a, std::vector<int> idx) {
    const Mat<T>& A = value(a);
    Mat<T> y(static_cast<Eigen::Index>(idx.size()), A.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0 || idx[r] >= A.rows()) throw Error("gather_rows: index out of range");
      y.row(static_cast<Eigen::Index>(r)) = A.row(idx[r]);
    }
    Var out = push(std::move(y), any(a));
    on_backward(out, [this, a, out, idx = std::move(idx)] {
      const Mat<T>& G = grad(out);
      Mat<T> d = Mat<T>::Zero(value(a).rows(), value(a).cols());
      for (std::size_t r = 0; r < idx.size(); ++r) d.row(idx[r]) += G.row(static_cast<Eigen::Index>(r));
      accumulate(a, d);
    });
    return out;
  }

  Var concat_rows(Var a, Var b) {
    const Mat<T>& A = value(a);
    const Mat<T>& B = value(b);
    if (A.cols() != B.cols()) throw Error("concat_rows: column mismatch");
    Mat<T> y(A.rows() + B.rows(), A.cols());
    y.topRows(A.rows()) = A;
    y.bottomRows(B.rows()) = B;
    const Eigen::Index na = A.rows(), nb = B.rows();
    Var out = push(std::move(y), any(a, b));
    on_backward(out, [this, a, b, out, na, nb] {
      if (needs(a)) accumulate(a, grad(out).topRows(na));
      if (needs(b)) accumulate(b, grad(out).bottomRows(nb));
    });
    return out;
  }

  // n copies of a 1 x d row.
  Var repeat_rows(Var a, int n) {
    const Mat<T>& A = value(a);
    if (A.rows() != 1) throw Error("repeat_rows: expected a single row");
    Mat<T> y = A.replicate(n, 1);
    Var out = push(std::move(y), any(a));
    on_backward(out, [this, a, out] { accumulate(a, grad(out).colwise().sum()); });
    return out;
  }

  Var mean_rows(Var a) {
    const Mat<T>& A = value(a);
    const Eigen::Index n = A.rows();
    Var out = push(A.colwise().mean(), any(a));
    on_backward(out, [this, a, out, n] {
      Mat<T> d = grad(out).replicate(n, 1) / T(n);
      accumulate(a, d);
    });
    return out;
  }

  // Depth-1 convolution with `same` zero padding over the L samples of each
  // patch, producing D channels, followed by a mean over the L positions:
  //   y[p, c] = b[c] + (1/L) sum_pos sum_k w[c, k] x[p, pos + k - K/2].
  // Because the mean commutes with the convolution, this is evaluated through
  // the per-tap window sums s[p, k] = sum_pos x[p, pos + k - K/2].
  Var conv_patch_embed(Var x, Var w, Var b) {
    const Mat<T>& X = value(x);
    const Mat<T>& W = value(w);
    const Eigen::Index P = X.rows(), L = X.cols(), K = W.cols();
    if (value(b).rows() != 1 || value(b).cols() != W.rows()) throw Error("conv_patch_embed: bias shape");
    const Eigen::Index half = K / 2;
    Mat<T> s = Mat<T>::Zero(P, K);
    for (Eigen::Index p = 0; p < P; ++p)
      for (Eigen::Index k = 0; k < K; ++k) {
        T acc = 0;
        for (Eigen::Index pos = 0; pos < L; ++pos) {
          const Eigen::Index src = pos + k - half;
          if (src >= 0 && src < L) acc += X(p, src);
        }
        s(p, k) = acc / T(L);
      }
    Mat<T> y = s * W.transpose();
    y.rowwise() += value(b).row(0);
    Var out = push(std::move(y), any(x, w, b));
    on_backward(out, [this, x, w, b, out, s = std::move(s), L, K, half] {
      const Mat<T>& G = grad(out);
      if (needs(w)) accumulate(w, G.transpose() * s);
      if (needs(b)) accumulate(b, G.colwise().sum());
      if (needs(x)) {
        const Mat<T> ds = (G * value(w)) / T(L);  // P x K
        Mat<T> dx = Mat<T>::Zero(ds.rows(), L);
        for (Eigen::Index p = 0; p < ds.rows(); ++p)
          for (Eigen::Index k = 0; k < K; ++k)
            for (Eigen::Index pos = 0; pos < L; ++pos) {
              const Eigen::Index src = pos + k - half;
              if (src >= 0 && src < L) dx(p, src) += ds(p, k);
            }
        accumulate(x, dx);
      }
    });
    return out;
  }

  // Scalar mean |a - b| over all entries.
  Var l1_mean(Var a, Var b) {
    check_same(a, b, "l1_mean");
    const Mat<T> diff = value(a) - value(b);
    const T n = T(diff.size());
    Mat<T> y(1, 1);
    y(0, 0) = diff.array().abs().sum() / n;
    Var out = push(std::move(y), any(a, b));
    on_backward(out, [this, a, b, out, diff, n] {
      const T g = grad(out)(0, 0) / n;
      Mat<T> d = diff.unaryExpr([g](T z) { return z > 0 ? g : (z < 0 ? -g : T(0)); });
      if (needs(a)) accumulate(a, d);
      if (needs(b)) accumulate(b, -d);
    });
    return out;
  }

  // Sum of all entries (1 x 1).
  Var sum(Var a) {
    Mat<T> y(1, 1);
    y(0, 0) = value(a).sum();
    Var out = push(std::move(y), any(a));
    on_backward(out, [this, a, out] {
      accumulate(a, Mat<T>::Constant(value(a).rows(), value(a).cols(), grad(out)(0, 0)));
    });
    return out;
  }

  // ---- backward -----------------------------------------------------------

  // Seeds d(loss) = seed and sweeps the tape in reverse. Parameter leaf
  // gradients are added into `out` (which must be shaped like the parameter set).
  void backward(Var loss, Gradients<T>& out, T seed = T(1)) {
    const Mat<T>& L = value(loss);
    if (L.size() != 1) throw Error("backward: loss must be a scalar");
    if (!std::isfinite(static_cast<double>(L(0, 0)))) throw Error("backward: non-finite loss");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[loss.id].grad = Mat<T>::Constant(1, 1, seed);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.needs_grad || n.grad.size() == 0) continue;
      if (n.back) n.back();
      if (n.param >= 0) out.g[n.param] += n.grad;
    }
  }

 private:
  struct Node {
    Mat<T> val;
    const Mat<T>* ref = nullptr;
    Mat<T> grad;
    bool needs_grad = false;
    int param = -1;
    std::function<void()> back;
  };

  Var push(Mat<T> v, bool needs_grad) {
    Node n;
    n.val = std::move(v);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  template <class F>
  void on_backward(Var out, F&& f) {
    if (nodes_[out.id].needs_grad) nodes_[out.id].back = std::forward<F>(f);
  }

  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  template <class... Vs>
  bool any(Vs... vs) const {
    return (needs(vs) || ...);
  }

  template <class Expr>
  void accumulate(Var v, const Expr& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = g;
    else n.grad += g;
  }

  void check_same(Var a, Var b, const char* op) const {
    if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
      throw Error(std::string(op) + ": shape mismatch");
  }

  const ParameterSet<T>* params_;
  std::vector<Node> nodes_;
};

}  // namespace cgmjepa::nn
