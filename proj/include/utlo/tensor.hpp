#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "utlo/common.hpp"

namespace utlo {

namespace detail {

// C[m x n] += A[m x k] * B[k x n], row-major. Fixed accumulation order
// (ascending k per output element), so results are reproducible.
template <class S>
inline void gemm_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<int64_t>(i) * k;
    S* ci = c + static_cast<int64_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = ai[p];
      const S* bp = b + static_cast<int64_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, with B stored [n x k]
template <class S>
inline void gemm_nt_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* ai = a + static_cast<int64_t>(i) * k;
    S* ci = c + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const S* bj = b + static_cast<int64_t>(j) * k;
      S acc = 0;
      for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C[m x n] += A^T * B, with A stored [k x m]
template <class S>
inline void gemm_tn_acc(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const S* ap = a + static_cast<int64_t>(p) * m;
    const S* bp = b + static_cast<int64_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const S av = ap[i];
      S* ci = c + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace detail

template <class S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated lazily, zero-filled
  bool requires_grad = false;
};

// Shallow-copy handle to a tensor node. Copies alias the same storage.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(numel(t.node_->shape), S(0));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor from(Shape shape, std::vector<S> data, bool requires_grad = false) {
    if (numel(shape) != static_cast<int64_t>(data.size()))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    Tensor t;
    t.node_ = std::make_shared<TensorNode<S>>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }

  S* data() { return node_->value.data(); }
  const S* data() const { return node_->value.data(); }
  std::vector<S>& values() { return node_->value; }
  const std::vector<S>& values() const { return node_->value; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<S>& grad_vec() { return node_->grad; }
  const std::vector<S>& grad_vec() const { return node_->grad; }

  S* ensure_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), S(0));
    return node_->grad.data();
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

// Reverse-mode tape. Ops compute eagerly and, while recording, push one
// backward closure per op. backward() replays the closures once, in reverse
// order, then freezes the tape.
template <class S>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  bool recording() const { return recording_; }
  size_t num_nodes() const { return nodes_.size(); }

  void backward(Tensor<S> loss) {
    if (frozen_) throw ContractError("backward: tape is frozen (already replayed)");
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    loss.ensure_grad()[0] += S(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    frozen_ = true;
  }

  void clear() {
    nodes_.clear();
    frozen_ = false;
  }

  // ---- ops -----------------------------------------------------------

  Tensor<S> matmul(Tensor<S> a, Tensor<S> b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
      throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                           shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = make_out({m, n}, a.requires_grad() || b.requires_grad());
    detail::gemm_acc(a.data(), b.data(), out.data(), m, k, n);
    record(out, [a, b, out, m, k, n]() mutable {
      const S* g = out.grad_vec().data();
      if (a.requires_grad()) detail::gemm_nt_acc(g, b.data(), a.ensure_grad(), m, n, k);
      if (b.requires_grad()) detail::gemm_tn_acc(a.data(), g, b.ensure_grad(), k, m, n);
    });
    return out;
  }

  // Cross-correlation conv. x: [N,Cin,H,W], w: [Cout,Cin,k,k], k in {1,3}.
  Tensor<S> conv2d(Tensor<S> x, Tensor<S> w, int stride, int pad) {
    if (x.rank() != 4 || w.rank() != 4)
      throw DimensionError("conv2d: expected 4-D input and weight, got " + shape_str(x.shape()) +
                           " and " + shape_str(w.shape()));
    const int kk = w.dim(2);
    if (kk != w.dim(3) || (kk != 1 && kk != 3))
      throw ConfigError("conv2d: kernel must be 1x1 or 3x3, got " + shape_str(w.shape()));
    if (x.dim(1) != w.dim(1))
      throw DimensionError("conv2d: channel mismatch " + shape_str(x.shape()) + " vs " +
                           shape_str(w.shape()));
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0);
    const int ho_num = h + 2 * pad - kk, wo_num = wd + 2 * pad - kk;
    if (ho_num < 0 || wo_num < 0 || ho_num % stride != 0 || wo_num % stride != 0)
      throw ConfigError("conv2d: output size is not a positive integer for input " +
                        shape_str(x.shape()) + ", kernel " + std::to_string(kk) + ", stride " +
                        std::to_string(stride) + ", pad " + std::to_string(pad));
    const int ho = ho_num / stride + 1, wo = wo_num / stride + 1;
    auto out = make_out({n, cout, ho, wo}, x.requires_grad() || w.requires_grad());

    const int ck = cin * kk * kk;
    const int p = ho * wo;
    const bool pointwise = (kk == 1 && stride == 1 && pad == 0);
    std::vector<S> col;
    if (!pointwise) col.resize(static_cast<size_t>(ck) * p);
    for (int i = 0; i < n; ++i) {
      const S* xi = x.data() + static_cast<int64_t>(i) * cin * h * wd;
      S* oi = out.data() + static_cast<int64_t>(i) * cout * p;
      if (pointwise) {
        detail::gemm_acc(w.data(), xi, oi, cout, cin, p);
      } else {
        im2col(xi, cin, h, wd, kk, stride, pad, ho, wo, col.data());
        detail::gemm_acc(w.data(), col.data(), oi, cout, ck, p);
      }
    }

    record(out, [x, w, out, stride, pad, kk, ho, wo]() mutable {
      const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
      const int cout = w.dim(0), ck = cin * kk * kk, p = ho * wo;
      const bool pointwise = (kk == 1 && stride == 1 && pad == 0);
      std::vector<S> col, dcol;
      if (!pointwise) {
        col.resize(static_cast<size_t>(ck) * p);
        if (x.requires_grad()) dcol.resize(static_cast<size_t>(ck) * p);
      }
      S* dw = w.requires_grad() ? w.ensure_grad() : nullptr;
      S* dx = x.requires_grad() ? x.ensure_grad() : nullptr;
      for (int i = 0; i < n; ++i) {
        const S* gi = out.grad_vec().data() + static_cast<int64_t>(i) * cout * p;
        const S* xi = x.data() + static_cast<int64_t>(i) * cin * h * wd;
        if (pointwise) {
          if (dw) detail::gemm_nt_acc(gi, xi, dw, cout, p, cin);
          if (dx) detail::gemm_tn_acc(w.data(), gi, dx + static_cast<int64_t>(i) * cin * p, cin, cout, p);
        } else {
          im2col(xi, cin, h, wd, kk, stride, pad, ho, wo, col.data());
          if (dw) detail::gemm_nt_acc(gi, col.data(), dw, cout, p, ck);
          if (dx) {
            std::fill(dcol.begin(), dcol.end(), S(0));
            detail::gemm_tn_acc(w.data(), gi, dcol.data(), ck, cout, p);
            col2im_acc(dcol.data(), cin, h, wd, kk, stride, pad, ho, wo,
                       dx + static_cast<int64_t>(i) * cin * h * wd);
          }
        }
      }
    });
    return out;
  }

  Tensor<S> upsample_nearest(Tensor<S> x, int factor) {
    if (factor < 2) throw ConfigError("upsample_nearest: factor must be >= 2, got " + std::to_string(factor));
    if (x.rank() != 4) throw DimensionError("upsample_nearest: expected 4-D input, got " + shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    auto out = make_out({n, c, h * factor, w * factor}, x.requires_grad());
    const int wo = w * factor;
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
      const S* src = x.data() + nc * h * w;
      S* dst = out.data() + nc * static_cast<int64_t>(h) * factor * wo;
      for (int y = 0; y < h * factor; ++y) {
        const S* row = src + (y / factor) * w;
        S* drow = dst + static_cast<int64_t>(y) * wo;
        for (int xj = 0; xj < wo; ++xj) drow[xj] = row[xj / factor];
      }
    }
    record(out, [x, out, factor]() mutable {
      if (!x.requires_grad()) return;
      const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
      const int wo = w * factor;
      S* dx = x.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
        S* dxi = dx + nc * h * w;
        const S* gi = g + nc * static_cast<int64_t>(h) * factor * wo;
        for (int y = 0; y < h * factor; ++y)
          for (int xj = 0; xj < wo; ++xj) dxi[(y / factor) * w + xj / factor] += gi[static_cast<int64_t>(y) * wo + xj];
      }
    });
    return out;
  }

  // Non-overlapping factor x factor average pooling; adjoint of the mean.
  Tensor<S> avg_pool(Tensor<S> x, int factor) {
    if (factor < 2) throw ConfigError("avg_pool: factor must be >= 2, got " + std::to_string(factor));
    if (x.rank() != 4) throw DimensionError("avg_pool: expected 4-D input, got " + shape_str(x.shape()));
    const int h = x.dim(2), w = x.dim(3);
    if (h % factor != 0 || w % factor != 0)
      throw ConfigError("avg_pool: factor " + std::to_string(factor) + " must divide spatial size of " +
                        shape_str(x.shape()));
    const int n = x.dim(0), c = x.dim(1), ho = h / factor, wo = w / factor;
    auto out = make_out({n, c, ho, wo}, x.requires_grad());
    const S inv = S(1) / static_cast<S>(factor * factor);
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
      const S* src = x.data() + nc * h * w;
      S* dst = out.data() + nc * static_cast<int64_t>(ho) * wo;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          S acc = 0;
          for (int fy = 0; fy < factor; ++fy)
            for (int fx = 0; fx < factor; ++fx)
              acc += src[static_cast<int64_t>(oy * factor + fy) * w + ox * factor + fx];
          dst[static_cast<int64_t>(oy) * wo + ox] = acc * inv;
        }
    }
    record(out, [x, out, factor, inv]() mutable {
      if (!x.requires_grad()) return;
      const int h = x.dim(2), w = x.dim(3), ho = h / factor, wo = w / factor;
      S* dx = x.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int64_t nc = 0; nc < static_cast<int64_t>(x.dim(0)) * x.dim(1); ++nc) {
        S* dxi = dx + nc * h * w;
        const S* gi = g + nc * static_cast<int64_t>(ho) * wo;
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const S gv = gi[static_cast<int64_t>(oy) * wo + ox] * inv;
            for (int fy = 0; fy < factor; ++fy)
              for (int fx = 0; fx < factor; ++fx)
                dxi[static_cast<int64_t>(oy * factor + fy) * w + ox * factor + fx] += gv;
          }
      }
    });
    return out;
  }

  Tensor<S> add(Tensor<S> a, Tensor<S> b) {
    if (a.shape() != b.shape())
      throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto out = make_out(a.shape(), a.requires_grad() || b.requires_grad());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    record(out, [a, b, out]() mutable {
      const S* g = out.grad_vec().data();
      if (a.requires_grad()) {
        S* da = a.ensure_grad();
        for (int64_t i = 0; i < a.size(); ++i) da[i] += g[i];
      }
      if (b.requires_grad()) {
        S* db = b.ensure_grad();
        for (int64_t i = 0; i < b.size(); ++i) db[i] += g[i];
      }
    });
    return out;
  }

  // Restricted broadcast: [N,C,H,W] + [C] (per-channel) or [N,D] + [D].
  Tensor<S> add_bias(Tensor<S> x, Tensor<S> b) {
    if (b.rank() != 1 || (x.rank() != 4 && x.rank() != 2) ||
        (x.rank() == 4 && x.dim(1) != b.dim(0)) || (x.rank() == 2 && x.dim(1) != b.dim(0)))
      throw DimensionError("add_bias: incompatible shapes " + shape_str(x.shape()) + " and " +
                           shape_str(b.shape()));
    auto out = make_out(x.shape(), x.requires_grad() || b.requires_grad());
    const int c = b.dim(0);
    const int64_t inner = (x.rank() == 4) ? static_cast<int64_t>(x.dim(2)) * x.dim(3) : 1;
    const int64_t groups = x.size() / (c * inner);
    for (int64_t gI = 0; gI < groups; ++gI)
      for (int ci = 0; ci < c; ++ci) {
        const S bv = b.data()[ci];
        S* xp = out.data() + (gI * c + ci) * inner;
        const S* sp = x.data() + (gI * c + ci) * inner;
        for (int64_t i = 0; i < inner; ++i) xp[i] = sp[i] + bv;
      }
    record(out, [x, b, out, c, inner, groups]() mutable {
      const S* g = out.grad_vec().data();
      if (x.requires_grad()) {
        S* dx = x.ensure_grad();
        for (int64_t i = 0; i < x.size(); ++i) dx[i] += g[i];
      }
      if (b.requires_grad()) {
        S* db = b.ensure_grad();
        for (int64_t gI = 0; gI < groups; ++gI)
          for (int ci = 0; ci < c; ++ci) {
            const S* gp = g + (gI * c + ci) * inner;
            S acc = 0;
            for (int64_t i = 0; i < inner; ++i) acc += gp[i];
            db[ci] += acc;
          }
      }
    });
    return out;
  }

  Tensor<S> mul(Tensor<S> a, Tensor<S> b) {
    if (a.shape() != b.shape())
      throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto out = make_out(a.shape(), a.requires_grad() || b.requires_grad());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    record(out, [a, b, out]() mutable {
      const S* g = out.grad_vec().data();
      if (a.requires_grad()) {
        S* da = a.ensure_grad();
        for (int64_t i = 0; i < a.size(); ++i) da[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        S* db = b.ensure_grad();
        for (int64_t i = 0; i < b.size(); ++i) db[i] += g[i] * a.data()[i];
      }
    });
    return out;
  }

  Tensor<S> scale(Tensor<S> a, S c) {
    auto out = make_out(a.shape(), a.requires_grad());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
    record(out, [a, out, c]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int64_t i = 0; i < a.size(); ++i) da[i] += g[i] * c;
    });
    return out;
  }

  Tensor<S> neg(Tensor<S> a) { return scale(a, S(-1)); }

  Tensor<S> leaky_relu(Tensor<S> a, S alpha) {
    auto out = make_out(a.shape(), a.requires_grad());
    for (int64_t i = 0; i < a.size(); ++i) {
      const S v = a.data()[i];
      out.data()[i] = v > S(0) ? v : alpha * v;
    }
    record(out, [a, out, alpha]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int64_t i = 0; i < a.size(); ++i) da[i] += g[i] * (a.data()[i] > S(0) ? S(1) : alpha);
    });
    return out;
  }

  Tensor<S> tanh(Tensor<S> a) {
    auto out = make_out(a.shape(), a.requires_grad());
    for (int64_t i = 0; i < a.size(); ++i) out.data()[i] = std::tanh(a.data()[i]);
    record(out, [a, out]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int64_t i = 0; i < a.size(); ++i) {
        const S y = out.data()[i];
        da[i] += g[i] * (S(1) - y * y);
      }
    });
    return out;
  }

  // softplus(x) = ln(1 + e^x), computed as max(x,0) + log1p(e^{-|x|})
  Tensor<S> softplus(Tensor<S> a) {
    auto out = make_out(a.shape(), a.requires_grad());
    for (int64_t i = 0; i < a.size(); ++i) {
      const S x = a.data()[i];
      out.data()[i] = std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
    }
    record(out, [a, out]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int64_t i = 0; i < a.size(); ++i) {
        const S x = a.data()[i];
        // sigmoid(x), overflow-safe
        const S e = std::exp(-std::abs(x));
        const S sig_abs = S(1) / (S(1) + e);
        da[i] += g[i] * (x >= S(0) ? sig_abs : S(1) - sig_abs);
      }
    });
    return out;
  }

  Tensor<S> embedding_lookup(Tensor<S> table, int index) {
    if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
    if (index < 0 || index >= table.dim(0))
      throw IndexError("embedding_lookup: index " + std::to_string(index) + " out of range [0," +
                       std::to_string(table.dim(0)) + ")");
    const int d = table.dim(1);
    auto out = make_out({d}, table.requires_grad());
    std::memcpy(out.data(), table.data() + static_cast<int64_t>(index) * d, sizeof(S) * d);
    record(out, [table, out, index, d]() mutable {
      if (!table.requires_grad()) return;
      S* dt = table.ensure_grad() + static_cast<int64_t>(index) * d;
      const S* g = out.grad_vec().data();
      for (int i = 0; i < d; ++i) dt[i] += g[i];
    });
    return out;
  }

  Tensor<S> embedding_gather(Tensor<S> table, std::vector<int> idx) {
    if (table.rank() != 2) throw DimensionError("embedding_gather: table must be 2-D, got " + shape_str(table.shape()));
    for (int i : idx)
      if (i < 0 || i >= table.dim(0))
        throw IndexError("embedding_gather: index " + std::to_string(i) + " out of range [0," +
                         std::to_string(table.dim(0)) + ")");
    const int n = static_cast<int>(idx.size()), d = table.dim(1);
    auto out = make_out({n, d}, table.requires_grad());
    for (int i = 0; i < n; ++i)
      std::memcpy(out.data() + static_cast<int64_t>(i) * d,
                  table.data() + static_cast<int64_t>(idx[i]) * d, sizeof(S) * d);
    record(out, [table, out, idx = std::move(idx), d]() mutable {
      if (!table.requires_grad()) return;
      S* dt = table.ensure_grad();
      const S* g = out.grad_vec().data();
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < d; ++j) dt[static_cast<int64_t>(idx[i]) * d + j] += g[i * d + j];
    });
    return out;
  }

  Tensor<S> concat_cols(Tensor<S> a, Tensor<S> b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
      throw DimensionError("concat_cols: incompatible shapes " + shape_str(a.shape()) + " and " +
                           shape_str(b.shape()));
    const int n = a.dim(0), da = a.dim(1), db = b.dim(1);
    auto out = make_out({n, da + db}, a.requires_grad() || b.requires_grad());
    for (int i = 0; i < n; ++i) {
      std::memcpy(out.data() + static_cast<int64_t>(i) * (da + db), a.data() + static_cast<int64_t>(i) * da, sizeof(S) * da);
      std::memcpy(out.data() + static_cast<int64_t>(i) * (da + db) + da, b.data() + static_cast<int64_t>(i) * db, sizeof(S) * db);
    }
    record(out, [a, b, out, n, da, db]() mutable {
      const S* g = out.grad_vec().data();
      if (a.requires_grad()) {
        S* ga = a.ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < da; ++j) ga[static_cast<int64_t>(i) * da + j] += g[static_cast<int64_t>(i) * (da + db) + j];
      }
      if (b.requires_grad()) {
        S* gb = b.ensure_grad();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < db; ++j) gb[static_cast<int64_t>(i) * db + j] += g[static_cast<int64_t>(i) * (da + db) + da + j];
      }
    });
    return out;
  }

  Tensor<S> reshape(Tensor<S> a, Shape shape) {
    if (numel(shape) != a.size())
      throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    auto out = make_out(shape, a.requires_grad());
    std::memcpy(out.data(), a.data(), sizeof(S) * a.size());
    record(out, [a, out]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int64_t i = 0; i < a.size(); ++i) da[i] += g[i];
    });
    return out;
  }

  // y[n,c,h,w] = x[n,c,h,w] * (1 + s[n,c]) + t[n,c]
  Tensor<S> channel_affine(Tensor<S> x, Tensor<S> s, Tensor<S> t) {
    if (x.rank() != 4 || s.rank() != 2 || t.rank() != 2 || s.shape() != t.shape() ||
        s.dim(0) != x.dim(0) || s.dim(1) != x.dim(1))
      throw DimensionError("channel_affine: incompatible shapes " + shape_str(x.shape()) + ", " +
                           shape_str(s.shape()) + ", " + shape_str(t.shape()));
    const int n = x.dim(0), c = x.dim(1);
    const int64_t hw = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    auto out = make_out(x.shape(), x.requires_grad() || s.requires_grad() || t.requires_grad());
    for (int i = 0; i < n; ++i)
      for (int ci = 0; ci < c; ++ci) {
        const S sv = S(1) + s.data()[static_cast<int64_t>(i) * c + ci];
        const S tv = t.data()[static_cast<int64_t>(i) * c + ci];
        const S* xp = x.data() + (static_cast<int64_t>(i) * c + ci) * hw;
        S* op = out.data() + (static_cast<int64_t>(i) * c + ci) * hw;
        for (int64_t j = 0; j < hw; ++j) op[j] = xp[j] * sv + tv;
      }
    record(out, [x, s, t, out, n, c, hw]() mutable {
      const S* g = out.grad_vec().data();
      S* dx = x.requires_grad() ? x.ensure_grad() : nullptr;
      S* ds = s.requires_grad() ? s.ensure_grad() : nullptr;
      S* dt = t.requires_grad() ? t.ensure_grad() : nullptr;
      for (int i = 0; i < n; ++i)
        for (int ci = 0; ci < c; ++ci) {
          const int64_t off = (static_cast<int64_t>(i) * c + ci) * hw;
          const S sv = S(1) + s.data()[static_cast<int64_t>(i) * c + ci];
          if (dx)
            for (int64_t j = 0; j < hw; ++j) dx[off + j] += g[off + j] * sv;
          if (ds) {
            S acc = 0;
            for (int64_t j = 0; j < hw; ++j) acc += g[off + j] * x.data()[off + j];
            ds[static_cast<int64_t>(i) * c + ci] += acc;
          }
          if (dt) {
            S acc = 0;
            for (int64_t j = 0; j < hw; ++j) acc += g[off + j];
            dt[static_cast<int64_t>(i) * c + ci] += acc;
          }
        }
    });
    return out;
  }

  // [N,F] -> [N], summing columns
  Tensor<S> row_sum(Tensor<S> a) {
    if (a.rank() != 2) throw DimensionError("row_sum: expected 2-D input, got " + shape_str(a.shape()));
    const int n = a.dim(0), f = a.dim(1);
    auto out = make_out({n}, a.requires_grad());
    for (int i = 0; i < n; ++i) {
      S acc = 0;
      for (int j = 0; j < f; ++j) acc += a.data()[static_cast<int64_t>(i) * f + j];
      out.data()[i] = acc;
    }
    record(out, [a, out, n, f]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) da[static_cast<int64_t>(i) * f + j] += g[i];
    });
    return out;
  }

  // [1, ...] -> [n, ...] by repetition; backward sums over the batch
  Tensor<S> repeat_batch(Tensor<S> a, int n) {
    if (a.rank() < 1 || a.dim(0) != 1)
      throw DimensionError("repeat_batch: expected leading dimension 1, got " + shape_str(a.shape()));
    Shape shape = a.shape();
    shape[0] = n;
    auto out = make_out(shape, a.requires_grad());
    const int64_t inner = a.size();
    for (int i = 0; i < n; ++i) std::memcpy(out.data() + i * inner, a.data(), sizeof(S) * inner);
    record(out, [a, out, n, inner]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int i = 0; i < n; ++i)
        for (int64_t j = 0; j < inner; ++j) da[j] += g[i * inner + j];
    });
    return out;
  }

  Tensor<S> sum(Tensor<S> a) {
    auto out = make_out({1}, a.requires_grad());
    S acc = 0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    out.data()[0] = acc;
    record(out, [a, out]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S g = out.grad_vec()[0];
      for (int64_t i = 0; i < a.size(); ++i) da[i] += g;
    });
    return out;
  }

  Tensor<S> mean(Tensor<S> a) {
    auto out = make_out({1}, a.requires_grad());
    S acc = 0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
    const S inv = S(1) / static_cast<S>(a.size());
    out.data()[0] = acc * inv;
    record(out, [a, out, inv]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S g = out.grad_vec()[0] * inv;
      for (int64_t i = 0; i < a.size(); ++i) da[i] += g;
    });
    return out;
  }

  // [N,C,H,W] -> [N,C], mean over spatial positions
  Tensor<S> spatial_mean(Tensor<S> a) {
    if (a.rank() != 4) throw DimensionError("spatial_mean: expected 4-D input, got " + shape_str(a.shape()));
    const int n = a.dim(0), c = a.dim(1);
    const int64_t hw = static_cast<int64_t>(a.dim(2)) * a.dim(3);
    auto out = make_out({n, c}, a.requires_grad());
    const S inv = S(1) / static_cast<S>(hw);
    for (int64_t nc = 0; nc < static_cast<int64_t>(n) * c; ++nc) {
      S acc = 0;
      const S* p = a.data() + nc * hw;
      for (int64_t j = 0; j < hw; ++j) acc += p[j];
      out.data()[nc] = acc * inv;
    }
    record(out, [a, out, hw, inv]() mutable {
      if (!a.requires_grad()) return;
      S* da = a.ensure_grad();
      const S* g = out.grad_vec().data();
      for (int64_t nc = 0; nc < out.size(); ++nc) {
        const S gv = g[nc] * inv;
        S* p = da + nc * hw;
        for (int64_t j = 0; j < hw; ++j) p[j] += gv;
      }
    });
    return out;
  }

  // mean over rows of (logsumexp(logits) - logit[label]); backward is
  // (softmax - onehot)/N
  Tensor<S> softmax_cross_entropy(Tensor<S> logits, std::vector<int> labels) {
    if (logits.rank() != 2 || logits.dim(0) != static_cast<int>(labels.size()))
      throw DimensionError("softmax_cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                           std::to_string(labels.size()) + " labels");
    const int n = logits.dim(0), k = logits.dim(1);
    for (int y : labels)
      if (y < 0 || y >= k) throw IndexError("softmax_cross_entropy: label out of range");
    auto out = make_out({1}, logits.requires_grad());
    S acc = 0;
    for (int i = 0; i < n; ++i) {
      const S* row = logits.data() + static_cast<int64_t>(i) * k;
      S mx = row[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      S se = 0;
      for (int j = 0; j < k; ++j) se += std::exp(row[j] - mx);
      acc += mx + std::log(se) - row[labels[i]];
    }
    out.data()[0] = acc / static_cast<S>(n);
    record(out, [logits, out, labels = std::move(labels), n, k]() mutable {
      if (!logits.requires_grad()) return;
      S* dl = logits.ensure_grad();
      const S g = out.grad_vec()[0] / static_cast<S>(n);
      for (int i = 0; i < n; ++i) {
        const S* row = logits.data() + static_cast<int64_t>(i) * k;
        S mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        S se = 0;
        for (int j = 0; j < k; ++j) se += std::exp(row[j] - mx);
        for (int j = 0; j < k; ++j) {
          const S p = std::exp(row[j] - mx) / se;
          dl[static_cast<int64_t>(i) * k + j] += g * (p - (j == labels[i] ? S(1) : S(0)));
        }
      }
    });
    return out;
  }

 private:
  Tensor<S> make_out(Shape shape, bool rg) {
    return Tensor<S>::zeros(std::move(shape), rg && recording_);
  }

  template <class F>
  void record(const Tensor<S>& out, F&& back) {
    if (!recording_ || !out.requires_grad()) return;
    // Skip nodes whose output never received gradient (their contribution
    // is exactly zero); this also keeps unseeded subgraphs untouched.
    nodes_.emplace_back([out, f = std::forward<F>(back)]() mutable {
      if (out.has_grad()) f();
    });
  }

  static void im2col(const S* x, int cin, int h, int w, int k, int stride, int pad, int ho,
                     int wo, S* col) {
    const int p = ho * wo;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          S* dst = col + (static_cast<int64_t>(ci) * k * k + ky * k + kx) * p;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            S* drow = dst + static_cast<int64_t>(oy) * wo;
            if (iy < 0 || iy >= h) {
              for (int ox = 0; ox < wo; ++ox) drow[ox] = S(0);
              continue;
            }
            const S* srow = x + (static_cast<int64_t>(ci) * h + iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              drow[ox] = (ix >= 0 && ix < w) ? srow[ix] : S(0);
            }
          }
        }
  }

  static void col2im_acc(const S* col, int cin, int h, int w, int k, int stride, int pad, int ho,
                         int wo, S* dx) {
    const int p = ho * wo;
    for (int ci = 0; ci < cin; ++ci)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const S* src = col + (static_cast<int64_t>(ci) * k * k + ky * k + kx) * p;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            S* drow = dx + (static_cast<int64_t>(ci) * h + iy) * w;
            const S* srow = src + static_cast<int64_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) drow[ix] += srow[ox];
            }
          }
        }
  }

  std::vector<std::function<void()>> nodes_;
  bool recording_ = true;
  bool frozen_ = false;
};

}  // namespace utlo
