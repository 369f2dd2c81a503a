#ifndef LORB_TENSOR_HPP_
#define LORB_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lorb/errors.hpp"
#include "lorb/rng.hpp"

namespace lorb {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// Dense row-major tensor of doubles with an optional gradient buffer.
// Copying a Tensor copies the handle; clone() deep-copies the storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value.assign(shape_numel(t.node_->shape), 0.0);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor full(Shape shape, double v, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from_values(Shape shape, std::vector<double> values,
                            bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError(strcat("tensor: shape ", shape_str(shape),
                                  " does not hold ", values.size(), " values"));
    }
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = std::move(shape);
    t.node_->value = std::move(values);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return from_values({1}, {v}, requires_grad);
  }

  static Tensor randn(Shape shape, RngStream& rng, double stddev = 1.0,
                      bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.node_->value) x = rng.normal(0.0, stddev);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (size() != 1) {
      throw DimensionError(strcat("item(): tensor has shape ",
                                  shape_str(shape()), ", expected one element"));
    }
    return node_->value[0];
  }

  double at(std::size_t r, std::size_t c) const {
    return node_->value[r * dim(1) + c];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool v) { node_->requires_grad = v; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const std::vector<double>& grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return node_->grad;
  }
  std::vector<double>& grad_mutable() {
    ensure_grad();
    return node_->grad;
  }
  void clear_grad() {
    if (node_) node_->grad.clear();
  }

  // Allocates a zero gradient buffer if absent.
  void ensure_grad() {
    if (node_->grad.empty()) node_->grad.assign(node_->value.size(), 0.0);
  }

  void accumulate_grad(std::size_t index, double g) {
    ensure_grad();
    node_->grad[index] += g;
  }

  // Deep copy of values (and requires_grad flag); gradient is not copied.
  Tensor clone() const {
    Tensor t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = node_->shape;
    t.node_->value = node_->value;
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  bool all_finite() const {
    for (double v : node_->value) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty == absent
    bool requires_grad = false;
  };

  std::shared_ptr<Node> node_;
};

namespace kernel {

// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace kernel

// Reverse-mode tape. Operations execute eagerly; when gradients are enabled
// and any input requires them, a backward closure is recorded. backward()
// walks the records in exact reverse execution order, then clears the tape;
// calling backward() twice on one tape is an error.
//
// Single-threaded: one tape per training step, owned by one thread.
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool grad_enabled) : enabled_(grad_enabled) {}

  bool grad_enabled() const { return enabled_; }
  std::size_t node_count() const { return records_.size(); }
  std::uint64_t flops() const { return flops_; }

  // ---- matrix ops ------------------------------------------------------

  Tensor matmul(Tensor a, Tensor b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0)) {
      throw DimensionError(strcat("matmul: inner dimensions disagree: ",
                                  shape_str(a.shape()), " vs ",
                                  shape_str(b.shape())));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c = Tensor::zeros({m, n});
    kernel::gemm_nn(a.data(), b.data(), c.data(), m, k, n);
    flops_ += 2ull * m * k * n;
    record({a, b}, c, [a, b, c, m, k, n]() mutable {
      const double* dc = c.grad().data();
      if (a.requires_grad()) {
        kernel::gemm_nt(dc, b.data(), a.grad_mutable().data(), m, n, k);
      }
      if (b.requires_grad()) {
        kernel::gemm_tn(a.data(), dc, b.grad_mutable().data(), k, m, n);
      }
    });
    return c;
  }

  // a[m,k] * b[n,k]^T -> [m,n]; the layout used by linear layers whose
  // weights are stored [out,in].
  Tensor matmul_nt(Tensor a, Tensor b) {
    require_rank(a, 2, "matmul_nt");
    require_rank(b, 2, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
      throw DimensionError(strcat("matmul_nt: inner dimensions disagree: ",
                                  shape_str(a.shape()), " vs ",
                                  shape_str(b.shape())));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor c = Tensor::zeros({m, n});
    kernel::gemm_nt(a.data(), b.data(), c.data(), m, k, n);
    flops_ += 2ull * m * k * n;
    record({a, b}, c, [a, b, c, m, k, n]() mutable {
      const double* dc = c.grad().data();
      if (a.requires_grad()) {
        kernel::gemm_nn(dc, b.data(), a.grad_mutable().data(), m, n, k);
      }
      if (b.requires_grad()) {
        kernel::gemm_tn(dc, a.data(), b.grad_mutable().data(), n, m, k);
      }
    });
    return c;
  }

  Tensor transpose(Tensor a) {
    require_rank(a, 2, "transpose");
    const std::size_t m = a.dim(0), n = a.dim(1);
    Tensor t = Tensor::zeros({n, m});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        t.data()[j * m + i] = a.data()[i * n + j];
    record({a}, t, [a, t, m, n]() mutable {
      if (!a.requires_grad()) return;
      double* da = a.grad_mutable().data();
      const double* dt = t.grad().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da[i * n + j] += dt[j * m + i];
    });
    return t;
  }

  // ---- elementwise suite -------------------------------------------------

  Tensor add(Tensor a, Tensor b) { return binary_op(a, b, Bin::kAdd); }
  Tensor sub(Tensor a, Tensor b) { return binary_op(a, b, Bin::kSub); }
  Tensor mul(Tensor a, Tensor b) { return binary_op(a, b, Bin::kMul); }

  Tensor scale(Tensor a, double c) {
    Tensor y = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) y.data()[i] = c * a.data()[i];
    flops_ += n;
    record({a}, y, [a, y, c, n]() mutable {
      if (!a.requires_grad()) return;
      double* da = a.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < n; ++i) da[i] += c * dy[i];
    });
    return y;
  }

  Tensor shift(Tensor a, double c) {
    Tensor y = Tensor::zeros(a.shape());
    const std::size_t n = a.size();
    for (std::size_t i = 0; i < n; ++i) y.data()[i] = a.data()[i] + c;
    flops_ += n;
    record({a}, y, [a, y, n]() mutable {
      if (!a.requires_grad()) return;
      double* da = a.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < n; ++i) da[i] += dy[i];
    });
    return y;
  }

  // Exact gelu: 0.5 x (1 + erf(x / sqrt(2))).
  Tensor gelu(Tensor x) {
    Tensor y = Tensor::zeros(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x.data()[i];
      y.data()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    flops_ += 8 * n;
    record({x}, y, [x, y, n]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        dx[i] += dy[i] * (cdf + v * pdf);
      }
    });
    return y;
  }

  Tensor tanh(Tensor x) {
    Tensor y = Tensor::zeros(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) y.data()[i] = std::tanh(x.data()[i]);
    flops_ += 4 * n;
    record({x}, y, [x, y, n]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double t = y.data()[i];
        dx[i] += dy[i] * (1.0 - t * t);
      }
    });
    return y;
  }

  // Inverted dropout; scale 1/(1-p) at train time so eval is identity.
  // p == 0 returns the input unchanged. Mask generation consumes rng, so
  // two calls with streams in the same state produce identical masks.
  Tensor dropout(Tensor x, double p, RngStream& rng) {
    if (p < 0.0 || p >= 1.0) {
      throw ConfigError(strcat("dropout: rate must be in [0,1), got ", p));
    }
    if (p == 0.0) return x;
    const std::size_t n = x.size();
    auto mask = std::make_shared<std::vector<double>>(n);
    const double keep_scale = 1.0 / (1.0 - p);
    Tensor y = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
      (*mask)[i] = rng.uniform() < p ? 0.0 : keep_scale;
      y.data()[i] = x.data()[i] * (*mask)[i];
    }
    flops_ += n;
    record({x}, y, [x, y, mask, n]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * (*mask)[i];
    });
    return y;
  }

  // ---- softmax over negated scores: P_i = exp(-s_i) / sum_j exp(-s_j) ----

  Tensor softmax_neg(Tensor s) {
    require_rank(s, 1, "softmax_neg");
    const std::size_t n = s.size();
    if (n == 0) throw DimensionError("softmax_neg: empty input");
    if (!s.all_finite()) {
      throw NumericError("softmax_neg: input contains NaN or Inf");
    }
    // max of -s == -min(s); shift for stability.
    double smin = s.data()[0];
    for (std::size_t i = 1; i < n; ++i) smin = std::min(smin, s.data()[i]);
    Tensor p = Tensor::zeros(s.shape());
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      p.data()[i] = std::exp(-(s.data()[i] - smin));
      z += p.data()[i];
    }
    for (std::size_t i = 0; i < n; ++i) p.data()[i] /= z;
    flops_ += 6 * n;
    record({s}, p, [s, p, n]() mutable {
      if (!s.requires_grad()) return;
      const double* dp = p.grad().data();
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += dp[i] * p.data()[i];
      double* ds = s.grad_mutable().data();
      // dL/ds_i = -p_i (dp_i - sum_k dp_k p_k)
      for (std::size_t i = 0; i < n; ++i)
        ds[i] += -p.data()[i] * (dp[i] - dot);
    });
    return p;
  }

  // Row-wise stable softmax; used inside attention.
  Tensor softmax_rows(Tensor x) {
    require_rank(x, 2, "softmax_rows");
    const std::size_t m = x.dim(0), n = x.dim(1);
    Tensor y = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < m; ++i) {
      const double* xr = x.data() + i * n;
      double* yr = y.data() + i * n;
      double mx = xr[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        z += yr[j];
      }
      for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
    }
    flops_ += 6ull * m * n;
    record({x}, y, [x, y, m, n]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* yr = y.data() + i * n;
        const double* dyr = dy + i * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dyr[j] * yr[j];
        double* dxr = dx + i * n;
        for (std::size_t j = 0; j < n; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
      }
    });
    return y;
  }

  // ---- layer norm ---------------------------------------------------------

  // Per-row normalization with eps inside the sqrt; gain/bias are [d].
  Tensor layer_norm(Tensor x, Tensor gain, Tensor bias) {
    require_rank(x, 2, "layer_norm");
    const std::size_t m = x.dim(0), d = x.dim(1);
    if (d < 2) {
      throw DimensionError(strcat("layer_norm: needs d >= 2, got ", d));
    }
    if (gain.size() != d || bias.size() != d) {
      throw DimensionError(strcat("layer_norm: gain/bias ",
                                  shape_str(gain.shape()), "/",
                                  shape_str(bias.shape()),
                                  " do not match row width ", d));
    }
    Tensor y = Tensor::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<double>>(m * d);
    auto rstd = std::make_shared<std::vector<double>>(m);
    for (std::size_t i = 0; i < m; ++i) {
      const double* xr = x.data() + i * d;
      double mean = 0.0;
      for (std::size_t j = 0; j < d; ++j) mean += xr[j];
      mean /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double c = xr[j] - mean;
        var += c * c;
      }
      var /= static_cast<double>(d);
      const double r = 1.0 / std::sqrt(var + kLayerNormEps);
      (*rstd)[i] = r;
      double* hr = xhat->data() + i * d;
      double* yr = y.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) {
        hr[j] = (xr[j] - mean) * r;
        yr[j] = gain.data()[j] * hr[j] + bias.data()[j];
      }
    }
    flops_ += 8ull * m * d;
    record({x, gain, bias}, y, [x, gain, bias, y, xhat, rstd, m, d]() mutable {
      const double* dy = y.grad().data();
      const double dd = static_cast<double>(d);
      if (gain.requires_grad()) {
        double* dg = gain.grad_mutable().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j)
            dg[j] += dy[i * d + j] * (*xhat)[i * d + j];
      }
      if (bias.requires_grad()) {
        double* db = bias.grad_mutable().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
      }
      if (x.requires_grad()) {
        double* dx = x.grad_mutable().data();
        for (std::size_t i = 0; i < m; ++i) {
          const double* dyr = dy + i * d;
          const double* hr = xhat->data() + i * d;
          double sum_dh = 0.0, sum_dh_h = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = dyr[j] * gain.data()[j];
            sum_dh += dh;
            sum_dh_h += dh * hr[j];
          }
          const double r = (*rstd)[i];
          for (std::size_t j = 0; j < d; ++j) {
            const double dh = dyr[j] * gain.data()[j];
            dx[i * d + j] += r * (dh - sum_dh / dd - hr[j] * sum_dh_h / dd);
          }
        }
      }
    });
    return y;
  }

  // ---- structural ops -----------------------------------------------------

  // x[n,d] + b[d] broadcast over rows.
  Tensor add_row_broadcast(Tensor x, Tensor b) {
    require_rank(x, 2, "add_row_broadcast");
    require_rank(b, 1, "add_row_broadcast");
    const std::size_t m = x.dim(0), d = x.dim(1);
    if (b.size() != d) {
      throw DimensionError(strcat("add_row_broadcast: ", shape_str(x.shape()),
                                  " vs ", shape_str(b.shape())));
    }
    Tensor y = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j)
        y.data()[i * d + j] = x.data()[i * d + j] + b.data()[j];
    flops_ += m * d;
    record({x, b}, y, [x, b, y, m, d]() mutable {
      const double* dy = y.grad().data();
      if (x.requires_grad()) {
        double* dx = x.grad_mutable().data();
        for (std::size_t i = 0; i < m * d; ++i) dx[i] += dy[i];
      }
      if (b.requires_grad()) {
        double* db = b.grad_mutable().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < d; ++j) db[j] += dy[i * d + j];
      }
    });
    return y;
  }

  // Column means: [n,d] -> [d].
  Tensor mean_rows(Tensor x) {
    require_rank(x, 2, "mean_rows");
    const std::size_t m = x.dim(0), d = x.dim(1);
    Tensor y = Tensor::zeros({d});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) y.data()[j] += x.data()[i * d + j];
    for (std::size_t j = 0; j < d; ++j) y.data()[j] /= static_cast<double>(m);
    flops_ += m * d;
    record({x}, y, [x, y, m, d]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      const double inv = 1.0 / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < d; ++j) dx[i * d + j] += dy[j] * inv;
    });
    return y;
  }

  Tensor slice_cols(Tensor x, std::size_t start, std::size_t len) {
    require_rank(x, 2, "slice_cols");
    const std::size_t m = x.dim(0), d = x.dim(1);
    if (start + len > d) {
      throw DimensionError(strcat("slice_cols: [", start, ",", start + len,
                                  ") out of range for ", shape_str(x.shape())));
    }
    Tensor y = Tensor::zeros({m, len});
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(x.data() + i * d + start, len, y.data() + i * len);
    record({x}, y, [x, y, start, len, m, d]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < len; ++j)
          dx[i * d + start + j] += dy[i * len + j];
    });
    return y;
  }

  Tensor concat_cols(std::vector<Tensor> xs) {
    if (xs.empty()) throw DimensionError("concat_cols: empty input list");
    const std::size_t m = xs[0].dim(0);
    std::size_t total = 0;
    for (const Tensor& x : xs) {
      require_rank(x, 2, "concat_cols");
      if (x.dim(0) != m) {
        throw DimensionError(strcat("concat_cols: row counts differ: ", m,
                                    " vs ", x.dim(0)));
      }
      total += x.dim(1);
    }
    Tensor y = Tensor::zeros({m, total});
    std::size_t off = 0;
    for (const Tensor& x : xs) {
      const std::size_t w = x.dim(1);
      for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x.data() + i * w, w, y.data() + i * total + off);
      off += w;
    }
    record(xs, y, [xs, y, m, total]() mutable {
      const double* dy = y.grad().data();
      std::size_t off = 0;
      for (Tensor& x : xs) {
        const std::size_t w = x.dim(1);
        if (x.requires_grad()) {
          double* dx = x.grad_mutable().data();
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j)
              dx[i * w + j] += dy[i * total + off + j];
        }
        off += w;
      }
    });
    return y;
  }

  Tensor select_row(Tensor x, std::size_t row) {
    require_rank(x, 2, "select_row");
    const std::size_t m = x.dim(0), d = x.dim(1);
    if (row >= m) {
      throw DimensionError(strcat("select_row: row ", row, " out of range for ",
                                  shape_str(x.shape())));
    }
    Tensor y = Tensor::zeros({d});
    std::copy_n(x.data() + row * d, d, y.data());
    record({x}, y, [x, y, row, d]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t j = 0; j < d; ++j) dx[row * d + j] += dy[j];
    });
    return y;
  }

  // Stacks k vectors [d] into [k,d].
  Tensor stack_rows(std::vector<Tensor> rows) {
    if (rows.empty()) throw DimensionError("stack_rows: empty input list");
    const std::size_t d = rows[0].size();
    for (const Tensor& r : rows) {
      require_rank(r, 1, "stack_rows");
      if (r.size() != d) {
        throw DimensionError(strcat("stack_rows: widths differ: ", d, " vs ",
                                    r.size()));
      }
    }
    const std::size_t k = rows.size();
    Tensor y = Tensor::zeros({k, d});
    for (std::size_t i = 0; i < k; ++i)
      std::copy_n(rows[i].data(), d, y.data() + i * d);
    record(rows, y, [rows, y, k, d]() mutable {
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < k; ++i) {
        Tensor r = rows[i];
        if (!r.requires_grad()) continue;
        double* dr = r.grad_mutable().data();
        for (std::size_t j = 0; j < d; ++j) dr[j] += dy[i * d + j];
      }
    });
    return y;
  }

  // Concatenates 1-D tensors (scalars included) into one vector.
  Tensor concat(std::vector<Tensor> xs) {
    if (xs.empty()) throw DimensionError("concat: empty input list");
    std::size_t total = 0;
    for (const Tensor& x : xs) {
      require_rank(x, 1, "concat");
      total += x.size();
    }
    Tensor y = Tensor::zeros({total});
    std::size_t off = 0;
    for (const Tensor& x : xs) {
      std::copy_n(x.data(), x.size(), y.data() + off);
      off += x.size();
    }
    record(xs, y, [xs, y]() mutable {
      const double* dy = y.grad().data();
      std::size_t off = 0;
      for (Tensor& x : xs) {
        if (x.requires_grad()) {
          double* dx = x.grad_mutable().data();
          for (std::size_t j = 0; j < x.size(); ++j) dx[j] += dy[off + j];
        }
        off += x.size();
      }
    });
    return y;
  }

  Tensor sum(Tensor x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x.data()[i];
    Tensor y = Tensor::scalar(s);
    flops_ += x.size();
    record({x}, y, [x, y]() mutable {
      if (!x.requires_grad()) return;
      const double g = y.grad()[0];
      double* dx = x.grad_mutable().data();
      for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g;
    });
    return y;
  }

  // Diagonal of a square matrix: [d,d] -> [d].
  Tensor diag(Tensor x) {
    require_rank(x, 2, "diag");
    const std::size_t d = x.dim(0);
    if (x.dim(1) != d) {
      throw DimensionError(strcat("diag: matrix not square: ",
                                  shape_str(x.shape())));
    }
    Tensor y = Tensor::zeros({d});
    for (std::size_t i = 0; i < d; ++i) y.data()[i] = x.data()[i * d + i];
    record({x}, y, [x, y, d]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < d; ++i) dx[i * d + i] += dy[i];
    });
    return y;
  }

  // Outer product a[m] b[n] -> [m,n].
  Tensor outer(Tensor a, Tensor b) {
    require_rank(a, 1, "outer");
    require_rank(b, 1, "outer");
    const std::size_t m = a.size(), n = b.size();
    Tensor y = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j)
        y.data()[i * n + j] = a.data()[i] * b.data()[j];
    flops_ += m * n;
    record({a, b}, y, [a, b, y, m, n]() mutable {
      const double* dy = y.grad().data();
      if (a.requires_grad()) {
        double* da = a.grad_mutable().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            da[i] += dy[i * n + j] * b.data()[j];
      }
      if (b.requires_grad()) {
        double* db = b.grad_mutable().data();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            db[j] += dy[i * n + j] * a.data()[i];
      }
    });
    return y;
  }

  // Elementwise 1/sqrt(x); inputs must be strictly positive.
  Tensor rsqrt(Tensor x) {
    Tensor y = Tensor::zeros(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (!(x.data()[i] > 0.0)) {
        throw NumericError(strcat("rsqrt: non-positive input ", x.data()[i]));
      }
      y.data()[i] = 1.0 / std::sqrt(x.data()[i]);
    }
    flops_ += 2 * n;
    record({x}, y, [x, y, n]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        const double r = y.data()[i];  // x^{-1/2}
        dx[i] += dy[i] * (-0.5) * r * r * r;
      }
    });
    return y;
  }

  // Elementwise sqrt; subgradient 0 at exactly 0.
  Tensor sqrt(Tensor x) {
    Tensor y = Tensor::zeros(x.shape());
    const std::size_t n = x.size();
    for (std::size_t i = 0; i < n; ++i) {
      if (x.data()[i] < 0.0) {
        throw NumericError(strcat("sqrt: negative input ", x.data()[i]));
      }
      y.data()[i] = std::sqrt(x.data()[i]);
    }
    flops_ += n;
    record({x}, y, [x, y, n]() mutable {
      if (!x.requires_grad()) return;
      double* dx = x.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < n; ++i) {
        if (y.data()[i] > 0.0) dx[i] += dy[i] * 0.5 / y.data()[i];
      }
    });
    return y;
  }

  // Embedding lookup: gathers rows of table [V,d] at ids -> [T,d].
  Tensor embed(Tensor table, std::span<const int> ids) {
    require_rank(table, 2, "embed");
    const std::size_t v = table.dim(0), d = table.dim(1);
    const std::size_t t = ids.size();
    Tensor y = Tensor::zeros({t, d});
    for (std::size_t i = 0; i < t; ++i) {
      if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
        throw DimensionError(strcat("embed: id ", ids[i],
                                    " out of range for table ",
                                    shape_str(table.shape())));
      }
      std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * d, d,
                  y.data() + i * d);
    }
    std::vector<int> idv(ids.begin(), ids.end());
    record({table}, y, [table, y, idv = std::move(idv), d]() mutable {
      if (!table.requires_grad()) return;
      double* dt = table.grad_mutable().data();
      const double* dy = y.grad().data();
      for (std::size_t i = 0; i < idv.size(); ++i) {
        double* row = dt + static_cast<std::size_t>(idv[i]) * d;
        for (std::size_t j = 0; j < d; ++j) row[j] += dy[i * d + j];
      }
    });
    return y;
  }

  // ---- backward -----------------------------------------------------------

  void backward(const Tensor& root) {
    if (consumed_) {
      throw std::logic_error("tape: backward() already ran on this tape");
    }
    if (root.size() != 1) {
      throw DimensionError(strcat("backward: root must be scalar, got ",
                                  shape_str(root.shape())));
    }
    consumed_ = true;
    Tensor r = root;
    r.ensure_grad();
    r.grad_mutable()[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
    records_.clear();
  }

 private:
  enum class Bin { kAdd, kSub, kMul };

  static void require_rank(const Tensor& t, std::size_t r, const char* op) {
    if (t.rank() != r) {
      throw DimensionError(strcat(op, ": expected rank-", r, " tensor, got ",
                                  shape_str(t.shape())));
    }
  }

  // Equal shapes, or scalar (size-1) broadcast on either side.
  Tensor binary_op(Tensor a, Tensor b, Bin op) {
    const bool a_scalar = a.size() == 1 && b.size() != 1;
    const bool b_scalar = b.size() == 1 && a.size() != 1;
    if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
      throw DimensionError(strcat(op_name(op), ": shape mismatch: ",
                                  shape_str(a.shape()), " vs ",
                                  shape_str(b.shape())));
    }
    const Shape& out_shape = a_scalar ? b.shape() : a.shape();
    const std::size_t n = shape_numel(out_shape);
    Tensor y = Tensor::zeros(out_shape);
    const double* pa = a.data();
    const double* pb = b.data();
    for (std::size_t i = 0; i < n; ++i) {
      const double va = a_scalar ? pa[0] : pa[i];
      const double vb = b_scalar ? pb[0] : pb[i];
      switch (op) {
        case Bin::kAdd: y.data()[i] = va + vb; break;
        case Bin::kSub: y.data()[i] = va - vb; break;
        case Bin::kMul: y.data()[i] = va * vb; break;
      }
    }
    flops_ += n;
    record({a, b}, y, [a, b, y, op, a_scalar, b_scalar, n]() mutable {
      const double* dy = y.grad().data();
      if (a.requires_grad()) {
        double* da = a.grad_mutable().data();
        for (std::size_t i = 0; i < n; ++i) {
          double g = dy[i];
          if (op == Bin::kMul) g *= b_scalar ? b.data()[0] : b.data()[i];
          da[a_scalar ? 0 : i] += g;
        }
      }
      if (b.requires_grad()) {
        double* db = b.grad_mutable().data();
        for (std::size_t i = 0; i < n; ++i) {
          double g = dy[i];
          if (op == Bin::kMul) g *= a_scalar ? a.data()[0] : a.data()[i];
          if (op == Bin::kSub) g = -g;
          db[b_scalar ? 0 : i] += g;
        }
      }
    });
    return y;
  }

  static const char* op_name(Bin op) {
    switch (op) {
      case Bin::kAdd: return "add";
      case Bin::kSub: return "sub";
      case Bin::kMul: return "mul";
    }
    return "?";
  }

  void record(const std::vector<Tensor>& inputs, Tensor& out,
              std::function<void()> backward_fn) {
    bool needs = false;
    if (enabled_) {
      for (const Tensor& t : inputs) needs = needs || t.requires_grad();
    }
    if (!needs) return;
    out.set_requires_grad(true);
    Tensor out_handle = out;
    records_.push_back([out_handle, fn = std::move(backward_fn)]() {
      if (!out_handle.has_grad()) return;  // not on the path to the root
      fn();
    });
  }

  static constexpr double kInvSqrt2 = 0.7071067811865475244008443621048490;
  static constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343819;
  static constexpr double kLayerNormEps = 1e-5;

  std::vector<std::function<void()>> records_;
  std::uint64_t flops_ = 0;
  bool enabled_ = true;
  bool consumed_ = false;
};

}  // namespace lorb

#endif  // LORB_TENSOR_HPP_
