#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "atx/numerics/tensor.hpp"

// Reverse-mode differentiation over dense tensors.
//
// Every differentiable op returns a Var whose node keeps its inputs and a
// closure that pushes the node's gradient into them. A graph is built fresh
// for each forward pass and discarded with its last Var. Leaves created with
// Var::leaf accumulate gradients across backward() calls until the caller
// drops them.

namespace atx {

namespace detail {

struct Node {
  Tensor value;
  Tensor grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;

  Tensor& grad_buffer() {
    if (!has_grad) {
      grad = Tensor(value.shape());
      has_grad = true;
    }
    return grad;
  }
};

}  // namespace detail

class Var {
 public:
  Var() = default;

  static Var constant(Tensor value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    return Var(std::move(n));
  }

  static Var leaf(Tensor value) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->has_grad; }

  /// Gradient w.r.t. this node; zeros when nothing flowed into it.
  Tensor grad() const {
    if (node_->has_grad) return node_->grad;
    return Tensor(node_->value.shape());
  }

  void zero_grad() {
    node_->has_grad = false;
    node_->grad = Tensor();
  }

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  template <class F>
  friend Var make_op(Tensor value, std::vector<Var> inputs, const char* name, F&& backprop);

  std::shared_ptr<detail::Node> node_;
};

template <class F>
Var make_op(Tensor value, std::vector<Var> inputs, const char* name, F&& backprop) {
  require_finite(value, name);
  auto n = std::make_shared<detail::Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) n->requires_grad = n->requires_grad || in.requires_grad();
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->backprop = std::forward<F>(backprop);
  }
  return Var(std::move(n));
}

/// Runs reverse accumulation from a scalar loss. Each reachable node is
/// visited exactly once, in reverse topological order.
inline void backward(const Var& loss) {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      detail::Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backprop && n->has_grad) n->backprop(*n);
  }
}

// ---------------------------------------------------------------------------
// Differentiable operations.

namespace detail {

inline void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.data().data();
  const double* s = src.data().data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

}  // namespace detail

inline Var matmul(const Var& a, const Var& b) {
  Tensor c = matmul_values(a.value(), b.value());
  return make_op(std::move(c), {a, b}, "matmul", [](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    const Tensor& G = self.grad;
    const std::size_t m = A.value.rows(), k = A.value.cols(), n = B.value.cols();
    if (A.requires_grad) {
      // dA = G * B^T
      Tensor& dA = A.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = &G.data()[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double* b = &B.value.data()[p * n];
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += g[j] * b[j];
          dA.data()[i * k + p] += s;
        }
      }
    }
    if (B.requires_grad) {
      // dB = A^T * G
      Tensor& dB = B.grad_buffer();
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = &G.data()[i * n];
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A.value.data()[i * k + p];
          double* db = &dB.data()[p * n];
          for (std::size_t j = 0; j < n; ++j) db[j] += av * g[j];
        }
      }
    }
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_shape(a.value(), b.value(), "add");
  Tensor c = a.value();
  detail::add_into(c, b.value());
  return make_op(std::move(c), {a, b}, "add", [](detail::Node& self) {
    for (auto& in : self.inputs)
      if (in->requires_grad) detail::add_into(in->grad_buffer(), self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_shape(a.value(), b.value(), "sub");
  Tensor c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b.value()[i];
  return make_op(std::move(c), {a, b}, "sub", [](detail::Node& self) {
    if (self.inputs[0]->requires_grad) detail::add_into(self.inputs[0]->grad_buffer(), self.grad);
    if (self.inputs[1]->requires_grad) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::require_same_shape(a.value(), b.value(), "mul");
  Tensor c = a.value();
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b.value()[i];
  return make_op(std::move(c), {a, b}, "mul", [](detail::Node& self) {
    auto& A = *self.inputs[0];
    auto& B = *self.inputs[1];
    if (A.requires_grad) {
      Tensor& g = A.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B.value[i];
    }
    if (B.requires_grad) {
      Tensor& g = B.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A.value[i];
    }
  });
}

inline Var scale(const Var& x, double s) {
  Tensor c = x.value();
  for (double& v : c.data()) v *= s;
  return make_op(std::move(c), {x}, "scale", [s](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

/// x[m x n] + bias[n] broadcast over rows.
inline Var add_bias(const Var& x, const Var& bias) {
  require_rank(x.value(), 2, "add_bias");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (bias.value().size() != n) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match " +
                     shape_str(x.shape()));
  }
  Tensor c = x.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) c(i, j) += bias.value()[j];
  return make_op(std::move(c), {x, bias}, "add_bias", [m, n](detail::Node& self) {
    if (self.inputs[0]->requires_grad) detail::add_into(self.inputs[0]->grad_buffer(), self.grad);
    if (self.inputs[1]->requires_grad) {
      Tensor& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

inline Var transpose(const Var& x) {
  return make_op(transpose_values(x.value()), {x}, "transpose", [](detail::Node& self) {
    detail::add_into(self.inputs[0]->grad_buffer(), transpose_values(self.grad));
  });
}

inline Var reshape(const Var& x, Shape shape) {
  Tensor c = x.value().reshaped(std::move(shape));
  return make_op(std::move(c), {x}, "reshape", [](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

namespace detail {
inline constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2.0;
}

/// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
inline Var gelu(const Var& x) {
  Tensor c = x.value();
  for (double& v : c.data()) v = 0.5 * v * (1.0 + std::erf(v * detail::kInvSqrt2));
  return make_op(std::move(c), {x}, "gelu", [](detail::Node& self) {
    const Tensor& in = self.inputs[0]->value;
    Tensor& g = self.inputs[0]->grad_buffer();
    const double inv_sqrt_2pi = std::numbers::inv_sqrtpi * detail::kInvSqrt2;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in[i];
      const double cdf = 0.5 * (1.0 + std::erf(v * detail::kInvSqrt2));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      g[i] += self.grad[i] * (cdf + v * pdf);
    }
  });
}

/// Additive logit offset for masked entries before the exponential.
inline constexpr double kMaskedLogit = -1e30;

/// Row-wise softmax with optional Boolean mask (true = allowed). Masked
/// entries come out as exactly 0; a row with no allowed entry is an error.
inline Tensor softmax_rows_values(const Tensor& x, const Mask* mask = nullptr) {
  require_rank(x, 2, "softmax_rows");
  const std::size_t m = x.rows(), n = x.cols();
  if (mask && mask->shape() != x.shape()) {
    throw ShapeError("softmax_rows: mask " + shape_str(mask->shape()) + " vs logits " +
                     shape_str(x.shape()));
  }
  Tensor y({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    double row_max = kMaskedLogit;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (mask && !(*mask)(i, j)) continue;
      any = true;
      row_max = std::max(row_max, x(i, j));
    }
    if (!any) {
      throw NumericError("softmax_rows: row " + std::to_string(i) +
                         " is fully masked (no valid key)");
    }
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const bool allowed = !mask || (*mask)(i, j);
      const double logit = allowed ? x(i, j) : x(i, j) + kMaskedLogit;
      const double e = std::exp(logit - row_max);
      y(i, j) = allowed ? e : 0.0;
      total += y(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) y(i, j) /= total;
  }
  return y;
}

inline Var softmax_rows(const Var& x, const Mask* mask = nullptr) {
  Tensor y = softmax_rows_values(x.value(), mask);
  return make_op(std::move(y), {x}, "softmax_rows", [](detail::Node& self) {
    const Tensor& y = self.value;
    const Tensor& gy = self.grad;
    Tensor& gx = self.inputs[0]->grad_buffer();
    const std::size_t m = y.rows(), n = y.cols();
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gy(i, j) * y(i, j);
      for (std::size_t j = 0; j < n; ++j) gx(i, j) += y(i, j) * (gy(i, j) - dot);
    }
  });
}

/// Layer normalization over the last axis of an [m x d] tensor.
inline Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  require_rank(x.value(), 2, "layer_norm");
  const std::size_t m = x.value().rows(), d = x.value().cols();
  if (d < 2) throw ShapeError("layer_norm: last axis must have at least 2 entries");
  if (gain.value().size() != d || bias.value().size() != d) {
    throw ShapeError("layer_norm: gain/bias must have " + std::to_string(d) + " entries");
  }
  auto xhat = std::make_shared<Tensor>(Shape{m, d});
  auto inv_std = std::make_shared<std::vector<double>>(m);
  Tensor y({m, d});
  for (std::size_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x.value()(i, j);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = x.value()(i, j) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (x.value()(i, j) - mean) * inv;
      (*xhat)(i, j) = h;
      y(i, j) = gain.value()[j] * h + bias.value()[j];
    }
  }
  return make_op(std::move(y), {x, gain, bias}, "layer_norm",
                 [xhat, inv_std, m, d](detail::Node& self) {
                   auto& X = *self.inputs[0];
                   auto& G = *self.inputs[1];
                   auto& B = *self.inputs[2];
                   const Tensor& gy = self.grad;
                   if (G.requires_grad) {
                     Tensor& gg = G.grad_buffer();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < d; ++j) gg[j] += gy(i, j) * (*xhat)(i, j);
                   }
                   if (B.requires_grad) {
                     Tensor& gb = B.grad_buffer();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < d; ++j) gb[j] += gy(i, j);
                   }
                   if (X.requires_grad) {
                     Tensor& gx = X.grad_buffer();
                     const double dd = static_cast<double>(d);
                     for (std::size_t i = 0; i < m; ++i) {
                       double sum_g = 0.0, sum_gx = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         const double gh = gy(i, j) * G.value[j];
                         sum_g += gh;
                         sum_gx += gh * (*xhat)(i, j);
                       }
                       const double inv = (*inv_std)[i];
                       for (std::size_t j = 0; j < d; ++j) {
                         const double gh = gy(i, j) * G.value[j];
                         gx(i, j) += inv / dd * (dd * gh - sum_g - (*xhat)(i, j) * sum_gx);
                       }
                     }
                   }
                 });
}

/// Columns [start, start + count) of a matrix.
inline Var slice_cols(const Var& x, std::size_t start, std::size_t count) {
  require_rank(x.value(), 2, "slice_cols");
  const std::size_t m = x.value().rows(), n = x.value().cols();
  if (start + count > n) throw ShapeError("slice_cols: range exceeds " + shape_str(x.shape()));
  Tensor c({m, count});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < count; ++j) c(i, j) = x.value()(i, start + j);
  return make_op(std::move(c), {x}, "slice_cols", [start, count, m, n](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < count; ++j) g[i * n + start + j] += self.grad(i, j);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts.front().value().rows();
  std::size_t n = 0;
  for (const auto& p : parts) {
    require_rank(p.value(), 2, "concat_cols");
    if (p.value().rows() != m) throw ShapeError("concat_cols: row counts differ");
    n += p.value().cols();
  }
  Tensor c({m, n});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.value().cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) c(i, off + j) = p.value()(i, j);
    off += w;
  }
  return make_op(std::move(c), parts, "concat_cols", [m, n](detail::Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t w = in->value.cols();
      if (in->requires_grad) {
        Tensor& g = in->grad_buffer();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) g(i, j) += self.grad[i * n + off + j];
      }
      off += w;
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t n = parts.front().value().cols();
  std::size_t m = 0;
  for (const auto& p : parts) {
    require_rank(p.value(), 2, "concat_rows");
    if (p.value().cols() != n) throw ShapeError("concat_rows: column counts differ");
    m += p.value().rows();
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
  return make_op(Tensor({m, n}, std::move(data)), parts, "concat_rows", [](detail::Node& self) {
    std::size_t off = 0;
    for (auto& in : self.inputs) {
      const std::size_t len = in->value.size();
      if (in->requires_grad) {
        Tensor& g = in->grad_buffer();
        for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[off + i];
      }
      off += len;
    }
  });
}

/// out[r] = x[index[r]].
inline Var gather_rows(const Var& x, std::vector<std::size_t> index) {
  require_rank(x.value(), 2, "gather_rows");
  const std::size_t n = x.value().cols();
  Tensor c({index.size(), n});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.value().rows()) throw ShapeError("gather_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) c(r, j) = x.value()(index[r], j);
  }
  return make_op(std::move(c), {x}, "gather_rows",
                 [index = std::move(index), n](detail::Node& self) {
                   Tensor& g = self.inputs[0]->grad_buffer();
                   for (std::size_t r = 0; r < index.size(); ++r)
                     for (std::size_t j = 0; j < n; ++j) g(index[r], j) += self.grad(r, j);
                 });
}

/// Places row r of x at out[index[r]]; all other rows of the
/// [rows x cols] result are zero.
inline Var scatter_rows(const Var& x, std::vector<std::size_t> index, std::size_t rows) {
  require_rank(x.value(), 2, "scatter_rows");
  if (index.size() != x.value().rows()) throw ShapeError("scatter_rows: index size mismatch");
  const std::size_t n = x.value().cols();
  Tensor c({rows, n});
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= rows) throw ShapeError("scatter_rows: index out of range");
    for (std::size_t j = 0; j < n; ++j) c(index[r], j) = x.value()(r, j);
  }
  return make_op(std::move(c), {x}, "scatter_rows",
                 [index = std::move(index), n](detail::Node& self) {
                   Tensor& g = self.inputs[0]->grad_buffer();
                   for (std::size_t r = 0; r < index.size(); ++r)
                     for (std::size_t j = 0; j < n; ++j) g(r, j) += self.grad(index[r], j);
                 });
}

/// Mean of each consecutive block of `group` rows: [g*k x d] -> [k x d].
inline Var group_mean_rows(const Var& x, std::size_t group) {
  require_rank(x.value(), 2, "group_mean_rows");
  const std::size_t m = x.value().rows(), d = x.value().cols();
  if (group == 0 || m % group != 0) throw ShapeError("group_mean_rows: rows not divisible by group");
  const std::size_t k = m / group;
  const double w = 1.0 / static_cast<double>(group);
  Tensor c({k, d});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t j = 0; j < d; ++j) c(r / group, j) += x.value()(r, j);
  for (double& v : c.data()) v *= w;
  return make_op(std::move(c), {x}, "group_mean_rows", [group, m, d, w](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t j = 0; j < d; ++j) g(r, j) += w * self.grad(r / group, j);
  });
}

inline Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_op(Tensor::scalar(s), {x}, "sum", [](detail::Node& self) {
    Tensor& g = self.inputs[0]->grad_buffer();
    const double gs = self.grad[0];
    for (double& v : g.data()) v += gs;
  });
}

/// Sum of squared differences over mask-valid entries, divided by `denom`.
inline Var masked_sse(const Var& pred, const Tensor& target, const Mask& mask, double denom) {
  detail::require_same_shape(pred.value(), target, "masked_sse");
  if (mask.shape() != target.shape()) {
    throw ShapeError("masked_sse: mask " + shape_str(mask.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (!mask[i]) continue;
    const double e = pred.value()[i] - target[i];
    s += e * e;
  }
  return make_op(Tensor::scalar(s / denom), {pred}, "masked_sse",
                 [target, mask, denom](detail::Node& self) {
                   Tensor& g = self.inputs[0]->grad_buffer();
                   const double k = 2.0 * self.grad[0] / denom;
                   const Tensor& p = self.inputs[0]->value;
                   for (std::size_t i = 0; i < g.size(); ++i)
                     if (mask[i]) g[i] += k * (p[i] - target[i]);
                 });
}

/// Mean squared error over mask-valid entries only.
inline Var mse(const Var& pred, const Tensor& target, const Mask& mask) {
  const std::size_t valid = mask.count();
  if (valid == 0) throw NumericError("mse: mask selects no entries");
  return masked_sse(pred, target, mask, static_cast<double>(valid));
}

}  // namespace atx
