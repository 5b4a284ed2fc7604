#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pft/errors.hpp"
#include "pft/tensor.hpp"

namespace pft {

// A tensor with a gradient slot and a trainable flag. Prompt parameters are
// trainable; backbone weights are frozen (trainable = false) and are never
// touched by an optimizer step.
template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;
  std::string name;

  Parameter() = default;
  Parameter(std::string param_name, Tensor<T> v, bool is_trainable)
      : value(std::move(v)), trainable(is_trainable), name(std::move(param_name)) {
    grad = Tensor<T>(value.shape());
  }

  void zero_grad() { std::fill(grad.vec().begin(), grad.vec().end(), T(0)); }
};

// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

namespace kernel {

// c += a * b, all row-major. Inner loops run over contiguous memory.
template <typename T>
void matmul_acc(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const T aik = arow[p];
      const T* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
}

// ga += g * b^T  (g: m x n, b: k x n, ga: m x k)
template <typename T>
void matmul_acc_bt(const T* g, const T* b, T* ga, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    T* garow = ga + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T s = 0;
      for (std::int64_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      garow[p] += s;
    }
  }
}

// gb += a^T * g  (a: m x k, g: m x n, gb: k x n)
template <typename T>
void matmul_acc_at(const T* a, const T* g, T* gb, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* grow = g + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const T aik = arow[p];
      T* gbrow = gb + p * n;
      for (std::int64_t j = 0; j < n; ++j) gbrow[j] += aik * grow[j];
    }
  }
}

template <typename T>
T gelu_value(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
}

template <typename T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(1.0 / std::sqrt(2.0 * std::numbers::pi));
  return cdf + x * pdf;
}

}  // namespace kernel

// Define-by-run gradient tape. A forward pass records operations in execution
// order (which is a topological order); backward() replays them in exact
// reverse and accumulates gradients into bound Parameters. The tape is
// rebuilt for every forward pass, and a tape supports exactly one backward.
template <typename T>
class Tape {
 public:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool needs_grad = false;
    std::function<void(Tape&, Node&)> backward;
    Parameter<T>* bound = nullptr;
  };

  Var input(Tensor<T> v) {
    return push(std::move(v), false, nullptr, nullptr);
  }

  // Binds a Parameter; repeated binds of the same Parameter on one tape
  // return the same node so gradients from all uses accumulate together.
  Var param(Parameter<T>& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return Var{it->second};
    Var v = push(p.value, p.trainable, nullptr, &p);
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  const Tensor<T>& value(Var v) const { return node(v).value; }

  const Tensor<T>& grad(Var v) const {
    if (!backward_done_) throw contract_error("gradient read before backward()");
    return node(v).grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var root) {
    if (backward_done_) {
      throw contract_error("second backward() on the same tape; record a new forward pass first");
    }
    Node& r = node(root);
    if (r.value.numel() != 1) {
      throw contract_error("backward() root must be scalar, got shape " +
                           shape_to_string(r.value.shape()));
    }
    for (auto& n : nodes_) {
      if (n->needs_grad || n.get() == &r) n->grad = Tensor<T>(n->value.shape());
    }
    r.grad[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = **it;
      if (n.needs_grad && n.backward) n.backward(*this, n);
    }
    for (auto& n : nodes_) {
      if (n->bound && n->bound->trainable) {
        auto& pg = n->bound->grad.vec();
        const auto& ng = n->grad.vec();
        for (std::size_t i = 0; i < pg.size(); ++i) pg[i] += ng[i];
      }
    }
    backward_done_ = true;
  }

  // ---- primitive operations -------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
      throw dimension_error("matmul: incompatible shapes " + shape_to_string(av.shape()) +
                            " and " + shape_to_string(bv.shape()));
    }
    const std::int64_t m = av.rows(), k = av.cols(), n = bv.cols();
    Tensor<T> out(m, n);
    kernel::matmul_acc(av.data(), bv.data(), out.data(), m, k, n);
    return record({a, b}, std::move(out), [a, b, m, k, n](Tape& t, Node& self) {
      const T* g = self.grad.data();
      if (t.node(a).needs_grad) {
        kernel::matmul_acc_bt(g, t.node(b).value.data(), t.node(a).grad.data(), m, k, n);
      }
      if (t.node(b).needs_grad) {
        kernel::matmul_acc_at(t.node(a).value.data(), g, t.node(b).grad.data(), m, k, n);
      }
    });
  }

  Var add(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv)) {
      throw dimension_error("add: shape mismatch " + shape_to_string(av.shape()) + " vs " +
                            shape_to_string(bv.shape()));
    }
    Tensor<T> out(av.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
    return record({a, b}, std::move(out), [a, b](Tape& t, Node& self) {
      for (Var v : {a, b}) {
        Node& in = t.node(v);
        if (!in.needs_grad) continue;
        for (std::int64_t i = 0; i < self.grad.numel(); ++i) in.grad[i] += self.grad[i];
      }
    });
  }

  // Broadcasts a rank-1 bias over the rows of a rank-2 tensor.
  Var add_rowwise(Var x, Var bias) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& bv = value(bias);
    if (xv.rank() != 2 || bv.rank() != 1 || bv.extent(0) != xv.cols()) {
      throw dimension_error("add_rowwise: shapes " + shape_to_string(xv.shape()) + " and " +
                            shape_to_string(bv.shape()));
    }
    const std::int64_t r = xv.rows(), c = xv.cols();
    Tensor<T> out(r, c);
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out.at(i, j) = xv.at(i, j) + bv[j];
    return record({x, bias}, std::move(out), [x, bias, r, c](Tape& t, Node& self) {
      if (t.node(x).needs_grad) {
        auto& gx = t.node(x).grad;
        for (std::int64_t i = 0; i < r * c; ++i) gx[i] += self.grad[i];
      }
      if (t.node(bias).needs_grad) {
        auto& gb = t.node(bias).grad;
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) gb[j] += self.grad.at(i, j);
      }
    });
  }

  Var mul(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv)) {
      throw dimension_error("mul: shape mismatch " + shape_to_string(av.shape()) + " vs " +
                            shape_to_string(bv.shape()));
    }
    Tensor<T> out(av.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * bv[i];
    return record({a, b}, std::move(out), [a, b](Tape& t, Node& self) {
      Node& na = t.node(a);
      Node& nb = t.node(b);
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
        if (na.needs_grad) na.grad[i] += self.grad[i] * nb.value[i];
        if (nb.needs_grad) nb.grad[i] += self.grad[i] * na.value[i];
      }
    });
  }

  Var scale(Var a, T factor) {
    const Tensor<T>& av = value(a);
    Tensor<T> out(av.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = av[i] * factor;
    return record({a}, std::move(out), [a, factor](Tape& t, Node& self) {
      Node& in = t.node(a);
      if (!in.needs_grad) return;
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) in.grad[i] += self.grad[i] * factor;
    });
  }

  Var transpose(Var a) {
    const Tensor<T>& av = value(a);
    const std::int64_t r = av.rows(), c = av.cols();
    Tensor<T> out(c, r);
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
    return record({a}, std::move(out), [a, r, c](Tape& t, Node& self) {
      Node& in = t.node(a);
      if (!in.needs_grad) return;
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) in.grad.at(i, j) += self.grad.at(j, i);
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw contract_error("concat_rows: no inputs");
    const std::int64_t c = value(parts[0]).cols();
    std::int64_t rows = 0;
    for (Var p : parts) {
      const Tensor<T>& pv = value(p);
      if (pv.cols() != c) {
        throw dimension_error("concat_rows: column mismatch " + shape_to_string(pv.shape()));
      }
      rows += pv.rows();
    }
    Tensor<T> out(rows, c);
    std::int64_t r0 = 0;
    for (Var p : parts) {
      const Tensor<T>& pv = value(p);
      std::copy(pv.data(), pv.data() + pv.numel(), out.data() + r0 * c);
      r0 += pv.rows();
    }
    return record(parts, std::move(out), [parts, c](Tape& t, Node& self) {
      std::int64_t r0 = 0;
      for (Var p : parts) {
        Node& in = t.node(p);
        const std::int64_t pr = in.value.rows();
        if (in.needs_grad) {
          const T* g = self.grad.data() + r0 * c;
          for (std::int64_t i = 0; i < pr * c; ++i) in.grad[i] += g[i];
        }
        r0 += pr;
      }
    });
  }

  Var slice_rows(Var a, std::int64_t row0, std::int64_t nrows) {
    const Tensor<T>& av = value(a);
    const std::int64_t r = av.rows(), c = av.cols();
    if (row0 < 0 || nrows <= 0 || row0 + nrows > r) {
      throw dimension_error("slice_rows: range [" + std::to_string(row0) + ", " +
                            std::to_string(row0 + nrows) + ") out of " + std::to_string(r));
    }
    Tensor<T> out(nrows, c);
    std::copy(av.data() + row0 * c, av.data() + (row0 + nrows) * c, out.data());
    return record({a}, std::move(out), [a, row0, c](Tape& t, Node& self) {
      Node& in = t.node(a);
      if (!in.needs_grad) return;
      T* g = in.grad.data() + row0 * c;
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) g[i] += self.grad[i];
    });
  }

  Var row(Var a, std::int64_t r) { return slice_rows(a, r, 1); }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: no inputs");
    const std::int64_t r = value(parts[0]).rows();
    std::int64_t cols = 0;
    for (Var p : parts) {
      const Tensor<T>& pv = value(p);
      if (pv.rows() != r) {
        throw dimension_error("concat_cols: row mismatch " + shape_to_string(pv.shape()));
      }
      cols += pv.cols();
    }
    Tensor<T> out(r, cols);
    std::int64_t c0 = 0;
    for (Var p : parts) {
      const Tensor<T>& pv = value(p);
      for (std::int64_t i = 0; i < r; ++i) {
        std::copy(pv.row_ptr(i), pv.row_ptr(i) + pv.cols(), out.row_ptr(i) + c0);
      }
      c0 += pv.cols();
    }
    return record(parts, std::move(out), [parts, r](Tape& t, Node& self) {
      std::int64_t c0 = 0;
      for (Var p : parts) {
        Node& in = t.node(p);
        const std::int64_t pc = in.value.cols();
        if (in.needs_grad) {
          for (std::int64_t i = 0; i < r; ++i)
            for (std::int64_t j = 0; j < pc; ++j) in.grad.at(i, j) += self.grad.at(i, c0 + j);
        }
        c0 += pc;
      }
    });
  }

  Var slice_cols(Var a, std::int64_t col0, std::int64_t ncols) {
    const Tensor<T>& av = value(a);
    const std::int64_t r = av.rows(), c = av.cols();
    if (col0 < 0 || ncols <= 0 || col0 + ncols > c) {
      throw dimension_error("slice_cols: range [" + std::to_string(col0) + ", " +
                            std::to_string(col0 + ncols) + ") out of " + std::to_string(c));
    }
    Tensor<T> out(r, ncols);
    for (std::int64_t i = 0; i < r; ++i) {
      std::copy(av.row_ptr(i) + col0, av.row_ptr(i) + col0 + ncols, out.row_ptr(i));
    }
    return record({a}, std::move(out), [a, col0](Tape& t, Node& self) {
      Node& in = t.node(a);
      if (!in.needs_grad) return;
      const std::int64_t r = self.grad.rows(), nc = self.grad.cols();
      for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < nc; ++j) in.grad.at(i, col0 + j) += self.grad.at(i, j);
    });
  }

  // Row gather, the embedding lookup. Duplicate indices accumulate gradient.
  Var gather_rows(Var table, std::vector<std::int64_t> ids) {
    const Tensor<T>& tv = value(table);
    const std::int64_t r = tv.rows(), c = tv.cols();
    for (std::int64_t id : ids) {
      if (id < 0 || id >= r) {
        throw index_error("gather_rows: id " + std::to_string(id) + " out of [0, " +
                          std::to_string(r) + ")");
      }
    }
    Tensor<T> out(static_cast<std::int64_t>(ids.size()), c);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::copy(tv.row_ptr(ids[i]), tv.row_ptr(ids[i]) + c, out.row_ptr(static_cast<std::int64_t>(i)));
    }
    return record({table}, std::move(out), [table, ids = std::move(ids), c](Tape& t, Node& self) {
      Node& in = t.node(table);
      if (!in.needs_grad) return;
      for (std::size_t i = 0; i < ids.size(); ++i) {
        T* dst = in.grad.row_ptr(ids[i]);
        const T* src = self.grad.row_ptr(static_cast<std::int64_t>(i));
        for (std::int64_t j = 0; j < c; ++j) dst[j] += src[j];
      }
    });
  }

  // Normalizes each row to zero mean / unit variance, then applies the
  // elementwise affine gamma * x + beta.
  Var layer_norm(Var x, Var gamma, Var beta, T eps) {
    if (eps <= T(0)) throw config_error("layer_norm: eps must be > 0");
    const Tensor<T>& xv = value(x);
    const Tensor<T>& gv = value(gamma);
    const Tensor<T>& bv = value(beta);
    if (xv.rank() != 2 || gv.rank() != 1 || bv.rank() != 1 || gv.extent(0) != xv.cols() ||
        bv.extent(0) != xv.cols()) {
      throw dimension_error("layer_norm: widths " + shape_to_string(xv.shape()) + ", " +
                            shape_to_string(gv.shape()) + ", " + shape_to_string(bv.shape()));
    }
    const std::int64_t r = xv.rows(), d = xv.cols();
    Tensor<T> out(r, d);
    Tensor<T> xhat(r, d);
    Tensor<T> inv_std({r});
    for (std::int64_t i = 0; i < r; ++i) {
      const T* xr = xv.row_ptr(i);
      T mean = 0;
      for (std::int64_t j = 0; j < d; ++j) mean += xr[j];
      mean /= T(d);
      T var = 0;
      for (std::int64_t j = 0; j < d; ++j) {
        const T dx = xr[j] - mean;
        var += dx * dx;
      }
      var /= T(d);
      const T istd = T(1) / std::sqrt(var + eps);
      inv_std[i] = istd;
      for (std::int64_t j = 0; j < d; ++j) {
        const T h = (xr[j] - mean) * istd;
        xhat.at(i, j) = h;
        out.at(i, j) = gv[j] * h + bv[j];
      }
    }
    return record({x, gamma, beta}, std::move(out),
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), r,
                   d](Tape& t, Node& self) {
      Node& nx = t.node(x);
      Node& ng = t.node(gamma);
      Node& nb = t.node(beta);
      const Tensor<T>& gval = ng.value;
      for (std::int64_t i = 0; i < r; ++i) {
        const T* g = self.grad.row_ptr(i);
        const T* h = xhat.row_ptr(i);
        if (ng.needs_grad || nb.needs_grad) {
          for (std::int64_t j = 0; j < d; ++j) {
            if (ng.needs_grad) ng.grad[j] += g[j] * h[j];
            if (nb.needs_grad) nb.grad[j] += g[j];
          }
        }
        if (nx.needs_grad) {
          T sum_gh = 0, sum_ghh = 0;
          for (std::int64_t j = 0; j < d; ++j) {
            const T gh = g[j] * gval[j];
            sum_gh += gh;
            sum_ghh += gh * h[j];
          }
          const T mean_gh = sum_gh / T(d);
          const T mean_ghh = sum_ghh / T(d);
          T* dst = nx.grad.row_ptr(i);
          for (std::int64_t j = 0; j < d; ++j) {
            dst[j] += (g[j] * gval[j] - mean_gh - h[j] * mean_ghh) * inv_std[i];
          }
        }
      }
    });
  }

  // Row-wise softmax with max subtraction.
  Var softmax(Var x) {
    const Tensor<T>& xv = value(x);
    if (xv.rank() != 2 || xv.cols() == 0) {
      throw dimension_error("softmax: expected nonempty rows, got " + shape_to_string(xv.shape()));
    }
    const std::int64_t r = xv.rows(), k = xv.cols();
    Tensor<T> out(r, k);
    for (std::int64_t i = 0; i < r; ++i) {
      const T* xr = xv.row_ptr(i);
      T mx = xr[0];
      for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
      T z = 0;
      T* orow = out.row_ptr(i);
      for (std::int64_t j = 0; j < k; ++j) {
        orow[j] = std::exp(xr[j] - mx);
        z += orow[j];
      }
      for (std::int64_t j = 0; j < k; ++j) orow[j] /= z;
    }
    return record({x}, std::move(out), [x, r, k](Tape& t, Node& self) {
      Node& in = t.node(x);
      if (!in.needs_grad) return;
      for (std::int64_t i = 0; i < r; ++i) {
        const T* y = self.value.row_ptr(i);
        const T* g = self.grad.row_ptr(i);
        T dot = 0;
        for (std::int64_t j = 0; j < k; ++j) dot += y[j] * g[j];
        T* dst = in.grad.row_ptr(i);
        for (std::int64_t j = 0; j < k; ++j) dst[j] += y[j] * (g[j] - dot);
      }
    });
  }

  Var gelu(Var x) {
    const Tensor<T>& xv = value(x);
    Tensor<T> out(xv.shape());
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = kernel::gelu_value(xv[i]);
    return record({x}, std::move(out), [x](Tape& t, Node& self) {
      Node& in = t.node(x);
      if (!in.needs_grad) return;
      for (std::int64_t i = 0; i < self.grad.numel(); ++i) {
        in.grad[i] += self.grad[i] * kernel::gelu_derivative(in.value[i]);
      }
    });
  }

  Var l2_normalize_rows(Var x) {
    const Tensor<T>& xv = value(x);
    const std::int64_t r = xv.rows(), d = xv.cols();
    Tensor<T> out(r, d);
    Tensor<T> norms({r});
    for (std::int64_t i = 0; i < r; ++i) {
      const T* xr = xv.row_ptr(i);
      T s = 0;
      for (std::int64_t j = 0; j < d; ++j) s += xr[j] * xr[j];
      const T n = std::max(std::sqrt(s), T(1e-12));
      norms[i] = n;
      for (std::int64_t j = 0; j < d; ++j) out.at(i, j) = xr[j] / n;
    }
    return record({x}, std::move(out), [x, norms = std::move(norms), r, d](Tape& t, Node& self) {
      Node& in = t.node(x);
      if (!in.needs_grad) return;
      for (std::int64_t i = 0; i < r; ++i) {
        const T* y = self.value.row_ptr(i);
        const T* g = self.grad.row_ptr(i);
        T dot = 0;
        for (std::int64_t j = 0; j < d; ++j) dot += y[j] * g[j];
        T* dst = in.grad.row_ptr(i);
        for (std::int64_t j = 0; j < d; ++j) dst[j] += (g[j] - y[j] * dot) / norms[i];
      }
    });
  }

  // Mean negative log-likelihood over the batch, from logits via a stable
  // log-softmax. Returns a 1x1 scalar node.
  Var cross_entropy(Var logits, const std::vector<std::int64_t>& labels) {
    const Tensor<T>& lv = value(logits);
    const std::int64_t b = lv.rows(), k = lv.cols();
    if (static_cast<std::int64_t>(labels.size()) != b) {
      throw dimension_error("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(b) + " rows");
    }
    for (std::int64_t y : labels) {
      if (y < 0 || y >= k) {
        throw index_error("cross_entropy: label " + std::to_string(y) + " out of [0, " +
                          std::to_string(k) + ")");
      }
    }
    Tensor<T> probs(b, k);
    T loss = 0;
    for (std::int64_t i = 0; i < b; ++i) {
      const T* xr = lv.row_ptr(i);
      T mx = xr[0];
      for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, xr[j]);
      T z = 0;
      for (std::int64_t j = 0; j < k; ++j) z += std::exp(xr[j] - mx);
      const T lse = mx + std::log(z);
      loss += lse - xr[labels[static_cast<std::size_t>(i)]];
      for (std::int64_t j = 0; j < k; ++j) probs.at(i, j) = std::exp(xr[j] - lse);
    }
    loss /= T(b);
    Tensor<T> out = Tensor<T>::full({1, 1}, loss);
    return record({logits}, std::move(out),
                  [logits, labels, probs = std::move(probs), b, k](Tape& t, Node& self) {
      Node& in = t.node(logits);
      if (!in.needs_grad) return;
      const T g = self.grad[0] / T(b);
      for (std::int64_t i = 0; i < b; ++i) {
        T* dst = in.grad.row_ptr(i);
        const T* p = probs.row_ptr(i);
        for (std::int64_t j = 0; j < k; ++j) {
          dst[j] += g * (p[j] - (j == labels[static_cast<std::size_t>(i)] ? T(1) : T(0)));
        }
      }
    });
  }

  Var sum(Var a) {
    const Tensor<T>& av = value(a);
    T s = 0;
    for (std::int64_t i = 0; i < av.numel(); ++i) s += av[i];
    Tensor<T> out = Tensor<T>::full({1, 1}, s);
    return record({a}, std::move(out), [a](Tape& t, Node& self) {
      Node& in = t.node(a);
      if (!in.needs_grad) return;
      const T g = self.grad[0];
      for (std::int64_t i = 0; i < in.grad.numel(); ++i) in.grad[i] += g;
    });
  }

  Node& node(Var v) {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw contract_error("invalid tape handle");
    }
    return *nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const { return const_cast<Tape*>(this)->node(v); }

 private:
  Var push(Tensor<T> v, bool needs_grad, std::function<void(Tape&, Node&)> bw, Parameter<T>* bound) {
    auto n = std::make_unique<Node>();
    n->value = std::move(v);
    n->needs_grad = needs_grad;
    n->backward = std::move(bw);
    n->bound = bound;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var record(const std::vector<Var>& inputs, Tensor<T> out, std::function<void(Tape&, Node&)> bw) {
    bool needs = false;
    for (Var v : inputs) needs = needs || node(v).needs_grad;
    return push(std::move(out), needs, needs ? std::move(bw) : nullptr, nullptr);
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
  bool backward_done_ = false;
};

}  // namespace pft
