#include "w2t/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <string>
#include <unordered_set>

#include "w2t/error.hpp"

namespace w2t::ad {

namespace {

thread_local bool g_grad_enabled = true;

template <typename T>
void check_finite(const std::vector<T>& v, const char* op) {
  for (const T x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFiniteValue, std::string("output of ") + op);
  }
}

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  return std::to_string(t.rows()) + "x" + std::to_string(t.cols());
}

template <typename T>
[[noreturn]] void shape_error(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  throw Error(ErrorCode::kShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

// Allocates the output node and wires parents when any of them is tracked.
template <typename T>
std::shared_ptr<Node<T>> make_node(std::size_t rows, std::size_t cols, const char* op,
                                   std::initializer_list<const Tensor<T>*> parents) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->op = op;
  n->value.assign(rows * cols, T(0));
  if (g_grad_enabled) {
    for (const auto* p : parents) n->requires_grad = n->requires_grad || p->requires_grad();
  }
  if (n->requires_grad) {
    n->is_leaf = false;
    for (const auto* p : parents) n->parents.push_back(p->node());
  }
  return n;
}

template <typename T>
std::shared_ptr<Node<T>> make_node_from(std::size_t rows, std::size_t cols, const char* op,
                                        const std::vector<Tensor<T>>& parents) {
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->op = op;
  n->value.assign(rows * cols, T(0));
  if (g_grad_enabled) {
    for (const auto& p : parents) n->requires_grad = n->requires_grad || p.requires_grad();
  }
  if (n->requires_grad) {
    n->is_leaf = false;
    for (const auto& p : parents) n->parents.push_back(p.node());
  }
  return n;
}

template <typename T>
Tensor<T> finish(std::shared_ptr<Node<T>> n) {
  check_finite(n->value, n->op);
  return Tensor<T>(std::move(n));
}

// Gradient buffer of parent i if it participates in differentiation.
template <typename T>
T* parent_grad(Node<T>& n, std::size_t i) {
  Node<T>& p = *n.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

template <typename T>
Tensor<T> Tensor<T>::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return from(rows, cols, std::vector<T>(rows * cols, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(std::size_t rows, std::size_t cols, std::vector<T> data, bool requires_grad) {
  if (data.size() != rows * cols)
    throw Error(ErrorCode::kShapeMismatch, "data length " + std::to_string(data.size()) +
                                               " != " + std::to_string(rows) + "x" + std::to_string(cols));
  auto n = std::make_shared<Node<T>>();
  n->rows = rows;
  n->cols = cols;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  check_finite(n->value, "leaf");
  return Tensor(std::move(n));
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) throw Error(ErrorCode::kNotScalar, "item() on " + shape_str(*this));
  return node_->value[0];
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  auto n = make_node<T>(m, p, "matmul", {&a, &b});
  const T* A = a.data().data();
  const T* B = b.data().data();
  T* C = n->value.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T aik = A[i * k + kk];
      const T* brow = B + kk * p;
      T* crow = C + i * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [m, k, p](Node<T>& self) {
      const T* dC = self.grad.data();
      const T* A = self.parents[0]->value.data();
      const T* B = self.parents[1]->value.data();
      if (T* dA = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T* brow = B + kk * p;
            const T* dcrow = dC + i * p;
            T acc = 0;
            for (std::size_t j = 0; j < p; ++j) acc += dcrow[j] * brow[j];
            dA[i * k + kk] += acc;
          }
        }
      }
      if (T* dB = parent_grad(self, 1)) {
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = A[i * k + kk];
            const T* dcrow = dC + i * p;
            T* dbrow = dB + kk * p;
            for (std::size_t j = 0; j < p; ++j) dbrow[j] += aik * dcrow[j];
          }
        }
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  const std::size_t r = x.rows(), c = x.cols();
  auto n = make_node<T>(c, r, "transpose", {&x});
  const T* X = x.data().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) n->value[j * r + i] = X[i * c + j];
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node<T>& self) {
      if (T* dx = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += self.grad[j * r + i];
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a, b);
  auto n = make_node<T>(a.rows(), a.cols(), "add", {&a, &b});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.data()[i] + b.data()[i];
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      for (std::size_t p = 0; p < 2; ++p) {
        if (T* d = parent_grad(self, p))
          for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row) {
  if (row.rows() != 1 || row.cols() != x.cols()) shape_error("add_row", x, row);
  const std::size_t r = x.rows(), c = x.cols();
  auto n = make_node<T>(r, c, "add_row", {&x, &row});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) n->value[i * c + j] = x.data()[i * c + j] + row.data()[j];
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node<T>& self) {
      if (T* dx = parent_grad(self, 0))
        for (std::size_t i = 0; i < r * c; ++i) dx[i] += self.grad[i];
      if (T* db = parent_grad(self, 1))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) db[j] += self.grad[i * c + j];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a, b);
  auto n = make_node<T>(a.rows(), a.cols(), "mul", {&a, &b});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.data()[i] * b.data()[i];
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      const auto& av = self.parents[0]->value;
      const auto& bv = self.parents[1]->value;
      if (T* da = parent_grad(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) da[i] += self.grad[i] * bv[i];
      if (T* db = parent_grad(self, 1))
        for (std::size_t i = 0; i < self.grad.size(); ++i) db[i] += self.grad[i] * av[i];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  auto n = make_node<T>(x.rows(), x.cols(), "scale", {&x});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = x.data()[i] * s;
  if (n->requires_grad) {
    n->backward_fn = [s](Node<T>& self) {
      if (T* dx = parent_grad(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) dx[i] += self.grad[i] * s;
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto n = make_node<T>(x.rows(), x.cols(), "relu", {&x});
  for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::max(T(0), x.data()[i]);
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      const auto& xv = self.parents[0]->value;
      if (T* dx = parent_grad(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          if (xv[i] > T(0)) dx[i] += self.grad[i];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  auto n = make_node<T>(1, 1, "sum", {&x});
  T acc = 0;
  for (const T v : x.data()) acc += v;
  n->value[0] = acc;
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      if (T* dx = parent_grad(self, 0)) {
        const std::size_t len = self.parents[0]->value.size();
        for (std::size_t i = 0; i < len; ++i) dx[i] += self.grad[0];
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x, bool causal) {
  const std::size_t r = x.rows(), c = x.cols();
  if (causal && r != c)
    throw Error(ErrorCode::kShapeMismatch, "causal softmax needs a square input, got " + shape_str(x));
  auto n = make_node<T>(r, c, "softmax_rows", {&x});
  const T* X = x.data().data();
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t width = causal ? i + 1 : c;
    const T* xr = X + i * c;
    T* yr = n->value.data() + i * c;
    const T mx = *std::max_element(xr, xr + width);
    T total = 0;
    for (std::size_t j = 0; j < width; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    for (std::size_t j = 0; j < width; ++j) yr[j] /= total;
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node<T>& self) {
      T* dx = parent_grad(self, 0);
      if (!dx) return;
      for (std::size_t i = 0; i < r; ++i) {
        const T* s = self.value.data() + i * c;
        const T* dy = self.grad.data() + i * c;
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += dy[j] * s[j];
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += s[j] * (dy[j] - dot);
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  const std::size_t r = x.rows(), c = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != c) shape_error("layer_norm", x, gamma);
  if (beta.rows() != 1 || beta.cols() != c) shape_error("layer_norm", x, beta);
  auto n = make_node<T>(r, c, "layer_norm", {&x, &gamma, &beta});
  // Normalized rows and inverse std are saved for backward.
  std::vector<T> xhat(r * c);
  std::vector<T> inv_std(r);
  const T* X = x.data().data();
  const T* g = gamma.data().data();
  const T* b = beta.data().data();
  for (std::size_t i = 0; i < r; ++i) {
    const T* xr = X + i * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(c);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xr[j] - mean) * inv_std[i];
      n->value[i * c + j] = g[j] * xhat[i * c + j] + b[j];
    }
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node<T>& self) {
      const T* g = self.parents[1]->value.data();
      const T* dy = self.grad.data();
      if (T* dg = parent_grad(self, 1))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) dg[j] += dy[i * c + j] * xhat[i * c + j];
      if (T* db = parent_grad(self, 2))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) db[j] += dy[i * c + j];
      if (T* dx = parent_grad(self, 0)) {
        for (std::size_t i = 0; i < r; ++i) {
          T mean_d = 0, mean_dx = 0;
          for (std::size_t j = 0; j < c; ++j) {
            const T dh = dy[i * c + j] * g[j];
            mean_d += dh;
            mean_dx += dh * xhat[i * c + j];
          }
          mean_d /= static_cast<T>(c);
          mean_dx /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j) {
            const T dh = dy[i * c + j] * g[j];
            dx[i * c + j] += inv_std[i] * (dh - mean_d - xhat[i * c + j] * mean_dx);
          }
        }
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const TokenId> ids) {
  const std::size_t v = table.rows(), k = table.cols();
  for (const TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= v)
      throw Error(ErrorCode::kIndexOutOfRange, "embedding id " + std::to_string(id) + " not in [0," +
                                                   std::to_string(v) + ")");
  }
  auto n = make_node<T>(ids.size(), k, "embedding_lookup", {&table});
  for (std::size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[i]) * k, k, n->value.data() + i * k);
  if (n->requires_grad) {
    n->backward_fn = [k, rows = std::vector<TokenId>(ids.begin(), ids.end())](Node<T>& self) {
      if (T* dt = parent_grad(self, 0))
        for (std::size_t i = 0; i < rows.size(); ++i)
          for (std::size_t j = 0; j < k; ++j) dt[static_cast<std::size_t>(rows[i]) * k + j] += self.grad[i * k + j];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat_rows of nothing");
  const std::size_t c = parts[0].cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) shape_error("concat_rows", parts[0], p);
    r += p.rows();
  }
  auto n = make_node_from<T>(r, c, "concat_rows", parts);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), n->value.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  if (n->requires_grad) {
    n->backward_fn = [](Node<T>& self) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        const std::size_t len = self.parents[i]->value.size();
        if (T* d = parent_grad(self, i))
          for (std::size_t j = 0; j < len; ++j) d[j] += self.grad[off + j];
        off += len;
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error(ErrorCode::kShapeMismatch, "concat_cols of nothing");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) shape_error("concat_cols", parts[0], p);
    c += p.cols();
  }
  auto n = make_node_from<T>(r, c, "concat_cols", parts);
  std::size_t col0 = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.data().data() + i * pc, pc, n->value.data() + i * c + col0);
    col0 += pc;
  }
  if (n->requires_grad) {
    n->backward_fn = [r, c](Node<T>& self) {
      std::size_t col0 = 0;
      for (std::size_t p = 0; p < self.parents.size(); ++p) {
        const std::size_t pc = self.parents[p]->cols;
        if (T* d = parent_grad(self, p))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pc; ++j) d[i * pc + j] += self.grad[i * c + col0 + j];
        col0 += pc;
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.cols())
    throw Error(ErrorCode::kIndexOutOfRange, "slice_cols [" + std::to_string(begin) + "," +
                                                 std::to_string(end) + ") of " + shape_str(x));
  const std::size_t r = x.rows(), c = x.cols(), w = end - begin;
  auto n = make_node<T>(r, w, "slice_cols", {&x});
  for (std::size_t i = 0; i < r; ++i) std::copy_n(x.data().data() + i * c + begin, w, n->value.data() + i * w);
  if (n->requires_grad) {
    n->backward_fn = [r, c, w, begin](Node<T>& self) {
      if (T* dx = parent_grad(self, 0))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < w; ++j) dx[i * c + begin + j] += self.grad[i * w + j];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  if (begin > end || end > x.rows())
    throw Error(ErrorCode::kIndexOutOfRange, "slice_rows [" + std::to_string(begin) + "," +
                                                 std::to_string(end) + ") of " + shape_str(x));
  const std::size_t c = x.cols();
  auto n = make_node<T>(end - begin, c, "slice_rows", {&x});
  std::copy_n(x.data().data() + begin * c, (end - begin) * c, n->value.data());
  if (n->requires_grad) {
    n->backward_fn = [c, begin](Node<T>& self) {
      if (T* dx = parent_grad(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) dx[begin * c + i] += self.grad[i];
    };
  }
  return finish(std::move(n));
}

template <typename T>
Tensor<T> nll_loss(const Tensor<T>& logits, std::span<const TokenId> targets, TokenId ignore_id) {
  const std::size_t r = logits.rows(), v = logits.cols();
  if (targets.size() != r)
    throw Error(ErrorCode::kShapeMismatch, "nll_loss: " + std::to_string(targets.size()) +
                                               " targets for " + std::to_string(r) + " rows");
  std::size_t counted = 0;
  for (const TokenId t : targets) {
    if (t == ignore_id) continue;
    if (t < 0 || static_cast<std::size_t>(t) >= v)
      throw Error(ErrorCode::kIndexOutOfRange, "target " + std::to_string(t) + " not in [0," +
                                                   std::to_string(v) + ")");
    ++counted;
  }
  auto n = make_node<T>(1, 1, "nll_loss", {&logits});
  // Softmax probabilities of counted rows, saved for backward.
  std::vector<T> probs(r * v, T(0));
  T total = 0;
  const T* Z = logits.data().data();
  for (std::size_t i = 0; i < r; ++i) {
    if (targets[i] == ignore_id) continue;
    const T* z = Z + i * v;
    const T mx = *std::max_element(z, z + v);
    T se = 0;
    for (std::size_t j = 0; j < v; ++j) se += std::exp(z[j] - mx);
    const T lse = mx + std::log(se);
    total += lse - z[static_cast<std::size_t>(targets[i])];
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] = std::exp(z[j] - lse);
  }
  n->value[0] = counted ? total / static_cast<T>(counted) : T(0);
  if (n->requires_grad) {
    n->backward_fn = [r, v, counted, probs = std::move(probs),
                      tgt = std::vector<TokenId>(targets.begin(), targets.end()),
                      ignore_id](Node<T>& self) {
      T* dz = parent_grad(self, 0);
      if (!dz || counted == 0) return;
      const T g = self.grad[0] / static_cast<T>(counted);
      for (std::size_t i = 0; i < r; ++i) {
        if (tgt[i] == ignore_id) continue;
        for (std::size_t j = 0; j < v; ++j) dz[i * v + j] += g * probs[i * v + j];
        dz[i * v + static_cast<std::size_t>(tgt[i])] -= g;
      }
    };
  }
  return finish(std::move(n));
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw Error(ErrorCode::kNotScalar, "backward on " + shape_str(loss));
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are per-pass; leaf gradients accumulate across calls.
  for (Node<T>* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), T(0));
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
#ifndef NDEBUG
    for (const T g : n->grad) assert(std::isfinite(g));
#endif
  }
}

#define W2T_INSTANTIATE(T)                                                                          \
  template class Tensor<T>;                                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> transpose(const Tensor<T>&);                                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                   \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                                    \
  template Tensor<T> relu(const Tensor<T>&);                                                        \
  template Tensor<T> sum(const Tensor<T>&);                                                         \
  template Tensor<T> softmax_rows(const Tensor<T>&, bool);                                          \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);           \
  template Tensor<T> embedding_lookup(const Tensor<T>&, std::span<const TokenId>);                  \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&);                                    \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                        \
  template Tensor<T> nll_loss(const Tensor<T>&, std::span<const TokenId>, TokenId);                 \
  template void backward(const Tensor<T>&);

W2T_INSTANTIATE(float)
W2T_INSTANTIATE(double)

#undef W2T_INSTANTIATE

}  // namespace w2t::ad
