#include "dietcap/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "dietcap/error.hpp"

namespace dietcap {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

namespace {

thread_local bool t_grad_enabled = true;

void check_shape(const Shape& shape) {
  if (shape.empty()) fail(ErrorCode::Dimension, "tensor needs rank >= 1");
  for (auto d : shape) {
    if (d == 0) fail(ErrorCode::Dimension, "zero-sized dimension in " + shape_string(shape));
  }
}

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

// Builds an op result. The backward closure is only kept when recording is on
// and at least one parent participates in differentiation.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> parents,
                      std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs = false;
  if (t_grad_enabled) {
    for (const auto& p : parents) needs = needs || p->requires_grad;
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(node));
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) fail(ErrorCode::Usage, std::string(op) + ": undefined tensor");
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  require_defined(t, op);
  if (t.rank() != 2) fail(ErrorCode::Dimension, std::string(op) + ": expected rank-2 tensor, got " + shape_string(t.shape()));
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require_defined(a, op);
  require_defined(b, op);
  if (a.shape() != b.shape()) {
    fail(ErrorCode::Dimension,
         std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

// c[m x n] += a[m x k] * b[k x n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x k] += a[m x n] * b[k x n]^T
template <typename T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

ConvGeometry conv_output(std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride,
                         std::size_t pad) {
  if (kernel == 0 || stride == 0) fail(ErrorCode::Dimension, "conv: kernel and stride must be positive");
  if (height + 2 * pad < kernel || width + 2 * pad < kernel) {
    fail(ErrorCode::Dimension, "conv: kernel larger than padded input");
  }
  return {(height + 2 * pad - kernel) / stride + 1, (width + 2 * pad - kernel) / stride + 1};
}

// --- Tensor members ----------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  check_shape(shape);
  const auto n = shape_numel(shape);
  return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != values.size()) {
    fail(ErrorCode::Dimension, "tensor: " + std::to_string(values.size()) + " values do not fill shape " +
                                   shape_string(shape));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  if (!node_) fail(ErrorCode::Usage, "shape of undefined tensor");
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) fail(ErrorCode::Dimension, "axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  return s[axis];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  if (!node_) fail(ErrorCode::Usage, "data of undefined tensor");
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_) fail(ErrorCode::Usage, "data of undefined tensor");
  if (node_->backward_fn) fail(ErrorCode::Usage, "mutable_data on a non-leaf tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) fail(ErrorCode::Dimension, "item() on tensor of shape " + shape_string(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::size_t row, std::size_t col) const {
  const auto& s = shape();
  if (s.size() != 2 || row >= s[0] || col >= s[1]) {
    fail(ErrorCode::Index, "at(" + std::to_string(row) + "," + std::to_string(col) + ") on " + shape_string(s));
  }
  return node_->data[row * s[1] + col];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_ && node_->requires_grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_ && node_->grad.size() == node_->data.size() && !node_->data.empty();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!has_grad()) fail(ErrorCode::Usage, "tensor has no gradient");
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (node_) node_->grad.clear();
}

template <typename T>
void Tensor<T>::backward() {
  if (!node_) fail(ErrorCode::Usage, "backward on undefined tensor");
  if (node_->data.size() != 1) fail(ErrorCode::Dimension, "backward needs a scalar, got " + shape_string(node_->shape));
  if (node_->consumed) fail(ErrorCode::Usage, "backward called twice on the same graph");
  if (!node_->requires_grad) fail(ErrorCode::Usage, "backward on a tensor that does not require grad");

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      auto* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (auto* n : order) {
    if (n->backward_fn) n->ensure_grad();
  }
  node_->ensure_grad();
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* n = *it;
    if (!n->backward_fn) {
      n->ensure_grad();
      continue;
    }
    for (auto& p : n->parents) {
      if (p->requires_grad) p->ensure_grad();
    }
    n->backward_fn(*n);
    n->backward_fn = nullptr;
    n->consumed = true;
  }
  std::vector<NodePtr<T>> keep_alive;
  for (auto* n : order) {
    for (auto& p : n->parents) keep_alive.push_back(std::move(p));
    n->parents.clear();
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), std::vector<T>(data().begin(), data().end()), false);
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  std::vector<U> out(numel());
  const auto src = data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(src[i]);
  return Tensor<U>::from(shape(), std::move(out), requires_grad());
}

// --- ops -------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorCode::Dimension,
         "matmul: inner dimensions differ, " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  std::vector<T> out(m * n, T(0));
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node(), bn = b.node();
  return make_result<T>({m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](detail::Node<T>& self) {
    if (an->requires_grad) gemm_nt(self.grad.data(), bn->data.data(), an->grad.data(), m, n, k);
    if (bn->requires_grad) gemm_tn(an->data.data(), self.grad.data(), bn->grad.data(), m, k, n);
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_rank2(a, "transpose");
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  const auto src = a.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = src[i * n + j];
  auto an = a.node();
  return make_result<T>({n, m}, std::move(out), {an}, [an, m, n](detail::Node<T>& self) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[j * m + i];
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an->requires_grad) an->grad[i] += self.grad[i];
      if (bn->requires_grad) bn->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an->requires_grad) an->grad[i] += self.grad[i];
      if (bn->requires_grad) bn->grad[i] -= self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return make_result<T>(a.shape(), std::move(out), {an, bn}, [an, bn](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an->requires_grad) an->grad[i] += self.grad[i] * bn->data[i];
      if (bn->requires_grad) bn->grad[i] += self.grad[i] * an->data[i];
    }
  });
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  require_rank2(a, "add_row");
  require_defined(bias, "add_row");
  const auto m = a.dim(0), n = a.dim(1);
  const bool ok = bias.numel() == n && (bias.rank() == 1 || (bias.rank() == 2 && bias.dim(0) == 1));
  if (!ok) {
    fail(ErrorCode::Dimension,
         "add_row: bias " + shape_string(bias.shape()) + " does not match rows of " + shape_string(a.shape()));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b[j];
  auto an = a.node(), bn = bias.node();
  return make_result<T>({m, n}, std::move(out), {an, bn}, [an, bn, m, n](detail::Node<T>& self) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const T g = self.grad[i * n + j];
        if (an->requires_grad) an->grad[i * n + j] += g;
        if (bn->requires_grad) bn->grad[j] += g;
      }
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  require_defined(a, "scale");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * factor;
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an, factor](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * factor;
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  require_defined(a, "add_scalar");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + value;
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  require_defined(a, "relu");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] > T(0) ? a.data()[i] : T(0);
  auto an = a.node();
  return make_result<T>(a.shape(), std::move(out), {an}, [an](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (an->data[i] > T(0)) an->grad[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  require_defined(a, "tanh");
  std::vector<T> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.data()[i]);
  auto an = a.node();
  return make_result<T>(a.shape(), out, {an}, [an, out](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * (T(1) - out[i] * out[i]);
  });
}

namespace {

struct AxisLayout {
  std::size_t outer, len, inner;
};

AxisLayout axis_layout(const Shape& shape, std::size_t axis) {
  AxisLayout l{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) l.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

template <typename T>
void softmax_backward(const std::vector<T>& y, const std::vector<T>& gy, std::vector<T>& gx, AxisLayout l) {
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T dot = T(0);
      for (std::size_t k = 0; k < l.len; ++k) dot += y[base + k * l.inner] * gy[base + k * l.inner];
      for (std::size_t k = 0; k < l.len; ++k) {
        const auto idx = base + k * l.inner;
        gx[idx] += y[idx] * (gy[idx] - dot);
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  require_defined(x, "softmax");
  if (axis >= x.rank()) fail(ErrorCode::Dimension, "softmax: axis out of range for " + shape_string(x.shape()));
  const auto l = axis_layout(x.shape(), axis);
  const auto src = x.data();
  std::vector<T> out(src.size());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.len * l.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t k = 0; k < l.len; ++k) {
        const T v = src[base + k * l.inner];
        if (std::isnan(v)) fail(ErrorCode::Numeric, "softmax: NaN input");
        mx = std::max(mx, v);
      }
      if (!std::isfinite(mx)) fail(ErrorCode::Numeric, "softmax: non-finite input");
      T total = T(0);
      for (std::size_t k = 0; k < l.len; ++k) {
        const auto idx = base + k * l.inner;
        out[idx] = std::exp(src[idx] - mx);
        total += out[idx];
      }
      for (std::size_t k = 0; k < l.len; ++k) out[base + k * l.inner] /= total;
    }
  }
  auto xn = x.node();
  return make_result<T>(x.shape(), out, {xn}, [xn, out, l](detail::Node<T>& self) {
    softmax_backward(out, self.grad, xn->grad, l);
  });
}

template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> allowed) {
  require_rank2(x, "masked_softmax");
  if (allowed.size() != x.numel()) {
    fail(ErrorCode::Dimension, "masked_softmax: mask of " + std::to_string(allowed.size()) +
                                   " entries for " + shape_string(x.shape()));
  }
  const auto rows = x.dim(0), cols = x.dim(1);
  const auto src = x.data();
  std::vector<T> out(src.size(), T(0));
  for (std::size_t i = 0; i < rows; ++i) {
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      const auto idx = i * cols + j;
      if (std::isnan(src[idx])) fail(ErrorCode::Numeric, "masked_softmax: NaN input");
      if (!allowed[idx]) continue;
      any = true;
      mx = std::max(mx, src[idx]);
    }
    if (!any) fail(ErrorCode::Usage, "masked_softmax: row " + std::to_string(i) + " has every entry masked");
    T total = T(0);
    for (std::size_t j = 0; j < cols; ++j) {
      const auto idx = i * cols + j;
      if (!allowed[idx]) continue;
      out[idx] = std::exp(src[idx] - mx);
      total += out[idx];
    }
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] /= total;
  }
  auto xn = x.node();
  // Masked outputs are exactly zero, so the unmasked softmax Jacobian applies.
  return make_result<T>(x.shape(), out, {xn}, [xn, out, rows, cols](detail::Node<T>& self) {
    softmax_backward(out, self.grad, xn->grad, AxisLayout{rows, cols, 1});
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  require_defined(x, "layer_norm");
  require_defined(gain, "layer_norm");
  require_defined(bias, "layer_norm");
  const auto n = x.shape().back();
  if (n < 2) fail(ErrorCode::Dimension, "layer_norm: last axis must have length >= 2, got " + shape_string(x.shape()));
  if (gain.numel() != n || bias.numel() != n) {
    fail(ErrorCode::Dimension, "layer_norm: gain " + shape_string(gain.shape()) + " / bias " +
                                   shape_string(bias.shape()) + " vs input " + shape_string(x.shape()));
  }
  const auto rows = x.numel() / n;
  const auto src = x.data();
  const auto g = gain.data();
  const auto b = bias.data();
  std::vector<T> xhat(src.size()), out(src.size()), inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = src.data() + r * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu /= T(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(n);
    inv_std[r] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      xhat[r * n + j] = (row[j] - mu) * inv_std[r];
      out[r * n + j] = xhat[r * n + j] * g[j] + b[j];
    }
  }
  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  return make_result<T>(x.shape(), std::move(out), {xn, gn, bn},
                        [xn, gn, bn, xhat, inv_std, rows, n](detail::Node<T>& self) {
                          for (std::size_t r = 0; r < rows; ++r) {
                            const T* gy = self.grad.data() + r * n;
                            const T* xh = xhat.data() + r * n;
                            T sum_d = T(0), sum_dx = T(0);
                            for (std::size_t j = 0; j < n; ++j) {
                              const T d = gy[j] * gn->data[j];
                              sum_d += d;
                              sum_dx += d * xh[j];
                              if (gn->requires_grad) gn->grad[j] += gy[j] * xh[j];
                              if (bn->requires_grad) bn->grad[j] += gy[j];
                            }
                            if (!xn->requires_grad) continue;
                            for (std::size_t j = 0; j < n; ++j) {
                              const T d = gy[j] * gn->data[j];
                              xn->grad[r * n + j] += inv_std[r] / T(n) * (T(n) * d - sum_d - xh[j] * sum_dx);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets) {
  require_rank2(logits, "cross_entropy");
  const auto steps = logits.dim(0), vocab = logits.dim(1);
  if (targets.size() != steps) {
    fail(ErrorCode::Dimension, "cross_entropy: " + std::to_string(targets.size()) + " targets for logits " +
                                   shape_string(logits.shape()));
  }
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      fail(ErrorCode::Index, "cross_entropy: target id " + std::to_string(t) + " outside vocabulary of " +
                                 std::to_string(vocab));
    }
  }
  const auto src = logits.data();
  std::vector<T> probs(src.size());
  T loss = T(0);
  for (std::size_t t = 0; t < steps; ++t) {
    const T* row = src.data() + t * vocab;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < vocab; ++j) {
      if (std::isnan(row[j])) fail(ErrorCode::Numeric, "cross_entropy: NaN logit");
      mx = std::max(mx, row[j]);
    }
    T total = T(0);
    for (std::size_t j = 0; j < vocab; ++j) {
      probs[t * vocab + j] = std::exp(row[j] - mx);
      total += probs[t * vocab + j];
    }
    for (std::size_t j = 0; j < vocab; ++j) probs[t * vocab + j] /= total;
    loss += std::log(total) + mx - row[targets[t]];
  }
  loss /= T(steps);
  auto ln = logits.node();
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result<T>({1}, {loss}, {ln}, [ln, probs, tg, steps, vocab](detail::Node<T>& self) {
    const T g = self.grad[0] / T(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < vocab; ++j) {
        const T onehot = static_cast<int>(j) == tg[t] ? T(1) : T(0);
        ln->grad[t * vocab + j] += g * (probs[t * vocab + j] - onehot);
      }
    }
  });
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  require_rank2(table, "embedding");
  if (ids.empty()) fail(ErrorCode::Dimension, "embedding: empty id list");
  const auto rows = table.dim(0), d = table.dim(1);
  std::vector<T> out(ids.size() * d);
  const auto src = table.data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      fail(ErrorCode::Index, "embedding: id " + std::to_string(ids[i]) + " outside table of " + std::to_string(rows));
    }
    std::copy_n(src.data() + ids[i] * d, d, out.data() + i * d);
  }
  auto tn = table.node();
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result<T>({ids.size(), d}, std::move(out), {tn}, [tn, idv, d](detail::Node<T>& self) {
    for (std::size_t i = 0; i < idv.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) tn->grad[idv[i] * d + j] += self.grad[i * d + j];
  });
}

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts) {
  if (parts.empty()) fail(ErrorCode::Dimension, "concat_rows: nothing to concatenate");
  std::size_t cols = 0, rows = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (cols == 0) cols = p.dim(1);
    if (p.dim(1) != cols) {
      fail(ErrorCode::Dimension, "concat_rows: " + shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * cols);
  std::vector<NodePtr<T>> nodes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  auto parents = nodes;
  return make_result<T>({rows, cols}, std::move(out), std::move(parents), [nodes](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (const auto& p : nodes) {
      if (p->requires_grad) {
        for (std::size_t i = 0; i < p->data.size(); ++i) p->grad[i] += self.grad[offset + i];
      }
      offset += p->data.size();
    }
  });
}

template <typename T>
Tensor<T> concat_cols(std::span<const Tensor<T>> parts) {
  if (parts.empty()) fail(ErrorCode::Dimension, "concat_cols: nothing to concatenate");
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (rows == 0) rows = p.dim(0);
    if (p.dim(0) != rows) {
      fail(ErrorCode::Dimension, "concat_cols: " + shape_string(parts[0].shape()) + " vs " + shape_string(p.shape()));
    }
    cols += p.dim(1);
  }
  std::vector<T> out(rows * cols);
  std::vector<NodePtr<T>> nodes;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto pc = p.dim(1);
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(p.data().data() + i * pc, pc, out.data() + i * cols + offset);
    offset += pc;
    nodes.push_back(p.node());
  }
  auto parents = nodes;
  return make_result<T>({rows, cols}, std::move(out), std::move(parents), [nodes, rows, cols](detail::Node<T>& self) {
    std::size_t off = 0;
    for (const auto& p : nodes) {
      const auto pc = p->shape[1];
      if (p->requires_grad) {
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t j = 0; j < pc; ++j) p->grad[i * pc + j] += self.grad[i * cols + off + j];
      }
      off += pc;
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count) {
  require_rank2(x, "slice_rows");
  if (count == 0 || start + count > x.dim(0)) {
    fail(ErrorCode::Index, "slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                               shape_string(x.shape()));
  }
  const auto cols = x.dim(1);
  std::vector<T> out(x.data().begin() + start * cols, x.data().begin() + (start + count) * cols);
  auto xn = x.node();
  return make_result<T>({count, cols}, std::move(out), {xn}, [xn, start, cols](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[start * cols + i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count) {
  require_rank2(x, "slice_cols");
  if (count == 0 || start + count > x.dim(1)) {
    fail(ErrorCode::Index, "slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                               shape_string(x.shape()));
  }
  const auto rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(rows * count);
  for (std::size_t i = 0; i < rows; ++i)
    std::copy_n(x.data().data() + i * cols + start, count, out.data() + i * count);
  auto xn = x.node();
  return make_result<T>({rows, count}, std::move(out), {xn}, [xn, start, rows, cols, count](detail::Node<T>& self) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < count; ++j) xn->grad[i * cols + start + j] += self.grad[i * count + j];
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  require_defined(x, "reshape");
  check_shape(shape);
  if (shape_numel(shape) != x.numel()) {
    fail(ErrorCode::Dimension, "reshape: " + shape_string(x.shape()) + " to " + shape_string(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  auto xn = x.node();
  return make_result<T>(std::move(shape), std::move(out), {xn}, [xn](detail::Node<T>& self) {
    for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_rank2(x, "mean_rows");
  const auto rows = x.dim(0), cols = x.dim(1);
  std::vector<T> out(cols, T(0));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j] += x.data()[i * cols + j];
  for (auto& v : out) v /= T(rows);
  auto xn = x.node();
  return make_result<T>({1, cols}, std::move(out), {xn}, [xn, rows, cols](detail::Node<T>& self) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) xn->grad[i * cols + j] += self.grad[j] / T(rows);
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  require_defined(x, "sum");
  T total = T(0);
  for (auto v : x.data()) total += v;
  auto xn = x.node();
  return make_result<T>({1}, {total}, {xn}, [xn](detail::Node<T>& self) {
    for (auto& g : xn->grad) g += self.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  require_defined(x, "mean");
  return scale(sum(x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  require_defined(x, "im2col");
  if (x.rank() != 3) fail(ErrorCode::Dimension, "im2col: expected [H x W x C], got " + shape_string(x.shape()));
  const auto h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const auto geo = conv_output(h, w, kernel, stride, pad);
  const auto patch = kernel * kernel * c;
  const auto positions = geo.out_height * geo.out_width;
  // index[p * patch + q] is the source offset, or -1 for padding.
  std::vector<std::ptrdiff_t> index(positions * patch, -1);
  for (std::size_t oy = 0; oy < geo.out_height; ++oy) {
    for (std::size_t ox = 0; ox < geo.out_width; ++ox) {
      const auto p = oy * geo.out_width + ox;
      for (std::size_t ky = 0; ky < kernel; ++ky) {
        for (std::size_t kx = 0; kx < kernel; ++kx) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(h) || ix >= static_cast<std::ptrdiff_t>(w)) continue;
          for (std::size_t ch = 0; ch < c; ++ch) {
            index[p * patch + (ky * kernel + kx) * c + ch] = (iy * static_cast<std::ptrdiff_t>(w) + ix) * c + ch;
          }
        }
      }
    }
  }
  std::vector<T> out(index.size(), T(0));
  const auto src = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= 0) out[i] = src[index[i]];
  }
  auto xn = x.node();
  return make_result<T>({positions, patch}, std::move(out), {xn}, [xn, index](detail::Node<T>& self) {
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] >= 0) xn->grad[index[i]] += self.grad[i];
    }
  });
}

#define DIETCAP_INSTANTIATE(T)                                                                         \
  template class Tensor<T>;                                                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> transpose(const Tensor<T>&);                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&);                                      \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                           \
  template Tensor<T> tanh(const Tensor<T>&);                                                           \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> masked_softmax(const Tensor<T>&, std::span<const std::uint8_t>);                  \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);                            \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                                \
  template Tensor<T> concat_rows(std::span<const Tensor<T>>);                                          \
  template Tensor<T> concat_cols(std::span<const Tensor<T>>);                                          \
  template Tensor<T> slice_rows(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> slice_cols(const Tensor<T>&, std::size_t, std::size_t);                           \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                 \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                            \
  template Tensor<T> mean(const Tensor<T>&);                                                           \
  template Tensor<T> im2col(const Tensor<T>&, std::size_t, std::size_t, std::size_t);

DIETCAP_INSTANTIATE(float)
DIETCAP_INSTANTIATE(double)

#undef DIETCAP_INSTANTIATE

template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;

}  // namespace dietcap
