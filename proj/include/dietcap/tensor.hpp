#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dietcap {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until backward reaches the node
  bool requires_grad = false;
  bool consumed = false;  // set on interior nodes once backward has run through them
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into its parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

// Gradient recording is per thread. While a NoGradGuard is alive on a thread,
// ops build plain values with no tape, which is what decoding uses.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor with a reverse-mode tape. A Tensor is a handle:
// copies share the node. Values are fixed once an op has produced them; only
// grad buffers (and leaf data, through mutable_data) change afterwards.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return data().size(); }

  std::span<const T> data() const;
  // Leaf tensors only (parameters); interior values are immutable.
  std::span<T> mutable_data();
  T item() const;
  T at(std::size_t row, std::size_t col) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();

  // Reverse pass from a scalar. Rejects a second call on the same graph.
  void backward();

  // Same values, no history.
  Tensor detach() const;

  template <typename U>
  Tensor<U> cast() const;

  // Internal: used by op implementations.
  explicit Tensor(std::shared_ptr<detail::Node<T>> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node<T>> node_;
};

// --- ops -------------------------------------------------------------------
// Shapes are checked eagerly; violations raise ErrorCode::Dimension with both
// shapes in the message. Broadcasting exists only for bias rows and scalars.

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
// a[m x n] + bias[n] (or [1 x n]) on every row.
template <typename T> Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);

// Softmax along `axis` with max subtraction. NaN input raises ErrorCode::Numeric.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
// Row softmax over a 2-D tensor where allowed[i*cols+j]==0 removes entry (i,j).
// Removed entries get probability exactly 0. A row with nothing allowed is an
// error; callers decide what an all-masked row means before calling.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& x, std::span<const std::uint8_t> allowed);

// Normalizes over the last axis, then applies gain and bias (both [last]).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// Mean over rows of -log softmax(logits)[t, target_t]. logits is [T x V].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets);

// Rows of `table` ([V x d]) selected by ids, giving [ids.size() x d].
template <typename T> Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

template <typename T> Tensor<T> concat_rows(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> concat_cols(std::span<const Tensor<T>> parts);
template <typename T> Tensor<T> slice_rows(const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// [m x n] -> [1 x n]
template <typename T> Tensor<T> mean_rows(const Tensor<T>& x);
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

// Patch extraction for convolution over an [H x W x C] tensor with a square
// kernel, zero padding and stride. Output is [Ho*Wo x k*k*C]; a following
// matmul with a [k*k*C x Cout] weight yields an [Ho*Wo x Cout] feature map,
// i.e. [Ho x Wo x Cout] in row-major order.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kernel, std::size_t stride, std::size_t pad);

struct ConvGeometry {
  std::size_t out_height;
  std::size_t out_width;
};
ConvGeometry conv_output(std::size_t height, std::size_t width, std::size_t kernel, std::size_t stride,
                         std::size_t pad);

}  // namespace dietcap
