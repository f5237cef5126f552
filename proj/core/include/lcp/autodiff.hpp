#pragma once

// Dense real tensors with tape-free reverse-mode differentiation. Each op
// result keeps shared handles to its inputs and a closure that pushes the
// upstream gradient into them; backward() topologically sorts the graph
// reachable from a scalar loss and runs the closures once each.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lcp::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // Matrix view of rank <= 2 tensors; a vector [n] is a 1 x n row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t r, std::size_t c) const { return data()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Deep copy of values into a fresh leaf.
  Tensor clone(bool requires_grad) const;
  Tensor detach() const { return clone(false); }

  // Identity of the underlying buffer.
  const void* id() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend struct detail::Node;
  friend class OpBuilder;
  friend void backward(const Tensor& loss);
};

// While alive, ops on this thread record no graph.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// Scalar multiplications performed inside matmul, bucketed by a caller-set
// category. Used to audit the closed-form complexity counts.
enum class MultCategory : int { embed = 0, mixer = 1, ffn = 2, head = 3, other = 4 };

struct MultTally {
  std::uint64_t by_category[5] = {0, 0, 0, 0, 0};
  std::uint64_t total() const;
  std::uint64_t get(MultCategory c) const { return by_category[static_cast<int>(c)]; }
};

// Installs a tally on this thread for its lifetime.
class MultCounter {
 public:
  MultCounter();
  ~MultCounter();
  MultCounter(const MultCounter&) = delete;
  MultCounter& operator=(const MultCounter&) = delete;
  const MultTally& tally() const { return tally_; }

 private:
  MultTally tally_;
  MultTally* previous_;
};

class MultScope {
 public:
  explicit MultScope(MultCategory c);
  ~MultScope();
  MultScope(const MultScope&) = delete;
  MultScope& operator=(const MultScope&) = delete;

 private:
  MultCategory previous_;
};

// --- primitive ops -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
// Same shapes, or [N x d] + [d] (bias row broadcast).
Tensor add(const Tensor& x, const Tensor& y);
Tensor sub(const Tensor& x, const Tensor& y);
Tensor mul(const Tensor& x, const Tensor& y);  // elementwise, same shapes
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Reverse sweep from a scalar loss. Gradients accumulate into every leaf
/// that requires them. A loss can be swept only once.
void backward(const Tensor& loss);

}  // namespace lcp::ad
