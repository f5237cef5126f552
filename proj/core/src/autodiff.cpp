#include "lcp/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>

#include "lcp/error.hpp"

namespace lcp::ad {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

namespace {

thread_local bool t_grad_enabled = true;
thread_local MultTally* t_tally = nullptr;
thread_local MultCategory t_category = MultCategory::other;

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  bool swept = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

using detail::Node;

// Creates op results and wires them into the graph when gradients are live.
class OpBuilder {
 public:
  static Tensor make(Shape shape, std::vector<double> value,
                     std::vector<std::shared_ptr<Node>> parents,
                     std::function<void(Node&)> fn) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    const bool track =
        t_grad_enabled &&
        std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->requires_grad; });
    if (track) {
      node->requires_grad = true;
      node->is_leaf = false;
      node->parents = std::move(parents);
      node->backward_fn = std::move(fn);
    }
    return Tensor(std::move(node));
  }

  static const std::shared_ptr<Node>& node(const Tensor& t) {
    if (!t.node_) throw DataError("use of an undefined tensor");
    return t.node_;
  }
};

namespace {

const std::shared_ptr<Node>& N(const Tensor& t) { return OpBuilder::node(t); }

// Parent i needs gradient if it is tracked.
std::vector<double>* grad_of(Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return &p.ensure_grad();
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a matrix, got " + shape_str(t.shape()));
  }
}

}  // namespace

// --- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value.assign(numel(shape), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (values.size() != numel(shape)) {
    throw ShapeError(std::to_string(values.size()) + " values for shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

const Shape& Tensor::shape() const { return N(*this)->shape; }
std::size_t Tensor::size() const { return N(*this)->value.size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.size() == 2 ? s[0] : 1;
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return s.back();
}

std::span<const double> Tensor::data() const { return N(*this)->value; }
std::span<double> Tensor::mutable_data() { return N(*this)->value; }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return data()[0];
}

bool Tensor::requires_grad() const { return N(*this)->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  auto& n = *N(*this);
  if (!n.is_leaf) throw DataError("requires_grad can only be toggled on leaves");
  n.requires_grad = on;
}

bool Tensor::has_grad() const {
  const auto& n = *N(*this);
  return n.grad.size() == n.value.size();
}

std::span<const double> Tensor::grad() const {
  const auto& n = *N(*this);
  if (n.grad.size() != n.value.size()) throw DataError("tensor has no gradient");
  return n.grad;
}

std::span<double> Tensor::mutable_grad() { return N(*this)->ensure_grad(); }

void Tensor::zero_grad() {
  auto& n = *N(*this);
  if (!n.grad.empty()) std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

Tensor Tensor::clone(bool requires_grad) const {
  return from(shape(), std::vector<double>(data().begin(), data().end()), requires_grad);
}

// --- modes -------------------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

std::uint64_t MultTally::total() const {
  std::uint64_t s = 0;
  for (auto v : by_category) s += v;
  return s;
}

MultCounter::MultCounter() : previous_(t_tally) { t_tally = &tally_; }
MultCounter::~MultCounter() { t_tally = previous_; }

MultScope::MultScope(MultCategory c) : previous_(t_category) { t_category = c; }
MultScope::~MultScope() { t_category = previous_; }

// --- ops ---------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  if (t_tally) t_tally->by_category[static_cast<int>(t_category)] += m * k * n;

  std::vector<double> out(m * n);
  MapMat(out.data(), m, n).noalias() =
      MapConstMat(a.data().data(), m, k) * MapConstMat(b.data().data(), k, n);

  return OpBuilder::make({m, n}, std::move(out), {N(a), N(b)}, [m, k, n](Node& self) {
    MapConstMat dout(self.grad.data(), m, n);
    const auto& pa = *self.parents[0];
    const auto& pb = *self.parents[1];
    if (auto* ga = grad_of(self, 0)) {
      MapMat(ga->data(), m, k).noalias() += dout * MapConstMat(pb.value.data(), k, n).transpose();
    }
    if (auto* gb = grad_of(self, 1)) {
      MapMat(gb->data(), k, n).noalias() += MapConstMat(pa.value.data(), m, k).transpose() * dout;
    }
  });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::size_t r = x.rows();
  const std::size_t c = x.cols();
  std::vector<double> out(r * c);
  MapMat(out.data(), c, r) = MapConstMat(x.data().data(), r, c).transpose();
  return OpBuilder::make({c, r}, std::move(out), {N(x)}, [r, c](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      MapMat(g->data(), r, c) += MapConstMat(self.grad.data(), c, r).transpose();
    }
  });
}

namespace {

enum class Broadcast { none, row };

Broadcast check_binary(const Tensor& x, const Tensor& y, const char* op, bool allow_row) {
  if (x.shape() == y.shape()) return Broadcast::none;
  if (allow_row && x.rank() == 2 && y.rank() == 1 && y.shape()[0] == x.cols()) {
    return Broadcast::row;
  }
  throw ShapeError(std::string(op) + " " + shape_str(x.shape()) + " with " +
                   shape_str(y.shape()));
}

Tensor add_signed(const Tensor& x, const Tensor& y, double sign, const char* op) {
  const Broadcast bc = check_binary(x, y, op, true);
  const auto xv = x.data();
  const auto yv = y.data();
  std::vector<double> out(xv.size());
  const std::size_t c = x.cols();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = xv[i] + sign * yv[bc == Broadcast::row ? i % c : i];
  }
  return OpBuilder::make(x.shape(), std::move(out), {N(x), N(y)}, [bc, c, sign](Node& self) {
    const auto& g = self.grad;
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    }
    if (auto* gy = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        (*gy)[bc == Broadcast::row ? i % c : i] += sign * g[i];
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& x, const Tensor& y) { return add_signed(x, y, 1.0, "add"); }
Tensor sub(const Tensor& x, const Tensor& y) { return add_signed(x, y, -1.0, "sub"); }

Tensor mul(const Tensor& x, const Tensor& y) {
  check_binary(x, y, "mul", false);
  const auto xv = x.data();
  const auto yv = y.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * yv[i];
  return OpBuilder::make(x.shape(), std::move(out), {N(x), N(y)}, [](Node& self) {
    const auto& g = self.grad;
    const auto& xv = self.parents[0]->value;
    const auto& yv = self.parents[1]->value;
    if (auto* gx = grad_of(self, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * yv[i];
    }
    if (auto* gy = grad_of(self, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gy)[i] += g[i] * xv[i];
    }
  });
}

Tensor scale(const Tensor& x, double c) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * xv[i];
  return OpBuilder::make(x.shape(), std::move(out), {N(x)}, [c](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) (*g)[i] += c * self.grad[i];
    }
  });
}

Tensor relu(const Tensor& x) {
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return OpBuilder::make(x.shape(), std::move(out), {N(x)}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      const auto& xv = self.parents[0]->value;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        if (xv[i] > 0.0) (*g)[i] += self.grad[i];
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm");
  const std::size_t rows = x.rows();
  const std::size_t d = x.cols();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
    throw ShapeError("layer_norm gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " for width " + std::to_string(d));
  }
  if (!(eps > 0.0)) throw UsageError("layer_norm eps must be > 0");

  const auto xv = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(xv.size());
  std::vector<double> xhat(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += row[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (row[c] - mean) * is;
      xhat[r * d + c] = h;
      out[r * d + c] = gv[c] * h + bv[c];
    }
  }

  return OpBuilder::make(
      x.shape(), std::move(out), {N(x), N(gain), N(bias)},
      [rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        const auto& g = self.grad;
        const auto& gv = self.parents[1]->value;
        if (auto* gx = grad_of(self, 0)) {
          std::vector<double> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            double mean_dh = 0.0;
            double mean_dh_h = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              dh[c] = g[r * d + c] * gv[c];
              mean_dh += dh[c];
              mean_dh_h += dh[c] * xhat[r * d + c];
            }
            mean_dh /= static_cast<double>(d);
            mean_dh_h /= static_cast<double>(d);
            for (std::size_t c = 0; c < d; ++c) {
              (*gx)[r * d + c] += inv_std[r] * (dh[c] - mean_dh - xhat[r * d + c] * mean_dh_h);
            }
          }
        }
        if (auto* gg = grad_of(self, 1)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gg)[i % d] += g[i] * xhat[i];
        }
        if (auto* gb = grad_of(self, 2)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i % d] += g[i];
        }
      });
}

Tensor softmax_rows(const Tensor& x) {
  require_rank2(x, "softmax_rows");
  const std::size_t rows = x.rows();
  const std::size_t c = x.cols();
  const auto xv = x.data();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double* o = out.data() + r * c;
    const double mx = *std::max_element(in, in + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(in[j] - mx);
      s += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= s;
  }
  return OpBuilder::make(x.shape(), std::move(out), {N(x)}, [rows, c](Node& self) {
    auto* gx = grad_of(self, 0);
    if (!gx) return;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) (*gx)[r * c + j] += y[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

Tensor sum(const Tensor& x) {
  const auto xv = x.data();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return OpBuilder::make({}, {s}, {N(x)}, [](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (auto& v : *g) v += self.grad[0];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank2(x, "slice_cols");
  const std::size_t rows = x.rows();
  const std::size_t c = x.cols();
  if (begin >= end || end > c) {
    throw ShapeError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") of " + shape_str(x.shape()));
  }
  const std::size_t w = end - begin;
  std::vector<double> out(rows * w);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(xv.data() + r * c + begin, w, out.data() + r * w);
  }
  return OpBuilder::make({rows, w}, std::move(out), {N(x)}, [rows, c, w, begin](Node& self) {
    if (auto* g = grad_of(self, 0)) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < w; ++j) (*g)[r * c + begin + j] += self.grad[r * w + j];
      }
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols");
    if (p.rows() != rows) throw ShapeError("concat_cols row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
    parents.push_back(N(p));
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto pv = p.data();
    const std::size_t w = p.cols();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * w, w, out.data() + r * total + offset);
    }
    offset += w;
  }
  return OpBuilder::make({rows, total}, std::move(out), std::move(parents),
                         [rows, total, widths = std::move(widths)](Node& self) {
                           std::size_t off = 0;
                           for (std::size_t i = 0; i < widths.size(); ++i) {
                             const std::size_t w = widths[i];
                             if (auto* g = grad_of(self, i)) {
                               for (std::size_t r = 0; r < rows; ++r) {
                                 for (std::size_t j = 0; j < w; ++j) {
                                   (*g)[r * w + j] += self.grad[r * total + off + j];
                                 }
                               }
                             }
                             off += w;
                           }
                         });
}

// --- reverse sweep -------------------------------------------------------------

void backward(const Tensor& loss) {
  const auto& root = N(loss);
  if (root->value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + shape_str(root->shape));
  }
  if (!root->requires_grad) throw DataError("backward on a detached graph");
  if (root->is_leaf) {
    root->ensure_grad()[0] += 1.0;
    return;
  }
  if (root->swept) throw DataError("backward already ran on this graph");

  // Iterative post-order DFS over interior nodes.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->is_leaf || !p->requires_grad || seen.count(p)) continue;
      if (p->swept) throw DataError("backward through an already-consumed graph");
      seen.insert(p);
      stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.assign(n->value.size(), 0.0);
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    n->backward_fn(*n);
  }
  // Release the graph; leaves keep their accumulated gradients.
  for (Node* n : order) {
    n->swept = true;
    n->backward_fn = nullptr;
    n->parents.clear();
    if (n != root.get()) std::vector<double>().swap(n->grad);
  }
}

}  // namespace lcp::ad
