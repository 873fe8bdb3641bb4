#pragma once

// Dense N x C x H x W tensors with a dynamic reverse-mode tape.
//
// Every differentiable op records a node holding its parents and a closure
// that maps the output gradient onto the parents' gradient slots. A call to
// backward() on a scalar replays the recorded nodes in reverse topological
// order. Each graph can be replayed once; a second backward() through the
// same nodes is rejected.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace ahmf {

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool valid() const { return n > 0 && c > 0 && h > 0 && w > 0; }

  std::string str() const {
    std::ostringstream os;
    os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
    return os.str();
  }

  friend bool operator==(const Shape&, const Shape&) = default;
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thread-local switch; while false no op records a tape node.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Records the branch taken by piecewise ops (PReLU, |.|) while installed.
// Gradient checks compare logs to find finite differences that straddle a
// kink.
struct KinkLog {
  std::uint64_t hash = 1469598103934665603ULL;
  void mix(bool branch) {
    hash = (hash ^ static_cast<std::uint64_t>(branch)) * 1099511628211ULL;
  }
};

inline KinkLog*& kink_log() {
  thread_local KinkLog* log = nullptr;
  return log;
}

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  bool leaf = true;
  bool consumed = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(std::span<const T>)> backward;

  // Lazily allocated gradient slot; nullptr when no gradient flows here.
  T* grad_sink() {
    if (!requires_grad) return nullptr;
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    if (!shape.valid()) {
      throw ShapeError("tensor: invalid shape " + shape.str());
    }
    if (values.size() != shape.numel()) {
      throw ShapeError("tensor: shape " + shape.str() + " needs " +
                       std::to_string(shape.numel()) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->shape = shape;
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(shape, T(0), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    return Tensor(shape, std::vector<T>(shape.numel(), value), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node().shape; }
  std::size_t numel() const { return node().data.size(); }

  std::span<const T> data() const { return node().data; }
  // Writable view for leaves (parameters, inputs); ops never alias this.
  std::span<T> mutable_data() {
    if (!node().leaf) {
      throw std::logic_error("tensor: cannot mutate the output of an op");
    }
    return node_->data;
  }

  T at(int n, int c, int h, int w) const {
    const Shape& s = shape();
    return node().data[((static_cast<std::size_t>(n) * s.c + c) * s.h + h) *
                           s.w +
                       w];
  }
  T item() const {
    if (numel() != 1) {
      throw ShapeError("tensor: item() on shape " + shape().str());
    }
    return node().data[0];
  }

  bool requires_grad() const { return node().requires_grad; }
  void set_requires_grad(bool on) {
    if (!node().leaf) {
      throw std::logic_error("tensor: requires_grad is fixed on op outputs");
    }
    node_->requires_grad = on;
  }
  bool is_leaf() const { return node().leaf; }

  bool has_grad() const { return !node().grad.empty(); }
  std::span<const T> grad() const { return node().grad; }
  std::span<T> mutable_grad() { return node_->grad; }
  void zero_grad() { node_->grad.assign(node().data.size(), T(0)); }
  void clear_grad() { node_->grad.clear(); }

  // Fresh leaf with copied values, no tape history.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(shape(), node().data, requires_grad);
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = static_cast<U>(node().data[i]);
    }
    return Tensor<U>(shape(), std::move(out));
  }

  void backward() const;

  // Internal: used by ops to wire the tape.
  const NodePtr& node_ptr() const { return node_; }
  static Tensor from_node(NodePtr p) {
    Tensor t;
    t.node_ = std::move(p);
    return t;
  }

 private:
  const detail::Node<T>& node() const {
    if (!node_) throw std::logic_error("tensor: use of undefined tensor");
    return *node_;
  }
  detail::Node<T>& node() {
    if (!node_) throw std::logic_error("tensor: use of undefined tensor");
    return *node_;
  }

  NodePtr node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

// Builds an op output. The backward closure is attached only when grad mode
// is on and at least one input requires a gradient.
template <typename T>
Tensor<T> make_op_result(
    Shape shape, std::vector<T> values,
    std::initializer_list<const Tensor<T>*> inputs,
    std::function<void(std::span<const T>)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->data = std::move(values);
  node->leaf = false;
  bool needs = false;
  if (grad_mode_flag()) {
    for (const Tensor<T>* in : inputs) {
      if (in && in->defined() && in->requires_grad()) needs = true;
    }
  }
  if (needs) {
    node->requires_grad = true;
    for (const Tensor<T>* in : inputs) {
      if (in && in->defined() && in->requires_grad()) {
        node->parents.push_back(in->node_ptr());
      }
    }
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

// Same, for ops with a variable number of inputs (concatenation).
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values,
                         const std::vector<Tensor<T>>& inputs,
                         std::function<void(std::span<const T>)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = shape;
  node->data = std::move(values);
  node->leaf = false;
  bool needs = false;
  if (grad_mode_flag()) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node_ptr());
    }
    node->backward = std::move(backward_fn);
  }
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
inline T* grad_sink(const Tensor<T>& t) {
  return t.node_ptr()->grad_sink();
}

// Populates grad on every requires_grad leaf reachable from `loss`.
// Leaf gradients accumulate into whatever the slot already holds, so callers
// zero them between steps. Intermediate state is released afterwards.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw std::logic_error("backward: undefined loss");
  if (loss.shape() != Shape{1, 1, 1, 1}) {
    throw ShapeError("backward: loss must be 1x1x1x1, got " +
                     loss.shape().str());
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any parameter");
  }
  using NodeT = detail::Node<T>;
  NodeT* root = loss.node_ptr().get();
  if (root->consumed) {
    throw std::logic_error("backward: graph was already replayed");
  }

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> seen;
  std::vector<std::pair<NodeT*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        if (!p->leaf && p->consumed) {
          throw std::logic_error("backward: graph was already replayed");
        }
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad.assign(1, T(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(node->grad);
  }
  for (NodeT* node : order) {
    if (node->leaf) continue;
    node->backward = nullptr;
    node->parents.clear();
    node->grad.clear();
    node->grad.shrink_to_fit();
    node->consumed = true;
  }
}

template <typename T>
void Tensor<T>::backward() const {
  ahmf::backward(*this);
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace ahmf
