#include "stk/tensor/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "stk/core/error.hpp"

namespace stk {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {
std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}
}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

namespace {
void validate_shape(const Shape& shape, std::size_t size) {
  for (std::size_t extent : shape) {
    require(extent >= 1, ErrorKind::kShapeMismatch, "zero extent in shape " + shape_str(shape));
  }
  require(numel(shape) == size, ErrorKind::kShapeMismatch,
          "shape " + shape_str(shape) + " does not match " + std::to_string(size) + " values");
}
}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : node_(std::make_shared<NodeType>()) {
  validate_shape(shape, data.size());
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->seq = detail::next_sequence();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::vector<T> data(stk::numel(shape), value);
  return BasicTensor(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::scalar(T value, bool requires_grad) {
  return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
}

template <typename T>
T BasicTensor<T>::item() const {
  require(numel() == 1, ErrorKind::kShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
BasicTensor<T>& BasicTensor<T>::set_requires_grad(bool value) {
  node_->requires_grad = value;
  return *this;
}

template <typename T>
void BasicTensor<T>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), T(0));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return BasicTensor(node_->shape, node_->data, false);
}

template <typename T>
void BasicTensor<T>::backward() const {
  require(numel() == 1, ErrorKind::kShapeMismatch,
          "backward() needs a scalar loss, got " + shape_str(shape()));
  require(requires_grad(), ErrorKind::kInvalidArgument, "backward() on an untracked tensor");
  Graph<T>::trace(*this).backward(*this);
}

template <typename T>
Graph<T> Graph<T>::trace(const BasicTensor<T>& root) {
  Graph graph;
  std::vector<detail::Node<T>*> stack{root.node().get()};
  std::unordered_set<const detail::Node<T>*> seen{root.node().get()};
  while (!stack.empty()) {
    detail::Node<T>* node = stack.back();
    stack.pop_back();
    graph.nodes_.push_back(node);
    for (const auto& parent : node->parents) {
      if (parent->requires_grad && seen.insert(parent.get()).second) stack.push_back(parent.get());
    }
  }
  std::sort(graph.nodes_.begin(), graph.nodes_.end(),
            [](const auto* a, const auto* b) { return a->seq < b->seq; });
  return graph;
}

template <typename T>
void Graph<T>::backward(const BasicTensor<T>& root) {
  for (auto* node : nodes_) {
    if (!node->is_leaf()) node->grad.assign(node->data.size(), T(0));
  }
  auto* top = root.node().get();
  top->ensure_grad();
  top->grad[0] += T(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward(**it);
  }
}

template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, std::vector<BasicTensor<T>> inputs,
                           const char* op, std::function<void(detail::Node<T>&)> backward) {
  BasicTensor<T> out(std::move(shape), std::move(data), false);
  const bool tracked = grad_enabled() && std::any_of(inputs.begin(), inputs.end(), [](const auto& t) {
                         return t.requires_grad();
                       });
  if (tracked) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.op = op;
    node.parents.reserve(inputs.size());
    for (auto& input : inputs) node.parents.push_back(input.node());
    node.backward = std::move(backward);
  }
  return out;
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template class Graph<float>;
template class Graph<double>;
template BasicTensor<float> make_result(Shape, std::vector<float>, std::vector<BasicTensor<float>>, const char*,
                                        std::function<void(detail::Node<float>&)>);
template BasicTensor<double> make_result(Shape, std::vector<double>, std::vector<BasicTensor<double>>,
                                         const char*, std::function<void(detail::Node<double>&)>);

}  // namespace stk
