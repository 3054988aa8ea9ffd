#include "mce/tensor.hpp"

#include <numeric>
#include <sstream>

namespace mce {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

Tensor Tensor::zeros(Shape shape) {
  auto n = std::make_shared<Node>();
  const auto count = numel_of(shape);
  if (count < 0) throw ContractError("tensor shape has a negative extent: " + shape_str(shape));
  n->shape = std::move(shape);
  n->data.assign(static_cast<size_t>(count), real(0));
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, real value) {
  Tensor t = zeros(std::move(shape));
  for (auto& v : t.node_->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<real> data) {
  if (numel_of(shape) != static_cast<std::int64_t>(data.size())) {
    throw ContractError("tensor data length " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  return Tensor(std::move(n));
}

Tensor Tensor::parameter(Shape shape, std::vector<real> data) {
  Tensor t = from_data(std::move(shape), std::move(data));
  t.node_->requires_grad = true;
  return t;
}

real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

real Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank()) {
    throw ContractError("index rank mismatch for tensor " + shape_str(shape()));
  }
  std::int64_t flat = 0;
  int axis = 0;
  for (int i : idx) {
    const int e = node_->shape[static_cast<size_t>(axis)];
    if (i < 0 || i >= e) throw ContractError("index out of bounds");
    flat = flat * e + i;
    ++axis;
  }
  return node_->data[static_cast<size_t>(flat)];
}

void Tensor::zero_grad() const { node_->grad.clear(); }

Tensor Tensor::clone() const {
  return from_data(node_->shape, node_->data);
}

std::vector<real>& Tensor::grad_accum() const {
  if (node_->grad.size() != node_->data.size()) {
    node_->grad.assign(node_->data.size(), real(0));
  }
  return node_->grad;
}

namespace {
thread_local Graph* g_active_graph = nullptr;
}

Graph::Scope::Scope(Graph& g) : previous_(g_active_graph) { g_active_graph = &g; }
Graph::Scope::~Scope() { g_active_graph = previous_; }

Graph* Graph::active() { return g_active_graph; }

void Graph::record(std::function<void()> backward_step) {
  tape_.push_back(std::move(backward_step));
  consumed_ = false;
}

void Graph::backward(const Tensor& scalar_loss) {
  if (scalar_loss.numel() != 1) {
    throw ContractError("backward requires a scalar loss, got " + shape_str(scalar_loss.shape()));
  }
  if (consumed_) {
    throw GraphReuseError("backward called twice on the same recorded tape");
  }
  Tensor loss = scalar_loss;
  loss.grad_accum()[0] += real(1);
  for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
  tape_.clear();
  consumed_ = true;
}

namespace detail {
bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (Graph::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined() && t->tracked()) return true;
  }
  return false;
}
}  // namespace detail

}  // namespace mce
