#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "mce/errors.hpp"

namespace mce {

#ifdef MCE_FLOAT32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::int64_t numel_of(const Shape& s);

/// Dense row-major tensor handle with reverse-mode differentiation.
///
/// A Tensor is a cheap shared handle to an immutable value buffer plus an
/// optional gradient buffer. Operations that run while a Graph is active
/// record a backward closure on the graph's tape; Graph::backward replays the
/// tape in reverse and accumulates gradients into every tensor on the
/// differentiable path. Values are treated as immutable once an op has
/// produced them; only parameters are updated in place, by the trainer,
/// between graphs.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, real value);
  static Tensor from_data(Shape shape, std::vector<real> data);
  static Tensor scalar(real value) { return from_data({1}, {value}); }

  /// Leaf parameter: participates in every recording and keeps its gradient
  /// across graphs until zero_grad().
  static Tensor parameter(Shape shape, std::vector<real> data);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
  int extent(int axis) const { return node_->shape[static_cast<size_t>(axis)]; }

  const std::vector<real>& data() const { return node_->data; }
  real item() const;
  real at(std::initializer_list<int> idx) const;

  bool requires_grad() const { return node_->requires_grad; }
  /// True when this tensor lies on the differentiable path of the active graph.
  bool tracked() const { return node_->requires_grad || node_->derived; }

  /// Gradient populated by the last backward pass (empty until then).
  const std::vector<real>& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() const;

  /// Deep copy of values only (no graph history, not a parameter).
  Tensor clone() const;

  // --- op-authoring surface (used by the op library and domain modules) ---
  // A Tensor is a shared handle; these mutate the shared node, so they are
  // usable on by-copy lambda captures inside backward closures.

  /// Mutable value access for parameter updates and op construction.
  /// Callers must not mutate tensors that other ops already consumed.
  std::vector<real>& mutable_data() const { return node_->data; }

  /// Gradient buffer, allocated (zero-filled) on first use.
  std::vector<real>& grad_accum() const;

  void mark_derived() const { node_->derived = true; }

 private:
  struct Node {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;
    bool requires_grad = false;  // leaf parameter
    bool derived = false;        // produced by a recorded op
  };

  std::shared_ptr<Node> node_;

  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
};

/// Reverse-mode tape. Ops executed inside a Graph::Scope append their
/// backward closures in execution (topological) order; backward() replays
/// them exactly once in reverse. A second backward() without newly recorded
/// operations throws GraphReuseError.
///
/// A Graph and its backward pass are confined to one thread. Distinct
/// episodes may record on distinct graphs concurrently.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// RAII activation of a graph as the current thread's tape.
  class Scope {
   public:
    explicit Scope(Graph& g);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* previous_;
  };

  static Graph* active();

  void record(std::function<void()> backward_step);
  std::size_t size() const { return tape_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs the tape in reverse.
  void backward(const Tensor& scalar_loss);

 private:
  std::vector<std::function<void()>> tape_;
  bool consumed_ = false;
};

namespace detail {
/// True when an op over these inputs must record a backward step.
bool should_record(std::initializer_list<const Tensor*> inputs);
}  // namespace detail

}  // namespace mce
