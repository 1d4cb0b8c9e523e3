#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "posemb/tensor.hpp"

namespace posemb {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording of a single forward computation.
///
/// Nodes are appended in execution order, so parents always precede
/// children. backward() clears intermediate gradients, seeds the root with 1
/// and walks the nodes in reverse, adding (+=) into the gradient buffers of
/// bound parameter tensors. Calling backward() twice without zeroing the
/// parameters therefore doubles their gradients.
///
/// Every recorded value is checked for NaN/Inf; a non-finite result throws
/// NonFiniteError naming the operation.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // With track_gradients off, parameters are bound as constants and no
  // backward closures are kept (evaluation passes).
  explicit Tape(bool track_gradients = true) : track_gradients_(track_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Binds an external tensor as a leaf. Binding the same tensor twice returns
  // the same node, so storage shared across heads is a single leaf.
  Var parameter(Tensor& param);

  Var record(std::string_view op, Tensor value, std::span<const Var> parents, BackwardFn backward);
  Var record(std::string_view op, Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(op, std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }

  void backward(Var root);

  const Tensor& value(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }
  // Upstream gradient of a node during backward().
  std::span<const double> grad_of(std::size_t id) const { return nodes_[id].grad; }
  // Accumulation buffer of a parent; allocated (zeroed) on first use.
  std::span<double> grad_sink(Var v);
  // Gradient of an arbitrary node after backward(); zeros if none flowed.
  std::vector<double> gradient(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    Tensor* param = nullptr;
    std::vector<double> grad;
    BackwardFn backward;
    bool needs_grad = false;
    std::string_view op;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> bound_;
  bool track_gradients_ = true;
};

}  // namespace posemb
