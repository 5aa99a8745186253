// Copyright 2026  The drvec Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "drv/errors.hpp"

namespace drv {

using Shape = std::vector<std::size_t>;

inline std::size_t ShapeSize(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

/**
   Dense row-major tensor with an optional gradient buffer.

   Tensor is a handle: copies share storage.  Values are treated as immutable
   once the tensor has been used in a computation; the only sanctioned
   in-place writes are gradient accumulation during Tape::Backward and
   parameter updates between forward passes (MutableValues()).
*/
template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : Tensor(shape, std::vector<Real>(ShapeSize(shape), Real(0)),
               requires_grad) {}

  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false)
      : data_(std::make_shared<Storage>()) {
    if (shape.empty())
      throw DimensionError("tensor shape must have at least one axis");
    for (std::size_t d : shape)
      if (d == 0)
        throw DimensionError("tensor shape " + ShapeString(shape) +
                             " has a zero-length axis");
    if (values.size() != ShapeSize(shape))
      throw DimensionError("tensor shape " + ShapeString(shape) + " needs " +
                           std::to_string(ShapeSize(shape)) + " values, got " +
                           std::to_string(values.size()));
    data_->shape = std::move(shape);
    data_->values = std::move(values);
    SetRequiresGrad(requires_grad);
  }

  static Tensor Scalar(Real v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  static Tensor Matrix(std::size_t rows, std::size_t cols,
                       std::vector<Real> values, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(values), requires_grad);
  }

  bool Empty() const { return data_ == nullptr; }
  const Shape& shape() const { return data_->shape; }
  std::size_t Rank() const { return data_->shape.size(); }
  std::size_t Dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t Size() const { return data_->values.size(); }

  // 2-D accessors; a rank-1 tensor is viewed as a single row.
  std::size_t NumRows() const { return Rank() == 1 ? 1 : data_->shape[0]; }
  std::size_t NumCols() const {
    return Rank() == 1 ? data_->shape[0] : data_->shape[1];
  }

  std::span<const Real> Values() const { return data_->values; }
  std::span<Real> MutableValues() { return data_->values; }

  std::span<const Real> Grad() const { return data_->grad; }
  // Shallow constness: gradients are accumulated through captured handles.
  std::span<Real> MutableGrad() const { return data_->grad; }

  bool RequiresGrad() const { return data_->requires_grad; }
  void SetRequiresGrad(bool on) {
    data_->requires_grad = on;
    if (on && data_->grad.size() != data_->values.size())
      data_->grad.assign(data_->values.size(), Real(0));
    if (!on) data_->grad.clear();
  }
  void ZeroGrad() { std::fill(data_->grad.begin(), data_->grad.end(), Real(0)); }

  Real Item() const {
    if (Size() != 1)
      throw ContractError("Item() on non-scalar tensor " +
                          ShapeString(shape()));
    return data_->values[0];
  }
  Real operator[](std::size_t i) const { return data_->values[i]; }
  Real operator()(std::size_t r, std::size_t c) const {
    return data_->values[r * NumCols() + c];
  }

  const void* Id() const { return data_.get(); }

  // Deep copy of values (and requires_grad flag); the gradient is not copied.
  Tensor Clone() const {
    return Tensor(shape(), data_->values, RequiresGrad());
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<Real> values;
    std::vector<Real> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> data_;
};

/**
   Define-by-run record of differentiable operations.

   Every operation whose inputs need gradients appends one node.  A node's
   parents are leaves or outputs of earlier nodes, so recording order is a
   topological order and Backward() simply walks it in reverse.  A tape and
   the tensors it records are confined to one thread; a fresh tape is built
   for each forward pass.
*/
template <typename Real>
class Tape {
 public:
  static constexpr long kLeaf = -1;

  /// A non-recording tape evaluates values only (inference).
  explicit Tape(bool recording = true) : recording_(recording) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool Recording() const { return recording_; }

  bool ShouldRecord(std::initializer_list<const Tensor<Real>*> inputs) const {
    if (!recording_) return false;
    for (const Tensor<Real>* t : inputs)
      if (t->RequiresGrad()) return true;
    return false;
  }
  bool ShouldRecord(const std::vector<Tensor<Real>>& inputs) const {
    if (!recording_) return false;
    for (const Tensor<Real>& t : inputs)
      if (t.RequiresGrad()) return true;
    return false;
  }

  void Record(const Tensor<Real>& output, std::vector<Tensor<Real>> parents,
              std::function<void()> backward) {
    Node node;
    node.output = output;
    for (const Tensor<Real>& p : parents) {
      auto it = index_of_.find(p.Id());
      node.parent_indices.push_back(
          it == index_of_.end() ? kLeaf : static_cast<long>(it->second));
    }
    node.parents = std::move(parents);
    node.backward = std::move(backward);
    index_of_[output.Id()] = nodes_.size();
    nodes_.push_back(std::move(node));
  }

  /// Populates d(root)/d(t) in the grad buffer of every requires_grad tensor
  /// reachable from `root`.  Leaf gradients accumulate across calls.
  void Backward(const Tensor<Real>& root) {
    if (root.Size() != 1)
      throw ContractError("backward root must be a scalar, got shape " +
                          ShapeString(root.shape()));
    last_visits_ = 0;
    auto it = index_of_.find(root.Id());
    if (it == index_of_.end()) {
      if (!root.RequiresGrad())
        throw ContractError("backward root is not on the tape");
      root.MutableGrad()[0] += Real(1);
      return;
    }
    for (Node& n : nodes_) n.output.ZeroGrad();
    root.MutableGrad()[0] = Real(1);
    for (std::size_t k = it->second + 1; k-- > 0;) {
      nodes_[k].backward();
      ++last_visits_;
    }
  }

  std::size_t NumNodes() const { return nodes_.size(); }
  std::size_t LastBackwardVisits() const { return last_visits_; }
  const std::vector<long>& ParentIndices(std::size_t k) const {
    return nodes_.at(k).parent_indices;
  }

 private:
  struct Node {
    Tensor<Real> output;
    std::vector<Tensor<Real>> parents;
    std::vector<long> parent_indices;
    std::function<void()> backward;
  };

  bool recording_;
  std::vector<Node> nodes_;
  std::unordered_map<const void*, std::size_t> index_of_;
  std::size_t last_visits_ = 0;
};

}  // namespace drv
