#pragma once

#include <functional>
#include <vector>

#include "metakernel/tensor.hpp"

namespace mk {

/// Define-by-run gradient tape. Every differentiable op appends one node
/// holding its output storage and an adjoint closure; backward() replays the
/// closures in reverse record order. The tape is rebuilt each forward pass
/// (callers clear() it at the start of a step).
///
/// Gradients of node outputs (intermediates) are reset at the start of every
/// backward() so repeated backward calls on one tape stay correct; gradients
/// of leaves accumulate until zero_grad().
class Tape {
 public:
  struct Node {
    std::shared_ptr<TensorData> out;
    std::function<void()> backward;
  };

  /// Process-wide active tape (single-threaded semantics).
  static Tape& active();

  void clear() { nodes_.clear(); }
  std::size_t node_count() const { return nodes_.size(); }

  bool recording() const { return nograd_depth_ == 0; }

  void record(std::shared_ptr<TensorData> out, std::function<void()> backward) {
    nodes_.push_back(Node{std::move(out), std::move(backward)});
  }

  /// Reverse sweep from a scalar loss. Throws ValueError for non-scalar loss.
  void backward_from(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
  int nograd_depth_ = 0;
  friend class NoGradGuard;
};

/// RAII scope that suspends tape recording (pure value evaluation).
class NoGradGuard {
 public:
  NoGradGuard() { ++Tape::active().nograd_depth_; }
  ~NoGradGuard() { --Tape::active().nograd_depth_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// backward() on the active tape.
void backward(const Tensor& loss);

/// True when the op should record: tape recording and some input participates.
inline bool tracking(const Tensor& t) {
  return Tape::active().recording() && t.requires_grad();
}

}  // namespace mk
