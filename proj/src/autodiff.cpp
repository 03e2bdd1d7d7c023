#include "metakernel/autodiff.hpp"

namespace mk {

Tape& Tape::active() {
  static Tape tape;
  return tape;
}

void Tape::backward_from(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ValueError("backward: loss must be a scalar tensor");
  }
  // Intermediate grads are per-sweep state; leaf grads accumulate.
  for (Node& node : nodes_) {
    node.out->ensure_grad();
    std::fill(node.out->grad.begin(), node.out->grad.end(), 0.0);
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->backward();
  }
}

void backward(const Tensor& loss) { Tape::active().backward_from(loss); }

}  // namespace mk
