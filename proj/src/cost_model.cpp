#include "metakernel/cost_model.hpp"

#include <cmath>
#include <string>

#include "metakernel/autodiff.hpp"
#include "metakernel/ops.hpp"

namespace mk {

void CostBudget::validate() const {
  if (!(target > 0.0)) throw ValueError("budget target must be positive");
  if (eta < 0.0 || eta >= 1.0) throw ValueError("budget eta must lie in [0,1)");
  if (lambda_cost < 0.0) throw ValueError("lambda_cost must be non-negative");
}

double flops_of_arch(const std::vector<std::vector<int>>& choices,
                     const std::vector<LayerCostSpec>& specs, double fixed_cost) {
  if (choices.size() != specs.size()) {
    throw ShapeError("flops_of_arch: got choices for " +
                     std::to_string(choices.size()) + " layers, specs for " +
                     std::to_string(specs.size()));
  }
  double total = fixed_cost;
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const LayerCostSpec& spec = specs[l];
    if (choices[l].size() != spec.filters) {
      throw ShapeError("flops_of_arch: layer " + std::to_string(l) + " has " +
                       std::to_string(spec.filters) + " filters, got " +
                       std::to_string(choices[l].size()) + " choices");
    }
    for (int opt : choices[l]) {
      if (opt < 0 || static_cast<std::size_t>(opt) >= spec.option_areas.size()) {
        throw ValueError("flops_of_arch: option index " + std::to_string(opt) +
                         " out of range in layer " + std::to_string(l));
      }
      total += spec.spatial() * spec.option_areas[static_cast<std::size_t>(opt)];
    }
  }
  return total;
}

Tensor expected_flops(const std::vector<std::vector<Tensor>>& layer_probs,
                      const std::vector<LayerCostSpec>& specs, double fixed_cost) {
  if (layer_probs.size() != specs.size()) {
    throw ShapeError("expected_flops: probs for " +
                     std::to_string(layer_probs.size()) + " layers, specs for " +
                     std::to_string(specs.size()));
  }
  Tensor total = Tensor::scalar(fixed_cost);
  for (std::size_t l = 0; l < specs.size(); ++l) {
    const LayerCostSpec& spec = specs[l];
    const bool shared = layer_probs[l].size() == 1;
    if (!shared && layer_probs[l].size() != spec.filters) {
      throw ShapeError("expected_flops: layer " + std::to_string(l) +
                       " wants 1 or " + std::to_string(spec.filters) +
                       " probability vectors");
    }
    Tensor areas = Tensor::from_values(
        {spec.option_areas.size()},
        std::vector<double>(spec.option_areas.begin(), spec.option_areas.end()));
    if (shared) {
      Tensor per_filter = sum(mul(layer_probs[l][0], areas));
      total = add(total, scale(per_filter,
                               spec.spatial() * static_cast<double>(spec.filters)));
    } else {
      for (const Tensor& p : layer_probs[l]) {
        total = add(total, scale(sum(mul(p, areas)), spec.spatial()));
      }
    }
  }
  return total;
}

double flops_loss_value(double expected, const CostBudget& budget) {
  budget.validate();
  if (expected < budget.band_lo()) {
    if (expected <= 0.0) {
      throw ValueError("flops_loss: expected cost must be positive below the band");
    }
    return -std::log(expected);
  }
  if (expected > budget.band_hi()) return std::log(expected);
  return 0.0;
}

Tensor flops_loss(const Tensor& expected, const CostBudget& budget) {
  if (expected.size() != 1) {
    throw ShapeError("flops_loss: expected cost must be a scalar");
  }
  const double e = expected.value();
  const double v = flops_loss_value(e, budget);
  Tensor out = Tensor::scalar(v);
  if (Tape::active().recording() && expected.requires_grad()) {
    double slope = 0.0;
    if (e < budget.band_lo()) {
      slope = -1.0 / e;
    } else if (e > budget.band_hi()) {
      slope = 1.0 / e;
    }
    out.set_requires_grad(true);
    Tape::active().record(out.impl(), [ei = expected.impl(), oi = out.impl(), slope] {
      ei->ensure_grad();
      ei->grad[0] += slope * oi->grad[0];
    });
  }
  return out;
}

}  // namespace mk
