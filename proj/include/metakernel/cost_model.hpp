#pragma once

#include <vector>

#include "metakernel/tensor.hpp"

namespace mk {

/// FLOPs budget driving the cost term of the search objective. Cost is
/// counted in multiply-accumulate operations throughout.
struct CostBudget {
  double target = 0.0;      // T
  double eta = 0.1;         // slack fraction
  double lambda_cost = 2.0; // loss weight

  void validate() const;
  double band_lo() const { return target * (1.0 - eta); }
  double band_hi() const { return target * (1.0 + eta); }
};

/// Cost description of one searchable depthwise layer: every filter
/// contributes out_h*out_w*area(chosen option) MACs.
struct LayerCostSpec {
  int out_h = 0;
  int out_w = 0;
  std::size_t filters = 0;
  std::vector<double> option_areas;  // per option, 0 for none
  int stride = 1;

  double spatial() const { return static_cast<double>(out_h) * out_w; }
};

/// MAC count of a concrete architecture: per-filter chosen option indices per
/// layer, plus the constant cost of the fixed (non-searched) layers.
double flops_of_arch(const std::vector<std::vector<int>>& choices,
                     const std::vector<LayerCostSpec>& specs, double fixed_cost);

/// Expected MAC count under per-filter option probabilities; linear in the
/// probabilities, hence exactly sum_l sum_c H'W' * dot(p, areas). Returns a
/// grad-enabled scalar when the probability tensors participate. Each layer
/// holds one probability tensor per filter (or a single shared one).
Tensor expected_flops(const std::vector<std::vector<Tensor>>& layer_probs,
                      const std::vector<LayerCostSpec>& specs, double fixed_cost);

/// Budget-band loss: -log E below the band, +log E above it, 0 (with zero
/// gradient) inside [T(1-eta), T(1+eta)].
Tensor flops_loss(const Tensor& expected, const CostBudget& budget);

/// Closed-form value of the budget-band loss.
double flops_loss_value(double expected, const CostBudget& budget);

}  // namespace mk
