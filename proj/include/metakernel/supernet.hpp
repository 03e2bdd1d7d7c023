#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "metakernel/cost_model.hpp"
#include "metakernel/meta_kernel.hpp"
#include "metakernel/sampler.hpp"
#include "metakernel/tensor.hpp"

namespace mk {

/// Macro-architecture of the desk-scale searchable network: a stem
/// convolution, a stack of depthwise-separable blocks whose depthwise stage
/// is the meta-kernel search site, global average pooling and a linear head.
struct ModelConfig {
  int image_size = 24;
  int in_channels = 1;
  int num_classes = 4;
  int stem_channels = 8;
  std::vector<int> block_channels{8, 16, 16, 32};
  std::vector<int> block_strides{1, 2, 1, 2};
  CandidateSet candidates = CandidateSet::squares({3, 5, 7}, true);
  bool share_alpha_per_layer = false;

  void validate() const;
};

/// One depthwise-separable block: 1x1 expansion, searchable meta-kernel
/// depthwise convolution, 1x1 projection. Normalization is per-channel
/// affine scaling (no batch statistics), which keeps the kernel-sum
/// aggregation identical to the feature-sum reference.
struct SearchableLayer {
  int in_ch = 0;
  int mid_ch = 0;
  int out_ch = 0;
  int stride = 1;

  Tensor expand_w;  // [mid, in, 1, 1]
  Tensor expand_gamma, expand_beta;
  Tensor meta;  // [mid, 1, meta_h, meta_w]
  Tensor dw_gamma, dw_beta;
  Tensor project_w;  // [out, mid, 1, 1]
  Tensor proj_gamma, proj_beta;
  std::vector<Tensor> alpha;  // per filter (or a single shared vector), [K]
};

struct SuperNet {
  ModelConfig cfg;
  int meta_h = 0, meta_w = 0;

  Tensor stem_w;  // [stem, in, 3, 3]
  Tensor stem_gamma, stem_beta;
  std::vector<SearchableLayer> layers;
  Tensor head_w;  // [classes, last_channels]
  Tensor head_b;

  static SuperNet create(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<Tensor> weight_params();
  std::vector<Tensor> alpha_params();
  std::vector<std::pair<std::string, Tensor>> named_params();
  void zero_grads();

  /// Cost specs of the searchable layers, in layer order.
  std::vector<LayerCostSpec> cost_specs() const;
  /// Constant MAC count of the fixed (non-searched) layers.
  double fixed_cost() const;
  /// fixed_cost plus every filter choosing its largest candidate.
  double max_cost() const;
};

/// Per-layer, per-filter option probabilities used by a forward pass. Search
/// builds these from alpha (plain softmax or Gumbel-relaxed); derived and
/// baseline networks use constant one-hot vectors.
using LayerProbs = std::vector<std::vector<Tensor>>;

/// Probabilities from the current architecture parameters. step/total_steps
/// drive the temperature schedule; noise comes from the run's counter stream
/// keyed by (layer, filter, step).
LayerProbs compute_layer_probs(SuperNet& net, std::size_t step,
                               std::size_t total_steps, const GumbelConfig& cfg);

/// Constant one-hot probabilities realizing a concrete choice per filter.
LayerProbs fixed_probs_from_choices(const SuperNet& net,
                                    const std::vector<std::vector<int>>& choices);

/// Single-path forward: each searchable layer folds its candidates into one
/// effective kernel and runs exactly one depthwise convolution.
Tensor forward_single_path(SuperNet& net, const Tensor& batch,
                           const LayerProbs& probs);

/// Multi-path reference: one depthwise convolution per candidate, features
/// combined by the probability-weighted sum. Kept for testing the
/// kernel-additivity reformulation.
Tensor forward_multipath_reference(SuperNet& net, const Tensor& batch,
                                   const LayerProbs& probs);

/// Cross-entropy plus lambda_cost times the budget-band loss on the expected
/// cost. cost_probs are the probabilities the expectation uses (plain
/// softmax of alpha by default).
struct LossParts {
  Tensor total;
  double ce = 0.0;
  double flops_term = 0.0;
  double expected_flops = 0.0;
};
LossParts total_loss(const Tensor& logits, const std::vector<int>& labels,
                     const LayerProbs& cost_probs,
                     const std::vector<LayerCostSpec>& specs, double fixed_cost,
                     const CostBudget& budget);

/// SGD with momentum and optional weight decay; one velocity slot per
/// parameter tensor.
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<Tensor> params, double momentum, double weight_decay);
  void step(double lr);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> velocity_;
  double momentum_;
  double weight_decay_;
};

/// Cosine decay from lr down to 0 over total_steps; constant when disabled.
double cosine_lr(double lr, std::size_t step, std::size_t total_steps, bool enabled);

struct SearchStepConfig {
  GumbelConfig gumbel;
  CostBudget budget;
  double lr = 0.2;
  double alpha_lr = 0.02;
  bool cosine_decay = true;
  bool use_gumbel_for_cost = false;
  std::size_t alpha_frozen_until = 0;  // steps with alpha held fixed
};

struct StepStats {
  double ce = 0.0;
  double flops_loss = 0.0;
  double total = 0.0;
  double expected_flops = 0.0;
  double tau = 0.0;
};

/// One iteration of the search loop: forward on the single-path formulation,
/// backward, then simultaneous update of the convolution weights and the
/// architecture parameters. Throws ValueError on a non-finite loss.
StepStats search_step(SuperNet& net, const Tensor& batch,
                      const std::vector<int>& labels, SgdOptimizer& weight_opt,
                      SgdOptimizer& alpha_opt, std::size_t step,
                      std::size_t total_steps, const SearchStepConfig& cfg);

/// The discrete architecture read off the learned alpha.
struct DerivedArch {
  std::vector<std::vector<int>> choices;       // per layer, per filter options
  std::vector<std::vector<int>> size_labels;   // same, as kernel-size labels
  double total_flops = 0.0;
  std::vector<std::vector<std::vector<double>>> alpha_snapshot;
};

/// Per-filter argmax over the softmax probabilities; exact ties break toward
/// the smaller-area candidate (none first).
DerivedArch derive_architecture(SuperNet& net);

/// Max over logits of |single - multi| / (1 + |multi|) with both paths driven
/// by the same noise-free probabilities.
double verify_equivalence(SuperNet& net, const Tensor& batch);

/// Plain forward pass evaluation (no tape), returns accuracy in [0,1].
double evaluate_accuracy(SuperNet& net, const Tensor& images,
                         const std::vector<int>& labels, const LayerProbs& probs,
                         std::size_t batch_size = 256);

}  // namespace mk
