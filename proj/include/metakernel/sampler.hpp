#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metakernel/tensor.hpp"

namespace mk {

/// Settings for the categorical relaxation over candidate kernels.
struct GumbelConfig {
  enum class Schedule { linear, exponential };
  enum class Mode { soft, hard_straight_through, plain_softmax };

  double tau_start = 5.0;
  double tau_end = 0.5;
  Schedule schedule = Schedule::linear;
  std::uint64_t seed = 0;
  Mode mode = Mode::soft;

  void validate() const;
};

GumbelConfig::Schedule schedule_from_string(const std::string& s);
GumbelConfig::Mode mode_from_string(const std::string& s);
std::string to_string(GumbelConfig::Schedule s);
std::string to_string(GumbelConfig::Mode m);

/// Softmax over architecture logits (the categorical probabilities; the sum
/// runs over all options including none). Differentiable.
Tensor softmax_probs(const Tensor& alpha);

/// Value-level softmax of a logit vector.
std::vector<double> softmax_values(std::span<const double> logits);

/// Gumbel-softmax relaxation: softmax((log pi + g)/tau), computed in the
/// log domain directly from the logits so zero probabilities never reach a
/// log. Differentiable with respect to alpha; noise is an explicit input.
Tensor gumbel_probs(const Tensor& alpha, double tau, std::span<const double> noise);

/// Gumbel(0,1) noise for one (layer, filter, step) slot of the run's
/// counter-based stream; evaluation order cannot change the draw.
std::vector<double> gumbel_noise(std::uint64_t seed, std::uint64_t layer,
                                 std::uint64_t filter, std::uint64_t step,
                                 std::size_t n);

/// Monotone non-increasing temperature from tau_start at step 0 to tau_end at
/// total_steps.
double temperature_at(std::size_t step, std::size_t total_steps,
                      const GumbelConfig& cfg);

struct HardSample {
  std::vector<double> one_hot;
  std::size_t index = 0;
};

/// One-hot at the argmax of the Gumbel-perturbed logits (value level).
HardSample hard_sample(std::span<const double> logits,
                       std::span<const double> noise);

/// Forward: one-hot at the argmax of the soft probabilities.
/// Backward: identity into the soft path (straight-through estimator).
Tensor straight_through(const Tensor& soft_probs);

}  // namespace mk
