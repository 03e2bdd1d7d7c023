#include "metakernel/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metakernel/autodiff.hpp"
#include "metakernel/ops.hpp"
#include "metakernel/rng.hpp"

namespace mk {

void GumbelConfig::validate() const {
  if (!(tau_end > 0.0) || tau_start < tau_end) {
    throw ValueError("gumbel config requires tau_start >= tau_end > 0");
  }
}

GumbelConfig::Schedule schedule_from_string(const std::string& s) {
  if (s == "linear") return GumbelConfig::Schedule::linear;
  if (s == "exponential") return GumbelConfig::Schedule::exponential;
  throw ValueError("unknown temperature schedule: " + s);
}

GumbelConfig::Mode mode_from_string(const std::string& s) {
  if (s == "soft") return GumbelConfig::Mode::soft;
  if (s == "hard_straight_through") return GumbelConfig::Mode::hard_straight_through;
  if (s == "plain_softmax") return GumbelConfig::Mode::plain_softmax;
  throw ValueError("unknown sampling mode: " + s);
}

std::string to_string(GumbelConfig::Schedule s) {
  return s == GumbelConfig::Schedule::linear ? "linear" : "exponential";
}

std::string to_string(GumbelConfig::Mode m) {
  switch (m) {
    case GumbelConfig::Mode::soft: return "soft";
    case GumbelConfig::Mode::hard_straight_through: return "hard_straight_through";
    default: return "plain_softmax";
  }
}

Tensor softmax_probs(const Tensor& alpha) { return softmax(alpha, -1); }

std::vector<double> softmax_values(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  double m = *std::max_element(p.begin(), p.end());
  double total = 0.0;
  for (double& v : p) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : p) v /= total;
  return p;
}

Tensor gumbel_probs(const Tensor& alpha, double tau, std::span<const double> noise) {
  if (!(tau > 0.0)) throw ValueError("gumbel_probs: tau must be positive");
  if (noise.size() != alpha.size()) {
    throw ShapeError("gumbel_probs: noise length " + std::to_string(noise.size()) +
                     " does not match logits length " + std::to_string(alpha.size()));
  }
  // log pi_i = alpha_i - logsumexp(alpha); the logsumexp shift cancels inside
  // the softmax, so softmax((alpha + g)/tau) is exact.
  Tensor g = Tensor::from_values(Shape(alpha.shape()),
                                 std::vector<double>(noise.begin(), noise.end()));
  return softmax(scale(add(alpha, g), 1.0 / tau), -1);
}

std::vector<double> gumbel_noise(std::uint64_t seed, std::uint64_t layer,
                                 std::uint64_t filter, std::uint64_t step,
                                 std::size_t n) {
  CounterRng rng(seed ^ rng_domain::kGumbel, layer, filter, step);
  std::vector<double> g(n);
  for (double& v : g) v = rng.gumbel();
  return g;
}

double temperature_at(std::size_t step, std::size_t total_steps,
                      const GumbelConfig& cfg) {
  cfg.validate();
  if (step > total_steps) {
    throw ValueError("temperature_at: step exceeds total_steps");
  }
  if (total_steps == 0) return cfg.tau_start;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  if (cfg.schedule == GumbelConfig::Schedule::linear) {
    return cfg.tau_start + (cfg.tau_end - cfg.tau_start) * t;
  }
  return cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, t);
}

HardSample hard_sample(std::span<const double> logits,
                       std::span<const double> noise) {
  if (logits.size() != noise.size() || logits.empty()) {
    throw ShapeError("hard_sample: logits/noise length mismatch");
  }
  std::size_t best = 0;
  double best_v = logits[0] + noise[0];
  for (std::size_t i = 1; i < logits.size(); ++i) {
    const double v = logits[i] + noise[i];
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  HardSample s;
  s.index = best;
  s.one_hot.assign(logits.size(), 0.0);
  s.one_hot[best] = 1.0;
  return s;
}

Tensor straight_through(const Tensor& soft_probs) {
  const std::size_t n = soft_probs.size();
  if (n == 0) throw ShapeError("straight_through: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (soft_probs[i] > soft_probs[best]) best = i;
  }
  Tensor out = Tensor::zeros(soft_probs.shape());
  out[best] = 1.0;
  if (Tape::active().recording() && soft_probs.requires_grad()) {
    out.set_requires_grad(true);
    Tape::active().record(out.impl(), [si = soft_probs.impl(), oi = out.impl()] {
      si->ensure_grad();
      for (std::size_t i = 0; i < si->grad.size(); ++i) si->grad[i] += oi->grad[i];
    });
  }
  return out;
}

}  // namespace mk
