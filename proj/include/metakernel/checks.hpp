#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mk {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Kernel-sum convolution equals feature-sum convolution for random
/// (input, compatible kernel set, weights) triples, within tol relative.
CheckResult check_additivity(int trials, std::uint64_t seed, double tol);

/// Single-path supernet forward equals the multi-path reference on random
/// (net, batch, alpha) triples; also asserts via instrumented counters that
/// the single path runs 1 depthwise convolution (and allocates 1 intermediate
/// feature) per searchable layer versus N on the reference path.
CheckResult check_equivalence(int trials, std::uint64_t seed, double tol);

/// Finite-difference validation of d(loss)/d(weights) and d(loss)/d(alpha)
/// on a two-layer supernet.
CheckResult check_gradients(std::uint64_t seed, double eps, double tol);

/// Budget-band loss branch values and the zero gradient inside the band.
CheckResult check_flops_loss_branches();

/// Gumbel sampling statistics: argmax frequencies over draws match the
/// softmax probabilities (chi-square at significance 0.01 plus a +/-0.01
/// frequency band) and the low-temperature limit is one-hot.
CheckResult check_gumbel_statistics(std::uint64_t seed, int draws);

/// Monte-Carlo mean of concrete architecture costs over hard samples matches
/// the analytic expectation within rel_tol, for several random alpha settings.
CheckResult check_expected_flops_mc(int settings, int samples, std::uint64_t seed,
                                    double rel_tol);

/// The full invariant suite (quick mode shrinks trial counts).
std::vector<CheckResult> run_selfcheck(bool quick);

}  // namespace mk
