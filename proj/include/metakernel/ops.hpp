#pragma once

#include <cstdint>
#include <vector>

#include "metakernel/autodiff.hpp"
#include "metakernel/tensor.hpp"

namespace mk {

/// Counters instrumenting convolution work; used to verify structurally that
/// the single-path supernet runs one convolution and allocates one
/// intermediate feature per searchable layer.
struct OpCounters {
  std::uint64_t conv2d_calls = 0;
  std::uint64_t depthwise_calls = 0;
  std::uint64_t feature_allocs = 0;  // conv output tensors allocated

  void reset() { *this = OpCounters{}; }
};
OpCounters& op_counters();

// ---- elementwise / reduction -------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sum(const Tensor& a);  // -> scalar

// ---- convolution ---------------------------------------------------------

/// 2D cross-correlation (no kernel flip), zero padding, stride in {1,2}.
/// input [B,C,H,W], kernel [F,C,kh,kw] -> [B,F,H',W'],
/// H' = floor((H + 2*pad_h - kh)/stride) + 1.
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad_h,
              int pad_w);

/// Depthwise variant: kernel [C,1,kh,kw], output channel i depends only on
/// input channel i.
Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, int stride,
                        int pad_h, int pad_w);

/// Padding that preserves spatial extent at stride 1. Rejects even extents.
int same_pad(int kernel_extent);

// ---- dense / activations -------------------------------------------------

/// x [B,I] * w [O,I] + b [O] -> [B,O]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

/// [B,C,H,W] -> [B,C]
Tensor global_avg_pool(const Tensor& x);

/// Per-channel y = x*gamma[c] + beta[c] for [B,C,H,W].
Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta);

/// Per-channel y[b,c,:,:] = x[b,c,:,:] * s[c]; s is a length-C tensor.
Tensor channel_scale(const Tensor& x, const Tensor& s);

/// Softmax along the last axis (log-sum-exp stabilized). Supports 1D and 2D.
Tensor softmax(const Tensor& logits, int axis = -1);

/// Mean negative log-likelihood from raw logits [B,K].
Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels);

/// Mean negative log-likelihood from probabilities [B,K] (rows sum to 1).
Tensor cross_entropy_probs(const Tensor& probs, const std::vector<int>& labels);

/// out[c] = vecs[c][option]; gathers one option's weight per filter into a
/// length-C tensor (gradient scatters back).
Tensor gather_option(const std::vector<Tensor>& vecs, std::size_t option);

}  // namespace mk
