#pragma once

#include <utility>
#include <vector>

#include "metakernel/tensor.hpp"

namespace mk {

/// One candidate kernel shape in kernel-element units. Extents are odd so the
/// centered embedding into the meta shape has integral offsets.
struct CandidateShape {
  int h = 0;
  int w = 0;
  int area() const { return h * w; }
  bool operator==(const CandidateShape&) const = default;
};

/// The set of candidate kernels a searchable filter chooses from, optionally
/// extended by the all-zero "none" option that prunes the filter.
///
/// Option indexing used throughout: when include_none is set, option 0 is
/// none and option i (i >= 1) is shapes[i-1]; otherwise option i is shapes[i].
class CandidateSet {
 public:
  CandidateSet() = default;
  CandidateSet(std::vector<CandidateShape> shapes, bool include_none);

  /// Square candidates from side lengths, e.g. {3,5,7}.
  static CandidateSet squares(const std::vector<int>& sizes, bool include_none);

  const std::vector<CandidateShape>& shapes() const { return shapes_; }
  bool include_none() const { return include_none_; }

  std::size_t num_candidates() const { return shapes_.size(); }
  std::size_t num_options() const { return shapes_.size() + (include_none_ ? 1 : 0); }

  /// Shape of an option; none maps to {0,0}.
  CandidateShape option_shape(std::size_t option) const;
  /// Kernel area of an option (0 for none).
  int option_area(std::size_t option) const;
  /// Per-option areas as doubles, in option order.
  std::vector<double> option_areas() const;
  /// Size label for exports: 0 for none, the side for squares, h*100+w else.
  int option_size_label(std::size_t option) const;
  /// Option index for a size label (inverse of option_size_label).
  std::size_t option_of_size_label(int label) const;

 private:
  std::vector<CandidateShape> shapes_;
  bool include_none_ = false;
};

/// Centered rectangle a candidate occupies inside the meta shape.
struct Roi {
  int top = 0;
  int left = 0;
  int h = 0;
  int w = 0;
  bool operator==(const Roi&) const = default;
};

/// Meta-kernel spatial shape (h, w): the element-wise maxima over candidates.
std::pair<int, int> build_meta_shape(const CandidateSet& candidates);

/// Centered placement of a candidate inside the meta shape; rejects
/// incompatible or even extents.
Roi roi_of(CandidateShape candidate, std::pair<int, int> meta_shape);

/// Probability mask over the meta shape: the option's sampling probability on
/// its RoI, zero elsewhere. Option 0 (none) is all-zero.
struct ProbMask {
  Tensor values;  // [meta_h, meta_w]
  std::size_t option_index = 0;
};

/// Masks for every option given the option probabilities (must be
/// non-negative and sum to 1 within 1e-9).
std::vector<ProbMask> build_masks(const CandidateSet& candidates,
                                  const std::vector<double>& probs);

/// 0/1 indicator of a candidate's RoI, shape [meta_h, meta_w].
Tensor indicator_mask(CandidateShape candidate, std::pair<int, int> meta_shape);

/// Aggregated kernel sum_i M_i * meta (elementwise, broadcast over filters):
/// masks are value-level here, so gradient flows to the meta kernel.
Tensor effective_kernel(const Tensor& meta, const std::vector<ProbMask>& masks);

/// Fused aggregation with per-filter option probabilities: filter c of the
/// result is (sum_i p_c[i] * indicator_i) * meta[c]. Gradient flows to the
/// meta kernel and through the probability tensors back to the architecture
/// parameters. filter_probs holds one length-K tensor per filter, or a single
/// tensor shared across all filters.
Tensor effective_kernel_probs(const Tensor& meta,
                              const std::vector<Tensor>& filter_probs,
                              const CandidateSet& candidates);

}  // namespace mk
