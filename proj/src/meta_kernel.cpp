#include "metakernel/meta_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metakernel/autodiff.hpp"

namespace mk {

namespace {

void check_odd_extents(CandidateShape s) {
  if (s.h < 1 || s.w < 1 || s.h % 2 == 0 || s.w % 2 == 0) {
    throw ValueError("candidate extents must be odd and >= 1, got " +
                     std::to_string(s.h) + "x" + std::to_string(s.w));
  }
}

}  // namespace

CandidateSet::CandidateSet(std::vector<CandidateShape> shapes, bool include_none)
    : shapes_(std::move(shapes)), include_none_(include_none) {
  if (shapes_.empty()) {
    throw ValueError("candidate set must contain at least one kernel shape");
  }
  for (std::size_t i = 0; i < shapes_.size(); ++i) {
    check_odd_extents(shapes_[i]);
    for (std::size_t j = 0; j < i; ++j) {
      if (shapes_[i] == shapes_[j]) {
        throw ValueError("duplicate candidate shape " + std::to_string(shapes_[i].h) +
                         "x" + std::to_string(shapes_[i].w));
      }
    }
  }
}

CandidateSet CandidateSet::squares(const std::vector<int>& sizes, bool include_none) {
  std::vector<CandidateShape> shapes;
  shapes.reserve(sizes.size());
  for (int k : sizes) shapes.push_back({k, k});
  return CandidateSet(std::move(shapes), include_none);
}

CandidateShape CandidateSet::option_shape(std::size_t option) const {
  if (option >= num_options()) {
    throw ValueError("option index " + std::to_string(option) + " out of range");
  }
  if (include_none_) {
    if (option == 0) return {0, 0};
    return shapes_[option - 1];
  }
  return shapes_[option];
}

int CandidateSet::option_area(std::size_t option) const {
  return option_shape(option).area();
}

std::vector<double> CandidateSet::option_areas() const {
  std::vector<double> areas(num_options());
  for (std::size_t i = 0; i < areas.size(); ++i) {
    areas[i] = static_cast<double>(option_area(i));
  }
  return areas;
}

int CandidateSet::option_size_label(std::size_t option) const {
  CandidateShape s = option_shape(option);
  if (s.h == 0) return 0;
  if (s.h == s.w) return s.h;
  return s.h * 100 + s.w;
}

std::size_t CandidateSet::option_of_size_label(int label) const {
  for (std::size_t i = 0; i < num_options(); ++i) {
    if (option_size_label(i) == label) return i;
  }
  throw ValueError("no candidate option with size label " + std::to_string(label));
}

std::pair<int, int> build_meta_shape(const CandidateSet& candidates) {
  int h = 0, w = 0;
  for (const CandidateShape& s : candidates.shapes()) {
    h = std::max(h, s.h);
    w = std::max(w, s.w);
  }
  return {h, w};
}

Roi roi_of(CandidateShape candidate, std::pair<int, int> meta_shape) {
  check_odd_extents(candidate);
  const auto [mh, mw] = meta_shape;
  if (mh < 1 || mw < 1 || mh % 2 == 0 || mw % 2 == 0) {
    throw ValueError("meta shape extents must be odd and >= 1");
  }
  if (candidate.h > mh || candidate.w > mw) {
    throw ValueError("candidate " + std::to_string(candidate.h) + "x" +
                     std::to_string(candidate.w) + " incompatible with meta " +
                     std::to_string(mh) + "x" + std::to_string(mw));
  }
  return Roi{(mh - candidate.h) / 2, (mw - candidate.w) / 2, candidate.h,
             candidate.w};
}

std::vector<ProbMask> build_masks(const CandidateSet& candidates,
                                  const std::vector<double>& probs) {
  const std::size_t options = candidates.num_options();
  if (probs.size() != options) {
    throw ValueError("build_masks: got " + std::to_string(probs.size()) +
                     " probabilities for " + std::to_string(options) + " options");
  }
  double total = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw ValueError("build_masks: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValueError("build_masks: probabilities sum to " + std::to_string(total));
  }
  const auto meta = build_meta_shape(candidates);
  std::vector<ProbMask> masks;
  masks.reserve(options);
  for (std::size_t opt = 0; opt < options; ++opt) {
    CandidateShape shape = candidates.option_shape(opt);
    Tensor m = Tensor::zeros({static_cast<std::size_t>(meta.first),
                              static_cast<std::size_t>(meta.second)});
    if (shape.h > 0) {
      Roi roi = roi_of(shape, meta);
      for (int y = roi.top; y < roi.top + roi.h; ++y)
        for (int x = roi.left; x < roi.left + roi.w; ++x)
          m[static_cast<std::size_t>(y) * meta.second + x] = probs[opt];
    }
    masks.push_back(ProbMask{m, opt});
  }
  return masks;
}

Tensor indicator_mask(CandidateShape candidate, std::pair<int, int> meta_shape) {
  Tensor m = Tensor::zeros({static_cast<std::size_t>(meta_shape.first),
                            static_cast<std::size_t>(meta_shape.second)});
  if (candidate.h == 0 && candidate.w == 0) return m;
  Roi roi = roi_of(candidate, meta_shape);
  for (int y = roi.top; y < roi.top + roi.h; ++y)
    for (int x = roi.left; x < roi.left + roi.w; ++x)
      m[static_cast<std::size_t>(y) * meta_shape.second + x] = 1.0;
  return m;
}

Tensor effective_kernel(const Tensor& meta, const std::vector<ProbMask>& masks) {
  if (meta.ndim() != 4) {
    throw ShapeError("effective_kernel: meta kernel must be [C,1,h,w]");
  }
  const std::size_t mh = meta.extent(2), mw = meta.extent(3);
  const std::size_t plane = mh * mw;
  std::vector<double> weight(plane, 0.0);
  for (const ProbMask& mask : masks) {
    if (mask.values.ndim() != 2 || mask.values.extent(0) != mh ||
        mask.values.extent(1) != mw) {
      throw ShapeError("effective_kernel: mask shape " +
                       shape_str(mask.values.shape()) + " does not match meta " +
                       shape_str(meta.shape()));
    }
    for (std::size_t i = 0; i < plane; ++i) weight[i] += mask.values[i];
  }
  const std::size_t filters = meta.extent(0);
  Tensor out = Tensor::zeros(meta.shape());
  for (std::size_t c = 0; c < filters; ++c) {
    const double* src = meta.values().data() + c * plane;
    double* dst = out.values().data() + c * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * weight[i];
  }
  if (Tape::active().recording() && meta.requires_grad()) {
    out.set_requires_grad(true);
    Tape::active().record(out.impl(), [mi = meta.impl(), oi = out.impl(),
                                       weight = std::move(weight), filters, plane] {
      mi->ensure_grad();
      for (std::size_t c = 0; c < filters; ++c) {
        const double* og = oi->grad.data() + c * plane;
        double* mg = mi->grad.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) mg[i] += og[i] * weight[i];
      }
    });
  }
  return out;
}

Tensor effective_kernel_probs(const Tensor& meta,
                              const std::vector<Tensor>& filter_probs,
                              const CandidateSet& candidates) {
  if (meta.ndim() != 4 || meta.extent(1) != 1) {
    throw ShapeError("effective_kernel: meta kernel must be [C,1,h,w]");
  }
  const std::size_t filters = meta.extent(0);
  const int mh = static_cast<int>(meta.extent(2));
  const int mw = static_cast<int>(meta.extent(3));
  const bool shared = filter_probs.size() == 1;
  if (!shared && filter_probs.size() != filters) {
    throw ShapeError("effective_kernel: expected 1 or " + std::to_string(filters) +
                     " probability vectors, got " +
                     std::to_string(filter_probs.size()));
  }
  const std::size_t options = candidates.num_options();
  std::vector<Roi> rois(options);
  for (std::size_t opt = 0; opt < options; ++opt) {
    CandidateShape s = candidates.option_shape(opt);
    rois[opt] = (s.h == 0) ? Roi{0, 0, 0, 0} : roi_of(s, {mh, mw});
  }

  const std::size_t plane = static_cast<std::size_t>(mh) * mw;
  // Per-filter cumulative weights: sum of option probabilities whose RoI
  // covers each cell.
  std::vector<double> weights(filters * plane, 0.0);
  bool probs_grad = false;
  for (std::size_t c = 0; c < filters; ++c) {
    const Tensor& p = filter_probs[shared ? 0 : c];
    if (p.size() != options) {
      throw ShapeError("effective_kernel: probability vector has " +
                       std::to_string(p.size()) + " entries, want " +
                       std::to_string(options));
    }
    probs_grad = probs_grad || p.requires_grad();
    double* w = weights.data() + c * plane;
    for (std::size_t opt = 0; opt < options; ++opt) {
      const Roi& r = rois[opt];
      const double pv = p[opt];
      for (int y = r.top; y < r.top + r.h; ++y)
        for (int x = r.left; x < r.left + r.w; ++x) w[y * mw + x] += pv;
    }
  }

  Tensor out = Tensor::zeros(meta.shape());
  for (std::size_t i = 0; i < filters * plane; ++i) {
    out[i] = meta[i] * weights[i];
  }

  const bool meta_grad = meta.requires_grad();
  if (Tape::active().recording() && (meta_grad || probs_grad)) {
    std::vector<std::shared_ptr<TensorData>> prob_impls;
    prob_impls.reserve(filter_probs.size());
    for (const Tensor& p : filter_probs) prob_impls.push_back(p.impl());
    out.set_requires_grad(true);
    Tape::active().record(
        out.impl(),
        [mi = meta.impl(), oi = out.impl(), prob_impls = std::move(prob_impls),
         weights = std::move(weights), rois = std::move(rois), filters, plane, mw,
         shared, meta_grad] {
          if (meta_grad) {
            mi->ensure_grad();
            for (std::size_t i = 0; i < filters * plane; ++i) {
              mi->grad[i] += oi->grad[i] * weights[i];
            }
          }
          for (std::size_t c = 0; c < filters; ++c) {
            TensorData& p = *prob_impls[shared ? 0 : c];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            const double* og = oi->grad.data() + c * plane;
            const double* mv = mi->values.data() + c * plane;
            for (std::size_t opt = 0; opt < rois.size(); ++opt) {
              const Roi& r = rois[opt];
              double acc = 0.0;
              for (int y = r.top; y < r.top + r.h; ++y)
                for (int x = r.left; x < r.left + r.w; ++x)
                  acc += og[y * mw + x] * mv[y * mw + x];
              p.grad[opt] += acc;
            }
          }
        });
  }
  return out;
}

}  // namespace mk
