#include "metakernel/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace mk {

OpCounters& op_counters() {
  static OpCounters counters;
  return counters;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void maybe_record(Tensor& out, bool participates, std::function<void()> fn) {
  if (Tape::active().recording() && participates) {
    out.set_requires_grad(true);
    Tape::active().record(out.impl(), std::move(fn));
  }
}

struct ConvDims {
  int batch, in_ch, in_h, in_w;
  int out_ch, kern_in, kh, kw;
  int out_h, out_w;
};

ConvDims conv_dims(const Tensor& input, const Tensor& kernel, int stride,
                   int pad_h, int pad_w, bool depthwise) {
  const char* op = depthwise ? "depthwise_conv2d" : "conv2d";
  if (input.ndim() != 4 || kernel.ndim() != 4) {
    throw ShapeError(std::string(op) + ": expected 4D input and kernel, got " +
                     shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  }
  if (stride != 1 && stride != 2) {
    throw ValueError(std::string(op) + ": stride must be 1 or 2, got " +
                     std::to_string(stride));
  }
  if (pad_h < 0 || pad_w < 0) {
    throw ValueError(std::string(op) + ": negative padding");
  }
  ConvDims d;
  d.batch = static_cast<int>(input.extent(0));
  d.in_ch = static_cast<int>(input.extent(1));
  d.in_h = static_cast<int>(input.extent(2));
  d.in_w = static_cast<int>(input.extent(3));
  d.out_ch = static_cast<int>(kernel.extent(0));
  d.kern_in = static_cast<int>(kernel.extent(1));
  d.kh = static_cast<int>(kernel.extent(2));
  d.kw = static_cast<int>(kernel.extent(3));
  if (depthwise) {
    if (d.kern_in != 1 || d.out_ch != d.in_ch) {
      throw ShapeError(std::string(op) + ": kernel " + shape_str(kernel.shape()) +
                       " does not match input channels " + std::to_string(d.in_ch));
    }
  } else if (d.kern_in != d.in_ch) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(d.in_ch) +
                     " channels, kernel expects " + std::to_string(d.kern_in));
  }
  if (d.kh > d.in_h + 2 * pad_h || d.kw > d.in_w + 2 * pad_w) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(d.kh) + "x" +
                     std::to_string(d.kw) + " exceeds padded input " +
                     std::to_string(d.in_h + 2 * pad_h) + "x" +
                     std::to_string(d.in_w + 2 * pad_w));
  }
  d.out_h = (d.in_h + 2 * pad_h - d.kh) / stride + 1;
  d.out_w = (d.in_w + 2 * pad_w - d.kw) / stride + 1;
  return d;
}

struct TapRange {
  int lo, hi;  // inclusive output range; empty when lo > hi
};

// Output positions o with 0 <= o*stride + k - pad < extent.
TapRange tap_range(int k, int pad, int stride, int in_extent, int out_extent) {
  int lo = 0;
  if (pad - k > 0) lo = (pad - k + stride - 1) / stride;
  int t = in_extent - 1 + pad - k;
  int hi = t < 0 ? -1 : std::min(out_extent - 1, t / stride);
  return {lo, hi};
}

// Shared accumulation core for conv2d forward. Accumulates contributions in
// fixed (c, ky, kx) order per output element; exact zero weights are skipped,
// which cannot change any finite sum.
void conv_forward(const double* in, const double* kern, double* out,
                  const ConvDims& d, int stride, int pad_h, int pad_w,
                  bool depthwise) {
  const int in_plane = d.in_h * d.in_w;
  const int out_plane = d.out_h * d.out_w;
  const int kern_plane = d.kh * d.kw;
  for (int b = 0; b < d.batch; ++b) {
    for (int f = 0; f < d.out_ch; ++f) {
      double* out_p = out + (static_cast<std::size_t>(b) * d.out_ch + f) * out_plane;
      const int c_begin = depthwise ? f : 0;
      const int c_end = depthwise ? f + 1 : d.in_ch;
      for (int c = c_begin; c < c_end; ++c) {
        const double* in_p =
            in + (static_cast<std::size_t>(b) * d.in_ch + c) * in_plane;
        const double* k_p =
            kern + (static_cast<std::size_t>(f) * d.kern_in + (depthwise ? 0 : c)) *
                       kern_plane;
        for (int ky = 0; ky < d.kh; ++ky) {
          TapRange ry = tap_range(ky, pad_h, stride, d.in_h, d.out_h);
          for (int kx = 0; kx < d.kw; ++kx) {
            const double w = k_p[ky * d.kw + kx];
            if (w == 0.0) continue;
            TapRange rx = tap_range(kx, pad_w, stride, d.in_w, d.out_w);
            for (int oy = ry.lo; oy <= ry.hi; ++oy) {
              const int iy = oy * stride + ky - pad_h;
              const double* in_row = in_p + iy * d.in_w + kx - pad_w;
              double* out_row = out_p + oy * d.out_w;
              for (int ox = rx.lo; ox <= rx.hi; ++ox) {
                out_row[ox] += w * in_row[ox * stride];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_input(const double* kern, const double* dout, double* din,
                         const ConvDims& d, int stride, int pad_h, int pad_w,
                         bool depthwise) {
  const int in_plane = d.in_h * d.in_w;
  const int out_plane = d.out_h * d.out_w;
  const int kern_plane = d.kh * d.kw;
  for (int b = 0; b < d.batch; ++b) {
    for (int f = 0; f < d.out_ch; ++f) {
      const double* dout_p =
          dout + (static_cast<std::size_t>(b) * d.out_ch + f) * out_plane;
      const int c_begin = depthwise ? f : 0;
      const int c_end = depthwise ? f + 1 : d.in_ch;
      for (int c = c_begin; c < c_end; ++c) {
        double* din_p = din + (static_cast<std::size_t>(b) * d.in_ch + c) * in_plane;
        const double* k_p =
            kern + (static_cast<std::size_t>(f) * d.kern_in + (depthwise ? 0 : c)) *
                       kern_plane;
        for (int ky = 0; ky < d.kh; ++ky) {
          TapRange ry = tap_range(ky, pad_h, stride, d.in_h, d.out_h);
          for (int kx = 0; kx < d.kw; ++kx) {
            const double w = k_p[ky * d.kw + kx];
            if (w == 0.0) continue;
            TapRange rx = tap_range(kx, pad_w, stride, d.in_w, d.out_w);
            for (int oy = ry.lo; oy <= ry.hi; ++oy) {
              const int iy = oy * stride + ky - pad_h;
              double* din_row = din_p + iy * d.in_w + kx - pad_w;
              const double* dout_row = dout_p + oy * d.out_w;
              for (int ox = rx.lo; ox <= rx.hi; ++ox) {
                din_row[ox * stride] += w * dout_row[ox];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_kernel(const double* in, const double* dout, double* dkern,
                          const ConvDims& d, int stride, int pad_h, int pad_w,
                          bool depthwise) {
  const int in_plane = d.in_h * d.in_w;
  const int out_plane = d.out_h * d.out_w;
  const int kern_plane = d.kh * d.kw;
  for (int b = 0; b < d.batch; ++b) {
    for (int f = 0; f < d.out_ch; ++f) {
      const double* dout_p =
          dout + (static_cast<std::size_t>(b) * d.out_ch + f) * out_plane;
      const int c_begin = depthwise ? f : 0;
      const int c_end = depthwise ? f + 1 : d.in_ch;
      for (int c = c_begin; c < c_end; ++c) {
        const double* in_p =
            in + (static_cast<std::size_t>(b) * d.in_ch + c) * in_plane;
        double* dk_p =
            dkern + (static_cast<std::size_t>(f) * d.kern_in + (depthwise ? 0 : c)) *
                        kern_plane;
        for (int ky = 0; ky < d.kh; ++ky) {
          TapRange ry = tap_range(ky, pad_h, stride, d.in_h, d.out_h);
          for (int kx = 0; kx < d.kw; ++kx) {
            TapRange rx = tap_range(kx, pad_w, stride, d.in_w, d.out_w);
            double acc = 0.0;
            for (int oy = ry.lo; oy <= ry.hi; ++oy) {
              const int iy = oy * stride + ky - pad_h;
              const double* in_row = in_p + iy * d.in_w + kx - pad_w;
              const double* dout_row = dout_p + oy * d.out_w;
              for (int ox = rx.lo; ox <= rx.hi; ++ox) {
                acc += dout_row[ox] * in_row[ox * stride];
              }
            }
            dk_p[ky * d.kw + kx] += acc;
          }
        }
      }
    }
  }
}

Tensor conv_impl(const Tensor& input, const Tensor& kernel, int stride,
                 int pad_h, int pad_w, bool depthwise) {
  ConvDims d = conv_dims(input, kernel, stride, pad_h, pad_w, depthwise);
  Tensor out = Tensor::zeros({static_cast<std::size_t>(d.batch),
                              static_cast<std::size_t>(d.out_ch),
                              static_cast<std::size_t>(d.out_h),
                              static_cast<std::size_t>(d.out_w)});
  conv_forward(input.values().data(), kernel.values().data(), out.values().data(),
               d, stride, pad_h, pad_w, depthwise);

  OpCounters& counters = op_counters();
  counters.feature_allocs += 1;
  if (depthwise) {
    counters.depthwise_calls += 1;
  } else {
    counters.conv2d_calls += 1;
  }

  const bool gi = input.requires_grad();
  const bool gk = kernel.requires_grad();
  Tensor result = out;
  maybe_record(result, gi || gk,
               [ii = input.impl(), ki = kernel.impl(), oi = out.impl(), d, stride,
                pad_h, pad_w, depthwise, gi, gk] {
                 if (gi) {
                   ii->ensure_grad();
                   conv_backward_input(ki->values.data(), oi->grad.data(),
                                       ii->grad.data(), d, stride, pad_h, pad_w,
                                       depthwise);
                 }
                 if (gk) {
                   ki->ensure_grad();
                   conv_backward_kernel(ii->values.data(), oi->grad.data(),
                                        ki->grad.data(), d, stride, pad_h, pad_w,
                                        depthwise);
                 }
               });
  return result;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int pad_h,
              int pad_w) {
  return conv_impl(input, kernel, stride, pad_h, pad_w, false);
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, int stride,
                        int pad_h, int pad_w) {
  return conv_impl(input, kernel, stride, pad_h, pad_w, true);
}

int same_pad(int kernel_extent) {
  if (kernel_extent < 1 || kernel_extent % 2 == 0) {
    throw ValueError("same padding requires an odd kernel extent, got " +
                     std::to_string(kernel_extent));
  }
  return (kernel_extent - 1) / 2;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  maybe_record(out, ga || gb, [ai = a.impl(), bi = b.impl(), oi = out.impl(), ga, gb] {
    if (ga) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    }
    if (gb) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < bi->grad.size(); ++i) bi->grad[i] += oi->grad[i];
    }
  });
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  maybe_record(out, ga || gb, [ai = a.impl(), bi = b.impl(), oi = out.impl(), ga, gb] {
    if (ga) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
    }
    if (gb) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < bi->grad.size(); ++i) bi->grad[i] -= oi->grad[i];
    }
  });
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  maybe_record(out, ga || gb, [ai = a.impl(), bi = b.impl(), oi = out.impl(), ga, gb] {
    if (ga) {
      ai->ensure_grad();
      for (std::size_t i = 0; i < ai->grad.size(); ++i)
        ai->grad[i] += oi->grad[i] * bi->values[i];
    }
    if (gb) {
      bi->ensure_grad();
      for (std::size_t i = 0; i < bi->grad.size(); ++i)
        bi->grad[i] += oi->grad[i] * ai->values[i];
    }
  });
  return out;
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
  maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl(), s] {
    ai->ensure_grad();
    for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += s * oi->grad[i];
  });
  return out;
}

Tensor relu(const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl()] {
    ai->ensure_grad();
    for (std::size_t i = 0; i < ai->grad.size(); ++i) {
      if (ai->values[i] > 0.0) ai->grad[i] += oi->grad[i];
    }
  });
  return out;
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor out = Tensor::scalar(total);
  maybe_record(out, a.requires_grad(), [ai = a.impl(), oi = out.impl()] {
    ai->ensure_grad();
    const double g = oi->grad[0];
    for (std::size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += g;
  });
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1) {
    throw ShapeError("linear: expected x[B,I], w[O,I], b[O]");
  }
  const std::size_t batch = x.extent(0), in = x.extent(1);
  const std::size_t out_n = w.extent(0);
  if (w.extent(1) != in || b.extent(0) != out_n) {
    throw ShapeError("linear: weight " + shape_str(w.shape()) +
                     " / bias " + shape_str(b.shape()) +
                     " incompatible with input " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({batch, out_n});
  for (std::size_t i = 0; i < batch; ++i) {
    for (std::size_t o = 0; o < out_n; ++o) {
      double acc = b[o];
      for (std::size_t k = 0; k < in; ++k) acc += x[i * in + k] * w[o * in + k];
      out[i * out_n + o] = acc;
    }
  }
  const bool gx = x.requires_grad(), gw = w.requires_grad(), gb = b.requires_grad();
  maybe_record(out, gx || gw || gb,
               [xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl(), batch,
                in, out_n, gx, gw, gb] {
                 if (gx) {
                   xi->ensure_grad();
                   for (std::size_t i = 0; i < batch; ++i)
                     for (std::size_t o = 0; o < out_n; ++o) {
                       const double g = oi->grad[i * out_n + o];
                       for (std::size_t k = 0; k < in; ++k)
                         xi->grad[i * in + k] += g * wi->values[o * in + k];
                     }
                 }
                 if (gw) {
                   wi->ensure_grad();
                   for (std::size_t i = 0; i < batch; ++i)
                     for (std::size_t o = 0; o < out_n; ++o) {
                       const double g = oi->grad[i * out_n + o];
                       for (std::size_t k = 0; k < in; ++k)
                         wi->grad[o * in + k] += g * xi->values[i * in + k];
                     }
                 }
                 if (gb) {
                   bi->ensure_grad();
                   for (std::size_t i = 0; i < batch; ++i)
                     for (std::size_t o = 0; o < out_n; ++o)
                       bi->grad[o] += oi->grad[i * out_n + o];
                 }
               });
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("global_avg_pool: expected [B,C,H,W]");
  const std::size_t batch = x.extent(0), ch = x.extent(1);
  const std::size_t plane = x.extent(2) * x.extent(3);
  if (plane == 0) throw ShapeError("global_avg_pool: empty spatial extent");
  const double inv = 1.0 / static_cast<double>(plane);
  Tensor out = Tensor::zeros({batch, ch});
  for (std::size_t i = 0; i < batch * ch; ++i) {
    double acc = 0.0;
    const double* p = x.values().data() + i * plane;
    for (std::size_t k = 0; k < plane; ++k) acc += p[k];
    out[i] = acc * inv;
  }
  maybe_record(out, x.requires_grad(), [xi = x.impl(), oi = out.impl(), plane, inv] {
    xi->ensure_grad();
    const std::size_t cells = oi->grad.size();
    for (std::size_t i = 0; i < cells; ++i) {
      const double g = oi->grad[i] * inv;
      double* p = xi->grad.data() + i * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] += g;
    }
  });
  return out;
}

Tensor channel_affine(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  if (x.ndim() != 4 || gamma.ndim() != 1 || beta.ndim() != 1 ||
      gamma.extent(0) != x.extent(1) || beta.extent(0) != x.extent(1)) {
    throw ShapeError("channel_affine: gamma/beta must be [C] matching input channels");
  }
  const std::size_t batch = x.extent(0), ch = x.extent(1);
  const std::size_t plane = x.extent(2) * x.extent(3);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double g = gamma[c], s = beta[c];
      const double* src = x.values().data() + (b * ch + c) * plane;
      double* dst = out.values().data() + (b * ch + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) dst[k] = src[k] * g + s;
    }
  const bool gx = x.requires_grad(), gg = gamma.requires_grad(),
             gb = beta.requires_grad();
  maybe_record(out, gx || gg || gb,
               [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
                batch, ch, plane, gx, gg, gb] {
                 if (gx) xi->ensure_grad();
                 if (gg) gi->ensure_grad();
                 if (gb) bi->ensure_grad();
                 for (std::size_t b = 0; b < batch; ++b)
                   for (std::size_t c = 0; c < ch; ++c) {
                     const std::size_t base = (b * ch + c) * plane;
                     const double g = gi->values[c];
                     for (std::size_t k = 0; k < plane; ++k) {
                       const double og = oi->grad[base + k];
                       if (gx) xi->grad[base + k] += og * g;
                       if (gg) gi->grad[c] += og * xi->values[base + k];
                       if (gb) bi->grad[c] += og;
                     }
                   }
               });
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
  if (x.ndim() != 4 || s.ndim() != 1 || s.extent(0) != x.extent(1)) {
    throw ShapeError("channel_scale: scale must be [C] matching input channels");
  }
  const std::size_t batch = x.extent(0), ch = x.extent(1);
  const std::size_t plane = x.extent(2) * x.extent(3);
  Tensor out = Tensor::zeros(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const double g = s[c];
      const double* src = x.values().data() + (b * ch + c) * plane;
      double* dst = out.values().data() + (b * ch + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) dst[k] = src[k] * g;
    }
  const bool gx = x.requires_grad(), gs = s.requires_grad();
  maybe_record(out, gx || gs,
               [xi = x.impl(), si = s.impl(), oi = out.impl(), batch, ch, plane, gx,
                gs] {
                 if (gx) xi->ensure_grad();
                 if (gs) si->ensure_grad();
                 for (std::size_t b = 0; b < batch; ++b)
                   for (std::size_t c = 0; c < ch; ++c) {
                     const std::size_t base = (b * ch + c) * plane;
                     const double g = si->values[c];
                     for (std::size_t k = 0; k < plane; ++k) {
                       const double og = oi->grad[base + k];
                       if (gx) xi->grad[base + k] += og * g;
                       if (gs) si->grad[c] += og * xi->values[base + k];
                     }
                   }
               });
  return out;
}

namespace {

void softmax_rows(const double* in, double* out, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in + r * cols;
    double* p = out + r * cols;
    double m = x[0];
    for (std::size_t j = 1; j < cols; ++j) m = std::max(m, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      p[j] = std::exp(x[j] - m);
      total += p[j];
    }
    const double inv = 1.0 / total;
    for (std::size_t j = 0; j < cols; ++j) p[j] *= inv;
  }
}

}  // namespace

Tensor softmax(const Tensor& logits, int axis) {
  const int last = static_cast<int>(logits.ndim()) - 1;
  if (axis != -1 && axis != last) {
    throw ValueError("softmax: only the last axis is supported");
  }
  if (logits.ndim() < 1 || logits.ndim() > 2) {
    throw ShapeError("softmax: expected a 1D or 2D tensor");
  }
  const std::size_t cols = logits.extent(logits.ndim() - 1);
  const std::size_t rows = logits.size() / cols;
  Tensor out = Tensor::zeros(logits.shape());
  softmax_rows(logits.values().data(), out.values().data(), rows, cols);
  maybe_record(out, logits.requires_grad(),
               [xi = logits.impl(), oi = out.impl(), rows, cols] {
                 xi->ensure_grad();
                 for (std::size_t r = 0; r < rows; ++r) {
                   const double* p = oi->values.data() + r * cols;
                   const double* og = oi->grad.data() + r * cols;
                   double* xg = xi->grad.data() + r * cols;
                   double dot = 0.0;
                   for (std::size_t j = 0; j < cols; ++j) dot += og[j] * p[j];
                   for (std::size_t j = 0; j < cols; ++j)
                     xg[j] += p[j] * (og[j] - dot);
                 }
               });
  return out;
}

namespace {

void check_labels(const std::vector<int>& labels, std::size_t batch,
                  std::size_t classes, const char* op) {
  if (labels.size() != batch) {
    throw ShapeError(std::string(op) + ": got " + std::to_string(labels.size()) +
                     " labels for batch of " + std::to_string(batch));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ValueError(std::string(op) + ": label out of range at index " +
                       std::to_string(i) + ": " + std::to_string(labels[i]) +
                       " with " + std::to_string(classes) + " classes");
    }
  }
}

}  // namespace

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: expected logits [B,K]");
  const std::size_t batch = logits.extent(0), classes = logits.extent(1);
  check_labels(labels, batch, classes, "cross_entropy");
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* x = logits.values().data() + i * classes;
    double m = x[0];
    for (std::size_t j = 1; j < classes; ++j) m = std::max(m, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < classes; ++j) total += std::exp(x[j] - m);
    loss += m + std::log(total) - x[static_cast<std::size_t>(labels[i])];
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  Tensor out = Tensor::scalar(loss * inv_batch);
  maybe_record(out, logits.requires_grad(),
               [xi = logits.impl(), oi = out.impl(), labels, batch, classes,
                inv_batch] {
                 xi->ensure_grad();
                 const double g = oi->grad[0] * inv_batch;
                 std::vector<double> p(classes);
                 for (std::size_t i = 0; i < batch; ++i) {
                   softmax_rows(xi->values.data() + i * classes, p.data(), 1, classes);
                   double* xg = xi->grad.data() + i * classes;
                   for (std::size_t j = 0; j < classes; ++j) xg[j] += g * p[j];
                   xg[static_cast<std::size_t>(labels[i])] -= g;
                 }
               });
  return out;
}

Tensor cross_entropy_probs(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.ndim() != 2) throw ShapeError("cross_entropy: expected probs [B,K]");
  const std::size_t batch = probs.extent(0), classes = probs.extent(1);
  check_labels(labels, batch, classes, "cross_entropy");
  double loss = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double p = probs[i * classes + static_cast<std::size_t>(labels[i])];
    if (p <= 0.0) {
      throw ValueError("cross_entropy: non-positive probability for true class at "
                       "index " + std::to_string(i));
    }
    loss -= std::log(p);
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  Tensor out = Tensor::scalar(loss * inv_batch);
  maybe_record(out, probs.requires_grad(),
               [pi = probs.impl(), oi = out.impl(), labels, batch, classes,
                inv_batch] {
                 pi->ensure_grad();
                 const double g = oi->grad[0] * inv_batch;
                 for (std::size_t i = 0; i < batch; ++i) {
                   const std::size_t at = i * classes + static_cast<std::size_t>(labels[i]);
                   pi->grad[at] -= g / pi->values[at];
                 }
               });
  return out;
}

Tensor gather_option(const std::vector<Tensor>& vecs, std::size_t option) {
  if (vecs.empty()) throw ShapeError("gather_option: empty vector list");
  const std::size_t n = vecs.size();
  Tensor out = Tensor::zeros({n});
  bool participates = false;
  for (std::size_t c = 0; c < n; ++c) {
    if (option >= vecs[c].size()) {
      throw ShapeError("gather_option: option " + std::to_string(option) +
                       " out of range for vector of size " +
                       std::to_string(vecs[c].size()));
    }
    out[c] = vecs[c][option];
    participates = participates || vecs[c].requires_grad();
  }
  if (Tape::active().recording() && participates) {
    std::vector<std::shared_ptr<TensorData>> impls;
    impls.reserve(n);
    for (const Tensor& v : vecs) impls.push_back(v.impl());
    out.set_requires_grad(true);
    Tape::active().record(out.impl(), [impls = std::move(impls), oi = out.impl(),
                                       option] {
      for (std::size_t c = 0; c < impls.size(); ++c) {
        if (!impls[c]->requires_grad) continue;
        impls[c]->ensure_grad();
        impls[c]->grad[option] += oi->grad[c];
      }
    });
  }
  return out;
}

}  // namespace mk
