#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "ivsp/tensor.hpp"

// Elementwise, reduction, structural and convolution ops with reverse-mode
// rules. Shapes must conform exactly; the only broadcast is tensor-vs-scalar.
// Reductions accumulate in float64, storage stays float32.

namespace ivsp {

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

inline void check_rank4(const Tensor& t, const char* op) {
  if (t.rank() != 4)
    throw ShapeError(std::string(op) + ": expected NCHW tensor, got " + shape_str(t.shape()));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const float* pa = a.raw();
  const float* pb = b.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
  detail::record_if_needed({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
    if (an->requires_grad) an->accumulate(on->grad);
    if (bn->requires_grad) bn->accumulate(on->grad);
  });
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const float* pa = a.raw();
  const float* pb = b.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] - pb[i];
  detail::record_if_needed({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
    if (an->requires_grad) an->accumulate(on->grad);
    if (bn->requires_grad) {
      if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0f);
      for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] -= on->grad[i];
    }
  });
  return out;
}

inline Tensor hadamard_mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "hadamard_mul");
  Tensor out(a.shape());
  const float* pa = a.raw();
  const float* pb = b.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
  detail::record_if_needed({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node()] {
    if (an->requires_grad) {
      if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0f);
      for (size_t i = 0; i < bn->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->data[i];
    }
  });
  return out;
}

inline Tensor scalar_mul(const Tensor& a, float c) {
  Tensor out(a.shape());
  const float* pa = a.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * c;
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node(), c] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
  });
  return out;
}

inline Tensor scalar_add(const Tensor& a, float c) {
  Tensor out(a.shape());
  const float* pa = a.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + c;
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node()] {
    an->accumulate(on->grad);
  });
  return out;
}

inline Tensor exp(const Tensor& a) {
  Tensor out(a.shape());
  const float* pa = a.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) {
    po[i] = std::exp(pa[i]);
    if (!std::isfinite(po[i])) throw NumericError("exp: non-finite result");
  }
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node()] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[i] * on->data[i];
  });
  return out;
}

inline Tensor tanh(const Tensor& a) {
  Tensor out(a.shape());
  const float* pa = a.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::tanh(pa[i]);
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node()] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (size_t i = 0; i < an->grad.size(); ++i) {
      float t = on->data[i];
      an->grad[i] += on->grad[i] * (1.0f - t * t);
    }
  });
  return out;
}

inline Tensor sin(const Tensor& a) {
  Tensor out(a.shape());
  const float* pa = a.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::sin(pa[i]);
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node()] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (size_t i = 0; i < an->grad.size(); ++i)
      an->grad[i] += on->grad[i] * std::cos(an->data[i]);
  });
  return out;
}

inline Tensor relu(const Tensor& a) {
  Tensor out(a.shape());
  const float* pa = a.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] > 0.0f ? pa[i] : 0.0f;
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node()] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (size_t i = 0; i < an->grad.size(); ++i)
      if (an->data[i] > 0.0f) an->grad[i] += on->grad[i];
  });
  return out;
}

inline Tensor abs(const Tensor& a) {
  Tensor out(a.shape());
  const float* pa = a.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) po[i] = std::fabs(pa[i]);
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node()] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (size_t i = 0; i < an->grad.size(); ++i) {
      float x = an->data[i];
      // subgradient 0 at the kink
      an->grad[i] += on->grad[i] * (x > 0.0f ? 1.0f : (x < 0.0f ? -1.0f : 0.0f));
    }
  });
  return out;
}

// x^p for a fixed exponent. Negative base with fractional exponent is a
// domain error; the backward rule uses the 0 subgradient at x == 0, p < 1.
inline Tensor power(const Tensor& a, double p) {
  bool integral = (p == std::floor(p));
  Tensor out(a.shape());
  const float* pa = a.raw();
  float* po = out.raw();
  for (int64_t i = 0; i < a.numel(); ++i) {
    if (pa[i] < 0.0f && !integral)
      throw NumericError("power: negative base with fractional exponent");
    po[i] = static_cast<float>(std::pow(static_cast<double>(pa[i]), p));
    if (!std::isfinite(po[i])) throw NumericError("power: non-finite result");
  }
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node(), p] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (size_t i = 0; i < an->grad.size(); ++i) {
      double x = an->data[i];
      double d = (x == 0.0 && p < 1.0) ? 0.0 : p * std::pow(x, p - 1.0);
      an->grad[i] += static_cast<float>(on->grad[i] * d);
    }
  });
  return out;
}

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  const float* pa = a.raw();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  out.set_precise(acc);
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node()] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    float g = on->grad[0];
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
  return out;
}

// mean(x) == sum(x) / numel(x), in exactly that evaluation order.
inline Tensor mean(const Tensor& a) {
  double acc = 0.0;
  const float* pa = a.raw();
  for (int64_t i = 0; i < a.numel(); ++i) acc += pa[i];
  float n = static_cast<float>(a.numel());
  Tensor out = Tensor::scalar(static_cast<float>(acc) / n);
  out.set_precise(acc / static_cast<double>(a.numel()));
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node(), n] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    float g = on->grad[0] / n;
    for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
  });
  return out;
}

inline Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  detail::check_rank4(parts[0], "concat_channels");
  int64_t n = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int64_t ctot = 0;
  for (const Tensor& t : parts) {
    detail::check_rank4(t, "concat_channels");
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
      throw ShapeError("concat_channels: incompatible shapes");
    ctot += t.dim(1);
  }
  Tensor out(Shape{n, ctot, h, w});
  int64_t plane = h * w;
  int64_t coff = 0;
  for (const Tensor& t : parts) {
    int64_t c = t.dim(1);
    for (int64_t in = 0; in < n; ++in) {
      const float* src = t.raw() + in * c * plane;
      float* dst = out.raw() + (in * ctot + coff) * plane;
      std::copy(src, src + c * plane, dst);
    }
    coff += c;
  }
  bool want = false;
  for (const Tensor& t : parts)
    if (t.requires_grad()) want = true;
  if (Tape::active() && want) {
    std::vector<NodePtr> ins;
    for (const Tensor& t : parts) ins.push_back(t.node());
    Tape::active()->record(out.node(), [ins, on = out.node(), n, ctot, plane] {
      int64_t coff2 = 0;
      for (const NodePtr& an : ins) {
        int64_t c = static_cast<int64_t>(an->data.size()) / (n * plane);
        if (an->requires_grad) {
          if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
          for (int64_t in = 0; in < n; ++in) {
            const float* g = on->grad.data() + (in * ctot + coff2) * plane;
            float* dst = an->grad.data() + in * c * plane;
            for (int64_t i = 0; i < c * plane; ++i) dst[i] += g[i];
          }
        }
        coff2 += c;
      }
    });
  }
  return out;
}

inline Tensor slice_channels(const Tensor& a, int64_t c0, int64_t c1) {
  detail::check_rank4(a, "slice_channels");
  int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_channels: bad channel range");
  int64_t plane = h * w;
  Tensor out(Shape{n, c1 - c0, h, w});
  for (int64_t in = 0; in < n; ++in) {
    const float* src = a.raw() + (in * c + c0) * plane;
    std::copy(src, src + (c1 - c0) * plane, out.raw() + in * (c1 - c0) * plane);
  }
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node(), n, c, c0, c1, plane] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (int64_t in = 0; in < n; ++in) {
      const float* g = on->grad.data() + in * (c1 - c0) * plane;
      float* dst = an->grad.data() + (in * c + c0) * plane;
      for (int64_t i = 0; i < (c1 - c0) * plane; ++i) dst[i] += g[i];
    }
  });
  return out;
}

inline std::pair<Tensor, Tensor> split_channels(const Tensor& a, int64_t d) {
  detail::check_rank4(a, "split_channels");
  return {slice_channels(a, 0, d), slice_channels(a, d, a.dim(1))};
}

// Replicate-pad the spatial dims. Backward scatters pad contributions back
// onto the clamped source pixels.
inline Tensor pad_replicate(const Tensor& a, int64_t top, int64_t bottom, int64_t left,
                            int64_t right) {
  detail::check_rank4(a, "pad_replicate");
  if (top < 0 || bottom < 0 || left < 0 || right < 0)
    throw ShapeError("pad_replicate: negative padding");
  int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  int64_t oh = h + top + bottom, ow = w + left + right;
  Tensor out(Shape{n, c, oh, ow});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const float* src = a.raw() + nc * h * w;
    float* dst = out.raw() + nc * oh * ow;
    for (int64_t y = 0; y < oh; ++y) {
      int64_t sy = std::clamp(y - top, int64_t{0}, h - 1);
      for (int64_t x = 0; x < ow; ++x) {
        int64_t sx = std::clamp(x - left, int64_t{0}, w - 1);
        dst[y * ow + x] = src[sy * w + sx];
      }
    }
  }
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node(), n, c, h, w, top, left, oh,
                                       ow] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (int64_t nc = 0; nc < n * c; ++nc) {
      const float* g = on->grad.data() + nc * oh * ow;
      float* dst = an->grad.data() + nc * h * w;
      for (int64_t y = 0; y < oh; ++y) {
        int64_t sy = std::clamp(y - top, int64_t{0}, h - 1);
        for (int64_t x = 0; x < ow; ++x) {
          int64_t sx = std::clamp(x - left, int64_t{0}, w - 1);
          dst[sy * w + sx] += g[y * ow + x];
        }
      }
    }
  });
  return out;
}

inline Tensor crop(const Tensor& a, int64_t y0, int64_t x0, int64_t ch, int64_t cw) {
  detail::check_rank4(a, "crop");
  int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  if (y0 < 0 || x0 < 0 || ch <= 0 || cw <= 0 || y0 + ch > h || x0 + cw > w)
    throw ShapeError("crop: window out of bounds");
  Tensor out(Shape{n, c, ch, cw});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const float* src = a.raw() + nc * h * w;
    float* dst = out.raw() + nc * ch * cw;
    for (int64_t y = 0; y < ch; ++y)
      std::copy(src + (y0 + y) * w + x0, src + (y0 + y) * w + x0 + cw, dst + y * cw);
  }
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node(), n, c, h, w, y0, x0, ch,
                                       cw] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (int64_t nc = 0; nc < n * c; ++nc) {
      const float* g = on->grad.data() + nc * ch * cw;
      float* dst = an->grad.data() + nc * h * w;
      for (int64_t y = 0; y < ch; ++y)
        for (int64_t x = 0; x < cw; ++x) dst[(y0 + y) * w + x0 + x] += g[y * cw + x];
    }
  });
  return out;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose: expected 2-D tensor");
  int64_t m = a.dim(0), n = a.dim(1);
  Tensor out(Shape{n, m});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out.raw()[j * m + i] = a.raw()[i * n + j];
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node(), m, n] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) an->grad[i * n + j] += on->grad[j * m + i];
  });
  return out;
}

inline Tensor matmul_2d(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul_2d: expected 2-D tensors");
  int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul_2d: inner extents disagree " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor out(Shape{m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int64_t t = 0; t < k; ++t)
        acc += static_cast<double>(a.raw()[i * k + t]) * b.raw()[t * n + j];
      out.raw()[i * n + j] = static_cast<float>(acc);
    }
  detail::record_if_needed({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node(), m, k,
                                           n] {
    if (an->requires_grad) {
      if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t t = 0; t < k; ++t) {
          double acc = 0.0;
          for (int64_t j = 0; j < n; ++j)
            acc += static_cast<double>(on->grad[i * n + j]) * bn->data[t * n + j];
          an->grad[i * k + t] += static_cast<float>(acc);
        }
    }
    if (bn->requires_grad) {
      if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0f);
      for (int64_t t = 0; t < k; ++t)
        for (int64_t j = 0; j < n; ++j) {
          double acc = 0.0;
          for (int64_t i = 0; i < m; ++i)
            acc += static_cast<double>(an->data[i * k + t]) * on->grad[i * n + j];
          bn->grad[t * n + j] += static_cast<float>(acc);
        }
    }
  });
  return out;
}

namespace detail {

// Gauss-Jordan with partial pivoting, float64. Returns det magnitude.
inline double invert_matrix(const float* src, double* dst, int64_t n) {
  std::vector<double> aug(n * 2 * n, 0.0);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < n; ++j) aug[i * 2 * n + j] = src[i * n + j];
    aug[i * 2 * n + n + i] = 1.0;
  }
  double det = 1.0;
  for (int64_t col = 0; col < n; ++col) {
    int64_t piv = col;
    for (int64_t r = col + 1; r < n; ++r)
      if (std::fabs(aug[r * 2 * n + col]) > std::fabs(aug[piv * 2 * n + col])) piv = r;
    if (piv != col) {
      for (int64_t j = 0; j < 2 * n; ++j) std::swap(aug[piv * 2 * n + j], aug[col * 2 * n + j]);
      det = -det;
    }
    double p = aug[col * 2 * n + col];
    det *= p;
    if (p == 0.0) return 0.0;
    for (int64_t j = 0; j < 2 * n; ++j) aug[col * 2 * n + j] /= p;
    for (int64_t r = 0; r < n; ++r) {
      if (r == col) continue;
      double f = aug[r * 2 * n + col];
      if (f == 0.0) continue;
      for (int64_t j = 0; j < 2 * n; ++j) aug[r * 2 * n + j] -= f * aug[col * 2 * n + j];
    }
  }
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < n; ++j) dst[i * n + j] = aug[i * 2 * n + n + j];
  return det;
}

}  // namespace detail

inline double det_2d(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ShapeError("det_2d: expected square matrix");
  int64_t n = a.dim(0);
  std::vector<double> tmp(n * n);
  return detail::invert_matrix(a.raw(), tmp.data(), n);
}

// Matrix inverse as a differentiable op: d(X^-1) = -X^-1 dX X^-1, so the
// input gradient is -Y^T G Y^T with Y = X^-1.
inline Tensor matinv_2d(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw ShapeError("matinv_2d: expected square matrix");
  int64_t n = a.dim(0);
  std::vector<double> inv(n * n);
  double det = detail::invert_matrix(a.raw(), inv.data(), n);
  if (std::fabs(det) < 1e-8) throw NumericError("matinv_2d: matrix is near singular");
  Tensor out(Shape{n, n});
  for (int64_t i = 0; i < n * n; ++i) out.raw()[i] = static_cast<float>(inv[i]);
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node(), n] {
    if (an->grad.empty()) an->grad.assign(an->data.size(), 0.0f);
    std::vector<double> tmp(n * n, 0.0);  // G * Y^T
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int64_t t = 0; t < n; ++t)
          acc += static_cast<double>(on->grad[i * n + t]) * on->data[j * n + t];
        tmp[i * n + j] = acc;
      }
    for (int64_t i = 0; i < n; ++i)
      for (int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int64_t t = 0; t < n; ++t)
          acc += static_cast<double>(on->data[t * n + i]) * tmp[t * n + j];
        an->grad[i * n + j] -= static_cast<float>(acc);
      }
  });
  return out;
}

inline Tensor reshape(const Tensor& a, Shape s) {
  if (shape_numel(s) != a.numel())
    throw ShapeError("reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                     shape_str(s));
  Tensor out(std::move(s), std::vector<float>(a.data().begin(), a.data().end()));
  detail::record_if_needed({&a}, out, [an = a.node(), on = out.node()] {
    an->accumulate(on->grad);
  });
  return out;
}

inline Tensor add_channel_bias(const Tensor& a, const Tensor& b) {
  detail::check_rank4(a, "add_channel_bias");
  if (b.rank() != 1 || b.dim(0) != a.dim(1))
    throw ShapeError("add_channel_bias: bias shape " + shape_str(b.shape()) +
                     " does not match channels of " + shape_str(a.shape()));
  int64_t n = a.dim(0), c = a.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor out(a.shape());
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ic = 0; ic < c; ++ic) {
      const float* src = a.raw() + (in * c + ic) * plane;
      float* dst = out.raw() + (in * c + ic) * plane;
      float bias = b.raw()[ic];
      for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] + bias;
    }
  detail::record_if_needed({&a, &b}, out, [an = a.node(), bn = b.node(), on = out.node(), n, c,
                                           plane] {
    if (an->requires_grad) an->accumulate(on->grad);
    if (bn->requires_grad) {
      if (bn->grad.empty()) bn->grad.assign(bn->data.size(), 0.0f);
      for (int64_t in = 0; in < n; ++in)
        for (int64_t ic = 0; ic < c; ++ic) {
          const float* g = on->grad.data() + (in * c + ic) * plane;
          double acc = 0.0;
          for (int64_t i = 0; i < plane; ++i) acc += g[i];
          bn->grad[ic] += static_cast<float>(acc);
        }
    }
  });
  return out;
}

namespace detail {

// dot product over a contiguous range with eight independent float partial
// sums; the fixed association order keeps results deterministic while
// letting the compiler vectorize the reduction.
inline double dot_range(const float* a, const float* b, int64_t n) {
  float p0 = 0, p1 = 0, p2 = 0, p3 = 0, p4 = 0, p5 = 0, p6 = 0, p7 = 0;
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    p0 += a[i] * b[i];
    p1 += a[i + 1] * b[i + 1];
    p2 += a[i + 2] * b[i + 2];
    p3 += a[i + 3] * b[i + 3];
    p4 += a[i + 4] * b[i + 4];
    p5 += a[i + 5] * b[i + 5];
    p6 += a[i + 6] * b[i + 6];
    p7 += a[i + 7] * b[i + 7];
  }
  float tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return static_cast<double>(((p0 + p1) + (p2 + p3)) + ((p4 + p5) + (p6 + p7))) + tail;
}

// dst[n,co] += sum_ci,ky,kx w[co,ci,ky,kx] * src[n,ci,y+ky-py,x+kx-px]
// Inner loops run over contiguous row segments so they vectorize.
inline void conv2d_accum(const float* src, const float* wt, float* dst, int64_t n, int64_t cin,
                         int64_t cout, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t ph,
                         int64_t pw) {
  for (int64_t in = 0; in < n; ++in)
    for (int64_t co = 0; co < cout; ++co) {
      float* out_plane = dst + (in * cout + co) * h * w;
      for (int64_t ci = 0; ci < cin; ++ci) {
        const float* in_plane = src + (in * cin + ci) * h * w;
        const float* wk = wt + (co * cin + ci) * kh * kw;
        for (int64_t ky = 0; ky < kh; ++ky) {
          int64_t dy = ky - ph;
          int64_t y0 = std::max(int64_t{0}, -dy);
          int64_t y1 = std::min(h, h - dy);
          for (int64_t kx = 0; kx < kw; ++kx) {
            int64_t dx = kx - pw;
            int64_t x0 = std::max(int64_t{0}, -dx);
            int64_t x1 = std::min(w, w - dx);
            if (x0 >= x1) continue;
            float wv = wk[ky * kw + kx];
            if (wv == 0.0f) continue;
            for (int64_t y = y0; y < y1; ++y) {
              const float* srow = in_plane + (y + dy) * w + dx;
              float* drow = out_plane + y * w;
              for (int64_t x = x0; x < x1; ++x) drow[x] += wv * srow[x];
            }
          }
        }
      }
    }
}

}  // namespace detail

// Stride-1 2-D convolution, zero padding, default "same" for odd kernels.
// Weight layout (C_out, C_in, kh, kw).
inline Tensor conv2d(const Tensor& x, const Tensor& weight, int64_t pad = -1) {
  detail::check_rank4(x, "conv2d");
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be (C_out,C_in,kh,kw)");
  int64_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  int64_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != cin)
    throw ShapeError("conv2d: input channels " + std::to_string(cin) +
                     " do not match weight " + shape_str(weight.shape()));
  if (pad < 0) pad = (kh - 1) / 2;
  int64_t oh = h + 2 * pad - kh + 1, ow = w + 2 * pad - kw + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");

  // Accumulation happens on a zero-padded copy only implicitly: offsets are
  // range-clipped instead, so "same" conv never touches out-of-bounds rows.
  // For pad != (k-1)/2 the output extent changes; handle via explicit pad.
  Tensor xin = x;
  int64_t ph = pad, pw = pad;
  if (oh != h || ow != w) {
    // general case: materialize zero padding, then run the valid-size loop
    Tensor padded(Shape{n, cin, h + 2 * pad, w + 2 * pad});
    for (int64_t nc = 0; nc < n * cin; ++nc) {
      const float* src = x.raw() + nc * h * w;
      float* dst = padded.raw() + nc * (h + 2 * pad) * (w + 2 * pad);
      for (int64_t y = 0; y < h; ++y)
        std::copy(src + y * w, src + (y + 1) * w, dst + (y + pad) * (w + 2 * pad) + pad);
    }
    // valid convolution on the padded tensor
    Tensor out(Shape{n, cout, oh, ow});
    int64_t hp = h + 2 * pad, wp = w + 2 * pad;
    for (int64_t in = 0; in < n; ++in)
      for (int64_t co = 0; co < cout; ++co) {
        float* out_plane = out.raw() + (in * cout + co) * oh * ow;
        for (int64_t ci = 0; ci < cin; ++ci) {
          const float* in_plane = padded.raw() + (in * cin + ci) * hp * wp;
          const float* wk = weight.raw() + (co * cin + ci) * kh * kw;
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
              float wv = wk[ky * kw + kx];
              if (wv == 0.0f) continue;
              for (int64_t y = 0; y < oh; ++y) {
                const float* srow = in_plane + (y + ky) * wp + kx;
                float* drow = out_plane + y * ow;
                for (int64_t xx = 0; xx < ow; ++xx) drow[xx] += wv * srow[xx];
              }
            }
        }
      }
    detail::record_if_needed(
        {&x, &weight}, out,
        [xn = x.node(), wn = weight.node(), on = out.node(), n, cin, cout, h, w, kh, kw, pad, oh,
         ow] {
          int64_t hp = h + 2 * pad, wp = w + 2 * pad;
          std::vector<float> gpad(static_cast<size_t>(n * cin * hp * wp), 0.0f);
          // accumulate into padded grad, then crop
          for (int64_t in = 0; in < n; ++in)
            for (int64_t ci = 0; ci < cin; ++ci) {
              float* gp = gpad.data() + (in * cin + ci) * hp * wp;
              for (int64_t co = 0; co < cout; ++co) {
                const float* g = on->grad.data() + (in * cout + co) * oh * ow;
                const float* wk = wn->data.data() + (co * cin + ci) * kh * kw;
                for (int64_t ky = 0; ky < kh; ++ky)
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    float wv = wk[ky * kw + kx];
                    if (wv == 0.0f && !wn->requires_grad) continue;
                    if (xn->requires_grad && wv != 0.0f)
                      for (int64_t y = 0; y < oh; ++y) {
                        float* prow = gp + (y + ky) * wp + kx;
                        const float* grow = g + y * ow;
                        for (int64_t xx = 0; xx < ow; ++xx) prow[xx] += wv * grow[xx];
                      }
                  }
              }
            }
          if (xn->requires_grad) {
            if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0f);
            for (int64_t nc = 0; nc < n * cin; ++nc) {
              const float* gp = gpad.data() + nc * hp * wp;
              float* dst = xn->grad.data() + nc * h * w;
              for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx)
                  dst[y * w + xx] += gp[(y + pad) * wp + xx + pad];
            }
          }
          if (wn->requires_grad) {
            if (wn->grad.empty()) wn->grad.assign(wn->data.size(), 0.0f);
            for (int64_t in = 0; in < n; ++in)
              for (int64_t co = 0; co < cout; ++co)
                for (int64_t ci = 0; ci < cin; ++ci) {
                  const float* g = on->grad.data() + (in * cout + co) * oh * ow;
                  for (int64_t ky = 0; ky < kh; ++ky)
                    for (int64_t kx = 0; kx < kw; ++kx) {
                      double acc = 0.0;
                      int64_t xx0 = std::max(int64_t{0}, pad - kx);
                      int64_t xx1 = std::min(ow, w - kx + pad);
                      if (xx0 >= xx1) continue;
                      for (int64_t y = 0; y < oh; ++y) {
                        int64_t sy = y + ky - pad;
                        if (sy < 0 || sy >= h) continue;
                        const float* srow = xn->data.data() + ((in * cin + ci) * h + sy) * w;
                        acc += detail::dot_range(g + y * ow + xx0, srow + xx0 + kx - pad,
                                                 xx1 - xx0);
                      }
                      wn->grad[((co * cin + ci) * kh + ky) * kw + kx] += static_cast<float>(acc);
                    }
                }
          }
        });
    return out;
  }

  // same-size fast path (odd kernel, pad == (k-1)/2): range-clipped loops
  Tensor out(Shape{n, cout, h, w});
  detail::conv2d_accum(xin.raw(), weight.raw(), out.raw(), n, cin, cout, h, w, kh, kw, ph, pw);
  detail::record_if_needed(
      {&x, &weight}, out,
      [xn = x.node(), wn = weight.node(), on = out.node(), n, cin, cout, h, w, kh, kw, ph, pw] {
        if (xn->requires_grad) {
          if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0f);
          // dX = correlation of dY with weights mirrored over (ky,kx)
          for (int64_t in = 0; in < n; ++in)
            for (int64_t ci = 0; ci < cin; ++ci) {
              float* gx_plane = xn->grad.data() + (in * cin + ci) * h * w;
              for (int64_t co = 0; co < cout; ++co) {
                const float* gy_plane = on->grad.data() + (in * cout + co) * h * w;
                const float* wk = wn->data.data() + (co * cin + ci) * kh * kw;
                for (int64_t ky = 0; ky < kh; ++ky) {
                  int64_t dy = ky - ph;
                  int64_t y0 = std::max(int64_t{0}, dy);
                  int64_t y1 = std::min(h, h + dy);
                  for (int64_t kx = 0; kx < kw; ++kx) {
                    int64_t dx = kx - pw;
                    float wv = wk[ky * kw + kx];
                    if (wv == 0.0f) continue;
                    int64_t x0 = std::max(int64_t{0}, dx);
                    int64_t x1 = std::min(w, w + dx);
                    if (x0 >= x1) continue;
                    for (int64_t y = y0; y < y1; ++y) {
                      const float* grow = gy_plane + (y - dy) * w - dx;
                      float* xrow = gx_plane + y * w;
                      for (int64_t x = x0; x < x1; ++x) xrow[x] += wv * grow[x];
                    }
                  }
                }
              }
            }
        }
        if (wn->requires_grad) {
          if (wn->grad.empty()) wn->grad.assign(wn->data.size(), 0.0f);
          for (int64_t co = 0; co < cout; ++co)
            for (int64_t ci = 0; ci < cin; ++ci)
              for (int64_t ky = 0; ky < kh; ++ky) {
                int64_t dy = ky - ph;
                int64_t y0 = std::max(int64_t{0}, -dy);
                int64_t y1 = std::min(h, h - dy);
                for (int64_t kx = 0; kx < kw; ++kx) {
                  int64_t dx = kx - pw;
                  int64_t x0 = std::max(int64_t{0}, -dx);
                  int64_t x1 = std::min(w, w - dx);
                  double acc = 0.0;
                  for (int64_t in = 0; in < n; ++in) {
                    const float* gy_plane = on->grad.data() + (in * cout + co) * h * w;
                    const float* in_plane = xn->data.data() + (in * cin + ci) * h * w;
                    for (int64_t y = y0; y < y1; ++y)
                      acc += detail::dot_range(gy_plane + y * w + x0,
                                               in_plane + (y + dy) * w + dx + x0, x1 - x0);
                  }
                  wn->grad[((co * cin + ci) * kh + ky) * kw + kx] += static_cast<float>(acc);
                }
              }
        }
      });
  return out;
}

}  // namespace ivsp
