#pragma once

#include <cmath>

#include "ivsp/jpeg.hpp"
#include "ivsp/ops.hpp"

// Differentiable JPEG path: color transform, per-block orthonormal DCT,
// quality-scaled quantization with Fourier-series rounding, and the decode
// chain. Everything is a tape op, so training backpropagates through the
// whole simulated compression.

namespace ivsp {

namespace detail {

// Applies an 8x8 separable transform per block: out = L * block * L^T with
// L = basis (DCT) or basis^T (inverse). float64 intermediates.
inline void transform_blocks(const float* src, float* dst, int64_t planes, int64_t h, int64_t w,
                             bool inverse) {
  const auto& basis = dct_basis();
  for (int64_t p = 0; p < planes; ++p) {
    const float* in_plane = src + p * h * w;
    float* out_plane = dst + p * h * w;
    for (int64_t by = 0; by < h; by += 8)
      for (int64_t bx = 0; bx < w; bx += 8) {
        double tmp[8][8];
        // rows: tmp = block * L^T  (forward) or block * L (inverse)
        for (int y = 0; y < 8; ++y)
          for (int u = 0; u < 8; ++u) {
            double acc = 0.0;
            for (int x = 0; x < 8; ++x) {
              double bval = inverse ? basis[static_cast<size_t>(x)][static_cast<size_t>(u)]
                                    : basis[static_cast<size_t>(u)][static_cast<size_t>(x)];
              acc += static_cast<double>(in_plane[(by + y) * w + bx + x]) * bval;
            }
            tmp[y][u] = acc;
          }
        // columns
        for (int v = 0; v < 8; ++v)
          for (int u = 0; u < 8; ++u) {
            double acc = 0.0;
            for (int y = 0; y < 8; ++y) {
              double bval = inverse ? basis[static_cast<size_t>(y)][static_cast<size_t>(v)]
                                    : basis[static_cast<size_t>(v)][static_cast<size_t>(y)];
              acc += tmp[y][u] * bval;
            }
            out_plane[(by + v) * w + bx + u] = static_cast<float>(acc);
          }
      }
  }
}

inline void check_block_aligned(const Tensor& t, const char* op) {
  check_rank4(t, op);
  if (t.dim(2) % 8 || t.dim(3) % 8)
    throw ShapeError(std::string(op) + ": extents must be multiples of 8, got " +
                     shape_str(t.shape()));
}

}  // namespace detail

// Orthonormal DCT-II on every 8x8 spatial block. Linear with an orthonormal
// matrix, so the backward rule is the inverse transform applied to the
// gradient (and vice versa).
inline Tensor blockdct8(const Tensor& x) {
  detail::check_block_aligned(x, "blockdct8");
  int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(x.shape());
  detail::transform_blocks(x.raw(), out.raw(), planes, h, w, /*inverse=*/false);
  detail::record_if_needed({&x}, out, [xn = x.node(), on = out.node(), planes, h, w] {
    if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0f);
    std::vector<float> g(on->grad.size());
    detail::transform_blocks(on->grad.data(), g.data(), planes, h, w, /*inverse=*/true);
    for (size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
  });
  return out;
}

inline Tensor blockidct8(const Tensor& x) {
  detail::check_block_aligned(x, "blockidct8");
  int64_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out(x.shape());
  detail::transform_blocks(x.raw(), out.raw(), planes, h, w, /*inverse=*/true);
  detail::record_if_needed({&x}, out, [xn = x.node(), on = out.node(), planes, h, w] {
    if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0f);
    std::vector<float> g(on->grad.size());
    detail::transform_blocks(on->grad.data(), g.data(), planes, h, w, /*inverse=*/false);
    for (size_t i = 0; i < g.size(); ++i) xn->grad[i] += g[i];
  });
  return out;
}

// Q(I) = I - (1/pi) sum_{k=1..K} ((-1)^{k+1}/k) sin(2 pi k I), the truncated
// Fourier series of the sawtooth I - round(I). Exact at integers and
// half-integers; differentiable everywhere.
inline double fourier_round_value(double v, int terms) {
  const double pi = 3.14159265358979323846;
  double s = 0.0;
  for (int k = 1; k <= terms; ++k) {
    double sign = (k % 2) ? 1.0 : -1.0;
    s += sign / k * std::sin(2.0 * pi * k * v);
  }
  return v - s / pi;
}

inline Tensor fourier_round(const Tensor& x, int terms) {
  if (terms < 1) throw DataError("fourier_round: K must be >= 1");
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i)
    out.raw()[i] = static_cast<float>(fourier_round_value(x.raw()[i], terms));
  detail::record_if_needed({&x}, out, [xn = x.node(), on = out.node(), terms] {
    const double pi = 3.14159265358979323846;
    if (xn->grad.empty()) xn->grad.assign(xn->data.size(), 0.0f);
    for (size_t i = 0; i < xn->grad.size(); ++i) {
      double v = xn->data[i];
      double d = 1.0;
      for (int k = 1; k <= terms; ++k) {
        double sign = (k % 2) ? 1.0 : -1.0;
        d -= 2.0 * sign * std::cos(2.0 * pi * k * v);
      }
      xn->grad[i] += static_cast<float>(on->grad[i] * d);
    }
  });
  return out;
}

// True rounding as a tape-transparent stand-in for fourier_round (gradient
// is zero almost everywhere, so no rule is recorded). Used by the codec
// agreement path and the "replace Fourier with round" ablation.
inline Tensor hard_round(const Tensor& x) {
  Tensor out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out.raw()[i] = std::round(x.raw()[i]);
  return out;
}

// 8-bit sample precision of a real decoder: reconstructed (level-shifted)
// samples are rounded and clamped to [0,255] before the color transform.
// Applied to centered values, so shift up, quantize, shift back.
inline Tensor quantize_samples_u8(const Tensor& centered) {
  Tensor out(centered.shape());
  for (int64_t i = 0; i < centered.numel(); ++i) {
    float v = std::round(centered.raw()[i] + 128.0f);
    out.raw()[i] = std::clamp(v, 0.0f, 255.0f) - 128.0f;
  }
  return out;
}

// Image padded to 8-aligned extents plus the original geometry, the unit the
// blockwise DCT operates on.
struct DctBlockGrid {
  Tensor padded;
  int64_t orig_h = 0;
  int64_t orig_w = 0;
};

inline DctBlockGrid pad_to_blocks(const Tensor& img) {
  detail::check_rank4(img, "pad_to_blocks");
  int64_t h = img.dim(2), w = img.dim(3);
  int64_t ph = (8 - h % 8) % 8, pw = (8 - w % 8) % 8;
  DctBlockGrid grid;
  grid.orig_h = h;
  grid.orig_w = w;
  grid.padded = (ph || pw) ? pad_replicate(img, 0, ph, 0, pw) : img;
  return grid;
}

inline Tensor unpad(const DctBlockGrid& grid) {
  if (grid.padded.dim(2) == grid.orig_h && grid.padded.dim(3) == grid.orig_w) return grid.padded;
  return crop(grid.padded, 0, 0, grid.orig_h, grid.orig_w);
}

namespace detail {

// Quantization tables tiled across the padded plane, one channel layout:
// channel 0 luma, channels 1+ chroma. Returned as a constant tensor.
inline Tensor tile_tables(const JpegConfig& cfg, int64_t n, int64_t c, int64_t h, int64_t w,
                          bool reciprocal) {
  Tensor t(Shape{n, c, h, w});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ic = 0; ic < c; ++ic) {
      const auto& table = (ic == 0) ? cfg.luma_table : cfg.chroma_table;
      float* plane = t.raw() + (in * c + ic) * h * w;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          float q = static_cast<float>(table[static_cast<size_t>((y % 8) * 8 + (x % 8))]);
          plane[y * w + x] = reciprocal ? 1.0f / q : q;
        }
    }
  return t;
}

inline Tensor channel_transform(const Tensor& x, const std::array<float, 9>& m,
                                const std::array<float, 3>& bias) {
  Tensor weight(Shape{3, 3, 1, 1}, std::vector<float>(m.begin(), m.end()));
  Tensor b(Shape{3}, std::vector<float>(bias.begin(), bias.end()));
  return add_channel_bias(conv2d(x, weight), b);
}

}  // namespace detail

// Quantizer stand-ins: Fourier for training, Exact for codec agreement,
// None to dissect the lossless transform chain.
enum class RoundMode { Fourier, Exact, None };

// The simulated JPEG distortion: scale to [0,255], RGB->YCbCr (level
// shifted), blockwise DCT, divide by the quality-scaled tables, rounding,
// multiply back, inverse DCT, YCbCr->RGB, rescale. Output is intentionally
// not clamped; clamping happens only at file boundaries.
inline Tensor jpeg_simulate(const Tensor& rgb, const JpegConfig& cfg,
                            RoundMode mode = RoundMode::Fourier) {
  detail::check_rank4(rgb, "jpeg_simulate");
  if (rgb.dim(1) != 3) throw ShapeError("jpeg_simulate expects 3 channels");
  rgb.check_finite("jpeg_simulate input");

  Tensor ycc = detail::channel_transform(scalar_mul(rgb, 255.0f), kRgbToYcc, kRgbToYccBias);
  DctBlockGrid grid = pad_to_blocks(ycc);
  int64_t n = grid.padded.dim(0), c = grid.padded.dim(1);
  int64_t h = grid.padded.dim(2), w = grid.padded.dim(3);

  Tensor recip = detail::tile_tables(cfg, n, c, h, w, /*reciprocal=*/true);
  Tensor scale = detail::tile_tables(cfg, n, c, h, w, /*reciprocal=*/false);

  Tensor coeff = hadamard_mul(blockdct8(grid.padded), recip);
  Tensor rounded = mode == RoundMode::Fourier ? fourier_round(coeff, cfg.fourier_terms)
                   : mode == RoundMode::Exact ? hard_round(coeff)
                                              : coeff;
  Tensor back = blockidct8(hadamard_mul(rounded, scale));
  // Exact mode reproduces the file decoder bit for bit, including its 8-bit
  // sample staging; the differentiable modes keep the samples continuous.
  if (mode == RoundMode::Exact) back = quantize_samples_u8(back);

  DctBlockGrid out_grid{back, grid.orig_h, grid.orig_w};
  Tensor ycc_out = unpad(out_grid);
  Tensor rgb_out = detail::channel_transform(ycc_out, kYccToRgb, kYccToRgbBias);
  return scalar_mul(rgb_out, 1.0f / 255.0f);
}

}  // namespace ivsp
