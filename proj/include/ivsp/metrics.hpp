#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "ivsp/bayer.hpp"
#include "ivsp/tensor.hpp"

namespace ivsp {

// PSNR in dB; identical inputs report +infinity.
inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
  if (a.shape() != b.shape())
    throw ShapeError("psnr: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  double mse = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    double d = static_cast<double>(a.raw()[i]) - b.raw()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

inline std::vector<double> gaussian_kernel_11() {
  std::vector<double> k(11);
  const double sigma = 1.5;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5;
    k[static_cast<size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  return k;  // normalized per window, so no global normalization here
}

}  // namespace detail

// SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03. Every
// pixel is a window center; windows are clipped at the borders and the
// Gaussian weights renormalized over the in-bounds taps. The score is the
// mean over all centers and channels.
inline double ssim(const Tensor& a, const Tensor& b, double peak = 1.0) {
  if (a.shape() != b.shape())
    throw ShapeError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  if (a.rank() != 4) throw ShapeError("ssim expects NCHW tensors");
  const int64_t n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  static const std::vector<double> kernel = detail::gaussian_kernel_11();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);

  double total = 0.0;
  int64_t count = 0;
  for (int64_t plane = 0; plane < n * c; ++plane) {
    const float* pa = a.raw() + plane * h * w;
    const float* pb = b.raw() + plane * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        double wsum = 0.0, ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (int64_t ky = -5; ky <= 5; ++ky) {
          int64_t yy = y + ky;
          if (yy < 0 || yy >= h) continue;
          for (int64_t kx = -5; kx <= 5; ++kx) {
            int64_t xx = x + kx;
            if (xx < 0 || xx >= w) continue;
            double wt = kernel[static_cast<size_t>(ky + 5)] * kernel[static_cast<size_t>(kx + 5)];
            double va = pa[yy * w + xx], vb = pb[yy * w + xx];
            wsum += wt;
            ma += wt * va;
            mb += wt * vb;
            saa += wt * va * va;
            sbb += wt * vb * vb;
            sab += wt * va * vb;
          }
        }
        ma /= wsum;
        mb /= wsum;
        double var_a = saa / wsum - ma * ma;
        double var_b = sbb / wsum - mb * mb;
        double cov = sab / wsum - ma * mb;
        double s = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        total += s;
        ++count;
      }
  }
  return total / static_cast<double>(count);
}

// BT.601 luma of an sRGB tensor, the channel SSIM is reported on.
inline Tensor luma(const Tensor& rgb) {
  if (rgb.rank() != 4 || rgb.dim(1) != 3) throw ShapeError("luma expects (N,3,H,W)");
  int64_t n = rgb.dim(0), plane = rgb.dim(2) * rgb.dim(3);
  Tensor out(Shape{n, 1, rgb.dim(2), rgb.dim(3)});
  for (int64_t in = 0; in < n; ++in) {
    const float* r = rgb.raw() + (in * 3 + 0) * plane;
    const float* g = rgb.raw() + (in * 3 + 1) * plane;
    const float* b = rgb.raw() + (in * 3 + 2) * plane;
    float* dst = out.raw() + in * plane;
    for (int64_t i = 0; i < plane; ++i)
      dst[i] = 0.299f * r[i] + 0.587f * g[i] + 0.114f * b[i];
  }
  return out;
}

// B_BMP = 54 + H*W*b/8: the uncompressed BMP footprint of RAW data.
inline uint64_t bmp_size(uint64_t height, uint64_t width, uint64_t bit_depth) {
  if (height == 0 || width == 0 || bit_depth == 0)
    throw DataError("bmp_size requires positive extents and bit depth");
  return 54 + height * width * bit_depth / 8;
}

struct CompressionReport {
  uint64_t bmp_bytes = 0;
  uint64_t jpeg_bytes = 0;
  double c_ratio = 0.0;  // bmp_bytes / jpeg_bytes
  double bpp = 0.0;      // 8 * jpeg_bytes / (H*W)
  uint64_t height = 0, width = 0;
  int bit_depth = 0;
};

inline CompressionReport compression_report(const BayerFrame& frame, uint64_t jpeg_bytes) {
  if (jpeg_bytes == 0) throw DataError("compression_report: zero-sized JPEG");
  CompressionReport r;
  r.height = static_cast<uint64_t>(frame.height);
  r.width = static_cast<uint64_t>(frame.width);
  r.bit_depth = frame.bit_depth;
  r.bmp_bytes = bmp_size(r.height, r.width, static_cast<uint64_t>(frame.bit_depth));
  r.jpeg_bytes = jpeg_bytes;
  r.c_ratio = static_cast<double>(r.bmp_bytes) / static_cast<double>(jpeg_bytes);
  r.bpp = 8.0 * static_cast<double>(jpeg_bytes) / static_cast<double>(r.height * r.width);
  return r;
}

// 8-bit quantization at the display boundary.
inline int quantize_to_u8(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace ivsp
