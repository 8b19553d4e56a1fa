#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "ivsp/ops.hpp"
#include "ivsp/tensor.hpp"

namespace ivsp {

enum class BayerPattern { RGGB, BGGR, GRBG, GBRG };

inline std::string pattern_name(BayerPattern p) {
  switch (p) {
    case BayerPattern::RGGB: return "RGGB";
    case BayerPattern::BGGR: return "BGGR";
    case BayerPattern::GRBG: return "GRBG";
    case BayerPattern::GBRG: return "GBRG";
  }
  throw DataError("unknown Bayer pattern");
}

inline BayerPattern pattern_from_name(const std::string& s) {
  if (s == "RGGB") return BayerPattern::RGGB;
  if (s == "BGGR") return BayerPattern::BGGR;
  if (s == "GRBG") return BayerPattern::GRBG;
  if (s == "GBRG") return BayerPattern::GBRG;
  throw DataError("unknown Bayer pattern: " + s);
}

// Channel (0=R, 1=G, 2=B) recorded at (y, x).
inline int channel_at(BayerPattern p, int64_t y, int64_t x) {
  int py = static_cast<int>(y & 1), px = static_cast<int>(x & 1);
  switch (p) {
    case BayerPattern::RGGB: {
      static constexpr int m[2][2] = {{0, 1}, {1, 2}};
      return m[py][px];
    }
    case BayerPattern::BGGR: {
      static constexpr int m[2][2] = {{2, 1}, {1, 0}};
      return m[py][px];
    }
    case BayerPattern::GRBG: {
      static constexpr int m[2][2] = {{1, 0}, {2, 1}};
      return m[py][px];
    }
    case BayerPattern::GBRG: {
      static constexpr int m[2][2] = {{1, 2}, {0, 1}};
      return m[py][px];
    }
  }
  throw DataError("unknown Bayer pattern");
}

inline BayerPattern rotate180(BayerPattern p) {
  switch (p) {
    case BayerPattern::RGGB: return BayerPattern::BGGR;
    case BayerPattern::BGGR: return BayerPattern::RGGB;
    case BayerPattern::GRBG: return BayerPattern::GBRG;
    case BayerPattern::GBRG: return BayerPattern::GRBG;
  }
  throw DataError("unknown Bayer pattern");
}

// Single-channel sensor mosaic plus the metadata needed to render and to
// reverse the render. Values are normalized to [0,1].
struct BayerFrame {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<float> mosaic;
  BayerPattern pattern = BayerPattern::RGGB;
  int bit_depth = 12;
  std::array<float, 3> wb_gains{1.0f, 1.0f, 1.0f};
  // pre-clamp values at white-balance-clipped sites; kept in memory so the
  // inverse is exact within a session, dropped when the frame is persisted
  std::vector<std::pair<int64_t, float>> clamp_overflow;

  BayerFrame() = default;
  BayerFrame(int64_t h, int64_t w, BayerPattern p = BayerPattern::RGGB, int bits = 12)
      : height(h), width(w), mosaic(static_cast<size_t>(h * w), 0.0f), pattern(p),
        bit_depth(bits) {
    if (h <= 0 || w <= 0 || (h % 2) || (w % 2))
      throw ShapeError("Bayer frame extents must be positive and even");
  }

  float& at(int64_t y, int64_t x) { return mosaic[y * width + x]; }
  float at(int64_t y, int64_t x) const { return mosaic[y * width + x]; }

  void validate() const {
    if (height <= 0 || width <= 0 || (height % 2) || (width % 2))
      throw ShapeError("Bayer frame extents must be positive and even");
    if (static_cast<int64_t>(mosaic.size()) != height * width)
      throw ShapeError("Bayer mosaic size does not match extents");
    for (float g : wb_gains)
      if (!(g > 0.0f)) throw DataError("white-balance gains must be positive");
    for (float v : mosaic)
      if (!(v >= 0.0f && v <= 1.0f)) throw DataError("mosaic values must lie in [0,1]");
  }
};

// Multiplies each site by its color's gain, clamping to [0,1]. Pre-clamp
// values are retained on the returned frame for exact in-session inversion.
inline BayerFrame white_balance(const BayerFrame& f) {
  f.validate();
  BayerFrame out = f;
  out.clamp_overflow.clear();
  for (int64_t y = 0; y < f.height; ++y)
    for (int64_t x = 0; x < f.width; ++x) {
      int c = channel_at(f.pattern, y, x);
      float v = f.at(y, x) * f.wb_gains[static_cast<size_t>(c)];
      if (v > 1.0f) {
        out.clamp_overflow.emplace_back(y * f.width + x, f.at(y, x));
        v = 1.0f;
      }
      out.at(y, x) = v;
    }
  return out;
}

// Divides by the gains; clamped sites are restored exactly when the frame
// still carries its in-session overflow list.
inline BayerFrame inverse_white_balance(const BayerFrame& f) {
  BayerFrame out = f;
  for (int64_t y = 0; y < f.height; ++y)
    for (int64_t x = 0; x < f.width; ++x) {
      int c = channel_at(f.pattern, y, x);
      out.at(y, x) = f.at(y, x) / f.wb_gains[static_cast<size_t>(c)];
    }
  for (auto& [idx, v] : f.clamp_overflow) out.mosaic[static_cast<size_t>(idx)] = v;
  out.clamp_overflow.clear();
  return out;
}

// Bilinear demosaic with the canonical stencils: G at R/B sites averages the
// 4 axial neighbors, R/B at G sites the 2 aligned neighbors, R at B (and B
// at R) the 4 diagonals. Borders replicate. At its native site each channel
// equals the mosaic exactly.
inline Tensor demosaic_bilinear(const BayerFrame& f) {
  f.validate();
  const int64_t h = f.height, w = f.width;
  Tensor out(Shape{1, 3, h, w});
  auto sample = [&](int64_t y, int64_t x) {
    y = std::clamp(y, int64_t{0}, h - 1);
    x = std::clamp(x, int64_t{0}, w - 1);
    return f.at(y, x);
  };
  float* r_plane = out.raw();
  float* g_plane = out.raw() + h * w;
  float* b_plane = out.raw() + 2 * h * w;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int c = channel_at(f.pattern, y, x);
      float native = f.at(y, x);
      float axial =
          0.25f * (sample(y - 1, x) + sample(y + 1, x) + sample(y, x - 1) + sample(y, x + 1));
      float diag = 0.25f * (sample(y - 1, x - 1) + sample(y - 1, x + 1) + sample(y + 1, x - 1) +
                            sample(y + 1, x + 1));
      float horiz = 0.5f * (sample(y, x - 1) + sample(y, x + 1));
      float vert = 0.5f * (sample(y - 1, x) + sample(y + 1, x));
      int64_t i = y * w + x;
      if (c == 0) {  // red site
        r_plane[i] = native;
        g_plane[i] = axial;
        b_plane[i] = diag;
      } else if (c == 2) {  // blue site
        b_plane[i] = native;
        g_plane[i] = axial;
        r_plane[i] = diag;
      } else {  // green site: R neighbors sit in the row that carries R
        g_plane[i] = native;
        bool red_row = channel_at(f.pattern, y, x - 1) == 0 || channel_at(f.pattern, y, x + 1) == 0;
        r_plane[i] = red_row ? horiz : vert;
        b_plane[i] = red_row ? vert : horiz;
      }
    }
  return out;
}

// Picks the native channel at each site; the exact reverse of demosaicing.
inline BayerFrame remosaic(const Tensor& rgb, BayerPattern pattern) {
  if (rgb.rank() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3)
    throw ShapeError("remosaic expects a (1,3,H,W) tensor, got " + shape_str(rgb.shape()));
  int64_t h = rgb.dim(2), w = rgb.dim(3);
  BayerFrame f(h, w, pattern);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int c = channel_at(pattern, y, x);
      f.at(y, x) = rgb.raw()[c * h * w + y * w + x];
    }
  return f;
}

// Online gamma correction: y = x^(1/gamma). Raises on negative input.
inline Tensor gamma_encode(const Tensor& x, double gamma = 2.2) {
  return power(x, 1.0 / gamma);
}

inline Tensor gamma_decode(const Tensor& y, double gamma = 2.2) {
  return power(y, gamma);
}

// Round to b-bit integer levels in [0, 2^b - 1]; the storage quantization
// applied at container boundaries.
inline float quantize_level(float v, int bits) {
  float peak = static_cast<float>((1 << bits) - 1);
  float q = std::nearbyint(std::clamp(v, 0.0f, 1.0f) * peak);
  return q / peak;
}

inline void quantize_frame(BayerFrame& f) {
  for (float& v : f.mosaic) v = quantize_level(v, f.bit_depth);
}

}  // namespace ivsp
