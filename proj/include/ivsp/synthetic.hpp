#pragma once

#include <array>
#include <cmath>

#include "ivsp/bayer.hpp"
#include "ivsp/ops.hpp"
#include "ivsp/tensor.hpp"

// Desk-scale stand-in for a camera + raw developer: procedural linear
// scenes, a fixed ground-truth ISP (color matrix, Reinhard-style tone curve,
// gamma, 8-bit quantization) and the Bayer sensor simulation that produces
// paired training data.

namespace ivsp {

// Row-normalized, diagonally dominant color matrix.
inline constexpr std::array<float, 9> kSynthColorMatrix = {
    0.84f, 0.12f, 0.04f,  //
    0.06f, 0.86f, 0.08f,  //
    0.05f, 0.13f, 0.82f};

// Multi-scale value noise in [0.02, 0.98], three channels. Smooth octaves
// read as plausible photographic content for codec and training purposes.
inline Tensor synth_linear_scene(int64_t h, int64_t w, Rng& rng) {
  Tensor img(Shape{1, 3, h, w});
  for (int64_t c = 0; c < 3; ++c) {
    float* plane = img.raw() + c * h * w;
    for (int oct = 0; oct < 4; ++oct) {
      int64_t cells = int64_t{4} << oct;
      float amp = 0.5f / static_cast<float>(1 << oct);
      std::vector<float> grid(static_cast<size_t>((cells + 1) * (cells + 1)));
      for (float& v : grid) v = static_cast<float>(rng.uniform());
      for (int64_t y = 0; y < h; ++y) {
        double fy = static_cast<double>(y) / h * cells;
        int64_t gy = static_cast<int64_t>(fy);
        double ty = fy - gy;
        for (int64_t x = 0; x < w; ++x) {
          double fx = static_cast<double>(x) / w * cells;
          int64_t gx = static_cast<int64_t>(fx);
          double tx = fx - gx;
          double v00 = grid[static_cast<size_t>(gy * (cells + 1) + gx)];
          double v01 = grid[static_cast<size_t>(gy * (cells + 1) + gx + 1)];
          double v10 = grid[static_cast<size_t>((gy + 1) * (cells + 1) + gx)];
          double v11 = grid[static_cast<size_t>((gy + 1) * (cells + 1) + gx + 1)];
          double v = v00 * (1 - ty) * (1 - tx) + v01 * (1 - ty) * tx + v10 * ty * (1 - tx) +
                     v11 * ty * tx;
          plane[y * w + x] += amp * static_cast<float>(v);
        }
      }
    }
    for (int64_t i = 0; i < h * w; ++i)
      plane[i] = std::clamp(plane[i] * 1.02f + 0.02f, 0.02f, 0.98f);
  }
  return img;
}

// Reinhard-style global tone curve x/(1+x), rescaled to fix the white point
// at 1.
inline float synth_tone(float x) { return 2.0f * x / (1.0f + x); }

// Ground-truth render: color matrix, tone curve, 2.2 gamma, 8-bit
// quantization. This is the mapping the flow has to learn.
inline Tensor synth_isp_render(const Tensor& linear) {
  if (linear.rank() != 4 || linear.dim(1) != 3)
    throw ShapeError("synth_isp_render expects (N,3,H,W)");
  int64_t n = linear.dim(0), plane = linear.dim(2) * linear.dim(3);
  Tensor out(linear.shape());
  for (int64_t in = 0; in < n; ++in) {
    const float* r = linear.raw() + (in * 3 + 0) * plane;
    const float* g = linear.raw() + (in * 3 + 1) * plane;
    const float* b = linear.raw() + (in * 3 + 2) * plane;
    float* ro = out.raw() + (in * 3 + 0) * plane;
    float* go = out.raw() + (in * 3 + 1) * plane;
    float* bo = out.raw() + (in * 3 + 2) * plane;
    const auto& m = kSynthColorMatrix;
    for (int64_t i = 0; i < plane; ++i) {
      std::array<float, 3> mixed = {m[0] * r[i] + m[1] * g[i] + m[2] * b[i],
                                    m[3] * r[i] + m[4] * g[i] + m[5] * b[i],
                                    m[6] * r[i] + m[7] * g[i] + m[8] * b[i]};
      std::array<float*, 3> dst = {ro, go, bo};
      for (int c = 0; c < 3; ++c) {
        float v = synth_tone(std::max(0.0f, mixed[static_cast<size_t>(c)]));
        v = static_cast<float>(std::pow(static_cast<double>(v), 1.0 / 2.2));
        v = std::nearbyint(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
        dst[static_cast<size_t>(c)][i] = v;
      }
    }
  }
  return out;
}

// Simulated sensor readout: the linear scene seen through the Bayer filter
// with the white-balance gains divided out, quantized at the sensor depth.
inline BayerFrame synth_bayer_frame(const Tensor& scene, BayerPattern pattern,
                                    const std::array<float, 3>& wb_gains, int bit_depth) {
  if (scene.rank() != 4 || scene.dim(0) != 1 || scene.dim(1) != 3)
    throw ShapeError("synth_bayer_frame expects (1,3,H,W)");
  int64_t h = scene.dim(2), w = scene.dim(3);
  BayerFrame f(h, w, pattern, bit_depth);
  f.wb_gains = wb_gains;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      int c = channel_at(pattern, y, x);
      float v = scene.raw()[c * h * w + y * w + x] / wb_gains[static_cast<size_t>(c)];
      f.at(y, x) = v;
    }
  quantize_frame(f);
  return f;
}

// One paired sample: the flow input (gamma-encoded, white-balanced,
// demosaiced RAW) and the 8-bit sRGB target rendered by the synthetic ISP
// from the same demosaiced data.
struct SynthSample {
  BayerFrame frame;
  Tensor raw_input;   // (1,3,H,W), gamma space
  Tensor rgb_target;  // (1,3,H,W), 8-bit levels in [0,1]
};

inline SynthSample make_synth_sample(int64_t size, uint64_t seed) {
  Rng rng(seed);
  Tensor scene = synth_linear_scene(size, size, rng);
  std::array<float, 3> gains = {static_cast<float>(rng.uniform(1.5, 2.2)), 1.0f,
                                static_cast<float>(rng.uniform(1.3, 1.9))};
  SynthSample s;
  s.frame = synth_bayer_frame(scene, BayerPattern::RGGB, gains, 12);
  BayerFrame wb = white_balance(s.frame);
  Tensor demosaiced = demosaic_bilinear(wb);
  s.raw_input = gamma_encode(demosaiced);
  s.rgb_target = synth_isp_render(demosaiced);
  return s;
}

// Derives the flow input from a frame the same way training data is built.
inline Tensor preprocess_frame(const BayerFrame& frame) {
  BayerFrame wb = white_balance(frame);
  return gamma_encode(demosaic_bilinear(wb));
}

}  // namespace ivsp
