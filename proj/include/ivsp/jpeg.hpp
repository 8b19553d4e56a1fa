#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>

#include "ivsp/tensor.hpp"

// Shared JPEG machinery: quality-scaled quantization tables, zigzag order
// and the orthonormal 8x8 DCT basis. Used by both the differentiable
// simulator and the baseline file codec so the two stay in lockstep.

namespace ivsp {

// ITU T.81 Annex K.1 base tables.
inline constexpr std::array<int, 64> kBaseLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,   //
    12, 12, 14, 19, 26,  58,  60,  55,   //
    14, 13, 16, 24, 40,  57,  69,  56,   //
    14, 17, 22, 29, 51,  87,  80,  62,   //
    18, 22, 37, 56, 68,  109, 103, 77,   //
    24, 35, 55, 64, 81,  104, 113, 92,   //
    49, 64, 78, 87, 103, 121, 120, 101,  //
    72, 92, 95, 98, 112, 100, 103, 99};

inline constexpr std::array<int, 64> kBaseChromaTable = {
    17, 18, 24, 47, 99, 99, 99, 99,  //
    18, 21, 26, 66, 99, 99, 99, 99,  //
    24, 26, 56, 99, 99, 99, 99, 99,  //
    47, 66, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99,  //
    99, 99, 99, 99, 99, 99, 99, 99};

// kZigzag[i] = row-major index of the i-th coefficient in zigzag order
inline constexpr std::array<int, 64> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10,  //
    17, 24, 32, 25, 18, 11, 4,  5,   //
    12, 19, 26, 33, 40, 48, 41, 34,  //
    27, 20, 13, 6,  7,  14, 21, 28,  //
    35, 42, 49, 56, 57, 50, 43, 36,  //
    29, 22, 15, 23, 30, 37, 44, 51,  //
    58, 59, 52, 45, 38, 31, 39, 46,  //
    53, 60, 61, 54, 47, 55, 62, 63};

// scale = 5000/Q below 50, else 200 - 2Q; entry = clamp((base*scale+50)/100, 1, 255)
inline std::array<int, 64> scale_quant_table(const std::array<int, 64>& base, int quality) {
  if (quality < 1 || quality > 100) throw DataError("JPEG quality must be in [1,100]");
  int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::array<int, 64> out{};
  for (int i = 0; i < 64; ++i) {
    int v = (base[static_cast<size_t>(i)] * scale + 50) / 100;
    out[static_cast<size_t>(i)] = std::clamp(v, 1, 255);
  }
  return out;
}

// Quality factor, quantization tables and the Fourier rounding term count;
// one config drives the simulator and the file codec.
struct JpegConfig {
  int quality = 90;
  int fourier_terms = 10;  // K
  std::array<int, 64> luma_table;
  std::array<int, 64> chroma_table;

  explicit JpegConfig(int q = 90, int k = 10)
      : quality(q), fourier_terms(k), luma_table(scale_quant_table(kBaseLumaTable, q)),
        chroma_table(scale_quant_table(kBaseChromaTable, q)) {
    if (k < 1) throw DataError("Fourier term count must be >= 1");
  }

  std::string dump_tables() const {
    std::ostringstream os;
    os << "quality " << quality << "\nluma\n";
    for (int i = 0; i < 64; ++i) os << luma_table[static_cast<size_t>(i)] << ((i % 8 == 7) ? '\n' : ' ');
    os << "chroma\n";
    for (int i = 0; i < 64; ++i) os << chroma_table[static_cast<size_t>(i)] << ((i % 8 == 7) ? '\n' : ' ');
    return os.str();
  }
};

// Orthonormal 1-D DCT-II basis: D[u][x] = c_u cos((2x+1)u pi / 16).
inline const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const std::array<std::array<double, 8>, 8> basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    const double pi = 3.14159265358979323846;
    for (int u = 0; u < 8; ++u) {
      double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) b[u][x] = cu * std::cos((2 * x + 1) * u * pi / 16.0);
    }
    return b;
  }();
  return basis;
}

// JFIF (BT.601 full-range) color transform constants. The forward maps
// [0,255] RGB to level-shifted YCbCr (Y-128, Cb-128, Cr-128 built in).
inline constexpr std::array<float, 9> kRgbToYcc = {
    0.299f,     0.587f,     0.114f,       //
    -0.168736f, -0.331264f, 0.5f,         //
    0.5f,       -0.418688f, -0.081312f};
inline constexpr std::array<float, 3> kRgbToYccBias = {-128.0f, 0.0f, 0.0f};

inline constexpr std::array<float, 9> kYccToRgb = {
    1.0f, 0.0f,       1.402f,      //
    1.0f, -0.344136f, -0.714136f,  //
    1.0f, 1.772f,     0.0f};
inline constexpr std::array<float, 3> kYccToRgbBias = {128.0f, 128.0f, 128.0f};

}  // namespace ivsp
