#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ivsp/jpeg.hpp"
#include "ivsp/jpeg_sim.hpp"
#include "ivsp/tensor.hpp"

// Baseline sequential JFIF codec, 4:4:4, standard Annex-K quantization and
// Huffman tables. The transform stage runs through the same ops as the
// simulator, so after true rounding the two pipelines agree bit for bit and
// entropy coding is the only difference between them. The encoder is
// byte-exact deterministic; the decoder handles exactly the baseline feature
// set and raises UnsupportedError for progressive/arithmetic/subsampled
// streams.

namespace ivsp {

namespace jpegdet {

// Annex K.3 Huffman specifications (BITS then HUFFVAL).
inline constexpr std::array<uint8_t, 16> kDcLumaBits = {0, 1, 5, 1, 1, 1, 1, 1,
                                                        1, 0, 0, 0, 0, 0, 0, 0};
inline constexpr std::array<uint8_t, 12> kDcValues = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
inline constexpr std::array<uint8_t, 16> kDcChromaBits = {0, 3, 1, 1, 1, 1, 1, 1,
                                                          1, 1, 1, 0, 0, 0, 0, 0};
inline constexpr std::array<uint8_t, 16> kAcLumaBits = {0, 2, 1, 3, 3, 2, 4, 3,
                                                        5, 5, 4, 4, 0, 0, 1, 125};
inline constexpr std::array<uint8_t, 162> kAcLumaValues = {
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61,
    0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xA1, 0x08, 0x23, 0x42, 0xB1, 0xC1, 0x15, 0x52,
    0xD1, 0xF0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0A, 0x16, 0x17, 0x18, 0x19, 0x1A, 0x25,
    0x26, 0x27, 0x28, 0x29, 0x2A, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44, 0x45,
    0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63, 0x64,
    0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A, 0x83,
    0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99,
    0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4, 0xB5, 0xB6,
    0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA, 0xD2, 0xD3,
    0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE1, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7, 0xE8,
    0xE9, 0xEA, 0xF1, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA};
inline constexpr std::array<uint8_t, 16> kAcChromaBits = {0, 2, 1, 2, 4, 4, 3, 4,
                                                          7, 5, 4, 4, 0, 1, 2, 119};
inline constexpr std::array<uint8_t, 162> kAcChromaValues = {
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61,
    0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xA1, 0xB1, 0xC1, 0x09, 0x23, 0x33,
    0x52, 0xF0, 0x15, 0x62, 0x72, 0xD1, 0x0A, 0x16, 0x24, 0x34, 0xE1, 0x25, 0xF1, 0x17, 0x18,
    0x19, 0x1A, 0x26, 0x27, 0x28, 0x29, 0x2A, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3A, 0x43, 0x44,
    0x45, 0x46, 0x47, 0x48, 0x49, 0x4A, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5A, 0x63,
    0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6A, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7A,
    0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8A, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97,
    0x98, 0x99, 0x9A, 0xA2, 0xA3, 0xA4, 0xA5, 0xA6, 0xA7, 0xA8, 0xA9, 0xAA, 0xB2, 0xB3, 0xB4,
    0xB5, 0xB6, 0xB7, 0xB8, 0xB9, 0xBA, 0xC2, 0xC3, 0xC4, 0xC5, 0xC6, 0xC7, 0xC8, 0xC9, 0xCA,
    0xD2, 0xD3, 0xD4, 0xD5, 0xD6, 0xD7, 0xD8, 0xD9, 0xDA, 0xE2, 0xE3, 0xE4, 0xE5, 0xE6, 0xE7,
    0xE8, 0xE9, 0xEA, 0xF2, 0xF3, 0xF4, 0xF5, 0xF6, 0xF7, 0xF8, 0xF9, 0xFA};

struct HuffCode {
  uint16_t code = 0;
  uint8_t length = 0;
};

// canonical code assignment from a BITS/HUFFVAL specification
inline std::array<HuffCode, 256> build_encode_table(const uint8_t* bits, const uint8_t* values) {
  std::array<HuffCode, 256> table{};
  uint16_t code = 0;
  size_t vi = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < bits[len - 1]; ++i) {
      table[values[vi]] = {code, static_cast<uint8_t>(len)};
      ++code;
      ++vi;
    }
    code = static_cast<uint16_t>(code << 1);
  }
  return table;
}

struct BitWriter {
  std::vector<uint8_t>& out;
  uint32_t bits = 0;
  int count = 0;

  explicit BitWriter(std::vector<uint8_t>& o) : out(o) {}

  void put(uint16_t code, int length) {
    bits = (bits << length) | code;
    count += length;
    while (count >= 8) {
      count -= 8;
      uint8_t b = static_cast<uint8_t>((bits >> count) & 0xFF);
      out.push_back(b);
      if (b == 0xFF) out.push_back(0x00);  // byte stuffing
    }
  }

  void flush() {
    if (count > 0) put(static_cast<uint16_t>((1 << (8 - count)) - 1), 8 - count);  // pad with 1s
  }
};

inline void write_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v & 0xFF));
}

inline void write_marker(std::vector<uint8_t>& out, uint8_t id, uint16_t length) {
  out.push_back(0xFF);
  out.push_back(id);
  write_u16(out, length);
}

// magnitude category plus the extended bit pattern for a nonzero value
inline std::pair<int, uint16_t> magnitude_bits(int v) {
  int a = v < 0 ? -v : v;
  int s = 0;
  while (a) {
    ++s;
    a >>= 1;
  }
  uint16_t pattern = static_cast<uint16_t>(v >= 0 ? v : v + (1 << s) - 1);
  return {s, pattern};
}

}  // namespace jpegdet

// Quantized DCT coefficients via the simulator's transform ops with true
// rounding. hp/wp return the 8-aligned extents.
inline std::vector<int> codec_quantized_coefficients(const Tensor& rgb, const JpegConfig& cfg,
                                                     int64_t& hp, int64_t& wp) {
  if (rgb.rank() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3)
    throw ShapeError("codec_encode expects a (1,3,H,W) tensor, got " + shape_str(rgb.shape()));
  rgb.check_finite("codec_encode input");

  // file-boundary clamp; a no-op for inputs already in [0,1]
  Tensor clamped(rgb.shape());
  for (int64_t i = 0; i < rgb.numel(); ++i)
    clamped.raw()[i] = std::clamp(rgb.raw()[i], 0.0f, 1.0f);

  Tensor ycc = detail::channel_transform(scalar_mul(clamped, 255.0f), kRgbToYcc, kRgbToYccBias);
  DctBlockGrid grid = pad_to_blocks(ycc);
  hp = grid.padded.dim(2);
  wp = grid.padded.dim(3);
  Tensor recip = detail::tile_tables(cfg, 1, 3, hp, wp, /*reciprocal=*/true);
  Tensor coeff = hadamard_mul(blockdct8(grid.padded), recip);

  std::vector<int> quant(static_cast<size_t>(coeff.numel()));
  for (int64_t i = 0; i < coeff.numel(); ++i)
    quant[static_cast<size_t>(i)] = static_cast<int>(std::lround(coeff.raw()[i]));
  return quant;
}

inline std::vector<uint8_t> codec_encode(const Tensor& rgb, const JpegConfig& cfg) {
  const int64_t h = rgb.dim(2), w = rgb.dim(3);
  if (h > 65535 || w > 65535) throw ShapeError("image too large for JPEG");
  int64_t hp = 0, wp = 0;
  std::vector<int> quant = codec_quantized_coefficients(rgb, cfg, hp, wp);

  std::vector<uint8_t> out;
  out.push_back(0xFF);
  out.push_back(0xD8);  // SOI

  // APP0 / JFIF 1.01, aspect-ratio density 1x1, no thumbnail
  jpegdet::write_marker(out, 0xE0, 16);
  for (uint8_t c : {'J', 'F', 'I', 'F', '\0'}) out.push_back(c);
  out.push_back(1);
  out.push_back(1);
  out.push_back(0);
  jpegdet::write_u16(out, 1);
  jpegdet::write_u16(out, 1);
  out.push_back(0);
  out.push_back(0);

  // DQT, both tables in zigzag order
  jpegdet::write_marker(out, 0xDB, 2 + 2 * 65);
  out.push_back(0x00);
  for (int i = 0; i < 64; ++i)
    out.push_back(
        static_cast<uint8_t>(cfg.luma_table[static_cast<size_t>(kZigzag[static_cast<size_t>(i)])]));
  out.push_back(0x01);
  for (int i = 0; i < 64; ++i)
    out.push_back(static_cast<uint8_t>(
        cfg.chroma_table[static_cast<size_t>(kZigzag[static_cast<size_t>(i)])]));

  // SOF0: baseline, 8-bit, three components, 4:4:4
  jpegdet::write_marker(out, 0xC0, 8 + 3 * 3);
  out.push_back(8);
  jpegdet::write_u16(out, static_cast<uint16_t>(h));
  jpegdet::write_u16(out, static_cast<uint16_t>(w));
  out.push_back(3);
  for (int comp = 0; comp < 3; ++comp) {
    out.push_back(static_cast<uint8_t>(comp + 1));
    out.push_back(0x11);
    out.push_back(comp == 0 ? 0 : 1);
  }

  // DHT: all four standard tables in one segment
  jpegdet::write_marker(out, 0xC4,
                        static_cast<uint16_t>(2 + (1 + 16 + 12) * 2 + (1 + 16 + 162) * 2));
  auto emit_table = [&](uint8_t cls_id, const uint8_t* bits, const uint8_t* values, size_t count) {
    out.push_back(cls_id);
    for (int i = 0; i < 16; ++i) out.push_back(bits[i]);
    for (size_t i = 0; i < count; ++i) out.push_back(values[i]);
  };
  emit_table(0x00, jpegdet::kDcLumaBits.data(), jpegdet::kDcValues.data(), 12);
  emit_table(0x10, jpegdet::kAcLumaBits.data(), jpegdet::kAcLumaValues.data(), 162);
  emit_table(0x01, jpegdet::kDcChromaBits.data(), jpegdet::kDcValues.data(), 12);
  emit_table(0x11, jpegdet::kAcChromaBits.data(), jpegdet::kAcChromaValues.data(), 162);

  // SOS
  jpegdet::write_marker(out, 0xDA, 2 + 1 + 2 * 3 + 3);
  out.push_back(3);
  out.push_back(1);
  out.push_back(0x00);
  out.push_back(2);
  out.push_back(0x11);
  out.push_back(3);
  out.push_back(0x11);
  out.push_back(0);
  out.push_back(63);
  out.push_back(0);

  auto dc_luma =
      jpegdet::build_encode_table(jpegdet::kDcLumaBits.data(), jpegdet::kDcValues.data());
  auto ac_luma =
      jpegdet::build_encode_table(jpegdet::kAcLumaBits.data(), jpegdet::kAcLumaValues.data());
  auto dc_chroma =
      jpegdet::build_encode_table(jpegdet::kDcChromaBits.data(), jpegdet::kDcValues.data());
  auto ac_chroma =
      jpegdet::build_encode_table(jpegdet::kAcChromaBits.data(), jpegdet::kAcChromaValues.data());

  jpegdet::BitWriter bw(out);
  std::array<int, 3> prev_dc{0, 0, 0};

  for (int64_t by = 0; by < hp; by += 8)
    for (int64_t bx = 0; bx < wp; bx += 8)
      for (int comp = 0; comp < 3; ++comp) {
        const int* plane = quant.data() + comp * hp * wp;
        const auto& dc_tab = comp == 0 ? dc_luma : dc_chroma;
        const auto& ac_tab = comp == 0 ? ac_luma : ac_chroma;

        int zz[64];
        for (int i = 0; i < 64; ++i) {
          int nat = kZigzag[static_cast<size_t>(i)];
          zz[i] = plane[(by + nat / 8) * wp + bx + nat % 8];
        }

        int diff = zz[0] - prev_dc[static_cast<size_t>(comp)];
        prev_dc[static_cast<size_t>(comp)] = zz[0];
        auto [ds, dbits] = jpegdet::magnitude_bits(diff);
        bw.put(dc_tab[static_cast<size_t>(ds)].code, dc_tab[static_cast<size_t>(ds)].length);
        if (ds) bw.put(dbits, ds);

        int last_nonzero = 0;
        for (int i = 63; i >= 1; --i)
          if (zz[i]) {
            last_nonzero = i;
            break;
          }
        int run = 0;
        for (int i = 1; i <= last_nonzero; ++i) {
          if (zz[i] == 0) {
            ++run;
            continue;
          }
          while (run >= 16) {
            bw.put(ac_tab[0xF0].code, ac_tab[0xF0].length);  // ZRL
            run -= 16;
          }
          auto [s, bits] = jpegdet::magnitude_bits(zz[i]);
          uint8_t symbol = static_cast<uint8_t>((run << 4) | s);
          if (ac_tab[symbol].length == 0) throw NumericError("coefficient out of coding range");
          bw.put(ac_tab[symbol].code, ac_tab[symbol].length);
          bw.put(bits, s);
          run = 0;
        }
        if (last_nonzero < 63) bw.put(ac_tab[0x00].code, ac_tab[0x00].length);  // EOB
      }
  bw.flush();

  out.push_back(0xFF);
  out.push_back(0xD9);  // EOI
  return out;
}

namespace jpegdet {

struct DecodeHuff {
  // canonical decode: code range and value offset per code length
  std::array<int32_t, 17> min_code{};
  std::array<int32_t, 17> max_code{};
  std::array<int32_t, 17> val_offset{};
  std::vector<uint8_t> values;
  bool present = false;
};

inline DecodeHuff build_decode_table(const uint8_t* bits, const std::vector<uint8_t>& values) {
  DecodeHuff h;
  h.values = values;
  h.present = true;
  int32_t code = 0;
  size_t vi = 0;
  for (int len = 1; len <= 16; ++len) {
    if (bits[len - 1] == 0) {
      h.min_code[static_cast<size_t>(len)] = 0;
      h.max_code[static_cast<size_t>(len)] = -1;
    } else {
      h.min_code[static_cast<size_t>(len)] = code;
      h.val_offset[static_cast<size_t>(len)] = static_cast<int32_t>(vi) - code;
      code += bits[len - 1];
      vi += bits[len - 1];
      h.max_code[static_cast<size_t>(len)] = code - 1;
    }
    code <<= 1;
  }
  return h;
}

struct BitReader {
  const std::vector<uint8_t>& data;
  size_t pos;
  uint32_t bits = 0;
  int count = 0;

  BitReader(const std::vector<uint8_t>& d, size_t p) : data(d), pos(p) {}

  int next_bit() {
    if (count == 0) {
      if (pos >= data.size()) throw DataError("JPEG entropy stream truncated");
      uint8_t b = data[pos++];
      if (b == 0xFF) {
        if (pos >= data.size()) throw DataError("JPEG entropy stream truncated at marker");
        uint8_t m = data[pos++];
        if (m == 0x00) {
          // stuffed byte, b stays 0xFF
        } else if (m == 0xD9) {
          throw DataError("JPEG entropy stream ended before all blocks were decoded");
        } else if (m >= 0xD0 && m <= 0xD7) {
          throw UnsupportedError("restart markers are not supported");
        } else {
          throw DataError("unexpected marker inside entropy stream");
        }
      }
      bits = b;
      count = 8;
    }
    --count;
    return (bits >> count) & 1;
  }

  int receive(int length) {
    int v = 0;
    for (int i = 0; i < length; ++i) v = (v << 1) | next_bit();
    return v;
  }

  int decode_symbol(const DecodeHuff& h) {
    int32_t code = next_bit();
    for (int len = 1; len <= 16; ++len) {
      if (h.max_code[static_cast<size_t>(len)] >= 0 &&
          code <= h.max_code[static_cast<size_t>(len)])
        return h.values[static_cast<size_t>(h.val_offset[static_cast<size_t>(len)] + code)];
      code = (code << 1) | next_bit();
    }
    throw DataError("invalid Huffman code in entropy stream");
  }
};

inline int extend_value(int v, int s) { return v < (1 << (s - 1)) ? v - (1 << s) + 1 : v; }

}  // namespace jpegdet

inline Tensor codec_decode(const std::vector<uint8_t>& bytes) {
  using namespace jpegdet;
  if (bytes.size() < 4 || bytes[0] != 0xFF || bytes[1] != 0xD8)
    throw DataError("not a JPEG stream (missing SOI)");

  std::array<std::array<int, 64>, 4> qtables{};
  std::array<bool, 4> qpresent{};
  std::array<DecodeHuff, 4> dc_tables, ac_tables;

  int64_t height = 0, width = 0;
  int ncomp = 0;
  struct Comp {
    int id = 0, qtab = 0, dc = 0, ac = 0;
  };
  std::array<Comp, 3> comps;
  bool have_sof = false;

  size_t pos = 2;
  auto need = [&](size_t n) {
    if (pos + n > bytes.size()) throw DataError("truncated JPEG stream");
  };
  auto read_u16_at = [&](size_t p) { return (static_cast<int>(bytes[p]) << 8) | bytes[p + 1]; };

  size_t scan_start = 0;
  while (scan_start == 0) {
    need(2);
    if (bytes[pos] != 0xFF) throw DataError("malformed JPEG marker segment");
    uint8_t marker = bytes[pos + 1];
    pos += 2;
    if (marker == 0xD8) continue;
    if (marker == 0xD9) throw DataError("JPEG stream has no scan data");
    if (marker == 0x01 || (marker >= 0xD0 && marker <= 0xD7)) continue;  // standalone

    need(2);
    size_t seg_len = static_cast<size_t>(read_u16_at(pos));
    if (seg_len < 2) throw DataError("malformed JPEG segment length");
    need(seg_len);
    size_t seg_end = pos + seg_len;
    size_t p = pos + 2;

    switch (marker) {
      case 0xDB: {  // DQT
        while (p < seg_end) {
          uint8_t pq_tq = bytes[p++];
          int precision = pq_tq >> 4, id = pq_tq & 0x0F;
          if (precision != 0) throw UnsupportedError("16-bit quantization tables not supported");
          if (id > 3) throw DataError("bad quantization table id");
          if (p + 64 > seg_end) throw DataError("truncated quantization table");
          for (int i = 0; i < 64; ++i)
            qtables[static_cast<size_t>(id)]
                   [static_cast<size_t>(kZigzag[static_cast<size_t>(i)])] =
                       bytes[p + static_cast<size_t>(i)];
          p += 64;
          qpresent[static_cast<size_t>(id)] = true;
        }
        break;
      }
      case 0xC4: {  // DHT
        while (p < seg_end) {
          uint8_t tc_th = bytes[p++];
          int cls = tc_th >> 4, id = tc_th & 0x0F;
          if (cls > 1 || id > 3) throw DataError("bad Huffman table spec");
          if (p + 16 > seg_end) throw DataError("truncated Huffman table");
          std::array<uint8_t, 16> bits_spec;
          size_t total = 0;
          for (int i = 0; i < 16; ++i) {
            bits_spec[static_cast<size_t>(i)] = bytes[p + static_cast<size_t>(i)];
            total += bits_spec[static_cast<size_t>(i)];
          }
          p += 16;
          if (p + total > seg_end) throw DataError("truncated Huffman table values");
          std::vector<uint8_t> values(bytes.begin() + static_cast<long>(p),
                                      bytes.begin() + static_cast<long>(p + total));
          p += total;
          auto table = build_decode_table(bits_spec.data(), values);
          if (cls == 0)
            dc_tables[static_cast<size_t>(id)] = table;
          else
            ac_tables[static_cast<size_t>(id)] = table;
        }
        break;
      }
      case 0xC0:
      case 0xC1: {  // baseline / extended sequential Huffman SOF
        if (have_sof) throw DataError("multiple SOF segments");
        if (bytes[p] != 8) throw UnsupportedError("only 8-bit precision supported");
        height = read_u16_at(p + 1);
        width = read_u16_at(p + 3);
        ncomp = bytes[p + 5];
        if (height == 0 || width == 0) throw DataError("bad image extents");
        if (ncomp != 1 && ncomp != 3) throw UnsupportedError("only 1 or 3 components supported");
        p += 6;
        for (int i = 0; i < ncomp; ++i) {
          comps[static_cast<size_t>(i)].id = bytes[p];
          if (bytes[p + 1] != 0x11)
            throw UnsupportedError("chroma subsampling not supported (4:4:4 only)");
          comps[static_cast<size_t>(i)].qtab = bytes[p + 2];
          p += 3;
        }
        have_sof = true;
        break;
      }
      case 0xC2:
        throw UnsupportedError("progressive JPEG not supported");
      case 0xC3:
      case 0xC5:
      case 0xC6:
      case 0xC7:
      case 0xC9:
      case 0xCA:
      case 0xCB:
      case 0xCD:
      case 0xCE:
      case 0xCF:
        throw UnsupportedError("unsupported JPEG coding process");
      case 0xDD: {  // DRI
        int interval = read_u16_at(p);
        if (interval != 0) throw UnsupportedError("restart intervals not supported");
        break;
      }
      case 0xDA: {  // SOS
        if (!have_sof) throw DataError("SOS before SOF");
        int ns = bytes[p++];
        if (ns != ncomp) throw UnsupportedError("partial scans not supported");
        for (int i = 0; i < ns; ++i) {
          int cid = bytes[p];
          int tabs = bytes[p + 1];
          bool matched = false;
          for (int c = 0; c < ncomp; ++c)
            if (comps[static_cast<size_t>(c)].id == cid) {
              comps[static_cast<size_t>(c)].dc = tabs >> 4;
              comps[static_cast<size_t>(c)].ac = tabs & 0x0F;
              matched = true;
            }
          if (!matched) throw DataError("scan references unknown component");
          p += 2;
        }
        scan_start = seg_end;  // skip Ss/Se/Ah/Al
        break;
      }
      default:
        break;  // APPn/COM/unknown: skip
    }
    pos = seg_end;
  }

  for (int c = 0; c < ncomp; ++c) {
    const Comp& comp = comps[static_cast<size_t>(c)];
    if (!qpresent[static_cast<size_t>(comp.qtab)])
      throw DataError("scan references missing quantization table");
    if (!dc_tables[static_cast<size_t>(comp.dc)].present ||
        !ac_tables[static_cast<size_t>(comp.ac)].present)
      throw DataError("scan references missing Huffman table");
  }

  const int64_t hp = (height + 7) / 8 * 8, wp = (width + 7) / 8 * 8;

  // entropy-decode quantized coefficients into planar natural order
  Tensor coeff(Shape{1, ncomp, hp, wp});
  Tensor qtile(Shape{1, ncomp, hp, wp});
  for (int c = 0; c < ncomp; ++c) {
    const auto& qt = qtables[static_cast<size_t>(comps[static_cast<size_t>(c)].qtab)];
    float* plane = qtile.raw() + c * hp * wp;
    for (int64_t y = 0; y < hp; ++y)
      for (int64_t x = 0; x < wp; ++x)
        plane[y * wp + x] = static_cast<float>(qt[static_cast<size_t>((y % 8) * 8 + (x % 8))]);
  }

  BitReader br(bytes, scan_start);
  std::array<int, 3> prev_dc{0, 0, 0};
  for (int64_t by = 0; by < hp; by += 8)
    for (int64_t bx = 0; bx < wp; bx += 8)
      for (int c = 0; c < ncomp; ++c) {
        const Comp& comp = comps[static_cast<size_t>(c)];
        const auto& dct_tab = dc_tables[static_cast<size_t>(comp.dc)];
        const auto& act_tab = ac_tables[static_cast<size_t>(comp.ac)];
        float* plane = coeff.raw() + c * hp * wp;

        int s = br.decode_symbol(dct_tab);
        if (s > 11) throw DataError("invalid DC category");
        int diff = s ? extend_value(br.receive(s), s) : 0;
        prev_dc[static_cast<size_t>(c)] += diff;
        plane[by * wp + bx] = static_cast<float>(prev_dc[static_cast<size_t>(c)]);

        int i = 1;
        while (i < 64) {
          int rs = br.decode_symbol(act_tab);
          int run = rs >> 4, size = rs & 0x0F;
          if (size == 0) {
            if (run == 15) {
              i += 16;  // ZRL
              continue;
            }
            break;  // EOB
          }
          i += run;
          if (i > 63) throw DataError("AC run overflows block");
          int nat = kZigzag[static_cast<size_t>(i)];
          plane[(by + nat / 8) * wp + bx + nat % 8] =
              static_cast<float>(extend_value(br.receive(size), size));
          ++i;
        }
      }

  // decode transform mirrors the simulator's exact mode bit for bit:
  // dequantize, IDCT, then 8-bit sample staging before the color transform
  Tensor spatial = quantize_samples_u8(blockidct8(hadamard_mul(coeff, qtile)));
  DctBlockGrid grid{spatial, height, width};
  Tensor cropped = unpad(grid);

  Tensor out(Shape{1, 3, height, width});
  auto to_u8 = [](float v) {
    return static_cast<float>(std::clamp<long>(std::lround(v), 0, 255)) / 255.0f;
  };
  if (ncomp == 3) {
    Tensor rgb255 = detail::channel_transform(cropped, kYccToRgb, kYccToRgbBias);
    for (int64_t i = 0; i < rgb255.numel(); ++i) out.raw()[i] = to_u8(rgb255.raw()[i]);
  } else {
    for (int64_t i = 0; i < height * width; ++i) {
      float g = to_u8(cropped.raw()[i] + 128.0f);
      out.raw()[i] = g;
      out.raw()[height * width + i] = g;
      out.raw()[2 * height * width + i] = g;
    }
  }
  return out;
}

}  // namespace ivsp
