#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ivsp/bayer.hpp"
#include "ivsp/tensor.hpp"

// File formats at the pipeline boundary: the Bayer container (16-bit
// big-endian PGM plus a JSON sidecar with pattern/bit depth/white balance),
// 8-bit PPM, and a minimal PNG (truecolor 8/16-bit, stored-deflate) for the
// lossless intermediate. PNG output is standard-readable; the reader only
// accepts what the writer produces.

namespace ivsp {

inline std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open file: " + path);
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(is), {});
}

inline void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open file for writing: " + path);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed: " + path);
}

inline std::string sidecar_path(const std::string& pgm_path) {
  std::filesystem::path p(pgm_path);
  p.replace_extension(".json");
  return p.string();
}

// ---- Bayer container -------------------------------------------------------

inline void write_bayer_container(const BayerFrame& frame, const std::string& pgm_path) {
  frame.validate();
  const int64_t peak = (int64_t{1} << frame.bit_depth) - 1;
  std::ofstream os(pgm_path, std::ios::binary);
  if (!os) throw DataError("cannot open file for writing: " + pgm_path);
  os << "P5\n" << frame.width << " " << frame.height << "\n" << peak << "\n";
  for (float v : frame.mosaic) {
    auto level = static_cast<uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * peak));
    os.put(static_cast<char>(level >> 8));
    os.put(static_cast<char>(level & 0xFF));
  }
  if (!os) throw DataError("write failed: " + pgm_path);

  nlohmann::json meta;
  meta["pattern"] = pattern_name(frame.pattern);
  meta["bit_depth"] = frame.bit_depth;
  meta["wb_gains"] = {frame.wb_gains[0], frame.wb_gains[1], frame.wb_gains[2]};
  std::ofstream js(sidecar_path(pgm_path));
  if (!js) throw DataError("cannot open sidecar for writing: " + sidecar_path(pgm_path));
  js << meta.dump(2) << "\n";
}

namespace detail {

inline int pnm_next_int(std::istream& is) {
  // skips whitespace and '#' comments per PNM convention
  while (true) {
    int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v;
  if (!(is >> v)) throw DataError("malformed PNM header");
  return v;
}

}  // namespace detail

inline BayerFrame read_bayer_container(const std::string& pgm_path) {
  std::ifstream is(pgm_path, std::ios::binary);
  if (!is) throw DataError("cannot open Bayer container: " + pgm_path);
  std::string magic;
  is >> magic;
  if (magic != "P5") throw DataError("Bayer container must be a P5 PGM: " + pgm_path);
  int64_t w = detail::pnm_next_int(is);
  int64_t h = detail::pnm_next_int(is);
  int64_t maxval = detail::pnm_next_int(is);
  is.get();  // single whitespace after maxval
  if (maxval < 256 || maxval > 65535)
    throw DataError("Bayer container must be 16-bit (maxval 256..65535)");

  std::string side = sidecar_path(pgm_path);
  if (!std::filesystem::exists(side))
    throw DataError("missing sidecar JSON for Bayer container: " + side);
  nlohmann::json meta;
  {
    std::ifstream js(side);
    try {
      js >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed sidecar JSON " + side + ": " + e.what());
    }
  }
  if (!meta.contains("pattern") || !meta.contains("bit_depth") || !meta.contains("wb_gains"))
    throw DataError("sidecar JSON must declare pattern, bit_depth and wb_gains: " + side);

  BayerFrame frame(h, w, pattern_from_name(meta["pattern"].get<std::string>()),
                   meta["bit_depth"].get<int>());
  auto gains = meta["wb_gains"];
  if (!gains.is_array() || gains.size() != 3)
    throw DataError("wb_gains must be an array of three floats: " + side);
  for (size_t i = 0; i < 3; ++i) frame.wb_gains[i] = gains[i].get<float>();

  const int64_t declared_peak = (int64_t{1} << frame.bit_depth) - 1;
  if (maxval != declared_peak)
    throw DataError("PGM maxval does not match sidecar bit depth in " + pgm_path);
  std::vector<uint8_t> raw(static_cast<size_t>(h * w * 2));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DataError("truncated Bayer container: " + pgm_path);
  for (int64_t i = 0; i < h * w; ++i) {
    uint16_t level = static_cast<uint16_t>((raw[static_cast<size_t>(2 * i)] << 8) |
                                           raw[static_cast<size_t>(2 * i + 1)]);
    if (level > declared_peak) throw DataError("sample exceeds declared bit depth");
    frame.mosaic[static_cast<size_t>(i)] =
        static_cast<float>(level) / static_cast<float>(declared_peak);
  }
  frame.validate();
  return frame;
}

// ---- PPM (8-bit RGB) -------------------------------------------------------

inline void write_ppm(const Tensor& rgb, const std::string& path) {
  if (rgb.rank() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3)
    throw ShapeError("write_ppm expects (1,3,H,W)");
  int64_t h = rgb.dim(2), w = rgb.dim(3);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open file for writing: " + path);
  os << "P6\n" << w << " " << h << "\n255\n";
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        float v = rgb.raw()[c * h * w + y * w + x];
        os.put(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
      }
  if (!os) throw DataError("write failed: " + path);
}

inline Tensor read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open file: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw DataError("not a P6 PPM: " + path);
  int64_t w = detail::pnm_next_int(is);
  int64_t h = detail::pnm_next_int(is);
  int64_t maxval = detail::pnm_next_int(is);
  if (maxval != 255) throw DataError("only 8-bit PPM supported: " + path);
  is.get();
  std::vector<uint8_t> raw(static_cast<size_t>(h * w * 3));
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw DataError("truncated PPM: " + path);
  Tensor out(Shape{1, 3, h, w});
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c)
        out.raw()[c * h * w + y * w + x] =
            static_cast<float>(raw[static_cast<size_t>((y * w + x) * 3 + c)]) / 255.0f;
  return out;
}

// ---- PNG (truecolor, stored deflate) ----------------------------------------

namespace detail {

inline uint32_t crc32_update(uint32_t crc, const uint8_t* data, size_t len) {
  static const auto table = [] {
    std::array<uint32_t, 256> t{};
    for (uint32_t n = 0; n < 256; ++n) {
      uint32_t c = n;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[n] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline void push_u32be(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back(static_cast<uint8_t>(x >> 24));
  v.push_back(static_cast<uint8_t>(x >> 16));
  v.push_back(static_cast<uint8_t>(x >> 8));
  v.push_back(static_cast<uint8_t>(x));
}

inline void png_chunk(std::vector<uint8_t>& out, const char* type,
                      const std::vector<uint8_t>& data) {
  push_u32be(out, static_cast<uint32_t>(data.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32_update(0, out.data() + start, out.size() - start);
  push_u32be(out, crc);
}

inline uint32_t adler32(const std::vector<uint8_t>& data) {
  uint32_t a = 1, b = 0;
  for (uint8_t byte : data) {
    a = (a + byte) % 65521;
    b = (b + a) % 65521;
  }
  return (b << 16) | a;
}

}  // namespace detail

// 8- or 16-bit truecolor PNG, filter None, stored (uncompressed) deflate
// blocks. Any standard decoder reads these.
inline std::vector<uint8_t> encode_png(const Tensor& rgb, int bit_depth = 8) {
  if (rgb.rank() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3)
    throw ShapeError("encode_png expects (1,3,H,W)");
  if (bit_depth != 8 && bit_depth != 16) throw DataError("PNG bit depth must be 8 or 16");
  const int64_t h = rgb.dim(2), w = rgb.dim(3);
  const int bytes_per_sample = bit_depth / 8;
  const float peak = bit_depth == 8 ? 255.0f : 65535.0f;

  std::vector<uint8_t> filtered;
  filtered.reserve(static_cast<size_t>(h * (1 + w * 3 * bytes_per_sample)));
  for (int64_t y = 0; y < h; ++y) {
    filtered.push_back(0);  // filter: None
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        float v = std::clamp(rgb.raw()[c * h * w + y * w + x], 0.0f, 1.0f);
        auto level = static_cast<uint32_t>(std::lround(v * peak));
        if (bit_depth == 16) filtered.push_back(static_cast<uint8_t>(level >> 8));
        filtered.push_back(static_cast<uint8_t>(level & 0xFF));
      }
  }

  // zlib wrapper around stored deflate blocks
  std::vector<uint8_t> zlib;
  zlib.push_back(0x78);
  zlib.push_back(0x01);
  size_t off = 0;
  while (off < filtered.size() || filtered.empty()) {
    size_t chunk = std::min<size_t>(65535, filtered.size() - off);
    bool final = off + chunk == filtered.size();
    zlib.push_back(final ? 1 : 0);
    zlib.push_back(static_cast<uint8_t>(chunk & 0xFF));
    zlib.push_back(static_cast<uint8_t>(chunk >> 8));
    zlib.push_back(static_cast<uint8_t>(~chunk & 0xFF));
    zlib.push_back(static_cast<uint8_t>((~chunk >> 8) & 0xFF));
    zlib.insert(zlib.end(), filtered.begin() + static_cast<long>(off),
                filtered.begin() + static_cast<long>(off + chunk));
    off += chunk;
    if (final) break;
  }
  detail::push_u32be(zlib, detail::adler32(filtered));

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<uint8_t> ihdr;
  detail::push_u32be(ihdr, static_cast<uint32_t>(w));
  detail::push_u32be(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(static_cast<uint8_t>(bit_depth));
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  detail::png_chunk(out, "IHDR", ihdr);
  detail::png_chunk(out, "IDAT", zlib);
  detail::png_chunk(out, "IEND", {});
  return out;
}

inline Tensor decode_png(const std::vector<uint8_t>& bytes) {
  static const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (bytes.size() < 8 || !std::equal(sig, sig + 8, bytes.begin()))
    throw DataError("not a PNG stream");
  size_t pos = 8;
  int64_t w = 0, h = 0;
  int bit_depth = 0;
  std::vector<uint8_t> idat;
  bool seen_ihdr = false, seen_iend = false;
  auto u32be = [&](size_t p) {
    return (static_cast<uint32_t>(bytes[p]) << 24) | (static_cast<uint32_t>(bytes[p + 1]) << 16) |
           (static_cast<uint32_t>(bytes[p + 2]) << 8) | bytes[p + 3];
  };
  while (pos + 12 <= bytes.size() && !seen_iend) {
    uint32_t len = u32be(pos);
    std::string type(bytes.begin() + static_cast<long>(pos) + 4,
                     bytes.begin() + static_cast<long>(pos) + 8);
    if (pos + 12 + len > bytes.size()) throw DataError("truncated PNG chunk");
    const uint8_t* data = bytes.data() + pos + 8;
    if (type == "IHDR") {
      w = u32be(pos + 8);
      h = u32be(pos + 12);
      bit_depth = data[8];
      if (data[9] != 2) throw UnsupportedError("only truecolor PNG supported");
      if (bit_depth != 8 && bit_depth != 16)
        throw UnsupportedError("only 8/16-bit PNG supported");
      if (data[12] != 0) throw UnsupportedError("interlaced PNG not supported");
      seen_ihdr = true;
    } else if (type == "IDAT") {
      idat.insert(idat.end(), data, data + len);
    } else if (type == "IEND") {
      seen_iend = true;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || idat.size() < 2) throw DataError("PNG missing IHDR or IDAT");

  // stored-deflate zlib only (what encode_png writes)
  if ((idat[0] & 0x0F) != 8) throw UnsupportedError("unsupported zlib compression method");
  size_t zp = 2;
  std::vector<uint8_t> raw;
  while (true) {
    if (zp + 5 > idat.size()) throw DataError("truncated PNG deflate stream");
    uint8_t header = idat[zp];
    if ((header & 0x06) != 0)
      throw UnsupportedError("compressed PNG data not supported (stored blocks only)");
    uint32_t len = idat[zp + 1] | (static_cast<uint32_t>(idat[zp + 2]) << 8);
    zp += 5;
    if (zp + len > idat.size()) throw DataError("truncated PNG stored block");
    raw.insert(raw.end(), idat.begin() + static_cast<long>(zp),
               idat.begin() + static_cast<long>(zp + len));
    zp += len;
    if (header & 1) break;
  }

  const int bytes_per_sample = bit_depth / 8;
  const size_t stride = 1 + static_cast<size_t>(w) * 3 * static_cast<size_t>(bytes_per_sample);
  if (raw.size() < stride * static_cast<size_t>(h)) throw DataError("PNG pixel data truncated");
  Tensor out(Shape{1, 3, h, w});
  const float peak = bit_depth == 8 ? 255.0f : 65535.0f;
  for (int64_t y = 0; y < h; ++y) {
    const uint8_t* row = raw.data() + static_cast<size_t>(y) * stride;
    if (row[0] != 0) throw UnsupportedError("filtered PNG rows not supported");
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        const uint8_t* px = row + 1 + (x * 3 + c) * bytes_per_sample;
        uint32_t level = bytes_per_sample == 2
                             ? (static_cast<uint32_t>(px[0]) << 8) | px[1]
                             : px[0];
        out.raw()[c * h * w + y * w + x] = static_cast<float>(level) / peak;
      }
  }
  return out;
}

inline void write_png(const Tensor& rgb, const std::string& path, int bit_depth = 8) {
  write_file_bytes(path, encode_png(rgb, bit_depth));
}

inline Tensor read_png(const std::string& path) { return decode_png(read_file_bytes(path)); }

}  // namespace ivsp
