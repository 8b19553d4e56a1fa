#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "ivsp/flow.hpp"

// Checkpoint container: "IVSP" magic, u32 version, u32 block count, then one
// record per parameter: u32 name length, name bytes, u32 rank, u32 extents,
// float32 little-endian payload. All integers little-endian.

namespace ivsp {

namespace detail {

inline void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool read_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

inline void write_f32(std::ostream& os, float f) {
  uint32_t v;
  std::memcpy(&v, &f, 4);
  write_u32(os, v);
}

inline bool read_f32(std::istream& is, float& f) {
  uint32_t v;
  if (!read_u32(is, v)) return false;
  std::memcpy(&f, &v, 4);
  return true;
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const FlowModel& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write("IVSP", 4);
  detail::write_u32(os, kCheckpointVersion);
  detail::write_u32(os, static_cast<uint32_t>(model.block_count()));
  for (const NamedParam& np : model.named_parameters()) {
    detail::write_u32(os, static_cast<uint32_t>(np.name.size()));
    os.write(np.name.data(), static_cast<std::streamsize>(np.name.size()));
    detail::write_u32(os, static_cast<uint32_t>(np.tensor.rank()));
    for (int64_t e : np.tensor.shape()) detail::write_u32(os, static_cast<uint32_t>(e));
    for (float v : np.tensor.data()) detail::write_f32(os, v);
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline std::vector<CheckpointRecord> read_checkpoint_records(const std::string& path,
                                                             uint32_t& block_count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "IVSP")
    throw DataError("not a checkpoint file (bad magic): " + path);
  uint32_t version;
  if (!detail::read_u32(is, version) || version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version in " + path);
  if (!detail::read_u32(is, block_count)) throw DataError("truncated checkpoint: " + path);
  std::vector<CheckpointRecord> records;
  while (true) {
    uint32_t name_len;
    if (!detail::read_u32(is, name_len)) break;  // clean EOF
    CheckpointRecord rec;
    rec.name.resize(name_len);
    if (!is.read(rec.name.data(), name_len)) throw DataError("truncated checkpoint: " + path);
    uint32_t rank;
    if (!detail::read_u32(is, rank)) throw DataError("truncated checkpoint: " + path);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      uint32_t e;
      if (!detail::read_u32(is, e)) throw DataError("truncated checkpoint: " + path);
      rec.shape.push_back(static_cast<int64_t>(e));
      numel *= e;
    }
    rec.data.resize(static_cast<size_t>(numel));
    for (float& v : rec.data)
      if (!detail::read_f32(is, v)) throw DataError("truncated checkpoint: " + path);
    records.push_back(std::move(rec));
  }
  return records;
}

// Rebuilds the architecture implied by the records, then validates every
// parameter name and shape against it before accepting any payload.
inline FlowModel load_checkpoint(const std::string& path) {
  uint32_t block_count = 0;
  auto records = read_checkpoint_records(path, block_count);
  if (records.empty()) throw DataError("checkpoint has no parameters: " + path);

  FlowOptions opt;
  opt.blocks = block_count;
  bool found = false;
  for (const auto& rec : records) {
    if (rec.name == "block0.coupling.r.conv1.weight") {
      if (rec.shape.size() != 4) throw DataError("malformed checkpoint record " + rec.name);
      opt.hidden = rec.shape[0];
      found = true;
    }
    if (rec.name == "block0.invconv.weight") {
      if (rec.shape.size() != 2) throw DataError("malformed checkpoint record " + rec.name);
      opt.channels = rec.shape[0];
    }
    if (rec.name == "block0.coupling.s.conv1.weight") {
      if (rec.shape.size() != 4) throw DataError("malformed checkpoint record " + rec.name);
      opt.split = rec.shape[1];
    }
  }
  if (!found) throw DataError("checkpoint lacks block0 records: " + path);

  FlowModel model(opt);
  auto params = model.named_parameters();
  if (params.size() != records.size())
    throw DataError("checkpoint parameter count " + std::to_string(records.size()) +
                    " does not match architecture (" + std::to_string(params.size()) + ")");
  for (size_t i = 0; i < params.size(); ++i) {
    if (records[i].name != params[i].name)
      throw DataError("checkpoint parameter " + records[i].name + " does not match expected " +
                      params[i].name);
    if (records[i].shape != params[i].tensor.shape())
      throw DataError("checkpoint shape mismatch for " + records[i].name + ": got " +
                      shape_str(records[i].shape) + ", architecture wants " +
                      shape_str(params[i].tensor.shape()));
    std::copy(records[i].data.begin(), records[i].data.end(), params[i].tensor.raw());
  }
  return model;
}

}  // namespace ivsp
