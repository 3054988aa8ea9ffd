#include "mce/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

namespace mce {

namespace {

constexpr std::array<char, 4> kMagic{'M', 'C', 'E', 'C'};

std::uint32_t crc_table_entry(std::uint32_t i) {
  std::uint32_t c = i;
  for (int k = 0; k < 8; ++k) {
    c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
  }
  return c;
}

const std::array<std::uint32_t, 256>& crc_table() {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) t[i] = crc_table_entry(i);
    return t;
  }();
  return table;
}

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  std::vector<unsigned char>& data() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}

  std::size_t remaining() const { return n_ - pos_; }
  std::size_t pos() const { return pos_; }

  std::uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_++]) << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > n_) {
      throw CheckpointTruncatedError("checkpoint ends inside a record (offset " +
                                     std::to_string(pos_) + ")");
    }
  }
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open checkpoint " + path);
  const auto size = in.tellg();
  in.seekg(0);
  std::vector<unsigned char> buf(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw IoError("cannot read checkpoint " + path);
  return buf;
}

struct ParsedHeader {
  CheckpointInfo info;
  std::size_t records_begin;
  std::size_t records_end;
};

ParsedHeader validate_and_parse_header(const std::vector<unsigned char>& buf,
                                       const std::string& path) {
  // 4 magic + 4 version + 8 fingerprint + 8 seed + 4 CRC
  constexpr std::size_t kMinSize = 28;
  if (buf.size() < kMinSize) {
    throw CheckpointTruncatedError("checkpoint " + path + " is only " +
                                   std::to_string(buf.size()) + " bytes");
  }
  if (std::memcmp(buf.data(), kMagic.data(), 4) != 0) {
    throw IoError("checkpoint " + path + " has wrong magic bytes");
  }
  Reader header(buf.data() + 4, buf.size() - 4);
  const std::uint32_t version = header.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint " + path + " has version " +
                                 std::to_string(version) + ", expected " +
                                 std::to_string(kCheckpointVersion));
  }
  const std::uint32_t stored_crc = static_cast<std::uint32_t>(buf[buf.size() - 4]) |
                                   static_cast<std::uint32_t>(buf[buf.size() - 3]) << 8 |
                                   static_cast<std::uint32_t>(buf[buf.size() - 2]) << 16 |
                                   static_cast<std::uint32_t>(buf[buf.size() - 1]) << 24;
  const std::uint32_t actual_crc = crc32(buf.data(), buf.size() - 4);
  if (stored_crc != actual_crc) {
    throw CheckpointChecksumError("checkpoint " + path + " failed CRC-32 validation");
  }
  ParsedHeader out;
  out.info.version = version;
  out.info.config_fingerprint = header.u64();
  out.info.seed = header.u64();
  out.records_begin = 4 + 4 + 8 + 8;
  out.records_end = buf.size() - 4;
  return out;
}

}  // namespace

std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  std::uint32_t c = 0xffffffffu;
  const auto& table = crc_table();
  for (std::size_t i = 0; i < n; ++i) {
    c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  }
  return c ^ 0xffffffffu;
}

void save_checkpoint(const Model& model, const std::string& path,
                     std::uint64_t config_fingerprint, std::uint64_t seed) {
  Writer w;
  w.bytes(kMagic.data(), 4);
  w.u32(kCheckpointVersion);
  w.u64(config_fingerprint);
  w.u64(seed);
  for (const auto& [name, t] : model.trainable_parameters()) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
#ifdef MCE_FLOAT32
    w.u8(1);
#else
    w.u8(0);
#endif
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (int e : t.shape()) w.u64(static_cast<std::uint64_t>(e));
    for (real v : t.data()) {
#ifdef MCE_FLOAT32
      w.f32(v);
#else
      w.f64(v);
#endif
    }
  }
  const std::uint32_t crc = crc32(w.data().data(), w.data().size());
  w.u32(crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(w.data().data()),
            static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("short write to " + path);
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
  const auto buf = read_file(path);
  return validate_and_parse_header(buf, path).info;
}

CheckpointInfo load_checkpoint(Model& model, const std::string& path) {
  const auto buf = read_file(path);
  const ParsedHeader header = validate_and_parse_header(buf, path);

  std::map<std::string, std::pair<Shape, std::vector<real>>> records;
  Reader r(buf.data() + header.records_begin, header.records_end - header.records_begin);
  while (r.remaining() > 0) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.str(name_len);
    const std::uint8_t dtype = r.u8();
    if (dtype > 1) throw IoError("checkpoint " + path + ": unknown dtype tag for " + name);
    const std::uint32_t rank = r.u32();
    Shape shape;
    std::int64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto e = static_cast<int>(r.u64());
      shape.push_back(e);
      count *= e;
    }
    std::vector<real> values(static_cast<std::size_t>(count));
    for (auto& v : values) {
      v = dtype == 0 ? static_cast<real>(r.f64()) : static_cast<real>(r.f32());
    }
    records[name] = {std::move(shape), std::move(values)};
  }

  auto params = model.trainable_parameters();
  if (records.size() != params.size()) {
    throw IoError("checkpoint " + path + " holds " + std::to_string(records.size()) +
                  " parameters, model expects " + std::to_string(params.size()));
  }
  for (auto& [name, t] : params) {
    auto it = records.find(name);
    if (it == records.end()) throw IoError("checkpoint " + path + " is missing parameter " + name);
    if (it->second.first != t.shape()) {
      throw IoError("checkpoint " + path + ": parameter " + name + " has shape " +
                    shape_str(it->second.first) + ", model expects " + shape_str(t.shape()));
    }
    t.mutable_data() = it->second.second;
  }
  return header.info;
}

}  // namespace mce
