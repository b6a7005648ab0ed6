#include "stackgen/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "stackgen/error.hpp"

namespace stackgen {

namespace {

class Writer {
 public:
  explicit Writer(const std::string& path) : os_(path, std::ios::binary | std::ios::trunc) {
    if (!os_) throw FormatError("checkpoint '" + path + "': cannot open for writing");
  }
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u16(std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    bytes(b, 2);
  }
  void u32(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }
  void str(const std::string& s) { bytes(s.data(), s.size()); }
  bool ok() const { return static_cast<bool>(os_); }

 private:
  std::ofstream os_;
};

class Reader {
 public:
  Reader(const std::string& path) : path_(path), is_(path, std::ios::binary) {
    if (!is_) throw FormatError("checkpoint '" + path + "': cannot open");
  }
  void bytes(void* p, std::size_t n, const char* what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw FormatError("checkpoint '" + path_ + "': truncated " + what + " at byte offset " +
                        std::to_string(offset_ + is_.gcount()));
    offset_ += static_cast<std::int64_t>(n);
  }
  std::uint8_t u8(const char* what) {
    std::uint8_t v;
    bytes(&v, 1, what);
    return v;
  }
  std::uint16_t u16(const char* what) {
    unsigned char b[2];
    bytes(b, 2, what);
    return static_cast<std::uint16_t>(b[0] | b[1] << 8);
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }
  std::string str(std::size_t n, const char* what) {
    std::string s(n, '\0');
    if (n) bytes(s.data(), n, what);
    return s;
  }
  std::int64_t offset() const { return offset_; }

 private:
  std::string path_;
  std::ifstream is_;
  std::int64_t offset_ = 0;
};

}  // namespace

const NamedTensorF* Checkpoint::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_checkpoint(const std::string& path, Checkpoint ckpt) {
  std::sort(ckpt.entries.begin(), ckpt.entries.end(),
            [](const NamedTensorF& a, const NamedTensorF& b) { return a.name < b.name; });
  Writer w(path);
  w.str("CKPT");
  w.u32(ckpt.version);
  w.u32(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.str(ckpt.config_text);
  w.u32(ckpt.epoch);
  w.u32(static_cast<std::uint32_t>(ckpt.rng_state.size()));
  w.str(ckpt.rng_state);
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (shape_numel(e.shape) != static_cast<std::int64_t>(e.data.size()))
      throw ContractError("save_checkpoint: entry '" + e.name + "' shape/data mismatch");
    w.u16(static_cast<std::uint16_t>(e.name.size()));
    w.str(e.name);
    w.u8(static_cast<std::uint8_t>(e.shape.size()));
    for (int d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    w.bytes(e.data.data(), e.data.size() * 4);
  }
  if (!w.ok()) throw FormatError("checkpoint '" + path + "': write failed");
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  const std::string magic = r.str(4, "magic");
  if (magic != "CKPT")
    throw FormatError("checkpoint '" + path + "': bad magic at byte offset 0");
  Checkpoint ckpt;
  ckpt.version = r.u32("version");
  if (ckpt.version != kCheckpointVersion)
    throw FormatError("checkpoint '" + path + "': unsupported version " +
                      std::to_string(ckpt.version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  ckpt.config_text = r.str(r.u32("config length"), "config");
  ckpt.epoch = r.u32("epoch");
  ckpt.rng_state = r.str(r.u32("rng length"), "rng state");
  const std::uint32_t count = r.u32("entry count");
  ckpt.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensorF e;
    e.name = r.str(r.u16("entry name length"), "entry name");
    const int rank = r.u8("entry rank");
    e.shape.resize(static_cast<std::size_t>(rank));
    std::int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      e.shape[static_cast<std::size_t>(d)] = static_cast<int>(r.u32("entry dim"));
      numel *= e.shape[static_cast<std::size_t>(d)];
    }
    if (numel < 0 || numel > (1ll << 31))
      throw FormatError("checkpoint '" + path + "': entry '" + e.name +
                        "' has implausible size at byte offset " + std::to_string(r.offset()));
    e.data.resize(static_cast<std::size_t>(numel));
    r.bytes(e.data.data(), e.data.size() * 4, "entry payload");
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

}  // namespace stackgen
