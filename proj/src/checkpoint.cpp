#include "sovmas/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>

namespace sovmas {

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

namespace {

void read_bytes(std::istream& is, unsigned char* out, size_t n, const std::string& what) {
  if (!is.read(reinterpret_cast<char*>(out), static_cast<std::streamsize>(n)))
    throw std::runtime_error("truncated read while loading " + what);
}

}  // namespace

uint32_t read_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  read_bytes(is, b, 4, what);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& is, const std::string& what) {
  unsigned char b[8];
  read_bytes(is, b, 8, what);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

float read_f32(std::istream& is, const std::string& what) {
  const uint32_t bits = read_u32(is, what);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void atomic_file_commit(const std::string& path,
                        const std::function<void(std::ostream&)>& body) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open " + tmp + " for writing");
    body(os);
    os.flush();
    if (!os) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path + " for hashing");
  uint64_t h = 1469598103934665603ull;
  char buf[1 << 14];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    const std::streamsize n = is.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  return h;
}

void write_checkpoint(const std::string& path, const std::vector<NamedTensorF32>& entries) {
  atomic_file_commit(path, [&entries](std::ostream& os) {
    os.write(kCheckpointMagic, 4);
    write_u32(os, kCheckpointVersion);
    for (const auto& e : entries) {
      write_u32(os, static_cast<uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_u32(os, static_cast<uint32_t>(e.shape.size()));
      for (int64_t ext : e.shape) write_u64(os, static_cast<uint64_t>(ext));
      for (float v : e.values) write_f32(os, v);
    }
  });
}

std::vector<NamedTensorF32> read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw std::runtime_error(path + " is not a checkpoint (bad magic)");
  const uint32_t version = read_u32(is, path);
  if (version != kCheckpointVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " +
                             std::to_string(version));
  std::vector<NamedTensorF32> entries;
  while (true) {
    is.peek();
    if (is.eof()) break;
    NamedTensorF32 e;
    const uint32_t name_len = read_u32(is, path);
    e.name.resize(name_len);
    if (!is.read(e.name.data(), name_len))
      throw std::runtime_error("truncated name in " + path);
    const uint32_t rank = read_u32(is, path);
    int64_t numel = 1;
    for (uint32_t i = 0; i < rank; ++i) {
      const uint64_t ext = read_u64(is, path);
      e.shape.push_back(static_cast<int64_t>(ext));
      numel *= static_cast<int64_t>(ext);
    }
    e.values.resize(static_cast<size_t>(numel));
    for (auto& v : e.values) v = read_f32(is, path + " (\"" + e.name + "\")");
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace sovmas
