// Binary parameter container: magic "SOVM", format version, then one record
// per named tensor (name length + UTF-8 name, rank, u64 extents, little-endian
// f32 values). Optimizer state shares the container under the "opt." prefix.

#ifndef SOVMAS_CHECKPOINT_HPP
#define SOVMAS_CHECKPOINT_HPP

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sovmas/tensor.hpp"

namespace sovmas {

inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'S', 'O', 'V', 'M'};
inline constexpr const char* kOptimizerPrefix = "opt.";

struct NamedTensorF32 {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

// Writes to a temporary sibling file and renames into place.
void write_checkpoint(const std::string& path, const std::vector<NamedTensorF32>& entries);

std::vector<NamedTensorF32> read_checkpoint(const std::string& path);

// Little-endian scalar IO shared by the checkpoint and feature-file formats.
void write_u32(std::ostream& os, uint32_t v);
void write_u64(std::ostream& os, uint64_t v);
void write_f32(std::ostream& os, float v);
uint32_t read_u32(std::istream& is, const std::string& what);
uint64_t read_u64(std::istream& is, const std::string& what);
float read_f32(std::istream& is, const std::string& what);

// Renames `path`.tmp over `path` after `body` has written it completely.
void atomic_file_commit(const std::string& path,
                        const std::function<void(std::ostream&)>& body);

// FNV-1a over a file's bytes, for run-manifest artifact hashes.
uint64_t fnv1a_file(const std::string& path);

template <typename T>
NamedTensorF32 to_f32_entry(const std::string& name, const Tensor<T>& t) {
  NamedTensorF32 e;
  e.name = name;
  e.shape = t.shape();
  e.values.reserve(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) e.values.push_back(static_cast<float>(t.at(i)));
  return e;
}

template <typename T>
void load_f32_entry(const NamedTensorF32& e, Tensor<T>& dst) {
  if (e.shape != dst.shape())
    reject("checkpoint: shape mismatch for \"" + e.name + "\": file has " +
           shape_str(e.shape) + ", model expects " + shape_str(dst.shape()));
  auto w = dst.mutable_values();
  for (size_t i = 0; i < e.values.size(); ++i) w[i] = static_cast<T>(e.values[i]);
}

}  // namespace sovmas

#endif  // SOVMAS_CHECKPOINT_HPP
