#pragma once

// Named-section container used for training checkpoints.
//
//   magic "FACKPT01", u32 version (= 1), u32 entry count, then entries in
//   name order:
//     u8 kind (0 = f32 tensor, 1 = u64 array, 2 = bytes)
//     u32 name length, name bytes
//     kind 0: u64 rows, u64 cols, rows*cols float32
//     kind 1: u64 n, n × u64
//     kind 2: u64 n, n bytes
//
// Integers and floats are little-endian, matching the feature-store
// conventions, so save(load(f)) reproduces f byte for byte.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "frozen_align/matrix.hpp"

namespace frozen_align {

inline constexpr char kCheckpointMagic[8] = {'F', 'A', 'C', 'K', 'P', 'T', '0', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, Matrix<float>> tensors;
  std::map<std::string, std::vector<std::uint64_t>> integers;
  std::map<std::string, std::string> blobs;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  /// Lookups throw ParseError naming the missing section.
  const Matrix<float>& tensor(const std::string& name) const;
  const std::vector<std::uint64_t>& ints(const std::string& name) const;
  const std::string& blob(const std::string& name) const;
};

}  // namespace frozen_align
