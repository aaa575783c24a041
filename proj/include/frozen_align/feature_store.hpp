#pragma once

// Immutable on-disk table of precomputed embeddings.
//
// Layout (all integers little-endian):
//
//   offset  size  field
//   0       8     magic "FSTORE01"
//   8       4     version (= 1)
//   12      4     dim
//   16      8     count
//   24      4     modality (0 = vision, 1 = text)
//   28      4     reserved, must be 0
//   32      8     id_table_offset (= 40 + count*dim*4)
//   40      ...   payload: count*dim float32, row-major
//   id_table_offset:
//           8*(count+1)  id offsets into the blob that follows (first = 0,
//                        last = blob length)
//           ...          concatenated UTF-8 ids
//
// The file length must equal id_table_offset + 8*(count+1) + blob length.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "frozen_align/matrix.hpp"

namespace frozen_align {

enum class Modality : std::uint32_t { vision = 0, text = 1 };

std::string_view to_string(Modality m) noexcept;
Modality modality_from_string(std::string_view s);

inline constexpr std::array<char, 8> kStoreMagic = {'F', 'S', 'T', 'O', 'R', 'E', '0', '1'};
inline constexpr std::uint32_t kStoreVersion = 1;
inline constexpr std::size_t kStoreHeaderSize = 40;

struct FeatureStoreHeader {
  std::array<char, 8> magic = kStoreMagic;
  std::uint32_t version = kStoreVersion;
  std::uint32_t dim = 0;
  std::uint64_t count = 0;
  Modality modality = Modality::vision;
  std::uint64_t id_table_offset = 0;

  std::uint64_t payload_bytes() const noexcept { return count * dim * sizeof(float); }

  friend bool operator==(const FeatureStoreHeader&, const FeatureStoreHeader&) = default;
};

struct FeatureRecord {
  std::string id;
  std::vector<float> vector;
};

/// Streams records to disk. The header is patched and the id table appended
/// by `finish()`; a writer destroyed without `finish()` removes its file.
class FeatureStoreWriter {
 public:
  FeatureStoreWriter(const std::filesystem::path& path, std::uint32_t dim, Modality modality);
  ~FeatureStoreWriter();
  FeatureStoreWriter(const FeatureStoreWriter&) = delete;
  FeatureStoreWriter& operator=(const FeatureStoreWriter&) = delete;

  void append(std::string_view id, std::span<const float> vector);
  FeatureStoreHeader finish();

  std::uint64_t count() const noexcept { return ids_.size(); }

 private:
  void fail_cleanup() noexcept;

  std::filesystem::path path_;
  std::ofstream out_;
  FeatureStoreHeader header_;
  std::vector<std::string> ids_;
  std::unordered_set<std::string> seen_;
  bool finished_ = false;
};

FeatureStoreHeader write_store(std::span<const FeatureRecord> records, std::uint32_t dim, Modality modality,
                               const std::filesystem::path& path);

/// Read-only, memory-mapped view of a store. Cheap to copy; copies share the
/// mapping and are safe to use from concurrent readers.
class StoreHandle {
 public:
  StoreHandle() = default;

  static StoreHandle open(const std::filesystem::path& path);

  const FeatureStoreHeader& header() const noexcept;
  std::size_t dim() const noexcept { return header().dim; }
  std::size_t count() const noexcept { return header().count; }
  Modality modality() const noexcept { return header().modality; }
  const std::filesystem::path& path() const noexcept;
  bool valid() const noexcept { return static_cast<bool>(state_); }

  std::string_view id(std::size_t row) const;
  std::optional<std::size_t> find(std::string_view id) const;
  /// Row index for `id`; throws UnresolvedId.
  std::size_t index_of(std::string_view id) const;

  std::span<const float> row(std::size_t index) const;
  std::span<const float> get_by_id(std::string_view id) const { return row(index_of(id)); }

  /// Contiguous view of rows [begin, begin+n) straight from the mapping.
  std::span<const float> rows(std::size_t begin, std::size_t n) const;

  /// Copies the selected rows into `out` (resized to indices.size()×dim).
  template <class T>
  void gather(std::span<const std::size_t> indices, Matrix<T>& out) const;

 private:
  struct State;
  std::shared_ptr<const State> state_;
};

/// Image ids paired with one or more caption ids, resolved to store rows.
struct PairedDataset {
  StoreHandle vision;
  StoreHandle text;
  std::vector<std::size_t> image_rows;
  std::vector<std::vector<std::size_t>> caption_rows;

  std::size_t image_count() const noexcept { return image_rows.size(); }
  std::size_t caption_count() const noexcept;
  std::string_view image_id(std::size_t i) const { return vision.id(image_rows[i]); }

  /// Restriction to the given image positions (captions follow their image).
  PairedDataset subset(std::span<const std::size_t> positions) const;
};

struct ManifestEntry {
  std::string image_id;
  std::vector<std::string> caption_ids;
};

/// Parses `image_id<TAB>caption_id[,caption_id...]` lines; blank lines and
/// lines starting with '#' are skipped.
std::vector<ManifestEntry> parse_pair_manifest(std::istream& in);
std::vector<ManifestEntry> read_pair_manifest(const std::filesystem::path& path);

PairedDataset build_pairs(const StoreHandle& vision, const StoreHandle& text, std::span<const ManifestEntry> manifest);
PairedDataset build_pairs(const StoreHandle& vision, const StoreHandle& text, const std::filesystem::path& manifest);

}  // namespace frozen_align
