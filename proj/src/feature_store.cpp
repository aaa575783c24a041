#include "frozen_align/feature_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include "frozen_align/error.hpp"
#include "frozen_align/text_io.hpp"

namespace frozen_align {

static_assert(std::endian::native == std::endian::little,
              "payload rows are mapped in place; big-endian hosts would need a byte-swapping reader");

namespace {

void put_u32(char* dst, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
}
void put_u64(char* dst, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) dst[i] = static_cast<char>((v >> (8 * i)) & 0xFFu);
}
std::uint32_t get_u32(const char* src) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(src[i])) << (8 * i);
  return v;
}
std::uint64_t get_u64(const char* src) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(src[i])) << (8 * i);
  return v;
}

std::array<char, kStoreHeaderSize> encode_header(const FeatureStoreHeader& h) {
  std::array<char, kStoreHeaderSize> buf{};
  std::memcpy(buf.data(), h.magic.data(), 8);
  put_u32(buf.data() + 8, h.version);
  put_u32(buf.data() + 12, h.dim);
  put_u64(buf.data() + 16, h.count);
  put_u32(buf.data() + 24, static_cast<std::uint32_t>(h.modality));
  put_u32(buf.data() + 28, 0);
  put_u64(buf.data() + 32, h.id_table_offset);
  return buf;
}

}  // namespace

std::string_view to_string(Modality m) noexcept { return m == Modality::vision ? "vision" : "text"; }

Modality modality_from_string(std::string_view s) {
  if (s == "vision") return Modality::vision;
  if (s == "text") return Modality::text;
  throw Error(ErrorCode::ParseError, "unknown modality '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Writer

FeatureStoreWriter::FeatureStoreWriter(const std::filesystem::path& path, std::uint32_t dim, Modality modality)
    : path_(path) {
  if (dim == 0) throw Error(ErrorCode::DimensionMismatch, "store dim must be >= 1");
  header_.dim = dim;
  header_.modality = modality;
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "' for writing");
  const std::array<char, kStoreHeaderSize> placeholder{};
  out_.write(placeholder.data(), placeholder.size());
}

FeatureStoreWriter::~FeatureStoreWriter() {
  if (!finished_) fail_cleanup();
}

void FeatureStoreWriter::fail_cleanup() noexcept {
  out_.close();
  std::error_code ec;
  std::filesystem::remove(path_, ec);
}

void FeatureStoreWriter::append(std::string_view id, std::span<const float> vector) {
  if (finished_) throw Error(ErrorCode::IoFailure, "append after finish");
  if (vector.size() != header_.dim) {
    std::ostringstream msg;
    msg << "record '" << id << "' has length " << vector.size() << ", store dim is " << header_.dim;
    throw Error(ErrorCode::DimensionMismatch, msg.str());
  }
  for (std::size_t j = 0; j < vector.size(); ++j) {
    if (!std::isfinite(vector[j])) {
      std::ostringstream msg;
      msg << "record '" << id << "' component " << j << " is " << vector[j];
      throw Error(ErrorCode::NonFiniteValue, msg.str());
    }
  }
  std::string key(id);
  if (!seen_.insert(key).second) throw Error(ErrorCode::DuplicateId, "id '" + key + "' written twice");
  ids_.push_back(std::move(key));
  out_.write(reinterpret_cast<const char*>(vector.data()), static_cast<std::streamsize>(vector.size_bytes()));
  if (!out_) throw Error(ErrorCode::IoFailure, "write failed for '" + path_.string() + "'");
}

FeatureStoreHeader FeatureStoreWriter::finish() {
  if (finished_) return header_;
  header_.count = ids_.size();
  header_.id_table_offset = kStoreHeaderSize + header_.payload_bytes();

  std::vector<char> offsets(8 * (ids_.size() + 1));
  std::uint64_t pos = 0;
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    put_u64(offsets.data() + 8 * i, pos);
    pos += ids_[i].size();
  }
  put_u64(offsets.data() + 8 * ids_.size(), pos);
  out_.write(offsets.data(), static_cast<std::streamsize>(offsets.size()));
  for (const auto& id : ids_) out_.write(id.data(), static_cast<std::streamsize>(id.size()));

  const auto head = encode_header(header_);
  out_.seekp(0);
  out_.write(head.data(), head.size());
  out_.close();
  if (!out_) throw Error(ErrorCode::IoFailure, "failed to finalize '" + path_.string() + "'");
  finished_ = true;
  return header_;
}

FeatureStoreHeader write_store(std::span<const FeatureRecord> records, std::uint32_t dim, Modality modality,
                               const std::filesystem::path& path) {
  FeatureStoreWriter writer(path, dim, modality);
  for (const auto& r : records) writer.append(r.id, r.vector);
  return writer.finish();
}

// ---------------------------------------------------------------------------
// Reader

struct StoreHandle::State {
  std::filesystem::path path;
  FeatureStoreHeader header;
  const char* base = nullptr;
  std::size_t size = 0;
  const char* offsets = nullptr;
  const char* blob = nullptr;
  std::unordered_map<std::string_view, std::size_t> index;

  ~State() {
    if (base != nullptr) ::munmap(const_cast<char*>(base), size);
  }
};

StoreHandle StoreHandle::open(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw Error(ErrorCode::IoFailure, "cannot open '" + path.string() + "'");
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw Error(ErrorCode::IoFailure, "cannot stat '" + path.string() + "'");
  }
  const auto size = static_cast<std::size_t>(st.st_size);
  auto state = std::make_shared<State>();
  state->path = path;
  state->size = size;
  if (size > 0) {
    void* p = ::mmap(nullptr, size, PROT_READ, MAP_PRIVATE, fd, 0);
    ::close(fd);
    if (p == MAP_FAILED) throw Error(ErrorCode::IoFailure, "cannot map '" + path.string() + "'");
    state->base = static_cast<const char*>(p);
  } else {
    ::close(fd);
  }

  const std::string where = " in '" + path.string() + "'";
  const char* b = state->base;
  if (size < kStoreMagic.size()) throw Error(ErrorCode::TruncatedFile, "file shorter than magic" + where);
  if (std::memcmp(b, kStoreMagic.data(), kStoreMagic.size()) != 0)
    throw Error(ErrorCode::BadMagic, "expected FSTORE01" + where);
  if (size < kStoreHeaderSize) throw Error(ErrorCode::TruncatedFile, "file shorter than header" + where);

  FeatureStoreHeader& h = state->header;
  h.version = get_u32(b + 8);
  if (h.version != kStoreVersion)
    throw Error(ErrorCode::VersionUnsupported, "version " + std::to_string(h.version) + where);
  h.dim = get_u32(b + 12);
  h.count = get_u64(b + 16);
  const std::uint32_t modality = get_u32(b + 24);
  const std::uint32_t reserved = get_u32(b + 28);
  h.id_table_offset = get_u64(b + 32);
  if (h.dim == 0) throw Error(ErrorCode::ParseError, "dim is 0" + where);
  if (modality > 1) throw Error(ErrorCode::ParseError, "unknown modality " + std::to_string(modality) + where);
  if (reserved != 0) throw Error(ErrorCode::ParseError, "reserved header field is nonzero" + where);
  h.modality = static_cast<Modality>(modality);

  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  if (h.count > (kMax - kStoreHeaderSize) / (std::uint64_t{h.dim} * 4) / 2)
    throw Error(ErrorCode::ParseError, "count overflows" + where);
  const std::uint64_t expected_table = kStoreHeaderSize + h.payload_bytes();
  if (h.id_table_offset != expected_table)
    throw Error(ErrorCode::ParseError, "id_table_offset does not follow payload" + where);
  const std::uint64_t offsets_bytes = 8 * (h.count + 1);
  if (size < expected_table + offsets_bytes)
    throw Error(ErrorCode::TruncatedFile, "payload or id table cut short" + where);

  state->offsets = b + expected_table;
  state->blob = state->offsets + offsets_bytes;
  const std::uint64_t blob_len = get_u64(state->offsets + 8 * h.count);
  if (size != expected_table + offsets_bytes + blob_len)
    throw Error(ErrorCode::TruncatedFile,
                "file length " + std::to_string(size) + " does not match header-implied length " +
                    std::to_string(expected_table + offsets_bytes + blob_len) + where);

  state->index.reserve(h.count);
  std::uint64_t prev = 0;
  for (std::uint64_t i = 0; i < h.count; ++i) {
    const std::uint64_t lo = get_u64(state->offsets + 8 * i);
    const std::uint64_t hi = get_u64(state->offsets + 8 * (i + 1));
    if (lo != prev || hi < lo || hi > blob_len) throw Error(ErrorCode::ParseError, "corrupt id table" + where);
    prev = hi;
    std::string_view id(state->blob + lo, hi - lo);
    if (!state->index.emplace(id, i).second)
      throw Error(ErrorCode::DuplicateId, "id '" + std::string(id) + "' appears twice" + where);
  }

  StoreHandle handle;
  handle.state_ = std::move(state);
  return handle;
}

const FeatureStoreHeader& StoreHandle::header() const noexcept { return state_->header; }
const std::filesystem::path& StoreHandle::path() const noexcept { return state_->path; }

std::string_view StoreHandle::id(std::size_t row) const {
  const std::uint64_t lo = get_u64(state_->offsets + 8 * row);
  const std::uint64_t hi = get_u64(state_->offsets + 8 * (row + 1));
  return {state_->blob + lo, hi - lo};
}

std::optional<std::size_t> StoreHandle::find(std::string_view id) const {
  auto it = state_->index.find(id);
  if (it == state_->index.end()) return std::nullopt;
  return it->second;
}

std::size_t StoreHandle::index_of(std::string_view id) const {
  if (auto i = find(id)) return *i;
  throw Error(ErrorCode::UnresolvedId, "id '" + std::string(id) + "' not in " + state_->path.string());
}

std::span<const float> StoreHandle::row(std::size_t index) const { return rows(index, 1); }

std::span<const float> StoreHandle::rows(std::size_t begin, std::size_t n) const {
  if (begin + n > count()) throw Error(ErrorCode::UnresolvedId, "row range past end of store");
  const auto* payload = reinterpret_cast<const float*>(state_->base + kStoreHeaderSize);
  return {payload + begin * dim(), n * dim()};
}

template <class T>
void StoreHandle::gather(std::span<const std::size_t> indices, Matrix<T>& out) const {
  const std::size_t d = dim();
  out.resize(indices.size(), d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto src = row(indices[r]);
    T* dst = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<T>(src[j]);
  }
}

template void StoreHandle::gather<float>(std::span<const std::size_t>, Matrix<float>&) const;
template void StoreHandle::gather<double>(std::span<const std::size_t>, Matrix<double>&) const;

// ---------------------------------------------------------------------------
// Pairing

std::size_t PairedDataset::caption_count() const noexcept {
  std::size_t n = 0;
  for (const auto& c : caption_rows) n += c.size();
  return n;
}

PairedDataset PairedDataset::subset(std::span<const std::size_t> positions) const {
  PairedDataset out;
  out.vision = vision;
  out.text = text;
  out.image_rows.reserve(positions.size());
  out.caption_rows.reserve(positions.size());
  for (std::size_t p : positions) {
    out.image_rows.push_back(image_rows.at(p));
    out.caption_rows.push_back(caption_rows.at(p));
  }
  return out;
}

std::vector<ManifestEntry> parse_pair_manifest(std::istream& in) {
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2)
      throw Error(ErrorCode::ParseError, "manifest line " + std::to_string(lineno) + ": expected image_id<TAB>captions");
    ManifestEntry e;
    e.image_id = std::string(fields[0]);
    for (auto c : split(fields[1], ','))
      if (!c.empty()) e.caption_ids.emplace_back(c);
    if (e.caption_ids.empty())
      throw Error(ErrorCode::EmptyCaptionList, "image '" + e.image_id + "' has no caption ids");
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<ManifestEntry> read_pair_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot read manifest '" + path.string() + "'");
  return parse_pair_manifest(in);
}

PairedDataset build_pairs(const StoreHandle& vision, const StoreHandle& text, std::span<const ManifestEntry> manifest) {
  PairedDataset ds;
  ds.vision = vision;
  ds.text = text;
  std::unordered_set<std::string_view> images;
  for (const auto& e : manifest) {
    if (e.caption_ids.empty()) throw Error(ErrorCode::EmptyCaptionList, "image '" + e.image_id + "' has no caption ids");
    if (!images.insert(e.image_id).second)
      throw Error(ErrorCode::DuplicateId, "image '" + e.image_id + "' listed twice in manifest");
    ds.image_rows.push_back(vision.index_of(e.image_id));
    auto& caps = ds.caption_rows.emplace_back();
    caps.reserve(e.caption_ids.size());
    for (const auto& c : e.caption_ids) caps.push_back(text.index_of(c));
  }
  return ds;
}

PairedDataset build_pairs(const StoreHandle& vision, const StoreHandle& text, const std::filesystem::path& manifest) {
  const auto entries = read_pair_manifest(manifest);
  return build_pairs(vision, text, entries);
}

}  // namespace frozen_align
