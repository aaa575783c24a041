#include "frozen_align/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "frozen_align/error.hpp"
#include "frozen_align/text_io.hpp"

namespace frozen_align {

namespace {

enum class Kind : std::uint8_t { tensor = 0, integers = 1, bytes = 2 };

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void name(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& data, std::string where) : data_(data), where_(std::move(where)) {}

  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw Error(ErrorCode::TruncatedFile, "checkpoint cut short" + where_);
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_.data() + pos_, n);
    pos_ += n;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  const std::string& where() const { return where_; }

 private:
  const std::string& data_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::save(const std::filesystem::path& path) const {
  // Merge the three maps into one name-ordered stream.
  std::map<std::string, Kind> order;
  for (const auto& [k, v] : tensors) order.emplace(k, Kind::tensor);
  for (const auto& [k, v] : integers)
    if (!order.emplace(k, Kind::integers).second) throw Error(ErrorCode::DuplicateId, "section '" + k + "'");
  for (const auto& [k, v] : blobs)
    if (!order.emplace(k, Kind::bytes).second) throw Error(ErrorCode::DuplicateId, "section '" + k + "'");

  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(order.size()));
  for (const auto& [name, kind] : order) {
    w.u8(static_cast<std::uint8_t>(kind));
    w.name(name);
    switch (kind) {
      case Kind::tensor: {
        const auto& m = tensors.at(name);
        w.u64(m.rows());
        w.u64(m.cols());
        w.raw(m.data(), m.size() * sizeof(float));
        break;
      }
      case Kind::integers: {
        const auto& v = integers.at(name);
        w.u64(v.size());
        for (auto x : v) w.u64(x);
        break;
      }
      case Kind::bytes: {
        const auto& b = blobs.at(name);
        w.u64(b.size());
        w.raw(b.data(), b.size());
        break;
      }
    }
  }

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write '" + tmp + "'");
    out.write(w.str().data(), static_cast<std::streamsize>(w.str().size()));
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  Reader r(data, " in '" + path.string() + "'");
  if (data.size() < sizeof kCheckpointMagic || std::memcmp(data.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw Error(ErrorCode::BadMagic, "expected FACKPT01" + r.where());
  char magic[8];
  r.raw(magic, 8);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::VersionUnsupported, "checkpoint version " + std::to_string(version) + r.where());
  const std::uint32_t entries = r.u32();

  Checkpoint ck;
  for (std::uint32_t e = 0; e < entries; ++e) {
    const auto kind = r.u8();
    const std::string name = r.str(r.u32());
    switch (static_cast<Kind>(kind)) {
      case Kind::tensor: {
        const std::uint64_t rows = r.u64(), cols = r.u64();
        if (cols != 0 && rows > data.size() / sizeof(float) / cols)
          throw Error(ErrorCode::TruncatedFile, "tensor '" + name + "' larger than file" + r.where());
        Matrix<float> m(rows, cols);
        r.raw(m.data(), m.size() * sizeof(float));
        ck.tensors.emplace(name, std::move(m));
        break;
      }
      case Kind::integers: {
        const std::uint64_t n = r.u64();
        r.need(n * 8);
        std::vector<std::uint64_t> v(n);
        for (auto& x : v) x = r.u64();
        ck.integers.emplace(name, std::move(v));
        break;
      }
      case Kind::bytes: {
        ck.blobs.emplace(name, r.str(r.u64()));
        break;
      }
      default:
        throw Error(ErrorCode::ParseError, "unknown section kind " + std::to_string(kind) + r.where());
    }
  }
  if (!r.done()) throw Error(ErrorCode::ParseError, "trailing bytes after last section" + r.where());
  return ck;
}

const Matrix<float>& Checkpoint::tensor(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorCode::ParseError, "checkpoint has no tensor '" + name + "'");
  return it->second;
}

const std::vector<std::uint64_t>& Checkpoint::ints(const std::string& name) const {
  auto it = integers.find(name);
  if (it == integers.end()) throw Error(ErrorCode::ParseError, "checkpoint has no integer section '" + name + "'");
  return it->second;
}

const std::string& Checkpoint::blob(const std::string& name) const {
  auto it = blobs.find(name);
  if (it == blobs.end()) throw Error(ErrorCode::ParseError, "checkpoint has no blob '" + name + "'");
  return it->second;
}

}  // namespace frozen_align
