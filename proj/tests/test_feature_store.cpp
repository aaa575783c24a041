#include <cstring>
#include <fstream>
#include <sstream>

#include <doctest.h>

#include "frozen_align/error.hpp"
#include "frozen_align/feature_store.hpp"
#include "frozen_align/text_io.hpp"
#include "helpers.hpp"

using namespace frozen_align;
using testing::TempDir;

namespace {

// Independent little-endian packing used to build the expected bytes.
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}
void put_f32(std::string& s, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(s, bits);
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<FeatureRecord> two_records() {
  return {{"a", {1.0f, -2.5f, 0.125f}}, {"bc", {3.0f, 0.0f, -1.0f}}};
}

}  // namespace

TEST_CASE("store bytes match the documented layout") {
  TempDir dir;
  const auto path = dir / "golden.fstore";
  write_store(two_records(), 3, Modality::text, path);

  std::string expected = "FSTORE01";
  put_u32(expected, 1);        // version
  put_u32(expected, 3);        // dim
  put_u64(expected, 2);        // count
  put_u32(expected, 1);        // modality text
  put_u32(expected, 0);        // reserved
  put_u64(expected, 40 + 24);  // id table offset
  for (float f : {1.0f, -2.5f, 0.125f, 3.0f, 0.0f, -1.0f}) put_f32(expected, f);
  put_u64(expected, 0);
  put_u64(expected, 1);
  put_u64(expected, 3);
  expected += "abc";

  const auto actual = read_file(path);
  CHECK(actual.size() == 40 + 24 + 3 * 8 + 3);
  CHECK(actual == expected);
  // Frozen digest of this file guards against accidental format drift.
  CHECK(hex64(fnv1a64(actual)) == "fa2df84bb24213ec");
}

TEST_CASE("round trip is bit exact and random access equals sequential access") {
  TempDir dir;
  const auto m = testing::random_matrix(50, 7, 3);
  std::vector<FeatureRecord> recs;
  for (std::size_t i = 0; i < m.rows(); ++i) recs.push_back({"id_" + std::to_string(i), {m.row(i).begin(), m.row(i).end()}});
  const auto header = write_store(recs, 7, Modality::vision, dir / "s.fstore");
  CHECK(header.count == 50);
  CHECK(header.payload_bytes() == 50u * 7u * 4u);

  const auto store = StoreHandle::open(dir / "s.fstore");
  CHECK(store.header() == header);
  REQUIRE(store.count() == recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    CHECK(store.id(i) == recs[i].id);
    const auto seq = store.row(i);
    const auto rnd = store.get_by_id(recs[i].id);
    CHECK(std::memcmp(seq.data(), recs[i].vector.data(), 7 * sizeof(float)) == 0);
    CHECK(std::memcmp(rnd.data(), seq.data(), 7 * sizeof(float)) == 0);
  }
  const auto block = store.rows(10, 5);
  CHECK(std::memcmp(block.data(), store.row(10).data(), 5 * 7 * sizeof(float)) == 0);

  Matrix<float> gathered;
  const std::vector<std::size_t> idx = {4, 0, 4};
  store.gather<float>(idx, gathered);
  CHECK(gathered.rows() == 3);
  CHECK(std::equal(gathered.row(2).begin(), gathered.row(2).end(), store.row(4).begin()));
}

TEST_CASE("payload size arithmetic for a large store") {
  TempDir dir;
  FeatureStoreWriter w(dir / "big.fstore", 768, Modality::vision);
  std::vector<float> v(768, 0.5f);
  for (int i = 0; i < 10000; ++i) w.append("r" + std::to_string(i), v);
  const auto h = w.finish();
  CHECK(h.count == 10000);
  CHECK(h.payload_bytes() == 30720000u);  // 10000 · 768 · 4
  CHECK(StoreHandle::open(dir / "big.fstore").count() == 10000);
}

TEST_CASE("writer validation") {
  TempDir dir;
  FA_CHECK_THROWS_CODE(write_store(std::vector<FeatureRecord>{{"x", {1.0f, std::nanf("")}}}, 2, Modality::text, dir / "n.fstore"),
                       ErrorCode::NonFiniteValue);
  FA_CHECK_THROWS_CODE(write_store(std::vector<FeatureRecord>{{"x", {1.0f, INFINITY}}}, 2, Modality::text, dir / "i.fstore"),
                       ErrorCode::NonFiniteValue);
  FA_CHECK_THROWS_CODE(write_store(std::vector<FeatureRecord>{{"x", {1.0f}}}, 2, Modality::text, dir / "d.fstore"),
                       ErrorCode::DimensionMismatch);
  FA_CHECK_THROWS_CODE(
      write_store(std::vector<FeatureRecord>{{"x", {1.0f, 2.0f}}, {"x", {1.0f, 2.0f}}}, 2, Modality::text, dir / "u.fstore"),
      ErrorCode::DuplicateId);
  // A failed write leaves no partial file behind.
  CHECK_FALSE(std::filesystem::exists(dir / "u.fstore"));
}

TEST_CASE("empty store is valid") {
  TempDir dir;
  write_store({}, 4, Modality::vision, dir / "e.fstore");
  const auto s = StoreHandle::open(dir / "e.fstore");
  CHECK(s.count() == 0);
  CHECK(s.dim() == 4);
}

TEST_CASE("corrupt headers are rejected with the documented errors") {
  TempDir dir;
  const auto good = dir / "good.fstore";
  write_store(two_records(), 3, Modality::text, good);
  const std::string bytes = read_file(good);
  const auto bad = dir / "bad.fstore";

  SUBCASE("magic") {
    auto b = bytes;
    b.replace(0, 8, "XXXXXXXX");
    write_bytes(bad, b);
    FA_CHECK_THROWS_CODE(StoreHandle::open(bad), ErrorCode::BadMagic);
  }
  SUBCASE("version") {
    auto b = bytes;
    b[8] = 2;
    write_bytes(bad, b);
    FA_CHECK_THROWS_CODE(StoreHandle::open(bad), ErrorCode::VersionUnsupported);
  }
  SUBCASE("truncated payload") {
    write_bytes(bad, bytes.substr(0, 50));
    FA_CHECK_THROWS_CODE(StoreHandle::open(bad), ErrorCode::TruncatedFile);
  }
  SUBCASE("truncated id table") {
    write_bytes(bad, bytes.substr(0, bytes.size() - 1));
    FA_CHECK_THROWS_CODE(StoreHandle::open(bad), ErrorCode::TruncatedFile);
  }
  SUBCASE("shorter than header") {
    write_bytes(bad, bytes.substr(0, 20));
    FA_CHECK_THROWS_CODE(StoreHandle::open(bad), ErrorCode::TruncatedFile);
  }
  SUBCASE("trailing garbage") {
    write_bytes(bad, bytes + "zz");
    FA_CHECK_THROWS_CODE(StoreHandle::open(bad), ErrorCode::TruncatedFile);
  }
  SUBCASE("dim zero") {
    auto b = bytes;
    std::memset(b.data() + 12, 0, 4);
    write_bytes(bad, b);
    CHECK_THROWS_AS(StoreHandle::open(bad), Error);
  }
  SUBCASE("missing file") { FA_CHECK_THROWS_CODE(StoreHandle::open(dir / "nope"), ErrorCode::IoFailure); }
}

TEST_CASE("lookup errors") {
  TempDir dir;
  write_store(two_records(), 3, Modality::text, dir / "s.fstore");
  const auto s = StoreHandle::open(dir / "s.fstore");
  CHECK(s.find("zz") == std::nullopt);
  FA_CHECK_THROWS_CODE(s.index_of("zz"), ErrorCode::UnresolvedId);
}

TEST_CASE("pair manifests") {
  TempDir dir;
  const auto v = testing::random_matrix(3, 4, 1);
  const auto t = testing::random_matrix(6, 5, 2);
  const auto ds = testing::make_dataset(dir.path(), v, t, 2);
  CHECK(ds.image_count() == 3);
  CHECK(ds.caption_count() == 6);
  CHECK(ds.vision.dim() == 4);
  CHECK(ds.text.dim() == 5);

  std::istringstream in("# comment\n\nimg0\tcap0,cap1\nimg1\tcap2\n");
  const auto m = parse_pair_manifest(in);
  REQUIRE(m.size() == 2);
  CHECK(m[0].caption_ids == std::vector<std::string>{"cap0", "cap1"});

  const std::vector<ManifestEntry> one_each = {{"img0", {"cap0"}}, {"img1", {"cap2"}}, {"img2", {"cap4"}}};
  const auto single = build_pairs(ds.vision, ds.text, one_each);
  for (const auto& caps : single.caption_rows) CHECK(caps.size() == 1);

  const std::vector<ManifestEntry> absent = {{"img0", {"nope"}}};
  FA_CHECK_THROWS_CODE(build_pairs(ds.vision, ds.text, absent), ErrorCode::UnresolvedId);
  const std::vector<ManifestEntry> no_image = {{"ghost", {"cap0"}}};
  FA_CHECK_THROWS_CODE(build_pairs(ds.vision, ds.text, no_image), ErrorCode::UnresolvedId);
  const std::vector<ManifestEntry> empty = {{"img0", {}}};
  FA_CHECK_THROWS_CODE(build_pairs(ds.vision, ds.text, empty), ErrorCode::EmptyCaptionList);
  std::istringstream blank_caps("img0\t\n");
  FA_CHECK_THROWS_CODE(parse_pair_manifest(blank_caps), ErrorCode::EmptyCaptionList);
}

TEST_CASE("subset keeps captions with their image") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(4, 2, 1), testing::random_matrix(8, 3, 2), 2);
  const std::vector<std::size_t> pick = {3, 1};
  const auto sub = ds.subset(pick);
  CHECK(sub.image_count() == 2);
  CHECK(sub.image_id(0) == "img3");
  CHECK(sub.caption_rows[0] == ds.caption_rows[3]);
}
