#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "frozen_align/contrastive.hpp"
#include "frozen_align/feature_store.hpp"
#include "frozen_align/matrix.hpp"
#include "frozen_align/random.hpp"

namespace testing {

namespace fa = frozen_align;

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "frozen_align_XXXXXX").string();
    path_ = ::mkdtemp(tmpl.data());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

template <class T = float>
fa::Matrix<T> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double stddev = 1.0) {
  fa::Rng rng(seed);
  fa::Matrix<T> m(rows, cols);
  for (auto& x : m.flat()) x = static_cast<T>(stddev * fa::standard_normal(rng));
  return m;
}

template <class T = float>
fa::EmbeddingBatch<T> random_unit(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return fa::normalize(random_matrix<T>(rows, cols, seed));
}

inline double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

/// Symmetric InfoNCE evaluated term by term: for each i, −log softmax over row i and
/// over column i of the scaled similarity matrix, averaged per direction.
struct BruteLoss {
  double total, t2i, i2t;
};

inline BruteLoss brute_force_infonce(const fa::Matrix<double>& img, const fa::Matrix<double>& txt, double tau) {
  const std::size_t b = img.rows();
  auto sim = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < img.cols(); ++k) s += img(i, k) * txt(j, k);
    return s / tau;
  };
  double i2t = 0.0, t2i = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      row += std::exp(sim(i, j));
      col += std::exp(sim(j, i));
    }
    i2t += -std::log(std::exp(sim(i, i)) / row);
    t2i += -std::log(std::exp(sim(i, i)) / col);
  }
  i2t /= static_cast<double>(b);
  t2i /= static_cast<double>(b);
  return {(i2t + t2i) / 2.0, t2i, i2t};
}

/// Writes vision/text stores where image i has `captions` captions and
/// returns the paired dataset over them.
inline fa::PairedDataset make_dataset(const std::filesystem::path& dir, const fa::Matrix<float>& vision,
                                      const fa::Matrix<float>& text, std::size_t captions = 1) {
  std::vector<fa::FeatureRecord> vr, tr;
  std::vector<fa::ManifestEntry> manifest;
  for (std::size_t i = 0; i < vision.rows(); ++i) {
    const auto id = "img" + std::to_string(i);
    vr.push_back({id, {vision.row(i).begin(), vision.row(i).end()}});
    auto& entry = manifest.emplace_back();
    entry.image_id = id;
    for (std::size_t j = 0; j < captions; ++j) {
      const auto r = i * captions + j;
      const auto cid = "cap" + std::to_string(r);
      tr.push_back({cid, {text.row(r).begin(), text.row(r).end()}});
      entry.caption_ids.push_back(cid);
    }
  }
  fa::write_store(vr, static_cast<std::uint32_t>(vision.cols()), fa::Modality::vision, dir / "vision.fstore");
  fa::write_store(tr, static_cast<std::uint32_t>(text.cols()), fa::Modality::text, dir / "text.fstore");
  return fa::build_pairs(fa::StoreHandle::open(dir / "vision.fstore"), fa::StoreHandle::open(dir / "text.fstore"),
                         manifest);
}

/// Mean and 3σ half-width of the number of successes in n Bernoulli(p)
/// trials, expressed in percent.
inline double three_sigma_percent(double p, std::size_t n) {
  return 300.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

}  // namespace testing

#define FA_CHECK_THROWS_CODE(expr, errcode)                 \
  do {                                                      \
    bool thrown_ = false;                                   \
    try {                                                   \
      (void)(expr);                                         \
    } catch (const ::frozen_align::Error& e_) {             \
      thrown_ = true;                                       \
      CHECK_MESSAGE(e_.code() == (errcode), e_.what());     \
    }                                                       \
    CHECK_MESSAGE(thrown_, "expected " #errcode);           \
  } while (0)
