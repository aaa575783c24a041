#include "frozen_align/zeroshot_eval.hpp"

#include <algorithm>
#include <cstdio>
#include <unordered_map>

#include "frozen_align/error.hpp"
#include "frozen_align/kernels.hpp"
#include "frozen_align/text_io.hpp"

namespace frozen_align {

namespace {

constexpr std::size_t kChunk = 512;

double percent(std::size_t hits, std::size_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

// Copies rows [begin, begin+n) of `m`.
Matrix<float> row_block(const Matrix<float>& m, std::size_t begin, std::size_t n) {
  Matrix<float> out(n, m.cols());
  std::copy(m.row(begin).data(), m.row(begin).data() + n * m.cols(), out.data());
  return out;
}

// Number of entries ranked strictly ahead of `target` (higher score, or equal
// score at a lower index).
std::size_t rank_of(std::span<const float> scores, std::size_t target) {
  const float s = scores[target];
  std::size_t ahead = 0;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] > s || (scores[j] == s && j < target)) ++ahead;
  return ahead;
}

float dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += static_cast<double>(a[k]) * b[k];
  return static_cast<float>(s);
}

void check_width(const Matrix<float>& a, const Matrix<float>& b) {
  if (a.cols() != b.cols())
    throw Error(ErrorCode::DimMismatch,
                "image width " + std::to_string(a.cols()) + " vs text width " + std::to_string(b.cols()));
}

const char* verdict(bool ok) { return ok ? "correct" : "wrong"; }

}  // namespace

double EvalReport::metric(const std::string& name) const {
  for (const auto& [k, v] : metrics)
    if (k == name) return v;
  throw Error(ErrorCode::ParseError, "report for task '" + task + "' has no metric '" + name + "'");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [k, v] : metrics) m[k] = v;
  nlohmann::json j = {{"task", task},
                      {"dataset", dataset},
                      {"metrics", m},
                      {"sample_count", sample_count},
                      {"config_digest", config_digest}};
  if (!details.empty()) j["details"] = details;
  return j;
}

std::string EvalReport::to_table() const { return format_report_table(std::span(this, 1)); }

std::string format_report_table(std::span<const EvalReport> reports) {
  std::size_t wt = 4, wd = 7, wm = 6;
  for (const auto& r : reports) {
    wt = std::max(wt, r.task.size());
    wd = std::max(wd, r.dataset.size());
    for (const auto& [k, v] : r.metrics) wm = std::max(wm, k.size());
  }
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  std::string out = pad("task", wt) + "  " + pad("dataset", wd) + "  " + pad("metric", wm) + "     value  samples\n";
  for (const auto& r : reports) {
    for (const auto& [k, v] : r.metrics) {
      char num[64];
      std::snprintf(num, sizeof num, "%10.2f  %7zu", v, r.sample_count);
      out += pad(r.task, wt) + "  " + pad(r.dataset, wd) + "  " + pad(k, wm) + num + "\n";
    }
  }
  return out;
}

EvalReport eval_classification(const Matrix<float>& z_images, std::span<const std::size_t> labels,
                               const ClassifierMatrix& classifier, ClassificationMode mode,
                               std::span<const std::string> image_ids, bool verbose) {
  if (labels.size() != z_images.rows())
    throw Error(ErrorCode::ShapeMismatch, std::to_string(labels.size()) + " labels for " +
                                              std::to_string(z_images.rows()) + " images");
  if (labels.empty()) throw Error(ErrorCode::EmptyInput, "no labeled images to classify");
  const std::size_t nc = classifier.class_count();
  for (auto l : labels)
    if (l >= nc) throw Error(ErrorCode::UnresolvedId, "label index " + std::to_string(l) + " outside classifier");

  std::vector<std::size_t> seen(nc, 0), right(nc, 0);
  std::size_t correct = 0;
  EvalReport report;
  report.task = "classification";
  report.sample_count = labels.size();
  for (std::size_t begin = 0; begin < labels.size(); begin += kChunk) {
    const auto n = std::min(kChunk, labels.size() - begin);
    const auto scores = score_matrix(row_block(z_images, begin, n), classifier);
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t i = begin + r;
      const auto pred = predict(scores.row(r));
      const bool ok = pred == labels[i];
      ++seen[labels[i]];
      if (ok) {
        ++right[labels[i]];
        ++correct;
      }
      if (verbose) {
        const std::string id = i < image_ids.size() ? image_ids[i] : std::to_string(i);
        report.details.push_back(id + "\tpredicted=" + classifier.classes[pred] +
                                 "\tlabel=" + classifier.classes[labels[i]] + "\t" + verdict(ok));
      }
    }
  }

  if (mode != ClassificationMode::per_class_mean) report.metrics.emplace_back("top1", percent(correct, labels.size()));
  if (mode != ClassificationMode::top1) {
    double sum = 0.0;
    for (std::size_t c = 0; c < nc; ++c) {
      if (seen[c] == 0) throw Error(ErrorCode::EmptyClass, "class '" + classifier.classes[c] + "' has no samples");
      sum += percent(right[c], seen[c]);
    }
    report.metrics.emplace_back("per_class_mean", sum / static_cast<double>(nc));
  }
  return report;
}

std::vector<LabelEntry> read_label_manifest(const std::filesystem::path& path) {
  std::vector<LabelEntry> out;
  for (auto& row : read_tsv(path, 2)) out.push_back({std::move(row[0]), std::move(row[1])});
  return out;
}

LabeledImages resolve_labels(const StoreHandle& vision, std::span<const LabelEntry> entries,
                             std::span<const std::string> classes) {
  std::unordered_map<std::string_view, std::size_t> class_index;
  for (std::size_t c = 0; c < classes.size(); ++c) class_index.emplace(classes[c], c);
  LabeledImages out;
  for (const auto& e : entries) {
    auto it = class_index.find(e.class_id);
    if (it == class_index.end())
      throw Error(ErrorCode::UnresolvedId, "image '" + e.image_id + "' labeled with unknown class '" + e.class_id + "'");
    out.image_ids.push_back(e.image_id);
    out.labels.push_back(it->second);
  }
  out.rows = resolve_ids(vision, out.image_ids);
  return out;
}

EvalReport eval_retrieval(const Matrix<float>& z_images, const Matrix<float>& z_texts,
                          std::span<const std::size_t> text_image, std::size_t k) {
  check_width(z_images, z_texts);
  const std::size_t ni = z_images.rows(), nt = z_texts.rows();
  if (text_image.size() != nt)
    throw Error(ErrorCode::ShapeMismatch,
                std::to_string(text_image.size()) + " pairings for " + std::to_string(nt) + " texts");
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "K must be at least 1");
  if (k > ni || k > nt)
    throw Error(ErrorCode::KExceedsCorpus, "K=" + std::to_string(k) + " but corpus has " + std::to_string(ni) +
                                               " images and " + std::to_string(nt) + " texts");
  std::vector<std::vector<std::size_t>> texts_of(ni);
  for (std::size_t t = 0; t < nt; ++t) {
    if (text_image[t] >= ni) throw Error(ErrorCode::UnresolvedId, "text " + std::to_string(t) + " paired with missing image");
    texts_of[text_image[t]].push_back(t);
  }

  Matrix<float> sims;
  std::size_t t2i_hits = 0;
  for (std::size_t begin = 0; begin < nt; begin += kChunk) {
    const auto n = std::min(kChunk, nt - begin);
    kernels::matmul_nt(row_block(z_texts, begin, n), z_images, sims);
    for (std::size_t r = 0; r < n; ++r)
      if (rank_of(sims.row(r), text_image[begin + r]) < k) ++t2i_hits;
  }

  // The best-ranked matched text decides an image's hit.
  std::size_t i2t_hits = 0, i2t_total = 0;
  for (std::size_t begin = 0; begin < ni; begin += kChunk) {
    const auto n = std::min(kChunk, ni - begin);
    kernels::matmul_nt(row_block(z_images, begin, n), z_texts, sims);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& matched = texts_of[begin + r];
      if (matched.empty()) continue;
      ++i2t_total;
      const auto row = sims.row(r);
      std::size_t best = matched.front();
      for (auto t : matched)
        if (row[t] > row[best]) best = t;
      if (rank_of(row, best) < k) ++i2t_hits;
    }
  }

  EvalReport report;
  report.task = "retrieval";
  report.sample_count = nt;
  const auto suffix = "_recall@" + std::to_string(k);
  report.metrics.emplace_back("t2i" + suffix, percent(t2i_hits, nt));
  report.metrics.emplace_back("i2t" + suffix, percent(i2t_hits, i2t_total));
  return report;
}

WinogroundVerdict judge_winoground(double s00, double s01, double s10, double s11) noexcept {
  WinogroundVerdict v;
  v.text = s00 > s10 && s11 > s01;
  v.image = s00 > s01 && s11 > s10;
  v.group = v.text && v.image;
  return v;
}

EvalReport eval_winoground(const Matrix<float>& z_images, const Matrix<float>& z_texts,
                           std::span<const std::array<std::size_t, 4>> index, bool verbose) {
  check_width(z_images, z_texts);
  if (index.empty()) throw Error(ErrorCode::EmptyInput, "no winoground items");
  std::size_t text = 0, image = 0, group = 0;
  EvalReport report;
  report.task = "winoground";
  report.sample_count = index.size();
  for (std::size_t n = 0; n < index.size(); ++n) {
    const auto [i0, i1, c0, c1] = index[n];
    const auto s = [&](std::size_t c, std::size_t i) { return static_cast<double>(dot(z_texts.row(c), z_images.row(i))); };
    const auto v = judge_winoground(s(c0, i0), s(c0, i1), s(c1, i0), s(c1, i1));
    text += v.text;
    image += v.image;
    group += v.group;
    if (verbose)
      report.details.push_back("item " + std::to_string(n) + "\ttext=" + verdict(v.text) + "\timage=" + verdict(v.image) +
                               "\tgroup=" + verdict(v.group));
  }
  report.metrics = {{"text", percent(text, index.size())},
                    {"image", percent(image, index.size())},
                    {"group", percent(group, index.size())}};
  return report;
}

EvalReport eval_caption_choice(const Matrix<float>& z_images, const Matrix<float>& z_texts,
                               std::span<const std::array<std::size_t, 3>> index, bool verbose) {
  check_width(z_images, z_texts);
  if (index.empty()) throw Error(ErrorCode::EmptyInput, "no caption-choice items");
  std::size_t correct = 0;
  EvalReport report;
  report.task = "caption_choice";
  report.sample_count = index.size();
  for (std::size_t n = 0; n < index.size(); ++n) {
    const auto [img, pos, neg] = index[n];
    const bool ok = dot(z_images.row(img), z_texts.row(pos)) > dot(z_images.row(img), z_texts.row(neg));
    correct += ok;
    if (verbose) report.details.push_back("item " + std::to_string(n) + "\t" + verdict(ok));
  }
  report.metrics = {{"accuracy", percent(correct, index.size())}};
  return report;
}

namespace {

struct Dedup {
  std::vector<std::string> unique;
  std::vector<std::size_t> index;
};

Dedup dedup(std::span<const std::string> ids) {
  Dedup d;
  std::unordered_map<std::string_view, std::size_t> pos;
  for (const auto& id : ids) {
    auto [it, fresh] = pos.emplace(id, d.unique.size());
    if (fresh) d.unique.push_back(id);
    d.index.push_back(it->second);
  }
  return d;
}

}  // namespace

EmbeddedIds embed_images(const StoreHandle& vision, std::span<const std::string> ids) {
  auto d = dedup(ids);
  return {normalized_vision_rows(vision, resolve_ids(vision, d.unique)), std::move(d.index)};
}

EmbeddedIds embed_texts(ProjectionNet& net, const StoreHandle& text, std::span<const std::string> ids) {
  auto d = dedup(ids);
  return {project_text_rows(net, text, resolve_ids(text, d.unique)), std::move(d.index)};
}

EvalReport eval_winoground(std::span<const WinogroundItem> items, ProjectionNet& net, const StoreHandle& vision,
                           const StoreHandle& text, bool verbose) {
  std::vector<std::string> image_ids, text_ids;
  for (const auto& it : items) {
    image_ids.insert(image_ids.end(), {it.image0, it.image1});
    text_ids.insert(text_ids.end(), {it.caption0, it.caption1});
  }
  const auto zi = embed_images(vision, image_ids);
  const auto zt = embed_texts(net, text, text_ids);
  std::vector<std::array<std::size_t, 4>> index(items.size());
  for (std::size_t n = 0; n < items.size(); ++n)
    index[n] = {zi.index[2 * n], zi.index[2 * n + 1], zt.index[2 * n], zt.index[2 * n + 1]};
  auto report = eval_winoground(zi.embeddings, zt.embeddings, index, verbose);
  if (verbose)
    for (std::size_t n = 0; n < items.size(); ++n)
      report.details[n] = items[n].image0 + "|" + items[n].image1 + report.details[n].substr(report.details[n].find('\t'));
  return report;
}

EvalReport eval_caption_choice(std::span<const CaptionChoiceItem> items, ProjectionNet& net, const StoreHandle& vision,
                               const StoreHandle& text, bool verbose) {
  std::vector<std::string> image_ids, text_ids;
  for (const auto& it : items) {
    image_ids.push_back(it.image);
    text_ids.insert(text_ids.end(), {it.positive, it.negative});
  }
  const auto zi = embed_images(vision, image_ids);
  const auto zt = embed_texts(net, text, text_ids);
  std::vector<std::array<std::size_t, 3>> index(items.size());
  for (std::size_t n = 0; n < items.size(); ++n) index[n] = {zi.index[n], zt.index[2 * n], zt.index[2 * n + 1]};
  auto report = eval_caption_choice(zi.embeddings, zt.embeddings, index, verbose);
  if (verbose)
    for (std::size_t n = 0; n < items.size(); ++n)
      report.details[n] = items[n].image + report.details[n].substr(report.details[n].find('\t'));
  return report;
}

std::vector<WinogroundItem> read_winoground_items(const std::filesystem::path& path) {
  std::vector<WinogroundItem> out;
  for (auto& r : read_tsv(path, 4)) {
    if (r[0] == r[1] || r[2] == r[3])
      throw Error(ErrorCode::ParseError, path.string() + ": item " + std::to_string(out.size() + 1) +
                                             " repeats an image or caption id");
    out.push_back({std::move(r[0]), std::move(r[1]), std::move(r[2]), std::move(r[3])});
  }
  return out;
}

std::vector<CaptionChoiceItem> read_caption_choice_items(const std::filesystem::path& path) {
  std::vector<CaptionChoiceItem> out;
  for (auto& r : read_tsv(path, 3)) out.push_back({std::move(r[0]), std::move(r[1]), std::move(r[2])});
  return out;
}

}  // namespace frozen_align
