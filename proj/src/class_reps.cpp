#include "frozen_align/class_reps.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "frozen_align/contrastive.hpp"
#include "frozen_align/error.hpp"
#include "frozen_align/kernels.hpp"
#include "frozen_align/text_io.hpp"

namespace frozen_align {

namespace {

constexpr std::array<std::string_view, 3> kKindNames = {"templates", "description", "article_sentences"};

// Lower-cased tokens (without the final period) after which a period does
// not end a sentence.
constexpr std::array<std::string_view, 22> kAbbreviations = {
    "e.g", "i.e", "mr", "mrs", "ms", "dr", "st", "vs", "mt", "no", "fig", "cf",
    "ca", "approx", "jr", "sr", "prof", "al", "sp", "spp", "var", "subsp"};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }
bool is_closing(char c) { return c == '"' || c == '\'' || c == ')' || c == ']'; }

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Word immediately before position `end` (exclusive), opening punctuation
// stripped.
std::string_view word_before(std::string_view text, std::size_t end) {
  std::size_t begin = end;
  while (begin > 0 && !is_space(text[begin - 1])) --begin;
  auto w = text.substr(begin, end - begin);
  while (!w.empty() && (w.front() == '(' || w.front() == '"' || w.front() == '\'' || w.front() == '['))
    w.remove_prefix(1);
  return w;
}

// First character of the next word, or 0 at end of text.
char next_word_start(std::string_view text, std::size_t pos) {
  while (pos < text.size() && is_space(text[pos])) ++pos;
  while (pos < text.size() && (text[pos] == '"' || text[pos] == '\'' || text[pos] == '(' || text[pos] == '['))
    ++pos;
  return pos < text.size() ? text[pos] : '\0';
}

bool ends_sentence(std::string_view text, std::size_t punct_begin, std::size_t after) {
  const char next = next_word_start(text, after);
  if (next == '\0') return true;
  if (std::islower(static_cast<unsigned char>(next))) return false;
  // Guards only apply to a single period directly after a word.
  if (text[punct_begin] != '.' || after - punct_begin != 1) return true;
  const std::string word = lower(word_before(text, punct_begin));
  if (word == "etc") return std::isupper(static_cast<unsigned char>(next)) != 0;
  if (std::find(kAbbreviations.begin(), kAbbreviations.end(), word) != kAbbreviations.end()) return false;
  const auto raw = word_before(text, punct_begin);
  if (raw.size() == 1 && std::isupper(static_cast<unsigned char>(raw[0]))) return false;  // initial
  return true;
}

std::string list_ids(std::span<const std::string> ids) {
  constexpr std::size_t kShown = 20;
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < kShown; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > kShown) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

}  // namespace

std::string_view to_string(RepresentationKind kind) noexcept { return kKindNames[static_cast<std::size_t>(kind)]; }

RepresentationKind representation_kind_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kKindNames.size(); ++i)
    if (kKindNames[i] == s) return static_cast<RepresentationKind>(i);
  throw Error(ErrorCode::ParseError, "unknown representation kind '" + std::string(s) +
                                         "' (expected templates, description or article_sentences)");
}

std::size_t ClassRepresentationSet::text_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : texts) n += t.size();
  return n;
}

std::size_t ClassRepresentationSet::class_index(std::string_view class_id) const {
  auto it = std::find(classes.begin(), classes.end(), class_id);
  if (it == classes.end()) throw Error(ErrorCode::UnresolvedId, "no representation for class '" + std::string(class_id) + "'");
  return static_cast<std::size_t>(it - classes.begin());
}

ClassRepresentationSet ClassRepresentationSet::restrict_to(std::span<const std::string> class_ids) const {
  ClassRepresentationSet out;
  out.kind = kind;
  for (const auto& id : class_ids) {
    const auto c = class_index(id);
    out.classes.push_back(classes[c]);
    out.texts.push_back(texts[c]);
    out.text_ids.push_back(text_ids[c]);
  }
  return out;
}

std::string class_text_id(RepresentationKind kind, std::string_view class_id, std::size_t index) {
  return std::string(to_string(kind)) + "/" + std::string(class_id) + "/" + std::to_string(index);
}

ClassRepresentationSet expand_templates(std::span<const std::string> class_names,
                                        std::span<const std::string> templates) {
  if (templates.empty()) throw Error(ErrorCode::BadTemplate, "template list is empty");
  for (const auto& t : templates) {
    const auto first = t.find(kPlaceholder);
    if (first == std::string::npos) throw Error(ErrorCode::BadTemplate, "no '{}' placeholder in \"" + t + "\"");
    if (t.find(kPlaceholder, first + kPlaceholder.size()) != std::string::npos)
      throw Error(ErrorCode::BadTemplate, "several '{}' placeholders in \"" + t + "\"");
  }
  ClassRepresentationSet out;
  out.kind = RepresentationKind::templates;
  for (const auto& name : class_names) {
    out.classes.push_back(name);
    auto& texts = out.texts.emplace_back();
    auto& ids = out.text_ids.emplace_back();
    for (const auto& t : templates) {
      std::string text = t;
      text.replace(text.find(kPlaceholder), kPlaceholder.size(), name);
      ids.push_back(class_text_id(out.kind, name, texts.size()));
      texts.push_back(std::move(text));
    }
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view article) {
  const auto text = trim(article);
  if (text.empty()) throw Error(ErrorCode::EmptyInput, "article contains no text");
  std::vector<std::string> out;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_terminal(text[i])) {
      ++i;
      continue;
    }
    const std::size_t punct_begin = i;
    while (i < text.size() && is_terminal(text[i])) ++i;
    while (i < text.size() && is_closing(text[i])) ++i;
    if (i < text.size() && !is_space(text[i])) continue;  // e.g. "3.5" or "a.b"
    if (!ends_sentence(text, punct_begin, i)) continue;
    const auto sentence = trim(text.substr(start, i - start));
    if (!sentence.empty()) out.emplace_back(sentence);
    start = i;
  }
  const auto tail = trim(text.substr(start));
  if (!tail.empty()) out.emplace_back(tail);
  return out;
}

std::vector<std::string> read_templates(const std::filesystem::path& path) {
  auto lines = read_lines(path, /*skip_comments=*/false);
  for (auto& l : lines) l = std::string(trim(l));
  std::erase_if(lines, [](const std::string& l) { return l.empty(); });
  if (lines.empty()) throw Error(ErrorCode::BadTemplate, "no templates in '" + path.string() + "'");
  return lines;
}

ClassRepresentationSet load_class_representations(const std::filesystem::path& root, RepresentationKind kind,
                                                  std::span<const std::string> class_ids,
                                                  std::span<const std::string> templates) {
  const auto dir = root / std::string(to_string(kind));
  std::vector<std::string> ids(class_ids.begin(), class_ids.end());
  if (ids.empty()) {
    if (!std::filesystem::is_directory(dir))
      throw Error(ErrorCode::IoFailure, "representation directory '" + dir.string() + "' does not exist");
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".txt") ids.push_back(entry.path().stem().string());
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw Error(ErrorCode::EmptyInput, "no class files in '" + dir.string() + "'");
  }

  ClassRepresentationSet out;
  out.kind = kind;
  for (const auto& id : ids) {
    const auto file = dir / (id + ".txt");
    std::vector<std::string> texts;
    switch (kind) {
      case RepresentationKind::templates: {
        const auto lines = read_lines(file, false);
        if (lines.empty()) throw Error(ErrorCode::EmptyInput, "no class name in '" + file.string() + "'");
        const std::string name(trim(lines.front()));
        texts = expand_templates(std::span(&name, 1), templates).texts.front();
        break;
      }
      case RepresentationKind::description:
        for (const auto& l : read_lines(file, false))
          if (!trim(l).empty()) texts.emplace_back(trim(l));
        break;
      case RepresentationKind::article_sentences:
        texts = split_sentences(read_file(file));
        break;
    }
    if (texts.empty()) throw Error(ErrorCode::EmptyInput, "no texts for class '" + id + "' in '" + file.string() + "'");
    out.classes.push_back(id);
    auto& tid = out.text_ids.emplace_back();
    for (std::size_t k = 0; k < texts.size(); ++k) tid.push_back(class_text_id(kind, id, k));
    out.texts.push_back(std::move(texts));
  }
  return out;
}

std::vector<std::size_t> resolve_ids(const StoreHandle& store, std::span<const std::string> ids) {
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  std::vector<std::string> missing;
  for (const auto& id : ids) {
    if (auto r = store.find(id))
      rows.push_back(*r);
    else
      missing.push_back(id);
  }
  if (!missing.empty())
    throw Error(ErrorCode::MissingEmbedding, std::to_string(missing.size()) + " id(s) absent from '" +
                                                 store.path().string() + "': " + list_ids(missing));
  return rows;
}

Matrix<float> project_text_rows(ProjectionNet& net, const StoreHandle& text_store, std::span<const std::size_t> rows,
                                std::size_t chunk) {
  Matrix<float> out(rows.size(), net.config().output_dim);
  Matrix<float> features;
  for (std::size_t begin = 0; begin < rows.size(); begin += chunk) {
    const auto n = std::min(chunk, rows.size() - begin);
    text_store.gather(rows.subspan(begin, n), features);
    const auto z = normalize(net.forward(features, Mode::eval).output);
    std::copy(z.data.data(), z.data.data() + z.data.size(), out.row(begin).data());
  }
  return out;
}

Matrix<float> normalized_vision_rows(const StoreHandle& vision_store, std::span<const std::size_t> rows) {
  Matrix<float> features;
  vision_store.gather(rows, features);
  return normalize(features).data;
}

ClassifierMatrix build_classifier(const ClassRepresentationSet& reps, ProjectionNet& net, const StoreHandle& text_store) {
  ClassifierMatrix out;
  out.classes = reps.classes;
  out.offsets.push_back(0);
  std::vector<std::string> ids;
  for (std::size_t c = 0; c < reps.classes.size(); ++c) {
    if (reps.text_ids[c].empty()) throw Error(ErrorCode::EmptyInput, "class '" + reps.classes[c] + "' has no texts");
    ids.insert(ids.end(), reps.text_ids[c].begin(), reps.text_ids[c].end());
    out.offsets.push_back(ids.size());
  }
  const auto rows = resolve_ids(text_store, ids);
  out.rows = project_text_rows(net, text_store, rows);
  return out;
}

std::vector<double> score_classes(std::span<const float> z_img, const ClassifierMatrix& classifier) {
  if (z_img.size() != classifier.rows.cols())
    throw Error(ErrorCode::DimMismatch, "image embedding width " + std::to_string(z_img.size()) +
                                            " vs classifier width " + std::to_string(classifier.rows.cols()));
  std::vector<double> scores(classifier.class_count());
  for (std::size_t c = 0; c < scores.size(); ++c) {
    double sum = 0.0;
    for (std::size_t r = classifier.offsets[c]; r < classifier.offsets[c + 1]; ++r) {
      const auto row = classifier.rows.row(r);
      double dot = 0.0;
      for (std::size_t k = 0; k < row.size(); ++k) dot += static_cast<double>(z_img[k]) * row[k];
      sum += dot;
    }
    scores[c] = sum / static_cast<double>(classifier.offsets[c + 1] - classifier.offsets[c]);
  }
  return scores;
}

Matrix<float> score_matrix(const Matrix<float>& z_images, const ClassifierMatrix& classifier) {
  if (z_images.cols() != classifier.rows.cols())
    throw Error(ErrorCode::DimMismatch, "image embedding width " + std::to_string(z_images.cols()) +
                                            " vs classifier width " + std::to_string(classifier.rows.cols()));
  Matrix<float> sims;
  kernels::matmul_nt(z_images, classifier.rows, sims);
  Matrix<float> out(z_images.rows(), classifier.class_count());
  for (std::size_t i = 0; i < out.rows(); ++i) {
    const auto s = sims.row(i);
    for (std::size_t c = 0; c < out.cols(); ++c) {
      double sum = 0.0;
      for (std::size_t r = classifier.offsets[c]; r < classifier.offsets[c + 1]; ++r) sum += s[r];
      out(i, c) = static_cast<float>(sum / static_cast<double>(classifier.offsets[c + 1] - classifier.offsets[c]));
    }
  }
  return out;
}

}  // namespace frozen_align
