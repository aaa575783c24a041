#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "frozen_align/feature_store.hpp"
#include "frozen_align/matrix.hpp"
#include "frozen_align/projection_net.hpp"

namespace frozen_align {

enum class RepresentationKind { templates, description, article_sentences };

std::string_view to_string(RepresentationKind kind) noexcept;
RepresentationKind representation_kind_from_string(std::string_view s);

/// Texts standing in for each class. `text_ids[c][k]` is the text-store key
/// holding the embedding of `texts[c][k]`.
struct ClassRepresentationSet {
  RepresentationKind kind = RepresentationKind::templates;
  std::vector<std::string> classes;
  std::vector<std::vector<std::string>> texts;
  std::vector<std::vector<std::string>> text_ids;

  std::size_t text_count() const noexcept;
  std::size_t class_index(std::string_view class_id) const;  // throws UnresolvedId

  /// Same representation restricted to (and ordered as) `class_ids`.
  ClassRepresentationSet restrict_to(std::span<const std::string> class_ids) const;
};

inline constexpr std::string_view kPlaceholder = "{}";

/// Store key convention for class texts: "<kind>/<class_id>/<index>".
std::string class_text_id(RepresentationKind kind, std::string_view class_id, std::size_t index);

/// Every (class, template) pair with the single "{}" placeholder replaced by
/// the class name. Throws BadTemplate for zero or several placeholders.
ClassRepresentationSet expand_templates(std::span<const std::string> class_names,
                                        std::span<const std::string> templates);

/// Sentence segmentation on terminal punctuation followed by whitespace,
/// guarded against common abbreviations and initials. Throws EmptyInput.
std::vector<std::string> split_sentences(std::string_view article);

/// Reads `<root>/<kind>/<class_id>.txt` for each class (all files, sorted,
/// when `class_ids` is empty):
///   templates          first line is the class name, expanded with `templates`
///   description        one text per non-empty line
///   article_sentences  whole file, split into sentences
ClassRepresentationSet load_class_representations(const std::filesystem::path& root, RepresentationKind kind,
                                                  std::span<const std::string> class_ids = {},
                                                  std::span<const std::string> templates = {});

/// Template list file: one template per non-empty line.
std::vector<std::string> read_templates(const std::filesystem::path& path);

/// Projected, normalized text embeddings grouped by class: rows
/// [offsets[c], offsets[c+1]) belong to class c.
struct ClassifierMatrix {
  std::vector<std::string> classes;
  Matrix<float> rows;
  std::vector<std::size_t> offsets;

  std::size_t class_count() const noexcept { return classes.size(); }
};

/// Gathers the given text-store rows, projects them in eval mode (in chunks
/// of `chunk` rows) and normalizes each output row.
Matrix<float> project_text_rows(ProjectionNet& net, const StoreHandle& text_store, std::span<const std::size_t> rows,
                                std::size_t chunk = 4096);

/// Gathers the given vision-store rows and normalizes them (identity map on
/// the vision side).
Matrix<float> normalized_vision_rows(const StoreHandle& vision_store, std::span<const std::size_t> rows);

/// Resolves ids to rows; throws MissingEmbedding naming every absent id.
std::vector<std::size_t> resolve_ids(const StoreHandle& store, std::span<const std::string> ids);

/// Looks every text id up in `text_store` (MissingEmbedding lists all absent
/// ids), projects in eval mode and normalizes. No embedding averaging.
ClassifierMatrix build_classifier(const ClassRepresentationSet& reps, ProjectionNet& net, const StoreHandle& text_store);

/// Per-class mean of ⟨z_img, row⟩ over the class's rows.
std::vector<double> score_classes(std::span<const float> z_img, const ClassifierMatrix& classifier);

/// Scores for a batch of normalized image embeddings (n × classes).
Matrix<float> score_matrix(const Matrix<float>& z_images, const ClassifierMatrix& classifier);

/// Argmax with the lowest index winning ties.
template <class Range>
std::size_t predict(const Range& scores) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < std::size(scores); ++c)
    if (scores[c] > scores[best]) best = c;
  return best;
}

}  // namespace frozen_align
