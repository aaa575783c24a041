#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "frozen_align/class_reps.hpp"
#include "frozen_align/feature_store.hpp"
#include "frozen_align/matrix.hpp"
#include "frozen_align/projection_net.hpp"

namespace frozen_align {

/// Named percentages for one task on one dataset.
struct EvalReport {
  std::string task;
  std::string dataset;
  std::vector<std::pair<std::string, double>> metrics;
  std::size_t sample_count = 0;
  std::string config_digest;
  /// Per-item verdict lines, filled when verbose output is requested.
  std::vector<std::string> details;

  double metric(const std::string& name) const;  // throws ParseError
  nlohmann::json to_json() const;
  std::string to_table() const;
};

/// Fixed-width text table with one line per (task, dataset, metric).
std::string format_report_table(std::span<const EvalReport> reports);

// ---- classification -------------------------------------------------------

enum class ClassificationMode { top1, per_class_mean, both };

/// `labels[i]` indexes `classifier.classes`. Rows of `z_images` are
/// normalized image embeddings. per_class_mean throws EmptyClass when a
/// classifier class has no samples.
EvalReport eval_classification(const Matrix<float>& z_images, std::span<const std::size_t> labels,
                               const ClassifierMatrix& classifier, ClassificationMode mode = ClassificationMode::both,
                               std::span<const std::string> image_ids = {}, bool verbose = false);

struct LabelEntry {
  std::string image_id;
  std::string class_id;
};

/// `image_id<TAB>class_id` lines; blank lines and '#' comments skipped.
std::vector<LabelEntry> read_label_manifest(const std::filesystem::path& path);

/// Label entries resolved against a store and a class list.
struct LabeledImages {
  std::vector<std::string> image_ids;
  std::vector<std::size_t> rows;
  std::vector<std::size_t> labels;
};

/// Throws MissingEmbedding for absent images, UnresolvedId for labels not in
/// `classes`.
LabeledImages resolve_labels(const StoreHandle& vision, std::span<const LabelEntry> entries,
                             std::span<const std::string> classes);

// ---- retrieval ------------------------------------------------------------

/// `text_image[t]` is the image matched by text t. Reports text-to-image and
/// image-to-text Recall@K (an image counts as retrieved when any of its
/// texts lands in its top K). Ties rank the lower index first. Throws
/// KExceedsCorpus when K exceeds the number of images or texts.
EvalReport eval_retrieval(const Matrix<float>& z_images, const Matrix<float>& z_texts,
                          std::span<const std::size_t> text_image, std::size_t k);

// ---- compositional reasoning ----------------------------------------------

/// (c0, i0) and (c1, i1) are the matched pairs.
struct WinogroundItem {
  std::string image0, image1, caption0, caption1;
};

struct WinogroundVerdict {
  bool text = false;
  bool image = false;
  bool group = false;
};

/// s_ci = similarity of caption c and image i. Strict inequalities.
WinogroundVerdict judge_winoground(double s00, double s01, double s10, double s11) noexcept;

/// Rows of z_images/z_texts hold the embeddings for `index[n] = {i0, i1, c0, c1}`.
EvalReport eval_winoground(const Matrix<float>& z_images, const Matrix<float>& z_texts,
                           std::span<const std::array<std::size_t, 4>> index, bool verbose = false);

/// Looks up, projects and scores items straight from the stores.
EvalReport eval_winoground(std::span<const WinogroundItem> items, ProjectionNet& net, const StoreHandle& vision,
                           const StoreHandle& text, bool verbose = false);

/// TSV `image0 image1 caption0 caption1`; the four ids must be pairwise
/// distinct within their modality.
std::vector<WinogroundItem> read_winoground_items(const std::filesystem::path& path);

struct CaptionChoiceItem {
  std::string image, positive, negative;
};

/// Rows index = {image, positive, negative}; correct iff ⟨img,pos⟩ > ⟨img,neg⟩.
EvalReport eval_caption_choice(const Matrix<float>& z_images, const Matrix<float>& z_texts,
                               std::span<const std::array<std::size_t, 3>> index, bool verbose = false);

EvalReport eval_caption_choice(std::span<const CaptionChoiceItem> items, ProjectionNet& net, const StoreHandle& vision,
                               const StoreHandle& text, bool verbose = false);

/// TSV `image positive negative`.
std::vector<CaptionChoiceItem> read_caption_choice_items(const std::filesystem::path& path);

// ---- embedding helpers ----------------------------------------------------

/// Deduplicated embeddings for a list of ids: `index[n]` is the row of
/// `ids[n]` in `embeddings`. Throws MissingEmbedding naming absent ids.
struct EmbeddedIds {
  Matrix<float> embeddings;
  std::vector<std::size_t> index;
};

EmbeddedIds embed_images(const StoreHandle& vision, std::span<const std::string> ids);
EmbeddedIds embed_texts(ProjectionNet& net, const StoreHandle& text, std::span<const std::string> ids);

}  // namespace frozen_align
