#pragma once

// Seen/unseen class benchmark: train the projection on images of seen
// classes paired with their class texts, then score unseen classes by
// per-class mean accuracy using only their texts.
//
// Split file format (one class id per line, '#' comments, a leading
// "# provenance: ..." line is kept as the provenance note):
//
//   [seen]
//   class_a
//   [unseen]
//   class_b

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "frozen_align/class_reps.hpp"
#include "frozen_align/feature_store.hpp"
#include "frozen_align/trainer.hpp"
#include "frozen_align/zeroshot_eval.hpp"

namespace frozen_align {

struct ViterbSplit {
  std::string dataset;
  std::vector<std::string> seen;
  std::vector<std::string> unseen;
  std::string provenance;

  /// Throws OverlapDetected if a class is both seen and unseen (or listed
  /// twice), EmptyInput if either side is empty.
  void validate() const;
};

ViterbSplit parse_split(std::string_view text, std::string dataset);
ViterbSplit read_split(const std::filesystem::path& path, std::string dataset);
std::string format_split(const ViterbSplit& split);
void write_split(const ViterbSplit& split, const std::filesystem::path& path);

/// Seeded random assignment of `classes` into n_seen / n_unseen. Throws
/// CountMismatch unless n_seen + n_unseen == classes.size().
ViterbSplit random_split(std::string dataset, std::span<const std::string> classes, std::size_t n_seen,
                         std::size_t n_unseen, std::uint64_t seed);

/// `seen` stays as given; the `n_unseen` most frequent other classes of the
/// `class<TAB>count` table become unseen (ties broken by class id). Throws
/// CountMismatch if too few candidates remain.
ViterbSplit frequency_split(std::string dataset, std::span<const std::string> seen,
                            const std::filesystem::path& frequency_file, std::size_t n_unseen);

/// `spec` is one of
///   {"file": "splits/cub.txt"}
///   {"classes": "classes.txt" | [ids...], "seen": 50, "unseen": 20, "seed": 7}
///   {"seen_file": "in1k.txt", "frequency_file": "in21k_counts.tsv", "unseen": 500}
/// Relative paths resolve against `base_dir`.
ViterbSplit load_or_make_split(const std::string& dataset, const nlohmann::json& spec,
                               const std::filesystem::path& base_dir);

/// Everything one dataset run needs. `reps` must cover seen and unseen.
struct ViterbInputs {
  ViterbSplit split;
  StoreHandle vision;
  StoreHandle text;
  std::vector<LabelEntry> train_labels;  // seen-class training images
  std::vector<LabelEntry> eval_labels;   // unseen-class evaluation images
  ClassRepresentationSet reps;
  TrainConfig train;
  /// Control run: pool the unseen classes' texts and redistribute them at
  /// random before evaluation.
  std::optional<std::uint64_t> shuffle_unseen_seed;
};

struct ViterbEntry {
  std::string dataset;
  RepresentationKind kind = RepresentationKind::templates;
  double unseen_accuracy = 0.0;  // per-class mean over unseen classes, percent
  std::size_t seen_classes = 0;
  std::size_t unseen_classes = 0;
  std::size_t train_images = 0;
  std::size_t eval_images = 0;
  TrainReport train_report;
  EvalReport eval_report;
};

/// Throws LeakDetected when an unseen-class image or text would be (or was)
/// read during training.
ViterbEntry run_viterb(const ViterbInputs& inputs, AccessLog* log = nullptr);

/// Training-set audit done before any training.
void check_no_leak(const ViterbSplit& split, std::span<const LabelEntry> train_labels,
                   std::span<const LabelEntry> eval_labels, const ClassRepresentationSet& reps,
                   const StoreHandle& text);

/// Post-training audit of the rows actually read.
void check_access_log(const AccessLog& log, std::span<const std::size_t> unseen_image_rows,
                      std::span<const std::size_t> unseen_text_rows);

/// Pools the texts of all classes and deals them back at random, keeping
/// each class's text count.
ClassRepresentationSet shuffle_representations(const ClassRepresentationSet& reps, std::uint64_t seed);

/// Text ids of the form "<kind>/<class>/<n>" present in the store, grouped
/// per class in index order. Throws MissingEmbedding for classes without any.
ClassRepresentationSet representations_from_store(const StoreHandle& text, RepresentationKind kind,
                                                  std::span<const std::string> classes);

struct ViterbResult {
  RepresentationKind kind = RepresentationKind::templates;
  std::vector<ViterbEntry> entries;
  double mean = 0.0;

  nlohmann::json to_json() const;
};

/// Unweighted mean over the datasets in `expected` (all of them must be
/// present; throws MissingDataset otherwise).
ViterbResult aggregate(std::span<const ViterbEntry> entries, std::span<const std::string> expected);

/// One row per label, one column per representation kind, cells holding the
/// dataset-averaged unseen accuracy; followed by the per-dataset breakdown.
std::string viterb_summary_table(const std::string& label, std::span<const ViterbResult> results);

}  // namespace frozen_align
