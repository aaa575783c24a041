#pragma once

// Small synthetic worlds with known structure, used by the tests, the
// acceptance checks and the toy-data tool.
//
// Each class k has a latent centroid c_k. An image is v = P_v·(c_k + a·ε) and
// each of its captions is t = P_t·(same latent) + b·ε'. Class texts are
// P_t·c_k + b·ε''. P_v and P_t are fixed random maps, so a projection that
// learns to undo P_t on seen classes transfers to unseen ones as long as the
// seen centroids span the latent space.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "frozen_align/matrix.hpp"
#include "frozen_align/random.hpp"

namespace frozen_align::synthetic {

struct Spec {
  std::size_t latent_dim = 4;
  std::size_t vision_dim = 8;
  std::size_t text_dim = 16;
  std::size_t classes = 6;
  std::size_t images_per_class = 24;
  std::size_t captions_per_image = 2;
  std::size_t texts_per_class = 3;
  double image_noise = 0.3;
  double text_noise = 0.1;
  std::uint64_t seed = 0;
};

/// Matrix of independent N(0, stddev²) draws.
Matrix<float> gaussian(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);

/// Rows drawn uniformly from the unit sphere.
Matrix<float> random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng);

std::string class_id(std::size_t k);
std::string image_id(std::size_t k, std::size_t n);
std::string caption_id(std::size_t k, std::size_t n, std::size_t j);

/// Writes a complete toy workspace into `dir`:
///   vision.fstore, text.fstore     embeddings (text store also holds the
///                                  class texts as templates/<class>/<n> and
///                                  description/<class>/<n>)
///   pairs.tsv, labels.tsv          image/caption and image/class manifests
///   classes.txt, templates.txt, reps/{templates,description}/<class>.txt
///   split.txt, train_labels.tsv, eval_labels.tsv   seen/unseen benchmark
///   train.json, eval.json, viterb.json             ready-to-run configs
/// `n_unseen` classes (chosen with the spec seed) form the unseen side.
void write_workspace(const Spec& spec, const std::filesystem::path& dir, std::size_t n_unseen = 2);

}  // namespace frozen_align::synthetic
