#include "frozen_align/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "frozen_align/error.hpp"
#include "frozen_align/feature_store.hpp"
#include "frozen_align/viterb.hpp"

namespace frozen_align::synthetic {

namespace {

// y = P·x for a column vector x.
std::vector<float> linear_map(const Matrix<float>& p, std::span<const float> x) {
  std::vector<float> y(p.rows(), 0.0f);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) s += static_cast<double>(p(r, c)) * x[c];
    y[r] = static_cast<float>(s);
  }
  return y;
}

void add_noise(std::vector<float>& v, Rng& rng, double stddev) {
  for (auto& x : v) x += static_cast<float>(stddev * standard_normal(rng));
}

void write(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write '" + path.string() + "'");
}

std::string template_text(std::size_t n) {
  static const char* base[] = {"a photo of a {}.", "a picture of a {}.", "an image showing a {}."};
  if (n < 3) return base[n];
  return "a photo of a {}, variant " + std::to_string(n) + ".";
}

}  // namespace

Matrix<float> gaussian(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  Matrix<float> m(rows, cols);
  for (auto& x : m.flat()) x = static_cast<float>(stddev * standard_normal(rng));
  return m;
}

Matrix<float> random_unit_rows(std::size_t rows, std::size_t cols, Rng& rng) {
  auto m = gaussian(rows, cols, rng);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (float x : m.row(r)) s += static_cast<double>(x) * x;
    const auto inv = static_cast<float>(1.0 / std::sqrt(s));
    for (auto& x : m.row(r)) x *= inv;
  }
  return m;
}

std::string class_id(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "class_%02zu", k);
  return buf;
}

std::string image_id(std::size_t k, std::size_t n) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "img_%02zu_%03zu", k, n);
  return buf;
}

std::string caption_id(std::size_t k, std::size_t n, std::size_t j) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "cap_%02zu_%03zu_%zu", k, n, j);
  return buf;
}

void write_workspace(const Spec& spec, const std::filesystem::path& dir, std::size_t n_unseen) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "reps" / "templates");
  fs::create_directories(dir / "reps" / "description");
  Rng rng(derive_seed(spec.seed, 0x70F));
  const auto p_v = gaussian(spec.vision_dim, spec.latent_dim, rng, 1.0 / std::sqrt(double(spec.latent_dim)));
  const auto p_t = gaussian(spec.text_dim, spec.latent_dim, rng, 1.0 / std::sqrt(double(spec.latent_dim)));
  const auto centroids = gaussian(spec.classes, spec.latent_dim, rng);

  FeatureStoreWriter vision(dir / "vision.fstore", static_cast<std::uint32_t>(spec.vision_dim), Modality::vision);
  FeatureStoreWriter text(dir / "text.fstore", static_cast<std::uint32_t>(spec.text_dim), Modality::text);
  std::string pairs, labels, classes, templates;
  std::vector<std::string> class_ids;
  for (std::size_t t = 0; t < spec.texts_per_class; ++t) templates += template_text(t) + "\n";

  for (std::size_t k = 0; k < spec.classes; ++k) {
    const auto cls = class_id(k);
    class_ids.push_back(cls);
    classes += cls + "\n";
    const auto c = centroids.row(k);
    for (std::size_t n = 0; n < spec.images_per_class; ++n) {
      std::vector<float> latent(c.begin(), c.end());
      add_noise(latent, rng, spec.image_noise);
      vision.append(image_id(k, n), linear_map(p_v, latent));
      pairs += image_id(k, n) + "\t";
      for (std::size_t j = 0; j < spec.captions_per_image; ++j) {
        auto cap = linear_map(p_t, latent);
        add_noise(cap, rng, spec.text_noise);
        text.append(caption_id(k, n, j), cap);
        pairs += (j ? "," : "") + caption_id(k, n, j);
      }
      pairs += "\n";
      labels += image_id(k, n) + "\t" + cls + "\n";
    }
    std::string description;
    for (std::size_t t = 0; t < spec.texts_per_class; ++t) {
      for (auto kind : {RepresentationKind::templates, RepresentationKind::description}) {
        auto v = linear_map(p_t, c);
        add_noise(v, rng, spec.text_noise);
        text.append(class_text_id(kind, cls, t), v);
      }
      description += "Description " + std::to_string(t) + " of " + cls + ".\n";
    }
    write(dir / "reps" / "templates" / (cls + ".txt"), "object " + std::to_string(k) + "\n");
    write(dir / "reps" / "description" / (cls + ".txt"), description);
  }
  vision.finish();
  text.finish();
  write(dir / "pairs.tsv", pairs);
  write(dir / "labels.tsv", labels);
  write(dir / "classes.txt", classes);
  write(dir / "templates.txt", templates);

  auto split = random_split("toy", class_ids, spec.classes - n_unseen, n_unseen, spec.seed);
  write_split(split, dir / "split.txt");
  std::string train_labels, eval_labels;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    const bool unseen = std::find(split.unseen.begin(), split.unseen.end(), class_ids[k]) != split.unseen.end();
    for (std::size_t n = 0; n < spec.images_per_class; ++n)
      (unseen ? eval_labels : train_labels) += image_id(k, n) + "\t" + class_ids[k] + "\n";
  }
  write(dir / "train_labels.tsv", train_labels);
  write(dir / "eval_labels.tsv", eval_labels);

  // Compositional items pair two images of different classes with their
  // first captions; caption choice contrasts an image's caption with one
  // from another class.
  std::string wino, choice;
  for (std::size_t k = 0; k < spec.classes; ++k) {
    const auto other = (k + 1) % spec.classes;
    for (std::size_t n = 0; n < std::min<std::size_t>(spec.images_per_class, 4); ++n) {
      wino += image_id(k, n) + "\t" + image_id(other, n) + "\t" + caption_id(k, n, 0) + "\t" + caption_id(other, n, 0) + "\n";
      choice += image_id(k, n) + "\t" + caption_id(k, n, 0) + "\t" + caption_id(other, n, 0) + "\n";
    }
  }
  write(dir / "winoground.tsv", wino);
  write(dir / "caption_choice.tsv", choice);

  using nlohmann::json;
  const json train = {{"batch_size", 32},
                      {"max_steps", 300},
                      {"val_fraction", 0.1},
                      {"val_interval", 25},
                      {"early_stop_patience", 4},
                      {"seed", spec.seed},
                      {"optimizer", {{"lr", 3e-3}}},
                      {"projection", {{"hidden_dim", 64}, {"num_layers", 3}, {"dropout", 0.1}}}};
  write(dir / "train.json", json({{"vision_store", "vision.fstore"},
                                  {"text_store", "text.fstore"},
                                  {"manifest", "pairs.tsv"},
                                  {"out", "run"},
                                  {"train", train}})
                                .dump(2) +
                                "\n");
  const json common = {{"vision_store", "vision.fstore"}, {"text_store", "text.fstore"}, {"dataset", "toy"}};
  json tasks = json::array();
  auto task = [&](json extra) {
    json t = common;
    t.update(extra);
    tasks.push_back(t);
  };
  task({{"task", "classification"},
        {"labels", "labels.tsv"},
        {"representations", {{"kind", "templates"}, {"dir", "reps"}, {"templates", "templates.txt"}}}});
  task({{"task", "classification"}, {"labels", "labels.tsv"}, {"representations", {{"kind", "description"}}}});
  task({{"task", "retrieval"}, {"manifest", "pairs.tsv"}, {"k", 5}});
  task({{"task", "winoground"}, {"items", "winoground.tsv"}});
  task({{"task", "caption_choice"}, {"items", "caption_choice.tsv"}});
  write(dir / "eval.json", json({{"out", "eval"}, {"tasks", tasks}}).dump(2) + "\n");
  write(dir / "viterb.json", json({{"label", "toy"},
                                   {"kinds", {"templates", "description"}},
                                   {"out", "viterb"},
                                   {"train", train},
                                   {"datasets", {{{"name", "toy"},
                                                  {"split", {{"file", "split.txt"}}},
                                                  {"vision_store", "vision.fstore"},
                                                  {"text_store", "text.fstore"},
                                                  {"train_labels", "train_labels.tsv"},
                                                  {"eval_labels", "eval_labels.tsv"},
                                                  {"representations", "reps"},
                                                  {"templates", "templates.txt"}}}}})
                                     .dump(2) +
                                 "\n");
}

}  // namespace frozen_align::synthetic
