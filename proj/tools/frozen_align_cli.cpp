// frozen-align: inspect stores, train the text projection, evaluate, and run
// the seen/unseen class benchmark.
//
// Exit codes: 0 ok, 1 config or validation error, 2 corrupt store (inspect),
// 3 non-finite loss, 4 missing embedding, 5 seen/unseen leak or overlap.

#include <malloc.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "frozen_align/class_reps.hpp"
#include "frozen_align/config.hpp"
#include "frozen_align/error.hpp"
#include "frozen_align/feature_store.hpp"
#include "frozen_align/kernels.hpp"
#include "frozen_align/text_io.hpp"
#include "frozen_align/trainer.hpp"
#include "frozen_align/viterb.hpp"
#include "frozen_align/zeroshot_eval.hpp"

namespace fa = frozen_align;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit : int { kOk = 0, kConfig = 1, kCorruptStore = 2, kNonFinite = 3, kMissingEmbedding = 4, kLeak = 5 };

int exit_code(fa::ErrorCode code) {
  switch (code) {
    case fa::ErrorCode::NonFiniteLoss:
      return kNonFinite;
    case fa::ErrorCode::MissingEmbedding:
      return kMissingEmbedding;
    case fa::ErrorCode::LeakDetected:
    case fa::ErrorCode::OverlapDetected:
      return kLeak;
    default:
      return kConfig;
  }
}

// Overrides shared by the commands that train.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> max_steps;
  std::optional<std::size_t> batch_size;
  std::optional<double> tau;
  std::string out;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--seed", o.seed, "Root seed for all randomness");
  cmd->add_option("--max-steps", o.max_steps, "Optimization steps");
  cmd->add_option("--batch-size", o.batch_size, "Images per batch");
  cmd->add_option("--tau", o.tau, "Softmax temperature");
  cmd->add_option("--out", o.out, "Output directory");
}

void apply(const Overrides& o, json& train) {
  if (o.seed) train["seed"] = *o.seed;
  if (o.max_steps) train["max_steps"] = *o.max_steps;
  if (o.batch_size) train["batch_size"] = *o.batch_size;
  if (o.tau) train["tau"] = *o.tau;
}

json read_json(const fs::path& path) {
  if (!fs::exists(path)) throw fa::Error(fa::ErrorCode::IoFailure, "config file '" + path.string() + "' not found");
  try {
    return json::parse(fa::read_file(path));
  } catch (const json::exception& e) {
    throw fa::Error(fa::ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

// Resolves `key` of `j` against `base` and checks that it exists.
fs::path path_of(const json& j, const std::string& key, const fs::path& base) {
  if (!j.contains(key) || !j.at(key).is_string())
    throw fa::Error(fa::ErrorCode::InvalidConfig, "missing path \"" + key + "\"");
  fs::path p(j.at(key).get<std::string>());
  if (p.is_relative()) p = base / p;
  p = p.lexically_normal();
  if (!fs::exists(p)) throw fa::Error(fa::ErrorCode::IoFailure, key + " '" + p.string() + "' not found");
  return p;
}

fs::path out_dir(const Overrides& o, const json& cfg, const fs::path& base, const char* fallback) {
  if (!o.out.empty()) return o.out;
  if (cfg.contains("out")) {
    fs::path p(cfg.at("out").get<std::string>());
    return p.is_relative() ? base / p : p;
  }
  return fallback;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw fa::Error(fa::ErrorCode::IoFailure, "cannot write '" + path.string() + "'");
}

json report_json(const fa::TrainReport& r) {
  json j = {{"steps_run", r.steps_run},
            {"final_train_loss", std::isfinite(r.final_train_loss) ? json(r.final_train_loss) : json(nullptr)},
            {"best_val_loss", r.best_val_loss ? json(*r.best_val_loss) : json(nullptr)},
            {"best_step", r.best_step},
            {"wall_seconds", r.wall_seconds},
            {"early_stopped", r.early_stopped},
            {"checkpoint", r.checkpoint_path.string()}};
  return j;
}

// ---- inspect --------------------------------------------------------------

int cmd_inspect(const std::string& path, std::size_t head) {
  fa::StoreHandle store;
  try {
    store = fa::StoreHandle::open(path);
  } catch (const fa::Error& e) {
    std::cerr << "corrupt store '" << path << "': " << e.what() << "\n";
    return kCorruptStore;
  }
  const auto& h = store.header();
  std::printf("path       %s\nversion    %u\nmodality   %s\ndim        %u\ncount      %llu\npayload    %llu bytes\n",
              path.c_str(), h.version, std::string(fa::to_string(h.modality)).c_str(), h.dim,
              static_cast<unsigned long long>(h.count), static_cast<unsigned long long>(h.payload_bytes()));
  for (std::size_t r = 0; r < std::min<std::size_t>(head, store.count()); ++r) {
    double sq = 0.0;
    for (float v : store.row(r)) sq += static_cast<double>(v) * v;
    std::printf("%-10zu %s  norm=%.6g\n", r, std::string(store.id(r)).c_str(), std::sqrt(sq));
  }
  return kOk;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const std::string& config_path, const Overrides& o) {
  const fs::path cfg_file = fs::absolute(config_path);
  const fs::path base = cfg_file.parent_path();
  json cfg = read_json(cfg_file);
  json train_json = cfg.value("train", json::object());
  apply(o, train_json);

  fa::TrainConfig tc;
  fa::update_from_json(tc, train_json);
  tc.validate();
  const auto vision_path = path_of(cfg, "vision_store", base);
  const auto text_path = path_of(cfg, "text_store", base);
  const auto manifest_path = path_of(cfg, "manifest", base);
  tc.out_dir = out_dir(o, cfg, base, "run");

  const auto vision = fa::StoreHandle::open(vision_path);
  const auto text = fa::StoreHandle::open(text_path);
  const auto dataset = fa::build_pairs(vision, text, manifest_path);
  std::printf("dataset: %zu images, %zu captions\n", dataset.image_count(), dataset.caption_count());

  json resolved = {{"vision_store", vision_path.string()},
                   {"text_store", text_path.string()},
                   {"manifest", manifest_path.string()},
                   {"train", fa::to_json(tc)}};
  const auto digest = fa::config_digest(resolved);
  const auto report = fa::train(tc, dataset);

  json out = report_json(report);
  out["seed"] = tc.seed;
  out["config_digest"] = digest;
  out["config"] = resolved;
  write_text(tc.out_dir / "train_report.json", out.dump(2) + "\n");

  std::printf("steps_run        %llu\n", static_cast<unsigned long long>(report.steps_run));
  std::printf("final_train_loss %.6f\n", report.final_train_loss);
  if (report.best_val_loss)
    std::printf("best_val_loss    %.6f (step %llu)\n", *report.best_val_loss,
                static_cast<unsigned long long>(report.best_step));
  std::printf("wall_seconds     %.2f\ncheckpoint       %s\nconfig_digest    %s\n", report.wall_seconds,
              report.checkpoint_path.c_str(), digest.c_str());
  return kOk;
}

// ---- eval -----------------------------------------------------------------

fa::ClassRepresentationSet task_representations(const json& task, const fs::path& base, const fa::StoreHandle& text,
                                                std::span<const std::string> label_classes) {
  const auto reps_cfg = task.value("representations", json::object());
  const auto kind = fa::representation_kind_from_string(reps_cfg.value("kind", std::string("templates")));
  if (!reps_cfg.contains("dir")) return fa::representations_from_store(text, kind, label_classes);
  std::vector<std::string> templates;
  if (kind == fa::RepresentationKind::templates) templates = fa::read_templates(path_of(reps_cfg, "templates", base));
  return fa::load_class_representations(path_of(reps_cfg, "dir", base), kind, {}, templates);
}

fa::EvalReport run_task(const json& task, const fs::path& base, fa::ProjectionNet& net, bool verbose) {
  const auto name = task.at("task").get<std::string>();
  const auto vision = fa::StoreHandle::open(path_of(task, "vision_store", base));
  const auto text = fa::StoreHandle::open(path_of(task, "text_store", base));
  fa::EvalReport report;

  if (name == "classification") {
    const auto labels = fa::read_label_manifest(path_of(task, "labels", base));
    std::set<std::string> classes;
    for (const auto& l : labels) classes.insert(l.class_id);
    const std::vector<std::string> label_classes(classes.begin(), classes.end());
    const auto reps = task_representations(task, base, text, label_classes);
    const auto classifier = fa::build_classifier(reps, net, text);
    const auto resolved = fa::resolve_labels(vision, labels, classifier.classes);
    const auto z = fa::normalized_vision_rows(vision, resolved.rows);
    const auto mode_name = task.value("mode", std::string("both"));
    const auto mode = mode_name == "top1"             ? fa::ClassificationMode::top1
                      : mode_name == "per_class_mean" ? fa::ClassificationMode::per_class_mean
                                                      : fa::ClassificationMode::both;
    report = fa::eval_classification(z, resolved.labels, classifier, mode, resolved.image_ids, verbose);
  } else if (name == "retrieval") {
    const auto pairs = fa::build_pairs(vision, text, path_of(task, "manifest", base));
    std::vector<std::size_t> text_rows, text_image;
    for (std::size_t i = 0; i < pairs.image_count(); ++i)
      for (auto r : pairs.caption_rows[i]) {
        text_rows.push_back(r);
        text_image.push_back(i);
      }
    const auto zi = fa::normalized_vision_rows(vision, pairs.image_rows);
    const auto zt = fa::project_text_rows(net, text, text_rows);
    report = fa::eval_retrieval(zi, zt, text_image, task.value("k", std::size_t{5}));
  } else if (name == "winoground") {
    report = fa::eval_winoground(fa::read_winoground_items(path_of(task, "items", base)), net, vision, text, verbose);
  } else if (name == "caption_choice") {
    report = fa::eval_caption_choice(fa::read_caption_choice_items(path_of(task, "items", base)), net, vision, text,
                                     verbose);
  } else {
    throw fa::Error(fa::ErrorCode::InvalidConfig, "unknown task '" + name + "'");
  }
  report.dataset = task.value("dataset", report.dataset);
  return report;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, const std::string& out_override,
             bool verbose) {
  const fs::path cfg_file = fs::absolute(config_path);
  const fs::path base = cfg_file.parent_path();
  const json cfg = read_json(cfg_file);
  if (!fs::exists(checkpoint)) throw fa::Error(fa::ErrorCode::IoFailure, "checkpoint '" + checkpoint + "' not found");
  auto net = fa::load_projection_net(checkpoint);

  const auto digest = fa::config_digest({{"tasks", cfg.value("tasks", json::array())},
                                         {"checkpoint", fa::hex64(fa::fnv1a64(fa::read_file(checkpoint)))}});
  std::vector<fa::EvalReport> reports;
  for (const auto& task : cfg.value("tasks", json::array())) {
    auto r = run_task(task, base, net, verbose);
    r.config_digest = digest;
    if (verbose)
      for (const auto& d : r.details) std::printf("%s %s\t%s\n", r.task.c_str(), r.dataset.c_str(), d.c_str());
    reports.push_back(std::move(r));
  }
  if (reports.empty()) throw fa::Error(fa::ErrorCode::InvalidConfig, "config lists no tasks");

  const auto table = fa::format_report_table(reports);
  std::printf("%sconfig_digest %s\n", table.c_str(), digest.c_str());
  Overrides o;
  o.out = out_override;
  const auto dir = out_dir(o, cfg, base, "eval");
  fs::create_directories(dir);
  json all = json::array();
  for (const auto& r : reports) all.push_back(r.to_json());
  write_text(dir / "eval_report.json", all.dump(2) + "\n");
  write_text(dir / "eval_report.txt", table);
  return kOk;
}

// ---- viterb ---------------------------------------------------------------

int cmd_viterb(const std::string& config_path, const std::vector<std::string>& only, const Overrides& o) {
  const fs::path cfg_file = fs::absolute(config_path);
  const fs::path base = cfg_file.parent_path();
  const json cfg = read_json(cfg_file);
  const auto label = cfg.value("label", std::string("run"));
  std::vector<fa::RepresentationKind> kinds;
  for (const auto& k : cfg.value("kinds", json::array({"templates"})))
    kinds.push_back(fa::representation_kind_from_string(k.get<std::string>()));

  std::vector<json> datasets;
  std::set<std::string> known;
  for (const auto& d : cfg.at("datasets")) {
    known.insert(d.at("name").get<std::string>());
    if (only.empty() || std::find(only.begin(), only.end(), d.at("name").get<std::string>()) != only.end())
      datasets.push_back(d);
  }
  for (const auto& name : only)
    if (!known.count(name)) throw fa::Error(fa::ErrorCode::MissingDataset, "no dataset '" + name + "' in config");

  json digest_src = cfg;
  json base_train = cfg.value("train", json::object());
  apply(o, base_train);
  digest_src["train"] = base_train;
  const auto digest = fa::config_digest(digest_src);
  const auto dir = out_dir(o, cfg, base, "viterb");
  fs::create_directories(dir);

  std::vector<fa::ViterbResult> results;
  std::vector<std::string> names;
  for (const auto& d : datasets) names.push_back(d.at("name").get<std::string>());
  for (auto kind : kinds) {
    std::vector<fa::ViterbEntry> entries;
    for (const auto& d : datasets) {
      const auto name = d.at("name").get<std::string>();
      fa::ViterbInputs in;
      in.split = fa::load_or_make_split(name, d.at("split"), base);
      in.vision = fa::StoreHandle::open(path_of(d, "vision_store", base));
      in.text = fa::StoreHandle::open(path_of(d, "text_store", base));
      in.train_labels = fa::read_label_manifest(path_of(d, "train_labels", base));
      in.eval_labels = fa::read_label_manifest(path_of(d, "eval_labels", base));
      std::vector<std::string> classes = in.split.seen;
      classes.insert(classes.end(), in.split.unseen.begin(), in.split.unseen.end());
      if (d.contains("representations")) {
        std::vector<std::string> templates;
        if (kind == fa::RepresentationKind::templates) templates = fa::read_templates(path_of(d, "templates", base));
        in.reps = fa::load_class_representations(path_of(d, "representations", base), kind, classes, templates);
      } else {
        in.reps = fa::representations_from_store(in.text, kind, classes);
      }
      json train = base_train;
      if (d.contains("train")) train.merge_patch(d.at("train"));
      apply(o, train);
      fa::update_from_json(in.train, train);
      if (d.contains("shuffle_unseen_seed")) in.shuffle_unseen_seed = d.at("shuffle_unseen_seed").get<std::uint64_t>();

      auto entry = fa::run_viterb(in);
      entry.eval_report.config_digest = digest;
      std::printf("%-20s %-18s unseen per-class accuracy %6.2f  (%zu seen / %zu unseen, %llu steps)\n", name.c_str(),
                  std::string(fa::to_string(kind)).c_str(), entry.unseen_accuracy, entry.seen_classes,
                  entry.unseen_classes, static_cast<unsigned long long>(entry.train_report.steps_run));
      entries.push_back(std::move(entry));
    }
    results.push_back(fa::aggregate(entries, names));
  }

  const auto table = fa::viterb_summary_table(label, results);
  std::printf("\n%s\nconfig_digest %s\n", table.c_str(), digest.c_str());
  json out = {{"label", label}, {"config_digest", digest}, {"results", json::array()}};
  for (const auto& r : results) out["results"].push_back(r.to_json());
  write_text(dir / "viterb_report.json", out.dump(2) + "\n");
  write_text(dir / "viterb_summary.txt", table);
  return kOk;
}

// ---- export-texts ---------------------------------------------------------

int cmd_export_texts(const std::string& reps_dir, const std::string& kind_name, const std::string& templates_path,
                     const std::string& out_path) {
  const auto kind = fa::representation_kind_from_string(kind_name);
  std::vector<std::string> templates;
  if (kind == fa::RepresentationKind::templates) {
    if (templates_path.empty()) throw fa::Error(fa::ErrorCode::InvalidConfig, "--templates is required for templates");
    templates = fa::read_templates(templates_path);
  }
  const auto reps = fa::load_class_representations(reps_dir, kind, {}, templates);
  std::string tsv;
  for (std::size_t c = 0; c < reps.classes.size(); ++c)
    for (std::size_t k = 0; k < reps.texts[c].size(); ++k) {
      std::string text = reps.texts[c][k];
      std::replace(text.begin(), text.end(), '\t', ' ');
      std::replace(text.begin(), text.end(), '\n', ' ');
      tsv += reps.text_ids[c][k] + "\t" + text + "\n";
    }
  write_text(out_path, tsv);
  std::printf("%zu texts for %zu classes -> %s\n", reps.text_count(), reps.classes.size(), out_path.c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  // Large training buffers are reused every step; keep them out of mmap so
  // they are not faulted in afresh each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
  if (const char* env = std::getenv("FROZEN_ALIGN_THREADS")) fa::kernels::set_max_threads(std::atoi(env));

  CLI::App app{"Train and evaluate a text projection over frozen vision and language embeddings"};
  app.require_subcommand(1);

  std::string store_path;
  std::size_t head = 0;
  auto* inspect = app.add_subcommand("inspect", "Validate a feature store and print its header");
  inspect->add_option("store", store_path, "Feature store file")->required();
  inspect->add_option("--head", head, "Print the first N ids with their norms");

  std::string config;
  Overrides train_o;
  auto* train = app.add_subcommand("train", "Train the projection network");
  train->add_option("--config", config, "JSON run config")->required();
  add_overrides(train, train_o);

  std::string checkpoint, eval_config, eval_out;
  bool verbose = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on configured tasks");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();
  eval->add_option("--config", eval_config, "JSON task list")->required();
  eval->add_option("--out", eval_out, "Output directory");
  eval->add_flag("--verbose", verbose, "Print per-item verdicts");

  std::string viterb_config;
  std::vector<std::string> only;
  Overrides viterb_o;
  auto* viterb = app.add_subcommand("viterb", "Run the seen/unseen class benchmark");
  viterb->add_option("--config", viterb_config, "JSON benchmark config")->required();
  viterb->add_option("--dataset", only, "Restrict to these datasets");
  add_overrides(viterb, viterb_o);

  std::string reps_dir, kind = "templates", templates, texts_out;
  auto* export_texts = app.add_subcommand("export-texts", "Write class texts as id<TAB>text for feature extraction");
  export_texts->add_option("--representations", reps_dir, "Class representation root")->required();
  export_texts->add_option("--kind", kind, "templates, description or article_sentences");
  export_texts->add_option("--templates", templates, "Template list (templates kind)");
  export_texts->add_option("--out", texts_out, "Output TSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*inspect) return cmd_inspect(store_path, head);
    if (*train) return cmd_train(config, train_o);
    if (*eval) return cmd_eval(checkpoint, eval_config, eval_out, verbose);
    if (*viterb) return cmd_viterb(viterb_config, only, viterb_o);
    if (*export_texts) return cmd_export_texts(reps_dir, kind, templates, texts_out);
  } catch (const fa::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  }
  return kOk;
}
