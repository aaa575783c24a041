#include "frozen_align/viterb.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "frozen_align/error.hpp"
#include "frozen_align/random.hpp"
#include "frozen_align/text_io.hpp"

namespace frozen_align {

namespace {

constexpr std::string_view kProvenancePrefix = "# provenance:";

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::vector<std::string> read_class_list(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  for (auto& l : lines) l = std::string(trim(l));
  std::erase_if(lines, [](const std::string& l) { return l.empty(); });
  return lines;
}

}  // namespace

void ViterbSplit::validate() const {
  if (seen.empty() || unseen.empty())
    throw Error(ErrorCode::EmptyInput, "split for '" + dataset + "' needs both seen and unseen classes");
  std::unordered_set<std::string_view> s;
  for (const auto& c : seen)
    if (!s.insert(c).second) throw Error(ErrorCode::OverlapDetected, "class '" + c + "' listed twice as seen in '" + dataset + "'");
  std::unordered_set<std::string_view> u;
  for (const auto& c : unseen) {
    if (s.count(c)) throw Error(ErrorCode::OverlapDetected, "class '" + c + "' is both seen and unseen in '" + dataset + "'");
    if (!u.insert(c).second) throw Error(ErrorCode::OverlapDetected, "class '" + c + "' listed twice as unseen in '" + dataset + "'");
  }
}

ViterbSplit parse_split(std::string_view text, std::string dataset) {
  ViterbSplit out;
  out.dataset = std::move(dataset);
  std::vector<std::string>* section = nullptr;
  std::size_t lineno = 0;
  for (auto raw : split(text, '\n')) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (line.starts_with(kProvenancePrefix)) {
      if (out.provenance.empty()) out.provenance = std::string(trim(line.substr(kProvenancePrefix.size())));
      continue;
    }
    if (line.front() == '#') continue;
    if (line == "[seen]") {
      section = &out.seen;
    } else if (line == "[unseen]") {
      section = &out.unseen;
    } else if (section == nullptr) {
      throw Error(ErrorCode::ParseError, "split line " + std::to_string(lineno) + ": class before [seen]/[unseen] header");
    } else {
      section->emplace_back(line);
    }
  }
  out.validate();
  return out;
}

ViterbSplit read_split(const std::filesystem::path& path, std::string dataset) {
  return parse_split(read_file(path), std::move(dataset));
}

std::string format_split(const ViterbSplit& split) {
  std::string out;
  if (!split.provenance.empty()) out += std::string(kProvenancePrefix) + " " + split.provenance + "\n";
  out += "[seen]\n";
  for (const auto& c : split.seen) out += c + "\n";
  out += "[unseen]\n";
  for (const auto& c : split.unseen) out += c + "\n";
  return out;
}

void write_split(const ViterbSplit& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  out << format_split(split);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write '" + path.string() + "'");
}

ViterbSplit random_split(std::string dataset, std::span<const std::string> classes, std::size_t n_seen,
                         std::size_t n_unseen, std::uint64_t seed) {
  if (n_seen + n_unseen != classes.size())
    throw Error(ErrorCode::CountMismatch, std::to_string(n_seen) + " seen + " + std::to_string(n_unseen) +
                                              " unseen != " + std::to_string(classes.size()) + " classes");
  std::vector<std::string> pool(classes.begin(), classes.end());
  std::sort(pool.begin(), pool.end());
  Rng rng(seed);
  shuffle<std::string>(pool, rng);
  ViterbSplit split;
  split.dataset = std::move(dataset);
  split.seen.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_seen));
  split.unseen.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_seen), pool.end());
  std::sort(split.seen.begin(), split.seen.end());
  std::sort(split.unseen.begin(), split.unseen.end());
  split.provenance = "random assignment, seed " + std::to_string(seed);
  split.validate();
  return split;
}

ViterbSplit frequency_split(std::string dataset, std::span<const std::string> seen,
                            const std::filesystem::path& frequency_file, std::size_t n_unseen) {
  const std::set<std::string> seen_set(seen.begin(), seen.end());
  std::vector<std::pair<std::uint64_t, std::string>> ranked;
  for (auto& row : read_tsv(frequency_file, 2)) {
    std::uint64_t count = 0;
    const auto& c = row[1];
    if (std::from_chars(c.data(), c.data() + c.size(), count).ec != std::errc{})
      throw Error(ErrorCode::ParseError, frequency_file.string() + ": bad count '" + c + "'");
    if (!seen_set.count(row[0])) ranked.emplace_back(count, std::move(row[0]));
  }
  if (ranked.size() < n_unseen)
    throw Error(ErrorCode::CountMismatch, "only " + std::to_string(ranked.size()) + " non-seen classes in '" +
                                              frequency_file.string() + "', need " + std::to_string(n_unseen));
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  ViterbSplit split;
  split.dataset = std::move(dataset);
  split.seen.assign(seen.begin(), seen.end());
  for (std::size_t i = 0; i < n_unseen; ++i) split.unseen.push_back(ranked[i].second);
  split.provenance = "top " + std::to_string(n_unseen) + " classes by count in " + frequency_file.filename().string();
  split.validate();
  return split;
}

ViterbSplit load_or_make_split(const std::string& dataset, const nlohmann::json& spec,
                               const std::filesystem::path& base_dir) {
  if (spec.contains("file")) return read_split(resolve(base_dir, spec.at("file").get<std::string>()), dataset);
  if (spec.contains("frequency_file")) {
    const auto seen = read_class_list(resolve(base_dir, spec.at("seen_file").get<std::string>()));
    return frequency_split(dataset, seen, resolve(base_dir, spec.at("frequency_file").get<std::string>()),
                           spec.at("unseen").get<std::size_t>());
  }
  if (spec.contains("classes")) {
    const auto& c = spec.at("classes");
    const auto classes =
        c.is_string() ? read_class_list(resolve(base_dir, c.get<std::string>())) : c.get<std::vector<std::string>>();
    return random_split(dataset, classes, spec.at("seen").get<std::size_t>(), spec.at("unseen").get<std::size_t>(),
                        spec.value("seed", std::uint64_t{0}));
  }
  throw Error(ErrorCode::InvalidConfig, "split for '" + dataset + "' needs \"file\", \"classes\" or \"frequency_file\"");
}

void check_no_leak(const ViterbSplit& split, std::span<const LabelEntry> train_labels,
                   std::span<const LabelEntry> eval_labels, const ClassRepresentationSet& reps,
                   const StoreHandle& text) {
  const std::unordered_set<std::string_view> seen(split.seen.begin(), split.seen.end());
  const std::unordered_set<std::string_view> unseen(split.unseen.begin(), split.unseen.end());
  std::unordered_set<std::string_view> train_images;
  for (const auto& e : train_labels) {
    if (unseen.count(e.class_id))
      throw Error(ErrorCode::LeakDetected, "training image '" + e.image_id + "' belongs to unseen class '" +
                                               e.class_id + "' in '" + split.dataset + "'");
    if (!seen.count(e.class_id))
      throw Error(ErrorCode::UnresolvedId, "training image '" + e.image_id + "' has class '" + e.class_id +
                                               "' outside the seen set of '" + split.dataset + "'");
    train_images.insert(e.image_id);
  }
  for (const auto& e : eval_labels)
    if (train_images.count(e.image_id))
      throw Error(ErrorCode::LeakDetected, "evaluation image '" + e.image_id + "' is also a training image in '" +
                                               split.dataset + "'");

  // Distinct ids may still share a store row only if the store maps them so;
  // compare at row level.
  std::unordered_map<std::size_t, std::string> unseen_rows;
  for (const auto& cls : split.unseen)
    for (const auto& id : reps.text_ids[reps.class_index(cls)])
      if (auto r = text.find(id)) unseen_rows.emplace(*r, id);
  for (const auto& cls : split.seen)
    for (const auto& id : reps.text_ids[reps.class_index(cls)])
      if (auto r = text.find(id); r && unseen_rows.count(*r))
        throw Error(ErrorCode::LeakDetected, "seen text '" + id + "' shares its embedding with unseen text '" +
                                                 unseen_rows.at(*r) + "'");
}

void check_access_log(const AccessLog& log, std::span<const std::size_t> unseen_image_rows,
                      std::span<const std::size_t> unseen_text_rows) {
  for (auto r : unseen_image_rows)
    if (log.vision_rows.count(r))
      throw Error(ErrorCode::LeakDetected, "training read unseen-class image row " + std::to_string(r));
  for (auto r : unseen_text_rows)
    if (log.text_rows.count(r))
      throw Error(ErrorCode::LeakDetected, "training read unseen-class text row " + std::to_string(r));
}

ClassRepresentationSet shuffle_representations(const ClassRepresentationSet& reps, std::uint64_t seed) {
  // Sets built from a store carry ids only; their texts stay empty.
  const bool with_text = reps.text_count() > 0;
  std::vector<std::pair<std::string, std::string>> pool;  // (text, id)
  for (std::size_t c = 0; c < reps.classes.size(); ++c)
    for (std::size_t k = 0; k < reps.text_ids[c].size(); ++k)
      pool.emplace_back(with_text ? reps.texts[c][k] : std::string(), reps.text_ids[c][k]);
  Rng rng(seed);
  shuffle<std::pair<std::string, std::string>>(pool, rng);

  ClassRepresentationSet out;
  out.kind = reps.kind;
  out.classes = reps.classes;
  std::size_t next = 0;
  for (std::size_t c = 0; c < reps.classes.size(); ++c) {
    auto& texts = out.texts.emplace_back();
    auto& ids = out.text_ids.emplace_back();
    for (std::size_t k = 0; k < reps.text_ids[c].size(); ++k, ++next) {
      if (with_text) texts.push_back(pool[next].first);
      ids.push_back(pool[next].second);
    }
  }
  return out;
}

ClassRepresentationSet representations_from_store(const StoreHandle& text, RepresentationKind kind,
                                                  std::span<const std::string> classes) {
  const std::string prefix = std::string(to_string(kind)) + "/";
  std::map<std::string, std::vector<std::pair<std::size_t, std::string>>, std::less<>> found;
  for (std::size_t r = 0; r < text.count(); ++r) {
    const auto id = text.id(r);
    if (!id.starts_with(prefix)) continue;
    const auto rest = id.substr(prefix.size());
    const auto slash = rest.rfind('/');
    if (slash == std::string_view::npos) continue;
    std::size_t index = 0;
    const auto num = rest.substr(slash + 1);
    if (std::from_chars(num.data(), num.data() + num.size(), index).ec != std::errc{}) continue;
    found[std::string(rest.substr(0, slash))].emplace_back(index, std::string(id));
  }
  ClassRepresentationSet out;
  out.kind = kind;
  std::vector<std::string> missing;
  for (const auto& cls : classes) {
    auto it = found.find(cls);
    if (it == found.end()) {
      missing.push_back(prefix + cls + "/*");
      continue;
    }
    auto entries = it->second;
    std::sort(entries.begin(), entries.end());
    out.classes.push_back(cls);
    out.texts.emplace_back();
    auto& ids = out.text_ids.emplace_back();
    for (auto& [k, id] : entries) ids.push_back(std::move(id));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::MissingEmbedding, "no class texts in '" + text.path().string() + "' for " + list);
  }
  return out;
}

ViterbEntry run_viterb(const ViterbInputs& in, AccessLog* log) {
  in.split.validate();
  check_no_leak(in.split, in.train_labels, in.eval_labels, in.reps, in.text);
  const auto seen_reps = in.reps.restrict_to(in.split.seen);
  const auto unseen_reps = in.reps.restrict_to(in.split.unseen);

  std::vector<std::vector<std::size_t>> seen_text_rows;
  for (const auto& ids : seen_reps.text_ids) seen_text_rows.push_back(resolve_ids(in.text, ids));
  std::unordered_map<std::string_view, std::size_t> seen_index;
  for (std::size_t c = 0; c < seen_reps.classes.size(); ++c) seen_index.emplace(seen_reps.classes[c], c);

  PairedDataset dataset;
  dataset.vision = in.vision;
  dataset.text = in.text;
  std::vector<std::string> train_ids;
  for (const auto& e : in.train_labels) {
    train_ids.push_back(e.image_id);
    dataset.caption_rows.push_back(seen_text_rows[seen_index.at(e.class_id)]);
  }
  dataset.image_rows = resolve_ids(in.vision, train_ids);

  const auto labeled = resolve_labels(in.vision, in.eval_labels, in.split.unseen);
  std::vector<std::size_t> unseen_text_rows;
  for (const auto& ids : unseen_reps.text_ids) {
    const auto rows = resolve_ids(in.text, ids);
    unseen_text_rows.insert(unseen_text_rows.end(), rows.begin(), rows.end());
  }

  AccessLog local;
  AccessLog& access = log != nullptr ? *log : local;
  auto outcome = train_model(in.train, dataset, &access);
  check_access_log(access, labeled.rows, unseen_text_rows);

  const auto eval_reps = in.shuffle_unseen_seed ? shuffle_representations(unseen_reps, *in.shuffle_unseen_seed)
                                                : unseen_reps;
  const auto classifier = build_classifier(eval_reps, outcome.net, in.text);
  const auto z = normalized_vision_rows(in.vision, labeled.rows);

  ViterbEntry entry;
  entry.dataset = in.split.dataset;
  entry.kind = in.reps.kind;
  entry.eval_report = eval_classification(z, labeled.labels, classifier, ClassificationMode::per_class_mean);
  entry.eval_report.task = "viterb";
  entry.eval_report.dataset = in.split.dataset;
  entry.unseen_accuracy = entry.eval_report.metric("per_class_mean");
  entry.seen_classes = in.split.seen.size();
  entry.unseen_classes = in.split.unseen.size();
  entry.train_images = in.train_labels.size();
  entry.eval_images = in.eval_labels.size();
  entry.train_report = std::move(outcome.report);
  return entry;
}

ViterbResult aggregate(std::span<const ViterbEntry> entries, std::span<const std::string> expected) {
  if (expected.empty()) throw Error(ErrorCode::MissingDataset, "no datasets configured");
  ViterbResult result;
  std::vector<std::string> missing;
  double sum = 0.0;
  for (const auto& name : expected) {
    auto it = std::find_if(entries.begin(), entries.end(), [&](const ViterbEntry& e) { return e.dataset == name; });
    if (it == entries.end()) {
      missing.push_back(name);
      continue;
    }
    result.entries.push_back(*it);
    sum += it->unseen_accuracy;
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw Error(ErrorCode::MissingDataset, "no result for " + list);
  }
  result.kind = result.entries.front().kind;
  result.mean = sum / static_cast<double>(expected.size());
  return result;
}

nlohmann::json ViterbResult::to_json() const {
  nlohmann::json j = {{"representation", std::string(to_string(kind))}, {"mean_unseen_accuracy", mean}};
  auto& list = j["datasets"] = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json d = {{"dataset", e.dataset},
                        {"unseen_per_class_accuracy", e.unseen_accuracy},
                        {"seen_classes", e.seen_classes},
                        {"unseen_classes", e.unseen_classes},
                        {"train_images", e.train_images},
                        {"eval_images", e.eval_images},
                        {"steps_run", e.train_report.steps_run},
                        {"best_step", e.train_report.best_step},
                        {"final_train_loss", e.train_report.final_train_loss}};
    if (e.train_report.best_val_loss) d["best_val_loss"] = *e.train_report.best_val_loss;
    list.push_back(std::move(d));
  }
  return j;
}

std::string viterb_summary_table(const std::string& label, std::span<const ViterbResult> results) {
  auto cell = [](double v, std::size_t w) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%*.2f", static_cast<int>(w), v);
    return std::string(buf);
  };
  auto pad = [](const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); };
  auto lpad = [](const std::string& s, std::size_t w) { return s.size() >= w ? s : std::string(w - s.size(), ' ') + s; };

  std::ostringstream out;
  std::size_t wl = std::max<std::size_t>(label.size(), 5);
  out << pad("model", wl);
  std::vector<std::size_t> widths;
  for (const auto& r : results) {
    const std::string k(to_string(r.kind));
    widths.push_back(std::max<std::size_t>(k.size(), 8));
    out << "  " << lpad(k, widths.back());
  }
  out << "\n" << pad(label, wl);
  for (std::size_t i = 0; i < results.size(); ++i) out << "  " << cell(results[i].mean, widths[i]);
  out << "\n\n";

  std::size_t wk = 14;
  for (const auto& r : results) wk = std::max(wk, to_string(r.kind).size());
  out << pad("representation", wk);
  if (!results.empty())
    for (const auto& e : results.front().entries) out << "  " << lpad(e.dataset, std::max<std::size_t>(e.dataset.size(), 8));
  out << "  " << lpad("mean", 8) << "\n";
  for (const auto& r : results) {
    out << pad(std::string(to_string(r.kind)), wk);
    for (const auto& e : r.entries) out << "  " << cell(e.unseen_accuracy, std::max<std::size_t>(e.dataset.size(), 8));
    out << "  " << cell(r.mean, 8) << "\n";
  }
  return out.str();
}

}  // namespace frozen_align
