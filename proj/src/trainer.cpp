#include "frozen_align/trainer.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "frozen_align/checkpoint.hpp"
#include "frozen_align/config.hpp"
#include "frozen_align/contrastive.hpp"
#include "frozen_align/error.hpp"

namespace frozen_align {

namespace {

// Independent random streams derived from the root seed.
enum Stream : std::uint64_t { kInit = 1, kSampler = 2, kCaption = 3, kValCaption = 4, kSplit = 5 };

std::uint64_t bits(double v) { return std::bit_cast<std::uint64_t>(v); }
double from_bits(std::uint64_t v) { return std::bit_cast<double>(v); }

std::uint64_t single(const Checkpoint& ck, const std::string& name) {
  const auto& v = ck.ints(name);
  if (v.size() != 1) throw Error(ErrorCode::ParseError, "section '" + name + "' should hold one value");
  return v.front();
}

void restore_rng(Rng& rng, const std::string& state, const char* which) {
  std::istringstream ss(state);
  ss >> rng;
  if (ss.fail()) throw Error(ErrorCode::ParseError, std::string("corrupt rng state '") + which + "'");
}

}  // namespace

void TrainConfig::validate() const {
  std::ostringstream why;
  if (batch_size < 2) why << "batch_size must be >= 2; ";
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) why << "val_fraction must lie in (0, 0.5); ";
  if (val_interval == 0) why << "val_interval must be >= 1; ";
  if (!(tau > 0.0)) why << "tau must be positive; ";
  if (!(clip_norm > 0.0)) why << "clip_norm must be positive; ";
  if (!(optimizer.lr >= 0.0)) why << "lr must be >= 0; ";
  if (!(optimizer.weight_decay >= 0.0)) why << "weight_decay must be >= 0; ";
  const auto msg = why.str();
  if (!msg.empty()) throw Error(ErrorCode::InvalidConfig, msg.substr(0, msg.size() - 2));
}

// ---------------------------------------------------------------------------

std::pair<PairedDataset, PairedDataset> split_train_val(const PairedDataset& dataset, double val_fraction,
                                                        std::uint64_t seed) {
  const std::size_t n = dataset.image_count();
  if (n == 0) throw Error(ErrorCode::TooSmall, "dataset is empty");
  const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_fraction));
  if (n_val == 0 || n_val >= n) {
    std::ostringstream msg;
    msg << n << " images with val_fraction " << val_fraction << " gives " << n_val << " validation images";
    throw Error(ErrorCode::TooSmall, msg.str());
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  shuffle<std::size_t>(order, rng);
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {dataset.subset(tr), dataset.subset(val)};
}

// ---------------------------------------------------------------------------

BatchSampler::BatchSampler(std::size_t image_count, std::uint64_t seed) : perm_(image_count), rng_(seed) {
  std::iota(perm_.begin(), perm_.end(), 0);
  reshuffle();
}

void BatchSampler::reshuffle() {
  shuffle<std::size_t>(perm_, rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  if (batch_size > perm_.size()) {
    throw Error(ErrorCode::BatchExceedsDataset, "batch of " + std::to_string(batch_size) + " from " +
                                                    std::to_string(perm_.size()) + " training images");
  }
  if (cursor_ + batch_size > perm_.size()) reshuffle();
  std::vector<std::size_t> out(perm_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               perm_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_size));
  cursor_ += batch_size;
  return out;
}

void BatchSampler::restore(std::vector<std::size_t> perm, std::size_t cursor) {
  if (perm.size() != perm_.size() || cursor > perm.size())
    throw Error(ErrorCode::ParseError, "sampler state does not match the training set");
  perm_ = std::move(perm);
  cursor_ = cursor;
}

Batch sample_batch(const PairedDataset& train, BatchSampler& sampler, std::size_t batch_size, Rng& caption_rng) {
  const auto positions = sampler.next(batch_size);
  Batch b;
  b.image_rows.reserve(batch_size);
  b.text_rows.reserve(batch_size);
  for (std::size_t p : positions) {
    b.image_rows.push_back(train.image_rows[p]);
    const auto& caps = train.caption_rows[p];
    b.text_rows.push_back(caps[static_cast<std::size_t>(uniform_index(caption_rng, caps.size()))]);
  }
  train.vision.gather<float>(b.image_rows, b.vision);
  train.text.gather<float>(b.text_rows, b.text);
  return b;
}

// ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, PairedDataset train, std::optional<PairedDataset> val)
    : config_([&] {
        config.validate();
        config.projection.seed = derive_seed(config.seed, kInit);
        return config;
      }()),
      train_(std::move(train)),
      val_(std::move(val)),
      net_(config_.projection),
      sampler_(train_.image_count(), derive_seed(config_.seed, kSampler)),
      caption_rng_(derive_seed(config_.seed, kCaption)) {
  if (train_.text.dim() != config_.projection.input_dim || train_.vision.dim() != config_.projection.output_dim) {
    std::ostringstream msg;
    msg << "stores are text " << train_.text.dim() << " / vision " << train_.vision.dim() << ", projection expects "
        << config_.projection.input_dim << " -> " << config_.projection.output_dim;
    throw Error(ErrorCode::DimMismatch, msg.str());
  }
  if (config_.batch_size > train_.image_count()) {
    throw Error(ErrorCode::BatchExceedsDataset, "batch_size " + std::to_string(config_.batch_size) + " exceeds " +
                                                    std::to_string(train_.image_count()) + " training images");
  }
  for (auto& p : net_.parameters()) {
    param_ptrs_.push_back(p.value);
    param_names_.push_back(p.name);
    decay_mask_.push_back(p.decay);
  }
  adam_ = make_adam_state<float>(config_.optimizer, param_ptrs_);

  if (val_) {
    // Fixed caption choice so successive checks score the same pairs.
    Rng pick(derive_seed(config_.seed, kValCaption));
    for (const auto& caps : val_->caption_rows)
      val_text_rows_.push_back(caps[static_cast<std::size_t>(uniform_index(pick, caps.size()))]);
    val_->vision.gather<float>(val_->image_rows, val_vision_);
    val_->text.gather<float>(val_text_rows_, val_text_);
  }
}

double Trainer::train_step() {
  Batch batch = sample_batch(train_, sampler_, config_.batch_size, caption_rng_);
  if (access_log_ != nullptr) {
    access_log_->vision_rows.insert(batch.image_rows.begin(), batch.image_rows.end());
    access_log_->text_rows.insert(batch.text_rows.begin(), batch.text_rows.end());
  }

  auto fwd = net_.forward(batch.text, Mode::train);
  const auto z_txt = normalize(fwd.output);
  const auto z_img = normalize(batch.vision);
  auto loss = infonce_loss(z_img, z_txt, config_.tau);
  if (!std::isfinite(loss.total_loss)) {
    std::ostringstream msg;
    msg << "step " << step_ + 1 << ": loss " << loss.total_loss << " (t2i " << loss.loss_t2i << ", i2t "
        << loss.loss_i2t << ")";
    throw Error(ErrorCode::NonFiniteLoss, msg.str());
  }
  const auto upstream = normalize_backward(loss.grad_z_txt, fwd.output);
  auto grads = net_.backward(*fwd.cache, upstream);
  clip_global_norm<float>(grads.grads, config_.clip_norm);
  adam_step<float>(param_ptrs_, grads.grads, decay_mask_, adam_);
  return static_cast<double>(loss.total_loss);
}

double Trainer::validation_loss() {
  if (!val_) throw Error(ErrorCode::TooSmall, "no validation split");
  if (access_log_ != nullptr) {
    access_log_->vision_rows.insert(val_->image_rows.begin(), val_->image_rows.end());
    access_log_->text_rows.insert(val_text_rows_.begin(), val_text_rows_.end());
  }
  const std::size_t n = val_vision_.rows();
  const std::size_t chunks = (n + config_.batch_size - 1) / config_.batch_size;
  double total = 0.0;
  std::size_t begin = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t len = n / chunks + (c < n % chunks ? 1 : 0);
    Matrix<float> text(len, val_text_.cols()), vision(len, val_vision_.cols());
    std::copy_n(val_text_.data() + begin * val_text_.cols(), len * val_text_.cols(), text.data());
    std::copy_n(val_vision_.data() + begin * val_vision_.cols(), len * val_vision_.cols(), vision.data());
    auto fwd = net_.forward(text, Mode::eval);
    const auto loss = infonce_loss(normalize(vision), normalize(fwd.output), config_.tau);
    total += static_cast<double>(loss.total_loss) * static_cast<double>(len);
    begin += len;
  }
  return total / static_cast<double>(n);
}

TrainReport Trainer::run() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  const bool files = !config_.out_dir.empty();
  if (files) std::filesystem::create_directories(config_.out_dir);
  const auto best_path = config_.out_dir / "best.ckpt";
  const auto final_path = config_.out_dir / "final.ckpt";

  while (step_ < config_.max_steps) {
    LogRow row;
    row.train_loss = train_step();
    ++step_;
    row.step = step_;
    if (val_ && step_ % config_.val_interval == 0) {
      const double v = validation_loss();
      row.val_loss = v;
      if (!best_val_ || v < *best_val_) {
        best_val_ = v;
        best_step_ = step_;
        checks_without_improvement_ = 0;
        best_net_ = net_;
        if (files) save_state(best_path);
      } else {
        ++checks_without_improvement_;
      }
    }
    log_.push_back(row);
    if (checks_without_improvement_ >= config_.early_stop_patience && config_.early_stop_patience > 0) {
      report.early_stopped = true;
      break;
    }
  }

  if (files) {
    save_state(final_path);
    std::ofstream csv(config_.out_dir / "train_log.csv");
    csv << "step,train_loss,val_loss\n" << std::setprecision(9);
    for (const auto& r : log_) {
      csv << r.step << ',' << r.train_loss << ',';
      if (r.val_loss) csv << *r.val_loss;
      csv << '\n';
    }
    report.checkpoint_path = best_val_ ? best_path : final_path;
  }

  report.steps_run = step_;
  if (!log_.empty()) report.final_train_loss = log_.back().train_loss;
  report.best_val_loss = best_val_;
  report.best_step = best_step_;
  report.log = log_;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

void Trainer::save_state(const std::filesystem::path& path) const {
  Checkpoint ck;
  nlohmann::json meta = to_json(config_);
  meta["step"] = step_;
  ck.blobs["config"] = meta.dump();

  auto& net = const_cast<ProjectionNet&>(net_);
  const auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    ck.tensors["param/" + params[i].name] = *params[i].value;
    ck.tensors["adam/m/" + params[i].name] = adam_.m[i];
    ck.tensors["adam/v/" + params[i].name] = adam_.v[i];
  }
  const auto& norms = net_.batch_norms();
  for (std::size_t l = 0; l < norms.size(); ++l) {
    ck.tensors["bn/" + std::to_string(l) + "/running_mean"] = norms[l].running_mean;
    ck.tensors["bn/" + std::to_string(l) + "/running_var"] = norms[l].running_var;
  }
  ck.integers["adam/step"] = {adam_.step};
  ck.integers["trainer/step"] = {step_};
  ck.integers["trainer/best_step"] = {best_step_};
  ck.integers["trainer/checks_without_improvement"] = {checks_without_improvement_};
  ck.integers["trainer/best_val"] = best_val_ ? std::vector<std::uint64_t>{bits(*best_val_)} : std::vector<std::uint64_t>{};
  ck.integers["sampler/perm"] = {sampler_.permutation().begin(), sampler_.permutation().end()};
  ck.integers["sampler/cursor"] = {sampler_.cursor()};

  std::vector<std::uint64_t> log_steps, log_train, log_val_flag, log_val;
  for (const auto& r : log_) {
    log_steps.push_back(r.step);
    log_train.push_back(bits(r.train_loss));
    log_val_flag.push_back(r.val_loss ? 1 : 0);
    log_val.push_back(r.val_loss ? bits(*r.val_loss) : 0);
  }
  ck.integers["log/step"] = std::move(log_steps);
  ck.integers["log/train_loss"] = std::move(log_train);
  ck.integers["log/has_val"] = std::move(log_val_flag);
  ck.integers["log/val_loss"] = std::move(log_val);

  ck.blobs["rng/dropout"] = rng_state(net_.dropout_rng());
  ck.blobs["rng/sampler"] = rng_state(sampler_.rng());
  ck.blobs["rng/caption"] = rng_state(caption_rng_);
  ck.save(path);
}

void Trainer::load_state(const std::filesystem::path& path) {
  const Checkpoint ck = Checkpoint::load(path);
  ProjectionConfig stored = config_.projection;
  update_from_json(stored, nlohmann::json::parse(ck.blob("config")).at("projection"));
  if (!(stored == config_.projection))
    throw Error(ErrorCode::InvalidConfig, "checkpoint projection config differs from this run's");

  auto params = net_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = ck.tensor("param/" + params[i].name);
    if (!t.same_shape(*params[i].value)) throw Error(ErrorCode::ParseError, "shape of " + params[i].name);
    *params[i].value = t;
    adam_.m[i] = ck.tensor("adam/m/" + params[i].name);
    adam_.v[i] = ck.tensor("adam/v/" + params[i].name);
  }
  auto& norms = net_.batch_norms();
  for (std::size_t l = 0; l < norms.size(); ++l) {
    norms[l].running_mean = ck.tensor("bn/" + std::to_string(l) + "/running_mean");
    norms[l].running_var = ck.tensor("bn/" + std::to_string(l) + "/running_var");
  }
  adam_.step = single(ck, "adam/step");
  step_ = single(ck, "trainer/step");
  best_step_ = single(ck, "trainer/best_step");
  checks_without_improvement_ = single(ck, "trainer/checks_without_improvement");
  const auto& bv = ck.ints("trainer/best_val");
  best_val_ = bv.empty() ? std::nullopt : std::optional<double>(from_bits(bv.front()));

  const auto& perm = ck.ints("sampler/perm");
  sampler_.restore(std::vector<std::size_t>(perm.begin(), perm.end()), single(ck, "sampler/cursor"));

  log_.clear();
  const auto& ls = ck.ints("log/step");
  const auto& lt = ck.ints("log/train_loss");
  const auto& lf = ck.ints("log/has_val");
  const auto& lv = ck.ints("log/val_loss");
  for (std::size_t i = 0; i < ls.size(); ++i) {
    LogRow r{ls[i], from_bits(lt.at(i)), std::nullopt};
    if (lf.at(i) != 0) r.val_loss = from_bits(lv.at(i));
    log_.push_back(r);
  }

  restore_rng(net_.dropout_rng(), ck.blob("rng/dropout"), "dropout");
  restore_rng(sampler_.rng(), ck.blob("rng/sampler"), "sampler");
  restore_rng(caption_rng_, ck.blob("rng/caption"), "caption");
}

// ---------------------------------------------------------------------------

TrainOutcome train_model(TrainConfig config, const PairedDataset& dataset, AccessLog* log) {
  config.validate();
  config.projection.input_dim = dataset.text.dim();
  config.projection.output_dim = dataset.vision.dim();
  auto [tr, val] = split_train_val(dataset, config.val_fraction, derive_seed(config.seed, kSplit));
  Trainer trainer(std::move(config), std::move(tr), std::move(val));
  trainer.set_access_log(log);
  auto report = trainer.run();
  return {std::move(report), trainer.best_net()};
}

TrainReport train(TrainConfig config, const PairedDataset& dataset) {
  return train_model(std::move(config), dataset).report;
}

ProjectionNet load_projection_net(const std::filesystem::path& checkpoint) {
  const Checkpoint ck = Checkpoint::load(checkpoint);
  ProjectionConfig cfg;
  const auto meta = nlohmann::json::parse(ck.blob("config"));
  update_from_json(cfg, meta.at("projection"));
  ProjectionNet net(cfg);
  for (auto& p : net.parameters()) {
    const auto& t = ck.tensor("param/" + p.name);
    if (!t.same_shape(*p.value)) throw Error(ErrorCode::ParseError, "shape of " + p.name);
    *p.value = t;
  }
  auto& norms = net.batch_norms();
  for (std::size_t l = 0; l < norms.size(); ++l) {
    norms[l].running_mean = ck.tensor("bn/" + std::to_string(l) + "/running_mean");
    norms[l].running_var = ck.tensor("bn/" + std::to_string(l) + "/running_var");
  }
  return net;
}

}  // namespace frozen_align
