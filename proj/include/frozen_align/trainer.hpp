#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "frozen_align/feature_store.hpp"
#include "frozen_align/optimizer.hpp"
#include "frozen_align/projection_net.hpp"
#include "frozen_align/random.hpp"

namespace frozen_align {

struct TrainConfig {
  std::size_t batch_size = 16384;
  std::uint64_t max_steps = 5000;
  double val_fraction = 0.02;
  std::uint64_t val_interval = 100;
  std::uint64_t early_stop_patience = 5;
  double tau = 0.07;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  AdamConfig optimizer;
  /// input_dim / output_dim are overwritten from the stores by `train()`.
  ProjectionConfig projection;
  /// Checkpoints, CSV log and report land here; empty disables file output.
  std::filesystem::path out_dir;

  /// Throws InvalidConfig.
  void validate() const;
};

struct LogRow {
  std::uint64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainReport {
  std::uint64_t steps_run = 0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> best_val_loss;
  std::uint64_t best_step = 0;
  double wall_seconds = 0.0;
  std::filesystem::path checkpoint_path;
  bool early_stopped = false;
  std::vector<LogRow> log;
};

/// Store rows read while training; used to prove seen/unseen separation.
struct AccessLog {
  std::set<std::size_t> vision_rows;
  std::set<std::size_t> text_rows;
};

/// Disjoint image-level partition; validation keeps all captions of its images.
/// Throws TooSmall if either side would be empty.
std::pair<PairedDataset, PairedDataset> split_train_val(const PairedDataset& dataset, double val_fraction,
                                                        std::uint64_t seed);

/// Epoch-style draw of distinct image positions; reshuffles when fewer than
/// a full batch remain.
class BatchSampler {
 public:
  BatchSampler(std::size_t image_count, std::uint64_t seed);

  /// Throws BatchExceedsDataset if batch_size > image_count.
  std::vector<std::size_t> next(std::size_t batch_size);

  std::size_t image_count() const noexcept { return perm_.size(); }

  // Checkpoint support.
  const std::vector<std::size_t>& permutation() const noexcept { return perm_; }
  std::size_t cursor() const noexcept { return cursor_; }
  Rng& rng() noexcept { return rng_; }
  const Rng& rng() const noexcept { return rng_; }
  void restore(std::vector<std::size_t> perm, std::size_t cursor);

 private:
  void reshuffle();

  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

struct Batch {
  Matrix<float> vision;
  Matrix<float> text;
  std::vector<std::size_t> image_rows;
  std::vector<std::size_t> text_rows;
};

/// Distinct images from the sampler, one caption each drawn uniformly from
/// that image's captions, features gathered from the stores.
Batch sample_batch(const PairedDataset& train, BatchSampler& sampler, std::size_t batch_size, Rng& caption_rng);

/// Owns the network, optimizer and sampling state of one training run.
/// Everything needed for bit-exact resume goes through save/load_state.
class Trainer {
 public:
  Trainer(TrainConfig config, PairedDataset train, std::optional<PairedDataset> val);

  /// Runs until `config.max_steps` total steps or early stop.
  TrainReport run();

  /// Mean contrastive loss over the validation split in eval mode.
  double validation_loss();

  void save_state(const std::filesystem::path& path) const;
  void load_state(const std::filesystem::path& path);

  const ProjectionNet& net() const noexcept { return net_; }
  /// Network as of the best validation check in this process (the current
  /// one if no check has improved yet).
  const ProjectionNet& best_net() const noexcept { return best_net_ ? *best_net_ : net_; }
  ProjectionNet& net() noexcept { return net_; }
  const TrainConfig& config() const noexcept { return config_; }
  std::uint64_t step() const noexcept { return step_; }

  /// Sets max_steps for a continued run (e.g. after load_state).
  void set_max_steps(std::uint64_t steps) noexcept { config_.max_steps = steps; }

  void set_access_log(AccessLog* log) noexcept { access_log_ = log; }

 private:
  double train_step();

  TrainConfig config_;
  PairedDataset train_;
  std::optional<PairedDataset> val_;
  ProjectionNet net_;
  AdamState<float> adam_;
  std::vector<Matrix<float>*> param_ptrs_;
  std::vector<std::string> param_names_;
  std::vector<bool> decay_mask_;
  BatchSampler sampler_;
  Rng caption_rng_;
  Matrix<float> val_vision_;
  Matrix<float> val_text_;
  std::vector<std::size_t> val_text_rows_;
  std::uint64_t step_ = 0;
  std::optional<double> best_val_;
  std::optional<ProjectionNet> best_net_;
  std::uint64_t best_step_ = 0;
  std::uint64_t checks_without_improvement_ = 0;
  std::vector<LogRow> log_;
  AccessLog* access_log_ = nullptr;
};

struct TrainOutcome {
  TrainReport report;
  ProjectionNet net;  // best-validation parameters
};

/// Splits off a validation set and trains. Projection input/output widths
/// are taken from the text/vision stores. `log`, when given, records every
/// store row read.
TrainOutcome train_model(TrainConfig config, const PairedDataset& dataset, AccessLog* log = nullptr);
TrainReport train(TrainConfig config, const PairedDataset& dataset);

/// Rebuilds an eval-ready network from a checkpoint written by Trainer.
ProjectionNet load_projection_net(const std::filesystem::path& checkpoint);

}  // namespace frozen_align
