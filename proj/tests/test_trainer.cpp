#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <doctest.h>

#include "frozen_align/checkpoint.hpp"
#include "frozen_align/config.hpp"
#include "frozen_align/contrastive.hpp"
#include "frozen_align/error.hpp"
#include "frozen_align/text_io.hpp"
#include "frozen_align/trainer.hpp"
#include "helpers.hpp"

using namespace frozen_align;
using testing::TempDir;

namespace {

TrainConfig small_train(const PairedDataset& ds, std::size_t batch, std::uint64_t steps) {
  TrainConfig c;
  c.batch_size = batch;
  c.max_steps = steps;
  c.val_fraction = 0.1;
  c.val_interval = 10;
  c.early_stop_patience = 0;
  c.seed = 3;
  c.optimizer.lr = 1e-2;
  c.projection.input_dim = ds.text.dim();
  c.projection.output_dim = ds.vision.dim();
  c.projection.hidden_dim = 32;
  c.projection.num_layers = 3;
  c.projection.dropout_p = 0.1;
  return c;
}

void check_same_params(ProjectionNet& a, ProjectionNet& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].value == *pb[i].value);
  for (std::size_t l = 0; l < a.batch_norms().size(); ++l) {
    CHECK(a.batch_norms()[l].running_mean == b.batch_norms()[l].running_mean);
    CHECK(a.batch_norms()[l].running_var == b.batch_norms()[l].running_var);
  }
}

void check_same_log(const std::vector<LogRow>& a, const std::vector<LogRow>& b) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].step == b[i].step);
    CHECK(a[i].train_loss == b[i].train_loss);
    CHECK(a[i].val_loss == b[i].val_loss);
  }
}

}  // namespace

TEST_CASE("validation split is image-disjoint and keeps captions together") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(100, 4, 1), testing::random_matrix(300, 6, 2), 3);
  const auto [tr, val] = split_train_val(ds, 0.1, 7);
  CHECK(tr.image_count() == 90);
  CHECK(val.image_count() == 10);
  std::set<std::size_t> seen(tr.image_rows.begin(), tr.image_rows.end());
  for (std::size_t r : val.image_rows) CHECK(seen.insert(r).second);
  CHECK(seen.size() == 100);
  for (std::size_t i = 0; i < val.image_count(); ++i) {
    const auto row = val.image_rows[i];
    CHECK(val.caption_rows[i] == ds.caption_rows[row]);
  }
  // Same seed, same split.
  CHECK(split_train_val(ds, 0.1, 7).second.image_rows == val.image_rows);
  CHECK_FALSE(split_train_val(ds, 0.1, 8).second.image_rows == val.image_rows);
}

TEST_CASE("a split that leaves one side empty is rejected") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(10, 4, 1), testing::random_matrix(10, 6, 2));
  FA_CHECK_THROWS_CODE(split_train_val(ds, 0.02, 1), ErrorCode::TooSmall);
  CHECK(split_train_val(ds, 0.1, 1).second.image_count() == 1);
}

TEST_CASE("sampler draws distinct images and covers each epoch") {
  BatchSampler s(12, 5);
  std::map<std::size_t, int> counts;
  for (int b = 0; b < 3; ++b) {
    const auto batch = s.next(4);
    CHECK(std::set<std::size_t>(batch.begin(), batch.end()).size() == 4);
    for (auto i : batch) counts[i] += 1;
  }
  CHECK(counts.size() == 12);
  for (const auto& [i, c] : counts) CHECK(c == 1);
  // A batch equal to the dataset is a permutation of it.
  BatchSampler full(9, 1);
  for (int rep = 0; rep < 3; ++rep) {
    auto all = full.next(9);
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < 9; ++i) CHECK(all[i] == i);
  }
  FA_CHECK_THROWS_CODE(full.next(10), ErrorCode::BatchExceedsDataset);
}

TEST_CASE("captions are drawn uniformly per image") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(4, 3, 1), testing::random_matrix(12, 3, 2), 3);
  BatchSampler sampler(4, 1);
  Rng rng(2);
  std::map<std::size_t, std::size_t> hits;
  const std::size_t draws = 6000;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto b = sample_batch(ds, sampler, 4, rng);
    for (std::size_t k = 0; k < 4; ++k) {
      const auto& caps = ds.caption_rows[b.image_rows[k]];
      CHECK(std::find(caps.begin(), caps.end(), b.text_rows[k]) != caps.end());
      hits[b.text_rows[k]] += 1;
    }
  }
  REQUIRE(hits.size() == 12);
  const double band = testing::three_sigma_percent(1.0 / 3.0, draws);
  for (const auto& [row, n] : hits) CHECK(std::abs(100.0 * double(n) / draws - 100.0 / 3.0) < band);
}

TEST_CASE("batch size limits") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(8, 4, 1), testing::random_matrix(8, 6, 2));
  auto c = small_train(ds, 8, 3);
  Trainer exact(c, ds, std::nullopt);
  CHECK(exact.run().steps_run == 3);
  c.batch_size = 9;
  FA_CHECK_THROWS_CODE(Trainer(c, ds, std::nullopt), ErrorCode::BatchExceedsDataset);
  c.batch_size = 1;
  FA_CHECK_THROWS_CODE(Trainer(c, ds, std::nullopt), ErrorCode::InvalidConfig);
}

TEST_CASE("store widths must match the projection") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(8, 4, 1), testing::random_matrix(8, 6, 2));
  auto c = small_train(ds, 4, 1);
  c.projection.input_dim = 5;
  FA_CHECK_THROWS_CODE(Trainer(c, ds, std::nullopt), ErrorCode::DimMismatch);
}

TEST_CASE("eight pairs are memorized") {
  TempDir dir;
  const auto vision = testing::random_matrix(8, 16, 11);
  const auto text = testing::random_matrix(8, 24, 12);
  const auto ds = testing::make_dataset(dir.path(), vision, text);
  auto c = small_train(ds, 8, 400);
  c.projection.dropout_p = 0.0;
  c.projection.hidden_dim = 64;
  Trainer t(c, ds, std::nullopt);
  const auto report = t.run();
  CHECK(report.final_train_loss < 0.05);

  // Every caption retrieves its own image in eval mode.
  auto z_txt = normalize(t.net().forward(text, Mode::eval).output);
  const auto z_img = normalize(vision);
  const auto sim = similarity_matrix(z_txt, z_img);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    const auto row = sim.row(i);
    correct += static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == i;
  }
  CHECK(correct == 8);
}

TEST_CASE("initial loss is close to log B") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(256, 768, 1), testing::random_matrix(256, 512, 2));
  auto c = small_train(ds, 256, 1);
  c.projection.hidden_dim = 256;
  c.optimizer.lr = 0.0;
  Trainer t(c, ds, std::nullopt);
  const auto r = t.run();
  CHECK(std::abs(r.log.front().train_loss / std::log(256.0) - 1.0) < 0.1);
}

TEST_CASE("identical seeds give identical runs") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(60, 6, 1), testing::random_matrix(120, 10, 2), 2);
  auto c = small_train(ds, 16, 30);
  auto a = train_model(c, ds);
  auto b = train_model(c, ds);
  check_same_params(a.net, b.net);
  check_same_log(a.report.log, b.report.log);
  c.seed = 4;
  auto other = train_model(c, ds);
  CHECK_FALSE(other.report.log.front().train_loss == a.report.log.front().train_loss);
}

TEST_CASE("resume continues bit for bit") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(60, 6, 1), testing::random_matrix(120, 10, 2), 2);
  auto [tr, val] = split_train_val(ds, 0.1, 1);
  auto c = small_train(ds, 16, 40);
  c.early_stop_patience = 50;

  Trainer straight(c, tr, val);
  const auto full = straight.run();

  auto half = c;
  half.max_steps = 20;
  Trainer first(half, tr, val);
  first.run();
  first.save_state(dir / "mid.ckpt");

  Trainer second(half, tr, val);
  second.load_state(dir / "mid.ckpt");
  CHECK(second.step() == 20);
  second.set_max_steps(40);
  const auto resumed = second.run();
  check_same_params(straight.net(), second.net());
  check_same_log(full.log, resumed.log);
  CHECK(full.best_val_loss == resumed.best_val_loss);

  // Checkpoints survive a load/save cycle byte for byte.
  Checkpoint::load(dir / "mid.ckpt").save(dir / "again.ckpt");
  CHECK(read_file(dir / "mid.ckpt") == read_file(dir / "again.ckpt"));
}

TEST_CASE("a checkpoint from a different architecture is refused") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(20, 6, 1), testing::random_matrix(20, 10, 2));
  auto c = small_train(ds, 8, 2);
  Trainer t(c, ds, std::nullopt);
  t.run();
  t.save_state(dir / "a.ckpt");
  c.projection.hidden_dim = 16;
  Trainer other(c, ds, std::nullopt);
  FA_CHECK_THROWS_CODE(other.load_state(dir / "a.ckpt"), ErrorCode::InvalidConfig);
}

TEST_CASE("zero learning rate leaves trainable parameters untouched") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(20, 6, 1), testing::random_matrix(20, 10, 2));
  auto c = small_train(ds, 8, 10);
  c.optimizer.lr = 0.0;
  Trainer t(c, ds, std::nullopt);
  ProjectionNet init = t.net();
  t.run();
  const auto before = init.parameters();
  const auto after = t.net().parameters();
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(*before[i].value == *after[i].value);
}

TEST_CASE("validation images never enter a training batch") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(50, 6, 1), testing::random_matrix(100, 10, 2), 2);
  auto [tr, val] = split_train_val(ds, 0.2, 9);
  auto c = small_train(ds, 8, 60);
  c.val_interval = 1000;  // only training reads are logged
  Trainer t(c, tr, val);
  AccessLog log;
  t.set_access_log(&log);
  t.run();
  for (std::size_t r : val.image_rows) CHECK(log.vision_rows.count(r) == 0);
  for (const auto& caps : val.caption_rows)
    for (std::size_t r : caps) CHECK(log.text_rows.count(r) == 0);
  CHECK(log.vision_rows.size() == tr.image_count());
}

TEST_CASE("early stopping after patience checks without improvement") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(40, 6, 1), testing::random_matrix(40, 10, 2));
  auto [tr, val] = split_train_val(ds, 0.2, 1);
  auto c = small_train(ds, 8, 1000);
  c.optimizer.lr = 0.0;
  c.projection.batch_norm = false;  // constant validation loss
  c.val_interval = 5;
  c.early_stop_patience = 3;
  Trainer t(c, tr, val);
  const auto r = t.run();
  CHECK(r.early_stopped);
  CHECK(r.steps_run == 5 * (1 + 3));
  CHECK(r.best_step == 5);
}

TEST_CASE("a diverging run stops with NonFiniteLoss") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(20, 6, 1), testing::random_matrix(20, 10, 2));
  auto c = small_train(ds, 8, 50);
  c.optimizer.lr = 1e38;
  Trainer t(c, ds, std::nullopt);
  FA_CHECK_THROWS_CODE(t.run(), ErrorCode::NonFiniteLoss);
}

TEST_CASE("run writes checkpoints and a log that reload into the best network") {
  TempDir dir;
  const auto ds = testing::make_dataset(dir.path(), testing::random_matrix(60, 6, 1), testing::random_matrix(60, 10, 2));
  auto c = small_train(ds, 16, 30);
  c.out_dir = dir / "run";
  auto out = train_model(c, ds);
  CHECK(out.report.checkpoint_path == dir / "run" / "best.ckpt");
  CHECK(std::filesystem::exists(dir / "run" / "final.ckpt"));
  const auto csv = read_file(dir / "run" / "train_log.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 31);
  auto loaded = load_projection_net(out.report.checkpoint_path);
  check_same_params(loaded, out.net);
}

TEST_CASE("configs round-trip through JSON") {
  TrainConfig c;
  c.batch_size = 123;
  c.tau = 0.05;
  c.optimizer.weight_decay = 0.0;
  c.projection.hidden_dim = 99;
  c.projection.dropout_p = 0.3;
  const auto j = to_json(c);
  TrainConfig back;
  update_from_json(back, j);
  CHECK(to_json(back) == j);
  CHECK(back.projection == c.projection);
  CHECK(back.optimizer == c.optimizer);
  CHECK(config_digest(j) == config_digest(nlohmann::json::parse(j.dump())));
  CHECK(config_digest(j).size() == 16);
  CHECK_FALSE(config_digest(j) == config_digest(to_json(TrainConfig{})));

  TrainConfig partial;
  update_from_json(partial, nlohmann::json{{"max_steps", 7}});
  CHECK(partial.max_steps == 7);
  CHECK(partial.batch_size == TrainConfig{}.batch_size);
  FA_CHECK_THROWS_CODE(update_from_json(partial, nlohmann::json{{"max_stepz", 7}}), ErrorCode::ParseError);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  c.val_fraction = 0.0;
  FA_CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
  c = TrainConfig{};
  c.tau = 0.0;
  FA_CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
  c = TrainConfig{};
  c.val_interval = 0;
  FA_CHECK_THROWS_CODE(c.validate(), ErrorCode::InvalidConfig);
  CHECK_NOTHROW(TrainConfig{}.validate());
}
