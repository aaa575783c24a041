#include <sys/wait.h>

#include <fstream>

#include <doctest.h>
#include <json.hpp>

#include "frozen_align/text_io.hpp"
#include "helpers.hpp"

using testing::TempDir;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string output;
};

// Runs a command with stdout and stderr captured into `dir`.
Run run(const TempDir& dir, const std::string& args, const char* binary = FA_CLI) {
  const auto log = dir / "cmd.log";
  const std::string cmd = std::string(binary) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, frozen_align::read_file(log)};
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

json load(const fs::path& p) { return json::parse(frozen_align::read_file(p)); }

void save(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

// A toy workspace with a short training schedule.
void make_toy(const TempDir& dir) {
  const auto r = run(dir, "--out " + q(dir / "ws") + " --seed 5", FA_TOY);
  REQUIRE_MESSAGE(r.code == 0, r.output);
}

}  // namespace

TEST_CASE("inspect reports the header and flags corrupt stores") {
  TempDir dir;
  make_toy(dir);
  auto r = run(dir, "inspect " + q(dir / "ws/vision.fstore") + " --head 2");
  CHECK(r.code == 0);
  CHECK(r.output.find("count      144") != std::string::npos);
  CHECK(r.output.find("img_00_000") != std::string::npos);

  auto bytes = frozen_align::read_file(dir / "ws/vision.fstore");
  bytes.resize(bytes.size() - 3);
  std::ofstream(dir / "cut.fstore", std::ios::binary) << bytes;
  r = run(dir, "inspect " + q(dir / "cut.fstore"));
  CHECK(r.code == 2);
  CHECK(r.output.find("TruncatedFile") != std::string::npos);
  CHECK(run(dir, "inspect " + q(dir / "absent.fstore")).code == 2);
}

TEST_CASE("train, eval and the benchmark run end to end") {
  TempDir dir;
  make_toy(dir);
  const auto ws = dir / "ws";

  auto r = run(dir, "train --config " + q(ws / "train.json") + " --max-steps 100");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto report = load(ws / "run/train_report.json");
  CHECK(report["steps_run"].get<int>() <= 100);
  CHECK(report["config_digest"].get<std::string>().size() == 16);
  CHECK(report["config"]["train"]["max_steps"] == 100);
  CHECK(fs::exists(ws / "run/best.ckpt"));
  CHECK(fs::exists(ws / "run/train_log.csv"));

  // Same seed, same log.
  r = run(dir, "train --config " + q(ws / "train.json") + " --max-steps 100 --out " + q(dir / "again"));
  REQUIRE(r.code == 0);
  CHECK(frozen_align::read_file(ws / "run/train_log.csv") == frozen_align::read_file(dir / "again/train_log.csv"));
  CHECK(load(dir / "again/train_report.json")["config_digest"] == report["config_digest"]);

  r = run(dir, "eval --checkpoint " + q(ws / "run/best.ckpt") + " --config " + q(ws / "eval.json"));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto eval = load(ws / "eval/eval_report.json");
  REQUIRE(eval.size() == 5);
  CHECK(eval[0]["task"] == "classification");
  CHECK(eval[0]["metrics"]["top1"].get<double>() > 50.0);
  CHECK(eval[2]["metrics"].contains("t2i_recall@5"));
  CHECK(fs::exists(ws / "eval/eval_report.txt"));

  r = run(dir, "eval --verbose --checkpoint " + q(ws / "run/best.ckpt") + " --config " + q(ws / "eval.json") +
                   " --out " + q(dir / "ev"));
  CHECK(r.code == 0);
  CHECK(r.output.find("correct") != std::string::npos);

  r = run(dir, "viterb --config " + q(ws / "viterb.json") + " --max-steps 150");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto v = load(ws / "viterb/viterb_report.json");
  REQUIRE(v["results"].size() == 2);
  CHECK(v["results"][0]["representation"] == "templates");
  CHECK(v["results"][1]["datasets"][0]["dataset"] == "toy");
  CHECK(frozen_align::read_file(ws / "viterb/viterb_summary.txt").find("description") != std::string::npos);
}

TEST_CASE("export-texts writes one line per class text") {
  TempDir dir;
  make_toy(dir);
  const auto ws = dir / "ws";
  auto r = run(dir, "export-texts --representations " + q(ws / "reps") + " --kind templates --templates " +
                        q(ws / "templates.txt") + " --out " + q(dir / "t.tsv"));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto lines = frozen_align::read_lines(dir / "t.tsv");
  CHECK(lines.size() == 6 * 3);
  CHECK(lines.front() == "templates/class_00/0\ta photo of a object 0.");
  CHECK(run(dir, "export-texts --representations " + q(ws / "reps") + " --kind templates --out " + q(dir / "u.tsv"))
            .code == 1);
}

TEST_CASE("exit codes for failure classes") {
  TempDir dir;
  make_toy(dir);
  const auto ws = dir / "ws";

  SUBCASE("configuration") {
    CHECK(run(dir, "train --config " + q(dir / "missing.json")).code == 1);
    auto cfg = load(ws / "train.json");
    cfg["train"]["bogus"] = 1;
    save(ws / "bad.json", cfg);
    CHECK(run(dir, "train --config " + q(ws / "bad.json")).code == 1);
    cfg = load(ws / "train.json");
    cfg["train"]["batch_size"] = 100000;
    save(ws / "big.json", cfg);
    CHECK(run(dir, "train --config " + q(ws / "big.json")).code == 1);
  }
  SUBCASE("non-finite loss") {
    auto cfg = load(ws / "train.json");
    cfg["train"]["optimizer"]["lr"] = 1e38;
    save(ws / "diverge.json", cfg);
    const auto r = run(dir, "train --config " + q(ws / "diverge.json"));
    CHECK(r.code == 3);
    CHECK(r.output.find("NonFiniteLoss") != std::string::npos);
  }
  SUBCASE("missing embedding") {
    REQUIRE(run(dir, "train --config " + q(ws / "train.json") + " --max-steps 5").code == 0);
    std::ofstream(ws / "ghost.tsv") << "img_00_000\tclass_00\nimg_99_999\tclass_01\n";
    auto cfg = load(ws / "eval.json");
    cfg["tasks"] = json::array({cfg["tasks"][1]});
    cfg["tasks"][0]["labels"] = "ghost.tsv";
    save(ws / "ghost.json", cfg);
    const auto r = run(dir, "eval --checkpoint " + q(ws / "run/final.ckpt") + " --config " + q(ws / "ghost.json"));
    CHECK(r.code == 4);
    CHECK(r.output.find("img_99_999") != std::string::npos);
  }
  SUBCASE("leak and overlap") {
    const auto eval_labels = frozen_align::read_file(ws / "eval_labels.tsv");
    std::ofstream(ws / "train_labels.tsv", std::ios::app) << eval_labels.substr(0, eval_labels.find('\n') + 1);
    auto r = run(dir, "viterb --config " + q(ws / "viterb.json") + " --max-steps 5");
    CHECK(r.code == 5);
    CHECK(r.output.find("LeakDetected") != std::string::npos);

    const auto split = frozen_align::read_file(ws / "split.txt");
    std::ofstream(ws / "split.txt") << split << "class_00\nclass_01\nclass_02\nclass_03\nclass_04\nclass_05\n";
    r = run(dir, "viterb --config " + q(ws / "viterb.json") + " --max-steps 5");
    CHECK(r.code == 5);
    CHECK(r.output.find("OverlapDetected") != std::string::npos);
  }
}
