#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "afford3d/cli.hpp"
#include "afford3d/dataset.hpp"
#include "afford3d/formats.hpp"
#include "afford3d/metrics.hpp"
#include "test_support.hpp"

using namespace afford3d;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  CHECK(run({}).code == cli::kUsage);
  CHECK(run({"frobnicate"}).code == cli::kUsage);
  CHECK(run({"train", "--steps", "abc"}).code == cli::kUsage);
  CHECK(run({"train", "--frames", "3"}).code == cli::kUsage);
  CHECK(run({"--help"}).code == cli::kSuccess);
  const auto dir = testing::scratch_dir("cli_usage");
  write_text_file(dir / "bad.json", "{\"bogus\": 1}");
  CHECK(run({"--config", (dir / "bad.json").string(), "train"}).code == cli::kUsage);
}

TEST_CASE("cli: synth, validate, split") {
  const auto dir = testing::scratch_dir("cli_dataset");
  const auto a = (dir / "a").string(), b = (dir / "b").string();
  REQUIRE(run({"--seed", "7", "--out", a, "dataset", "synth", "--types", "2", "--samples", "5"}).code == 0);
  REQUIRE(run({"--seed", "7", "--out", b, "dataset", "synth", "--types", "2", "--samples", "5"}).code == 0);
  for (const auto& f : fs::recursive_directory_iterator(a)) {
    if (!f.is_regular_file()) continue;
    CHECK(read_text_file(f.path()) == read_text_file(fs::path(b) / fs::relative(f.path(), a)));
  }

  const auto manifest = (fs::path(a) / "manifest.tsv").string();
  const auto ok = run({"dataset", "validate", "--manifest", manifest});
  CHECK(ok.code == 0);

  // Mutate: one test video now points at two clouds.
  auto text = read_text_file(manifest);
  text += "vid_grasp_000\tsynthetic\tmug\tgrasp\tclouds/grasp_001.pc\ttest\n";
  text += "vid_grasp_000\tsynthetic\tmug\tgrasp\tclouds/grasp_002.pc\ttest\n";
  const auto mutated = (dir / "a" / "mutated.tsv").string();
  write_text_file(mutated, text);
  const auto bad = run({"dataset", "validate", "--manifest", mutated});
  CHECK(bad.code == cli::kFailure);
  CHECK(bad.out.find("vid_grasp_000") != std::string::npos);

  const auto big = (dir / "big").string();
  REQUIRE(run({"--out", big, "dataset", "synth", "--types", "2", "--samples", "10"}).code == 0);
  const auto split_path = (dir / "split" / "unseen.tsv").string();
  REQUIRE(run({"dataset", "split", "--manifest", (fs::path(big) / "manifest.tsv").string(), "--mode", "unseen",
               "--holdout", "mug", "--dest", split_path})
              .code == 0);
  const auto m = dataset::load_manifest(split_path);
  CHECK(m.entries.size() == 20);
  for (const auto& e : m.entries) CHECK((e.object_class == "mug") == (e.split == dataset::Split::Test));
  CHECK(run({"dataset", "split", "--manifest", (fs::path(big) / "manifest.tsv").string(), "--mode", "unseen"}).code ==
        cli::kUsage);
}

TEST_CASE("cli: train, eval, export round-trip") {
  const auto dir = testing::scratch_dir("cli_train");
  const auto data = (dir / "data").string();
  REQUIRE(run({"--out", data, "dataset", "synth", "--types", "2", "--samples", "5", "--points", "128"}).code == 0);
  const auto cfg = (dir / "small.json").string();
  write_text_file(cfg, R"({"train": {"learning_rate": 0.005}, "model": {"width": 16, "video_width": 16,
                          "action_width": 16, "tokens": 16, "patch_k": 8}})");
  const auto manifest = (fs::path(data) / "manifest.tsv").string();
  const auto run_dir = (dir / "run").string();
  const auto t1 = run({"--config", cfg, "--out", run_dir, "train", "--manifest", manifest, "--steps", "15"});
  REQUIRE(t1.code == 0);
  const auto log1 = read_text_file(fs::path(run_dir) / "loss_log.tsv");
  REQUIRE(run({"--config", cfg, "--out", run_dir, "train", "--manifest", manifest, "--steps", "15"}).code == 0);
  CHECK(read_text_file(fs::path(run_dir) / "loss_log.tsv") == log1);

  const auto ckpt = (fs::path(run_dir) / "checkpoint.a3dw").string();
  CHECK(read_archive(ckpt).config_hash.has_value());
  const auto ev = run({"--out", run_dir, "eval", "--checkpoint", ckpt, "--split", "test"});
  CHECK(ev.code == 0);
  const auto report = metrics::parse_records(read_text_file(fs::path(run_dir) / "metrics_seen_test.records"));
  CHECK(report.split_label == "seen");
  CHECK(report.overall.samples == 2);
  CHECK(report.config_hash == *read_archive(ckpt).config_hash);

  const auto oracle = run({"--out", run_dir, "eval", "--manifest", manifest, "--oracle-scores", "--label", "seen"});
  CHECK(oracle.code == 0);
  const auto o = metrics::parse_records(read_text_file(fs::path(run_dir) / "metrics_seen_test.records"));
  CHECK(o.overall.miou.mean == 1.0);
  CHECK(o.overall.auc.mean == 1.0);
  CHECK(o.overall.sim.mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(o.overall.mae.mean == 0.0);

  const auto ply = (dir / "heat.ply").string();
  CHECK(run({"export", "--checkpoint", ckpt, "--manifest", manifest, "--video-id", "vid_grasp_000", "--output", ply}).code == 0);
  const auto colored = parse_ply(read_text_file(ply));
  CHECK(colored.coords.size() == 128);
  CHECK(colored.comments.size() == 4);
  CHECK(run({"export", "--checkpoint", ckpt, "--manifest", manifest, "--video-id", "nope"}).code == cli::kFailure);
}

TEST_CASE("cli: weights") {
  const auto dir = testing::scratch_dir("cli_weights");
  write_point_cloud(dir / "one.pc", PointCloud{{{0.2, 0.3, 0.4}}, std::nullopt});
  const auto out = (dir / "w.txt").string();
  REQUIRE(run({"weights", "--cloud", (dir / "one.pc").string(), "--output", out}).code == 0);
  const auto text = read_text_file(out);
  CHECK(text.rfind("# config_hash=", 0) == 0);
  CHECK(text.substr(text.find('\n') + 1) == "0 1.0\n");

  write_point_cloud(dir / "two.pc", PointCloud{{{0, 0, 0}, {0.05, 0, 0}}, std::nullopt});
  const auto ply = (dir / "w.ply").string();
  REQUIRE(run({"weights", "--cloud", (dir / "two.pc").string(), "--radius", "0.1", "--sigma", "0.01", "--output", out,
               "--ply", ply})
              .code == 0);
  std::istringstream lines(read_text_file(out));
  std::string header;
  std::getline(lines, header);
  for (int i = 0; i < 2; ++i) {
    int idx;
    double w;
    lines >> idx >> w;
    CHECK(idx == i);
    CHECK(w == doctest::Approx(3.727e-6).epsilon(1e-4));
  }
  CHECK(parse_ply(read_text_file(ply)).coords.size() == 2);
}

TEST_CASE("cli: gradcheck and its negative control") {
  const auto good = run({"gradcheck", "--samples", "2", "--points", "64"});
  CHECK(good.code == 0);
  CHECK(good.out.find("patch.w1") != std::string::npos);
  CHECK(good.out.find("loss.spatial") != std::string::npos);
  const auto bad = run({"gradcheck", "--samples", "1", "--points", "64", "--corrupt-backward", "relu"});
  CHECK(bad.code == cli::kFailure);
  CHECK(bad.out.find("result: FAIL") != std::string::npos);
  CHECK(run({"gradcheck", "--corrupt-backward", "nope"}).code == cli::kUsage);
}
