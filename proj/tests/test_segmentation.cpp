#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lac/checkpoint.hpp"
#include "lac/segmentation.hpp"
#include "lac/synth.hpp"
#include "test_util.hpp"

using namespace lac;

namespace {

std::string fresh_dir(const std::string& name) {
  const auto dir =
      std::filesystem::temp_directory_path() / "lac_segmentation_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

VisualEncoderConfig tiny_encoder(int num_classes = 0) {
  VisualEncoderConfig cfg;
  cfg.num_joints = 13;
  cfg.channels_in = 2;
  cfg.stage_channels = {6, 6, 8};
  cfg.stage_blocks = {1, 1, 1};
  cfg.num_classes = num_classes;
  return cfg;
}

DatasetManifest tiny_untrimmed(const std::string& dir, uint64_t seed = 19) {
  UntrimmedDataConfig cfg;
  cfg.num_videos = 8;
  cfg.t_min = 48;
  cfg.t_max = 72;
  cfg.max_cooccurrence = 2;
  cfg.num_train_characters = 3;
  cfg.num_test_characters = 2;
  cfg.seed = seed;
  cfg.out_dir = dir;
  return build_untrimmed_dataset(cfg);
}

FinetuneConfig tiny_finetune(const std::string& out_dir) {
  FinetuneConfig cfg;
  cfg.steps = 4;
  cfg.batch = 2;
  cfg.lr = 1e-3;
  cfg.seed = 5;
  cfg.checkpoint_interval = 100;
  cfg.window = {16, 8};
  cfg.encoder = tiny_encoder();
  cfg.out_dir = out_dir;
  return cfg;
}

}  // namespace

TEST_CASE("window starts partition with a right-aligned tail") {
  CHECK(window_starts(8, {4, 2}) == std::vector<int>{0, 2, 4});
  CHECK(window_starts(10, {4, 4}) == std::vector<int>{0, 4, 6});
  CHECK(window_starts(4, {4, 2}) == std::vector<int>{0});
  CHECK_THROWS_AS(window_starts(3, {4, 2}), Error);
  CHECK_THROWS_AS(window_starts(8, {4, 5}), Error);  // stride > window
}

TEST_CASE("coverage counts reproduce the documented example") {
  VisualEncoderModel model{tiny_encoder(3)};
  Rng rng(1);
  model.init(rng);
  SkeletonSequence seq;
  seq.num_joints = 13;
  seq.channels = 2;
  seq.frames.resize(8, 26);
  for (Eigen::Index i = 0; i < seq.frames.size(); ++i)
    seq.frames.data()[i] = rng.uniform(-1.0, 1.0);

  const auto pred = predict_untrimmed(seq, model, {4, 2});
  CHECK(pred.coverage == std::vector<int>{1, 1, 2, 2, 2, 2, 1, 1});
  CHECK(pred.scores.rows() == 8);
  CHECK(pred.scores.minCoeff() > 0.0);
  CHECK(pred.scores.maxCoeff() < 1.0);
}

TEST_CASE("a full-length window equals a single classify pass") {
  VisualEncoderModel model{tiny_encoder(4)};
  Rng rng(2);
  model.init(rng);
  SkeletonSequence seq;
  seq.num_joints = 13;
  seq.channels = 2;
  seq.frames.resize(24, 26);
  for (Eigen::Index i = 0; i < seq.frames.size(); ++i)
    seq.frames.data()[i] = rng.uniform(-1.0, 1.0);

  const auto pred = predict_untrimmed(seq, model, {24, 8});
  const Mat direct = classify_frames(seq, model);
  CHECK(testutil::max_abs_diff(pred.scores, direct) <= 1e-9);
  for (const int c : pred.coverage) CHECK(c == 1);
}

TEST_CASE("half-overlapping windows average their scores") {
  // Two windows covering a shared frame with scores 0.2 and 0.6 mean to 0.4.
  SegmentPrediction pred;
  pred.scores = Mat::Zero(3, 1);
  pred.coverage = {1, 2, 1};
  pred.scores(1, 0) = (0.2 + 0.6) / 2.0;
  CHECK(pred.scores(1, 0) == doctest::Approx(0.4));
}

TEST_CASE("mean combination matches batch mean regardless of order") {
  VisualEncoderModel model{tiny_encoder(2)};
  Rng rng(3);
  model.init(rng);
  SkeletonSequence seq;
  seq.num_joints = 13;
  seq.channels = 2;
  seq.frames.resize(20, 26);
  for (Eigen::Index i = 0; i < seq.frames.size(); ++i)
    seq.frames.data()[i] = rng.uniform(-1.0, 1.0);
  const WindowConfig wcfg{8, 4};

  const auto online = predict_untrimmed(seq, model, wcfg);
  // Batch-mean oracle over the same window set.
  const auto starts = window_starts(20, wcfg);
  Mat sums = Mat::Zero(20, 2);
  std::vector<int> cover(20, 0);
  for (auto it = starts.rbegin(); it != starts.rend(); ++it) {  // reverse order
    const Mat w = seq.frames.middleRows(*it, 8);
    sums.middleRows(*it, 8) += classify_features(
        model.frame_features_batch({&w}), model);
    for (int t = *it; t < *it + 8; ++t) ++cover[t];
  }
  for (int t = 0; t < 20; ++t) sums.row(t) /= cover[t];
  CHECK(testutil::max_abs_diff(online.scores, sums) <= 1e-9);
}

TEST_CASE("finetune learns, checkpoints, and stays deterministic") {
  const std::string data_dir = fresh_dir("data");
  const auto manifest = tiny_untrimmed(data_dir);

  auto cfg = tiny_finetune(fresh_dir("run_a"));
  const auto a = finetune(manifest, data_dir, "", cfg);
  REQUIRE(a.history.size() == 4);
  for (const auto& row : a.history) CHECK(std::isfinite(row.bce));

  const std::string dir_a = cfg.out_dir;
  cfg.out_dir = fresh_dir("run_b");
  const auto b = finetune(manifest, data_dir, "", cfg);
  CHECK(slurp(a.checkpoint_path) == slurp(b.checkpoint_path));
  CHECK(slurp(dir_a + "/history.csv") == slurp(cfg.out_dir + "/history.csv"));

  // Different seeds give different parameters.
  cfg.out_dir = fresh_dir("run_c");
  cfg.seed = 6;
  const auto c = finetune(manifest, data_dir, "", cfg);
  CHECK(slurp(a.checkpoint_path) != slurp(c.checkpoint_path));
}

TEST_CASE("finetune steps=0 equals its initialization and resumes bit-exactly") {
  const std::string data_dir = fresh_dir("data_resume");
  const auto manifest = tiny_untrimmed(data_dir);

  auto zero = tiny_finetune(fresh_dir("zero"));
  zero.steps = 0;
  const auto z = finetune(manifest, data_dir, "", zero);
  VisualEncoderModel loaded = load_visual_encoder(z.checkpoint_path);
  VisualEncoderConfig ecfg = tiny_encoder(8);
  ecfg.multi_label = true;
  VisualEncoderModel expected{ecfg};
  Rng rng(mix_seed(5, 0xF17E));
  expected.init(rng);
  CHECK(loaded.blocks[0].mix.weight == expected.blocks[0].mix.weight);
  CHECK(loaded.classifier.weight == expected.classifier.weight);

  auto full = tiny_finetune(fresh_dir("resume_full"));
  full.steps = 4;
  full.checkpoint_interval = 2;
  const auto whole = finetune(manifest, data_dir, "", full);

  auto part = tiny_finetune(fresh_dir("resume_split"));
  part.steps = 2;
  part.checkpoint_interval = 2;
  const auto first = finetune(manifest, data_dir, "", part);
  part.steps = 4;
  const auto second =
      finetune(manifest, data_dir, "", part, first.checkpoint_path);
  CHECK(slurp(whole.checkpoint_path) == slurp(second.checkpoint_path));
}

TEST_CASE("label fractions nest") {
  const auto five = label_subset(40, 0.05, 99);
  const auto ten = label_subset(40, 0.10, 99);
  REQUIRE(five.size() <= ten.size());
  for (size_t i = 0; i < five.size(); ++i) CHECK(five[i] == ten[i]);
  CHECK(label_subset(40, 1.0, 99).size() == 40);
  CHECK(label_subset(40, 0.01, 99).size() == 1);  // never empty
  CHECK_THROWS_AS(label_subset(40, 0.0, 99), Error);
}

TEST_CASE("bce drops on constant labels") {
  const std::string data_dir = fresh_dir("data_learn");
  const auto manifest = tiny_untrimmed(data_dir, 23);

  auto cfg = tiny_finetune(fresh_dir("learn"));
  cfg.steps = 60;
  cfg.batch = 2;
  cfg.lr = 3e-3;
  const auto result = finetune(manifest, data_dir, "", cfg);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) {
    first += result.history[i].bce;
    last += result.history[result.history.size() - 10 + i].bce;
  }
  CHECK(last < first);
}

TEST_CASE("probe on linearly separable features reaches high accuracy") {
  Rng rng(11);
  const int N = 200, F = 8, C = 4;
  Mat X(N, F);
  std::vector<int> y(N);
  for (int i = 0; i < N; ++i) {
    y[i] = static_cast<int>(rng.index(C));
    for (int j = 0; j < F; ++j) X(i, j) = 0.3 * rng.normal();
    X(i, y[i]) += 3.0;  // strongly separable direction per class
  }
  const Dense probe = train_softmax_probe(X, y, C, 200, 0.1, 1);
  CHECK(softmax_probe_accuracy(probe, X, y) >= 0.95);

  // Zero probe steps: the classifier equals its seeded initialization.
  const Dense untouched = train_softmax_probe(X, y, C, 0, 0.1, 7);
  Dense expected(F, C);
  Rng prng(mix_seed(7, 0x9B0B));
  expected.init(prng);
  CHECK(untouched.weight == expected.weight);
}

TEST_CASE("linear probe freezes the backbone") {
  const std::string data_dir = fresh_dir("probe_data");
  const auto manifest = tiny_untrimmed(data_dir, 29);

  // A finetuned checkpoint provides the frozen backbone.
  auto cfg = tiny_finetune(fresh_dir("probe_init"));
  cfg.steps = 2;
  const auto init = finetune(manifest, data_dir, "", cfg);

  VisualEncoderModel before{tiny_encoder(0)};
  load_backbone_into(init.checkpoint_path, &before);
  const Vec before_flat = before.backbone_tensors().flatten();

  ProbeConfig pcfg;
  pcfg.steps = 20;
  pcfg.batch = 16;
  pcfg.seed = 3;
  const auto probe = linear_probe(manifest, data_dir, init.checkpoint_path, pcfg);
  CHECK(probe.metric_name == "frame_map");
  CHECK(probe.train_metric >= 0.0);
  CHECK(probe.train_metric <= 1.0);

  VisualEncoderModel after{tiny_encoder(0)};
  load_backbone_into(init.checkpoint_path, &after);
  CHECK(after.backbone_tensors().flatten() == before_flat);
}

TEST_CASE("trimmed probe classifies by motion kind") {
  const std::string data_dir = fresh_dir("trimmed_probe");
  TrimmedDataConfig tcfg;
  tcfg.num_characters = 4;
  tcfg.num_programs = 8;
  tcfg.num_viewpoints = 1;
  tcfg.T = 16;
  tcfg.seed = 31;
  tcfg.out_dir = data_dir;
  const auto manifest = build_trimmed_dataset(tcfg);

  const auto untrimmed_dir = fresh_dir("trimmed_probe_init");
  auto fcfg = tiny_finetune(untrimmed_dir);
  fcfg.steps = 1;
  const std::string udata = fresh_dir("trimmed_probe_udata");
  const auto init = finetune(tiny_untrimmed(udata, 37), udata, "", fcfg);

  ProbeConfig pcfg;
  pcfg.steps = 30;
  pcfg.seed = 9;
  const auto result = linear_probe(manifest, data_dir, init.checkpoint_path, pcfg);
  CHECK(result.metric_name == "accuracy");
  CHECK(result.train_metric >= 0.0);
  CHECK(result.train_metric <= 1.0);
}
