#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lac/retarget_trainer.hpp"
#include "lac/synth.hpp"
#include "test_util.hpp"

using namespace lac;

namespace {

std::string fresh_dir(const std::string& name) {
  const auto dir =
      std::filesystem::temp_directory_path() / "lac_trainer_test" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

GeneratorConfig tiny_config() {
  GeneratorConfig cfg;
  cfg.num_joints = 13;
  cfg.channels = 2;
  cfg.c_out = 8;
  cfg.J = 6;
  cfg.K = 2;
  cfg.encoder_channels = {4, 6, 8};
  cfg.decoder_channels = {6, 4};
  return cfg;
}

SkeletonSequence zero_sequence(int T) {
  SkeletonSequence s;
  s.num_joints = 13;
  s.channels = 2;
  s.frames = Mat::Zero(T, 26);
  return s;
}

SkeletonSequence random_sequence(Rng& rng, int T) {
  SkeletonSequence s = zero_sequence(T);
  for (Eigen::Index i = 0; i < s.frames.size(); ++i)
    s.frames.data()[i] = rng.uniform(-1.0, 1.0);
  return s;
}

// Brute-force elementwise mean-square oracle.
double msq_oracle(const Mat& a, const Mat& b) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double d = a(i, j) - b(i, j);
      acc += d * d;
    }
  return acc / static_cast<double>(a.size());
}

DatasetManifest tiny_dataset(const std::string& dir, int chars = 3,
                             int programs = 2, int T = 16) {
  RetargetDataConfig cfg;
  cfg.num_characters = chars;
  cfg.num_programs = programs;
  cfg.num_viewpoints = 1;
  cfg.T = T;
  cfg.seed = 5;
  cfg.out_dir = dir;
  return build_retarget_dataset(cfg);
}

}  // namespace

TEST_CASE("loss is zero when outputs equal all targets") {
  GeneratorModel model{tiny_config()};
  Rng rng(1);
  model.dictionary.init(rng);  // convs stay zero: every output is zero
  RetargetBatch batch;
  batch.pairs.push_back({zero_sequence(16), zero_sequence(16), zero_sequence(16),
                         zero_sequence(16)});
  const auto loss = reconstruction_loss(batch, model);
  CHECK(loss.total == 0.0);
  CHECK(loss.self_term == 0.0);
  CHECK(loss.target_term == 0.0);
}

TEST_CASE("zero decoder against random targets matches the brute-force oracle") {
  GeneratorModel model{tiny_config()};
  Rng rng(2);
  model.dictionary.init(rng);
  RetargetBatch batch;
  RetargetBatch::Pair pair{random_sequence(rng, 16), random_sequence(rng, 16),
                           random_sequence(rng, 16), random_sequence(rng, 16)};
  batch.pairs.push_back(pair);
  const auto loss = reconstruction_loss(batch, model);

  const Mat zero = Mat::Zero(16, 26);
  const double expected_self =
      msq_oracle(zero, pair.p_mc.frames) + msq_oracle(zero, pair.p_mpcp.frames);
  const double expected_target = msq_oracle(zero, pair.target_mcp.frames) +
                                 msq_oracle(zero, pair.target_mpc.frames);
  CHECK(std::abs(loss.self_term - expected_self) < 1e-9);
  CHECK(std::abs(loss.target_term - expected_target) < 1e-9);
  CHECK(std::abs(loss.total - (expected_self + expected_target)) < 1e-9);

  // Doubling every target with zero outputs scales the loss by 4.
  RetargetBatch doubled = batch;
  for (auto* s : {&doubled.pairs[0].p_mc, &doubled.pairs[0].p_mpcp,
                  &doubled.pairs[0].target_mcp, &doubled.pairs[0].target_mpc})
    s->frames *= 2.0;
  const auto loss2 = reconstruction_loss(doubled, model);
  CHECK(std::abs(loss2.total - 4.0 * loss.total) < 1e-9);
}

TEST_CASE("full-chain gradients match central finite differences") {
  const GeneratorConfig cfg = tiny_config();
  GeneratorModel model{cfg};
  Rng rng(3);
  model.init(rng);

  RetargetBatch batch;
  batch.pairs.push_back({random_sequence(rng, 16), random_sequence(rng, 16),
                         random_sequence(rng, 16), random_sequence(rng, 16)});

  GeneratorModel grads{cfg};
  (void)reconstruction_loss_with_grads(batch, model, &grads);

  auto loss_at = [&](const Vec& flat) {
    GeneratorModel m{cfg};
    m.tensors().assign(flat);
    return reconstruction_loss(batch, m).total;
  };
  const double err = testutil::gradient_check(loss_at, model.tensors().flatten(),
                                              grads.tensors().flatten());
  CHECK(err <= 1e-4);
}

TEST_CASE("training runs, stays orthogonal, and lowers the loss") {
  const std::string data_dir = fresh_dir("data");
  const auto manifest = tiny_dataset(data_dir);

  TrainConfig cfg;
  cfg.steps = 12;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  cfg.seed = 9;
  cfg.checkpoint_interval = 100;
  cfg.out_dir = fresh_dir("run");

  const auto result = train_retarget(manifest, data_dir, tiny_config(), cfg);
  REQUIRE(result.history.size() == 12);
  for (const auto& row : result.history) {
    CHECK(std::isfinite(row.l_total));
    CHECK(row.l_self >= 0.0);
    CHECK(row.l_target >= 0.0);
    CHECK(row.ortho_error <= 1e-5);
  }
  CHECK(std::filesystem::exists(result.checkpoint_path));
  CHECK(result.history.back().l_total < result.history.front().l_total);
}

TEST_CASE("same seed reproduces byte-identical artifacts") {
  const std::string data_dir = fresh_dir("data_det");
  const auto manifest = tiny_dataset(data_dir);

  TrainConfig cfg;
  cfg.steps = 5;
  cfg.batch_size = 3;
  cfg.seed = 21;
  cfg.checkpoint_interval = 100;

  cfg.out_dir = fresh_dir("det_a");
  const auto a = train_retarget(manifest, data_dir, tiny_config(), cfg);
  const std::string dir_a = cfg.out_dir;
  cfg.out_dir = fresh_dir("det_b");
  const auto b = train_retarget(manifest, data_dir, tiny_config(), cfg);

  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i)
    CHECK(a.history[i].l_total == b.history[i].l_total);
  CHECK(slurp(a.checkpoint_path) == slurp(b.checkpoint_path));
  CHECK(slurp(dir_a + "/history.csv") == slurp(cfg.out_dir + "/history.csv"));
}

TEST_CASE("steps=0 checkpoints the initialization") {
  const std::string data_dir = fresh_dir("data_zero");
  const auto manifest = tiny_dataset(data_dir);
  TrainConfig cfg;
  cfg.steps = 0;
  cfg.seed = 33;
  cfg.out_dir = fresh_dir("zero_run");
  const auto result = train_retarget(manifest, data_dir, tiny_config(), cfg);

  GeneratorModel expected{tiny_config()};
  Rng rng(mix_seed(33, 0x4E7));
  expected.init(rng);
  GeneratorModel loaded = load_generator_model(result.checkpoint_path);
  CHECK(loaded.enc1.weight == expected.enc1.weight);
  CHECK(loaded.dictionary.raw == expected.dictionary.raw);
}

TEST_CASE("resume reproduces the uninterrupted run bit-for-bit") {
  const std::string data_dir = fresh_dir("data_resume");
  const auto manifest = tiny_dataset(data_dir);

  TrainConfig full;
  full.steps = 6;
  full.batch_size = 3;
  full.seed = 55;
  full.checkpoint_interval = 3;
  full.out_dir = fresh_dir("resume_full");
  const auto whole = train_retarget(manifest, data_dir, tiny_config(), full);

  TrainConfig part = full;
  part.steps = 3;
  part.out_dir = fresh_dir("resume_split");
  const auto first = train_retarget(manifest, data_dir, tiny_config(), part);
  part.steps = 6;
  const auto second = train_retarget(manifest, data_dir, tiny_config(), part,
                                     first.checkpoint_path);

  CHECK(slurp(whole.checkpoint_path) == slurp(second.checkpoint_path));
  CHECK(slurp(full.out_dir + "/history.csv") ==
        slurp(part.out_dir + "/history.csv"));
}

TEST_CASE("checkpoint round-trip reproduces the same batch loss") {
  const std::string data_dir = fresh_dir("data_rt");
  const auto manifest = tiny_dataset(data_dir);
  TrainConfig cfg;
  cfg.steps = 3;
  cfg.batch_size = 2;
  cfg.seed = 77;
  cfg.out_dir = fresh_dir("rt_run");
  const auto result = train_retarget(manifest, data_dir, tiny_config(), cfg);

  Rng rng(4);
  RetargetBatch batch;
  batch.pairs.push_back({random_sequence(rng, 16), random_sequence(rng, 16),
                         random_sequence(rng, 16), random_sequence(rng, 16)});
  GeneratorModel loaded = load_generator_model(result.checkpoint_path);
  const double once = reconstruction_loss(batch, loaded).total;
  GeneratorModel again = load_generator_model(result.checkpoint_path);
  const double twice = reconstruction_loss(batch, again).total;
  CHECK(std::abs(once - twice) <= 1e-10);
}

TEST_CASE("empty manifest is rejected") {
  DatasetManifest empty;
  empty.kind = ManifestKind::kRetargetPairs;
  TrainConfig cfg;
  cfg.out_dir = fresh_dir("empty_run");
  CHECK_THROWS_AS(train_retarget(empty, ".", tiny_config(), cfg), Error);
}
