#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "lac/checkpoint.hpp"
#include "lac/generator.hpp"

using namespace lac;

namespace {

std::string temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "lac_ckpt_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST_CASE("base64 round-trips binary data") {
  Rng rng(1);
  std::vector<unsigned char> bytes(257);
  for (auto& b : bytes) b = static_cast<unsigned char>(rng.bits() & 0xFF);
  const std::string text = base64_encode(bytes.data(), bytes.size());
  CHECK(base64_decode(text) == bytes);
  CHECK(base64_decode(base64_encode(nullptr, 0)).empty());
}

TEST_CASE("checkpoint round-trips model tensors bit-exactly") {
  GeneratorConfig cfg;
  cfg.num_joints = 3;
  cfg.c_out = 8;
  cfg.J = 6;
  cfg.K = 2;
  cfg.encoder_channels = {4, 6, 8};
  cfg.decoder_channels = {6, 4};
  GeneratorModel model{cfg};
  Rng rng(3);
  model.init(rng);

  Checkpoint ckpt;
  ckpt.kind = "generator";
  ckpt.config = {{"c_out", cfg.c_out}};
  ckpt.step = 17;
  ckpt.rng_state = rng.state();
  ckpt.put_tensors("", model.tensors());

  const std::string path = temp_path("gen.ckpt.json");
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back.kind == "generator");
  CHECK(back.step == 17);
  CHECK(back.rng_state == ckpt.rng_state);

  GeneratorModel restored{cfg};
  back.take_tensors("", restored.tensors());
  CHECK(restored.enc1.weight == model.enc1.weight);
  CHECK(restored.dec3.bias == model.dec3.bias);
  CHECK(restored.dictionary.raw == model.dictionary.raw);

  // RNG state restores to an identical stream.
  Rng resumed(0);
  resumed.set_state(back.rng_state);
  Rng original(3);
  original.set_state(ckpt.rng_state);
  for (int i = 0; i < 16; ++i) CHECK(resumed.bits() == original.bits());
}

TEST_CASE("mismatched kind or shapes fail loudly") {
  GeneratorConfig small;
  small.num_joints = 3;
  small.c_out = 8;
  small.J = 6;
  small.K = 2;
  small.encoder_channels = {4, 6, 8};
  small.decoder_channels = {6, 4};
  GeneratorModel model{small};
  Rng rng(4);
  model.init(rng);

  Checkpoint ckpt;
  ckpt.kind = "generator";
  ckpt.put_tensors("", model.tensors());
  const std::string path = temp_path("mismatch.ckpt.json");
  save_checkpoint(ckpt, path);
  const Checkpoint back = load_checkpoint(path);

  CHECK_THROWS_AS(require_checkpoint_kind(back, "visual_encoder"), Error);

  GeneratorConfig other = small;
  other.encoder_channels = {5, 6, 8};
  GeneratorModel wrong{other};
  CHECK_THROWS_AS(back.take_tensors("", wrong.tensors()), Error);
}
