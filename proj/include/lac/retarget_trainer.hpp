#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lac/generator.hpp"
#include "lac/skeleton.hpp"

namespace lac {

nlohmann::json generator_config_to_json(const GeneratorConfig& cfg);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);

/// Inference-side load: restores a GeneratorModel from any generator
/// checkpoint (trainer checkpoints included).
GeneratorModel load_generator_model(const std::string& path);

/// A training batch of sequence pairs with their cross-rendered targets.
struct RetargetBatch {
  struct Pair {
    SkeletonSequence p_mc;
    SkeletonSequence p_mpcp;
    SkeletonSequence target_mcp;
    SkeletonSequence target_mpc;
  };
  std::vector<Pair> pairs;
};

struct ReconstructionLoss {
  double self_term = 0.0;
  double target_term = 0.0;
  double total = 0.0;
};

/// L = L_self + L_target over the batch, means over frames, joints,
/// coordinates, and batch.
ReconstructionLoss reconstruction_loss(const RetargetBatch& batch,
                                       const GeneratorModel& model);

/// Same loss plus analytic parameter gradients through the whole chain
/// (orthogonalize, decompose, recombine, decode and the encoder).
ReconstructionLoss reconstruction_loss_with_grads(const RetargetBatch& batch,
                                                  const GeneratorModel& model,
                                                  GeneratorModel* grads);

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 16;  // pairs per step
  int steps = 3000;
  uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int checkpoint_interval = 1000;
  std::string out_dir;

  void check() const;
};

struct RetargetLossRow {
  int64_t step = 0;
  double l_self = 0.0;
  double l_target = 0.0;
  double l_total = 0.0;
  double ortho_error = 0.0;
};

struct RetargetTrainResult {
  std::string checkpoint_path;
  std::vector<RetargetLossRow> history;
};

/// Trains the generator on a retarget-grid manifest. Deterministic for a
/// fixed seed; resumable from a trainer checkpoint with identical
/// continuation.
RetargetTrainResult train_retarget(const DatasetManifest& manifest,
                                   const std::string& data_dir,
                                   const GeneratorConfig& gen_cfg,
                                   const TrainConfig& cfg,
                                   const std::string& resume_path = "");

}  // namespace lac
