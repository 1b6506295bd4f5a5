#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "lac/nn.hpp"
#include "lac/skeleton.hpp"

namespace lac {

/// Shape of the skeleton visual encoder: three stages of {1x1 channel-mix,
/// 9x1 temporal conv} blocks over a T x V grid, spatial average pooling over
/// joints, temporal average pooling for the sequence representation. The
/// default matches the published table; desk-scale runs shrink channels and
/// block counts through this config.
struct VisualEncoderConfig {
  std::string backbone = "table1-backbone";
  int num_joints = 13;
  int channels_in = 2;
  std::array<int, 3> stage_channels = {64, 128, 256};
  std::array<int, 3> stage_blocks = {4, 3, 3};
  int num_classes = 0;       // 0 = no classifier attached
  bool multi_label = true;   // sigmoid scores vs per-frame softmax

  int feature_dim() const { return stage_channels[2]; }
  void check() const;
  bool operator==(const VisualEncoderConfig&) const = default;
};

nlohmann::json visual_config_to_json(const VisualEncoderConfig& cfg);
VisualEncoderConfig visual_config_from_json(const nlohmann::json& j);

struct VisualEncoderModel {
  VisualEncoderConfig config;

  struct Block {
    Dense mix;        // 1x1 conv over channels
    Conv1d temporal;  // 9x1 conv over time, per joint
  };
  std::vector<Block> blocks;
  Dense classifier;  // present when config.num_classes > 0

  VisualEncoderModel() = default;
  explicit VisualEncoderModel(const VisualEncoderConfig& cfg);
  void init(Rng& rng);
  TensorRefs tensors();
  TensorRefs backbone_tensors();    // everything except the classifier
  TensorRefs classifier_tensors();

  struct Cache {
    struct BlockCache {
      Mat mix_in;
      Mat mix_pre;
      Conv1d::Cache conv;
      Mat conv_pre;
    };
    std::vector<BlockCache> blocks;
    int batch = 0;
    int T = 0;
  };

  /// Frame representations for a batch of equal-length sequences given as
  /// T x (V*C) frame matrices; result rows are (b*T + t).
  Mat frame_features_batch(const std::vector<const Mat*>& seqs,
                           Cache* cache = nullptr) const;
  /// Parameter gradients from frame-feature gradients.
  void frame_features_backward(const Mat& d_frames, const Cache& cache,
                               VisualEncoderModel* grads) const;
};

/// Per-frame features E_V^F: T x feature_dim.
Mat encode_frames(const SkeletonSequence& seq, const VisualEncoderModel& model);

/// Sequence feature E_V^S: exactly the temporal mean of encode_frames.
Vec encode_sequence(const SkeletonSequence& seq, const VisualEncoderModel& model);

/// Per-frame class scores: sigmoid per class in multi-label mode, softmax
/// rows in single-label mode.
Mat classify_frames(const SkeletonSequence& seq, const VisualEncoderModel& model);

/// Scores from precomputed frame features (the classifier head alone).
Mat classify_features(const Mat& frame_features, const VisualEncoderModel& model);

}  // namespace lac
