#pragma once

#include <array>
#include <utility>
#include <vector>

#include "lac/dictionary.hpp"
#include "lac/nn.hpp"
#include "lac/skeleton.hpp"

namespace lac {

/// Architecture of the sequence autoencoder. The three encoder stages use
/// stride 2 (kernel 8, pad 3) and the three decoder stages upsample by 2
/// (kernel 7, pad 3), so the temporal stride is exactly 8 in both directions.
struct GeneratorConfig {
  int num_joints = 13;
  int channels = 2;  // input channels per joint
  int c_out = 160;
  int J = 128;
  int K = 32;
  std::array<int, 3> encoder_channels = {64, 96, 160};
  std::array<int, 2> decoder_channels = {128, 64};
  int encoder_kernel = 8;
  int decoder_kernel = 7;

  int in_width() const { return num_joints * channels; }
  static constexpr int temporal_stride = 8;
  void check() const;
  bool operator==(const GeneratorConfig&) const = default;
};

/// Encoded sequence: one row of values per downsampled frame.
struct LatentCode {
  Mat values;  // T' x c_out
  int source_T = 0;
};

struct GeneratorModel {
  GeneratorConfig config;
  Conv1d enc1, enc2, enc3;
  Conv1d dec1, dec2, dec3;
  ActionDictionary dictionary;

  GeneratorModel() = default;
  explicit GeneratorModel(const GeneratorConfig& cfg);
  void init(Rng& rng);
  TensorRefs tensors();

  struct EncoderCache {
    Conv1d::Cache c1, c2, c3;
    Mat a1, a2;  // pre-activation outputs of the first two stages
    int batch = 0, in_len = 0;
  };
  struct DecoderCache {
    Conv1d::Cache c1, c2, c3;
    Mat a1, a2;
    int batch = 0, in_len = 0;
  };

  SeqBatch encode_batch(const SeqBatch& x, EncoderCache* cache = nullptr) const;
  SeqBatch encode_backward(const SeqBatch& dz, const EncoderCache& cache,
                           GeneratorModel* grads) const;
  SeqBatch decode_batch(const SeqBatch& f, DecoderCache* cache = nullptr) const;
  SeqBatch decode_backward(const SeqBatch& dy, const DecoderCache& cache,
                           GeneratorModel* grads) const;
};

constexpr double kGeneratorLeakySlope = 0.2;

/// Embeds a sequence; T must be divisible by the temporal stride.
LatentCode encode(const SkeletonSequence& seq, const GeneratorModel& model);

/// Decodes features (T' x c_out) into a skeleton sequence of length T'*8.
SkeletonSequence decode(const Mat& features, const GeneratorModel& model);

/// Decoder input for a decomposition: per-frame motion features plus the
/// static features broadcast over time.
Mat decoder_features(const Recombined& rec);

/// D(r_m + r_c) of the sequence's own decomposition.
SkeletonSequence reconstruct(const SkeletonSequence& seq,
                             const GeneratorModel& model);

/// Swaps static features between two equal-length sequences:
/// returns (D(r_m_a + r_c_b), D(r_m_b + r_c_a)).
std::pair<SkeletonSequence, SkeletonSequence> retarget(
    const SkeletonSequence& seq_a, const SkeletonSequence& seq_b,
    const GeneratorModel& model);

/// Decodes the average motion features of several equal-length sequences with
/// the static features of the chosen source.
SkeletonSequence compose(const std::vector<const SkeletonSequence*>& seqs,
                         int static_source_index, const GeneratorModel& model);

}  // namespace lac
