#pragma once

#include <deque>
#include <string>
#include <vector>

#include "lac/generator.hpp"
#include "lac/visual_encoder.hpp"

namespace lac {

struct ProjectionHeadConfig {
  int in = 256;
  int hidden = 256;
  int out = 128;
  bool operator==(const ProjectionHeadConfig&) const = default;
};

/// Two affine layers with a rectifier between; the learnable mapping applied
/// before cosine similarity.
struct ProjectionHead {
  Dense fc1, fc2;

  ProjectionHead() = default;
  explicit ProjectionHead(const ProjectionHeadConfig& cfg);
  void init(Rng& rng);
  TensorRefs tensors();

  struct Cache {
    Mat in, pre;
  };
  Mat forward(const Mat& x, Cache* cache = nullptr) const;  // rows = items
  Mat backward(const Mat& dy, const Cache& cache, ProjectionHead* grads) const;
  int out_dim() const { return static_cast<int>(fc2.weight.cols()); }
};

/// One key's stored features: both levels, projected and normalized. Entries
/// never receive gradients.
struct QueueEntry {
  Vec seq;     // out-dim
  Mat frames;  // T_s x out-dim
};

class NegativeQueue {
 public:
  explicit NegativeQueue(int capacity);
  void push(QueueEntry entry);  // FIFO eviction beyond capacity
  int size() const { return static_cast<int>(entries_.size()); }
  int capacity() const { return capacity_; }
  const std::deque<QueueEntry>& entries() const { return entries_; }

 private:
  int capacity_;
  std::deque<QueueEntry> entries_;
};

/// Eq.-8 similarity of two raw feature vectors under a projection head.
double similarity(const Vec& x, const Vec& y, const ProjectionHead& head,
                  double temp);

/// Sequence-level InfoNCE exactly as printed: the denominator runs over the
/// queued negatives only, unless positives_in_denominator is set.
double info_nce_sequence(const Vec& q_feat, const Mat& pos_feats,
                         const NegativeQueue& queue, const ProjectionHead& head,
                         double temp, bool positives_in_denominator = false);

/// Frame-level InfoNCE: per-frame similarities summed inside each exponent.
double info_nce_frame(const Mat& q_frames, const std::vector<Mat>& pos_frames,
                      const NegativeQueue& queue, const ProjectionHead& head,
                      double temp, bool positives_in_denominator = false);

/// Query plus P positive keys synthesized by the generator: the query is the
/// two sequences' composed motion with seq_a's statics; each positive keeps
/// that exact motion and swaps in statics from the pool.
struct ContrastiveBatch {
  SkeletonSequence query;
  std::vector<SkeletonSequence> positives;
  std::array<std::string, 2> provenance;
};

ContrastiveBatch make_query_and_keys(
    const SkeletonSequence& seq_a, const SkeletonSequence& seq_b,
    const GeneratorModel& generator, int P,
    const std::vector<const SkeletonSequence*>& static_pool, Rng& rng);

/// Frame indices {0, r, 2r, ...} below T.
std::vector<int> frame_subsample_indices(int T, int sample_rate);

struct ContrastiveLosses {
  double l_qs = 0.0;
  double l_qf = 0.0;
  double total() const { return l_qs + l_qf; }
};

/// Loss and analytic gradients of the query path. Keys arrive already
/// projected and normalized (momentum outputs); the queue supplies negatives.
ContrastiveLosses contrastive_loss_with_grads(
    const VisualEncoderModel& encoder, const ProjectionHead& head_s,
    const ProjectionHead& head_f, const Mat& query_frames,
    const Mat& pos_seq_khat, const std::vector<Mat>& pos_frame_khat,
    const NegativeQueue& queue, double temp, int sample_rate, bool frame_level,
    bool positives_in_denominator, VisualEncoderModel* enc_grads,
    ProjectionHead* hs_grads, ProjectionHead* hf_grads);

struct PretrainConfig {
  int steps = 2000;
  int batch = 8;  // sequences drawn per step; must exceed P
  int P = 4;
  int N = 4096;
  double temp = 0.07;
  double momentum = 0.999;
  int sample_rate = 4;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool frame_level = true;
  bool positives_in_denominator = false;
  uint64_t seed = 0;
  int checkpoint_interval = 1000;
  VisualEncoderConfig encoder;
  ProjectionHeadConfig head;
  std::string out_dir;

  void check() const;
};

struct PretrainLossRow {
  int64_t step = 0;
  double l_qs = 0.0;
  double l_qf = 0.0;
  double l_total = 0.0;
  int queue_len = 0;
};

struct PretrainResult {
  std::string checkpoint_path;
  std::vector<PretrainLossRow> history;
};

/// Self-supervised pretraining of the visual encoder on a trimmed manifest,
/// with composed queries/keys from a trained generator. Deterministic per
/// seed; resumable with identical continuation.
PretrainResult pretrain(const DatasetManifest& manifest,
                        const std::string& data_dir,
                        const std::string& generator_checkpoint,
                        const PretrainConfig& cfg,
                        const std::string& resume_path = "");

}  // namespace lac
