#pragma once

#include <string>
#include <vector>

#include "lac/metrics.hpp"
#include "lac/visual_encoder.hpp"

namespace lac {

struct WindowConfig {
  int window_len = 64;
  int stride = 32;

  void check() const;
};

/// Window start offsets: 0, stride, 2*stride, ... plus one right-aligned
/// window when the stride pattern would leave a tail uncovered.
std::vector<int> window_starts(int T, const WindowConfig& wcfg);

struct SegmentPrediction {
  Mat scores;                 // T x num_classes, in (0,1)
  std::vector<int> coverage;  // windows covering each frame
};

/// Sliding-window inference with running-mean combination over windows.
SegmentPrediction predict_untrimmed(const SkeletonSequence& seq,
                                    const VisualEncoderModel& model,
                                    const WindowConfig& wcfg);

struct FinetuneConfig {
  int steps = 400;
  int batch = 8;
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double label_fraction = 1.0;   // fraction of train videos with labels
  uint64_t label_subset_seed = 1234;  // fixed so smaller fractions nest
  uint64_t seed = 0;
  int checkpoint_interval = 1000;
  WindowConfig window;
  VisualEncoderConfig encoder;  // shape for random init; classifier added here
  std::string out_dir;

  void check() const;
};

struct FinetuneLossRow {
  int64_t step = 0;
  double bce = 0.0;
};

struct FinetuneResult {
  std::string checkpoint_path;
  std::vector<FinetuneLossRow> history;
};

/// Seeded uniform video subsample for label-fraction experiments; smaller
/// fractions are prefixes of larger ones under the same subset seed.
std::vector<int> label_subset(int n, double fraction, uint64_t subset_seed);

/// End-to-end fine-tuning on an untrimmed manifest with per-frame BCE over
/// sampled windows. init_checkpoint may be empty (random init), a
/// "contrastive" checkpoint (online backbone is taken), or a
/// "visual_encoder" checkpoint.
FinetuneResult finetune(const DatasetManifest& manifest,
                        const std::string& data_dir,
                        const std::string& init_checkpoint,
                        const FinetuneConfig& cfg,
                        const std::string& resume_path = "");

/// Loads the visual encoder from a finetune checkpoint.
VisualEncoderModel load_visual_encoder(const std::string& path);

/// Restores a backbone from either checkpoint kind into `model` (classifier
/// left untouched).
void load_backbone_into(const std::string& path, VisualEncoderModel* model);

struct ProbeConfig {
  int steps = 300;
  int batch = 32;
  double lr = 0.05;
  uint64_t seed = 0;
  WindowConfig window;  // untrimmed feature extraction
  std::string out_dir;  // optional; probe checkpoint written when set
};

struct ProbeResult {
  double train_metric = 0.0;  // accuracy (trimmed) or frame mAP (untrimmed)
  double test_metric = 0.0;
  std::string metric_name;
};

/// Linear evaluation: only the classifier trains on frozen backbone features.
/// Trimmed manifests run single-label sequence classification (accuracy);
/// untrimmed manifests run per-frame multi-label probing (frame mAP).
ProbeResult linear_probe(const DatasetManifest& manifest,
                         const std::string& data_dir,
                         const std::string& frozen_checkpoint,
                         const ProbeConfig& cfg);

/// Probe core on fixed feature rows: multinomial logistic regression.
Dense train_softmax_probe(const Mat& features, const std::vector<int>& labels,
                          int num_classes, int steps, double lr, uint64_t seed);
double softmax_probe_accuracy(const Dense& probe, const Mat& features,
                              const std::vector<int>& labels);

/// Probe core for multi-hot targets: per-class logistic regression.
Dense train_bce_probe(const Mat& features, const Mat& targets, int steps,
                      int batch, double lr, uint64_t seed);

}  // namespace lac
