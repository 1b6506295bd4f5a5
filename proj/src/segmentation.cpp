#include "lac/segmentation.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "lac/checkpoint.hpp"
#include "lac/synth.hpp"

namespace lac {

using nlohmann::json;

void WindowConfig::check() const {
  if (stride < 1 || stride > window_len)
    throw Error("window config: need 1 <= stride <= window_len");
}

std::vector<int> window_starts(int T, const WindowConfig& wcfg) {
  wcfg.check();
  if (T < wcfg.window_len)
    throw Error("window_starts: sequence shorter than the window; pad the "
                "sequence or shrink the window");
  std::vector<int> starts;
  int covered_end = 0;
  for (int s = 0; s + wcfg.window_len <= T; s += wcfg.stride) {
    starts.push_back(s);
    covered_end = s + wcfg.window_len;
  }
  if (covered_end < T) starts.push_back(T - wcfg.window_len);
  return starts;
}

SegmentPrediction predict_untrimmed(const SkeletonSequence& seq,
                                    const VisualEncoderModel& model,
                                    const WindowConfig& wcfg) {
  const int T = seq.length();
  const std::vector<int> starts = window_starts(T, wcfg);
  const int W = wcfg.window_len;

  // Windows evaluate in parallel; accumulation stays in window order so the
  // result never depends on scheduling.
  std::vector<Mat> window_scores(starts.size());
  parallel_for(static_cast<int>(starts.size()), [&](int i) {
    const Mat window = seq.frames.middleRows(starts[i], W);
    window_scores[i] = classify_features(
        model.frame_features_batch({&window}), model);
  });

  SegmentPrediction pred;
  pred.scores = Mat::Zero(T, model.config.num_classes);
  pred.coverage.assign(T, 0);
  for (size_t i = 0; i < starts.size(); ++i) {
    pred.scores.middleRows(starts[i], W) += window_scores[i];
    for (int t = starts[i]; t < starts[i] + W; ++t) ++pred.coverage[t];
  }
  for (int t = 0; t < T; ++t) pred.scores.row(t) /= pred.coverage[t];
  return pred;
}

namespace {

double stable_softplus(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

// Mean binary cross entropy over all elements plus its logit gradient.
double bce_with_logits(const Mat& logits, const Mat& targets, Mat* d_logits) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols())
    throw Error("bce: shape mismatch");
  const double inv = 1.0 / static_cast<double>(logits.size());
  double loss = 0.0;
  if (d_logits) d_logits->resize(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    const double z = logits.data()[i];
    const double y = targets.data()[i];
    loss += stable_softplus(z) - y * z;
    if (d_logits) {
      const double sig = 1.0 / (1.0 + std::exp(-z));
      d_logits->data()[i] = (sig - y) * inv;
    }
  }
  return loss * inv;
}

struct VideoData {
  Mat frames;
  Mat labels;
};

struct UntrimmedData {
  std::vector<VideoData> train;
  std::vector<VideoData> test;
  std::vector<std::string> class_names;
};

UntrimmedData load_untrimmed(const DatasetManifest& manifest,
                             const std::string& data_dir) {
  if (manifest.kind != ManifestKind::kUntrimmed)
    throw Error("expected an untrimmed manifest");
  UntrimmedData data;
  std::vector<const ManifestEntry*> all(manifest.entries.size());
  for (size_t i = 0; i < manifest.entries.size(); ++i) all[i] = &manifest.entries[i];
  std::vector<VideoData> loaded(all.size());
  std::vector<std::vector<std::string>> names(all.size());
  parallel_for(static_cast<int>(all.size()), [&](int i) {
    loaded[i].frames = read_sequence(data_dir + "/" + all[i]->sequence_path).frames;
    const auto ann = read_annotation(data_dir + "/" + all[i]->labels_path);
    loaded[i].labels = ann.labels;
    names[i] = ann.class_names;
  });
  data.class_names = names.at(0);
  for (size_t i = 0; i < all.size(); ++i) {
    if (names[i] != data.class_names)
      throw Error("finetune: class sets differ across annotations");
    if (loaded[i].labels.rows() != loaded[i].frames.rows())
      throw Error("finetune: label length does not match video length");
    (all[i]->split == "train" ? data.train : data.test)
        .push_back(std::move(loaded[i]));
  }
  if (data.train.empty()) throw Error("finetune: empty train split");
  return data;
}

}  // namespace

std::vector<int> label_subset(int n, double fraction, uint64_t subset_seed) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw Error("label_fraction must lie in (0, 1]");
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(subset_seed, 0x5AB5));
  for (int i = 0; i < n - 1; ++i) {
    const int j = i + static_cast<int>(rng.index(n - i));
    std::swap(order[i], order[j]);
  }
  const int count =
      std::max(1, static_cast<int>(std::ceil(fraction * n - 1e-12)));
  order.resize(std::min(count, n));
  return order;
}

namespace {

void write_finetune_history(const std::vector<FinetuneLossRow>& history,
                            const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error("cannot open " + path + " for writing");
  std::fputs("step,bce\n", f);
  for (const auto& r : history)
    std::fprintf(f, "%lld,%.17g\n", static_cast<long long>(r.step), r.bce);
  std::fclose(f);
}

std::vector<FinetuneLossRow> read_finetune_history(const std::string& path,
                                                   int64_t max_step) {
  std::vector<FinetuneLossRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    FinetuneLossRow r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lg", &step, &r.bce) == 2) {
      r.step = step;
      if (r.step <= max_step) rows.push_back(r);
    }
  }
  return rows;
}

void save_finetune_checkpoint(VisualEncoderModel& model, const Adam& adam,
                              const Rng& rng, int64_t step,
                              const FinetuneConfig& cfg, const std::string& path) {
  Checkpoint ckpt;
  ckpt.kind = "visual_encoder";
  ckpt.config = visual_config_to_json(model.config);
  ckpt.step = step;
  ckpt.rng_state = rng.state();
  ckpt.extra = json{{"adam_t", adam.t},
                    {"seed", cfg.seed},
                    {"label_fraction", cfg.label_fraction},
                    {"window_len", cfg.window.window_len},
                    {"stride", cfg.window.stride}};
  ckpt.put_tensors("", model.tensors());
  ckpt.put_vec("adam.m", adam.m);
  ckpt.put_vec("adam.v", adam.v);
  save_checkpoint(ckpt, path);
}

void check_backbone_compatible(const VisualEncoderConfig& a,
                               const VisualEncoderConfig& b) {
  if (a.num_joints != b.num_joints || a.channels_in != b.channels_in ||
      a.stage_channels != b.stage_channels || a.stage_blocks != b.stage_blocks)
    throw Error("backbone config mismatch between checkpoint and request");
}

}  // namespace

VisualEncoderModel load_visual_encoder(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  require_checkpoint_kind(ckpt, "visual_encoder");
  VisualEncoderModel model{visual_config_from_json(ckpt.config)};
  ckpt.take_tensors("", model.tensors());
  return model;
}

void load_backbone_into(const std::string& path, VisualEncoderModel* model) {
  const Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.kind == "contrastive") {
    check_backbone_compatible(visual_config_from_json(ckpt.config.at("encoder")),
                              model->config);
    ckpt.take_tensors("online.", model->backbone_tensors());
  } else if (ckpt.kind == "visual_encoder") {
    check_backbone_compatible(visual_config_from_json(ckpt.config), model->config);
    ckpt.take_tensors("", model->backbone_tensors());
  } else {
    throw Error("checkpoint kind " + ckpt.kind + " holds no visual backbone");
  }
}

void FinetuneConfig::check() const {
  if (steps < 0 || batch < 1 || lr <= 0.0) throw Error("finetune config: bad values");
  window.check();
  if (out_dir.empty()) throw Error("finetune config: out_dir required");
}

FinetuneResult finetune(const DatasetManifest& manifest,
                        const std::string& data_dir,
                        const std::string& init_checkpoint,
                        const FinetuneConfig& cfg,
                        const std::string& resume_path) {
  cfg.check();
  std::filesystem::create_directories(cfg.out_dir);
  const UntrimmedData data = load_untrimmed(manifest, data_dir);
  const int C = static_cast<int>(data.class_names.size());

  VisualEncoderConfig ecfg = cfg.encoder;
  if (ecfg.num_classes != 0 && ecfg.num_classes != C)
    throw Error("finetune: label/class-count mismatch between config and data");
  ecfg.num_classes = C;
  ecfg.multi_label = true;

  VisualEncoderModel model{ecfg};
  Rng rng(mix_seed(cfg.seed, 0xF17E));
  Adam adam(model.tensors().size(), cfg.lr, cfg.adam_beta1, cfg.adam_beta2,
            cfg.adam_eps);
  int64_t start_step = 0;
  std::vector<FinetuneLossRow> history;

  if (!resume_path.empty()) {
    const Checkpoint ckpt = load_checkpoint(resume_path);
    require_checkpoint_kind(ckpt, "visual_encoder");
    if (!(visual_config_from_json(ckpt.config) == ecfg))
      throw Error("finetune: resume checkpoint config mismatch");
    ckpt.take_tensors("", model.tensors());
    adam.m = ckpt.tensor("adam.m").data;
    adam.v = ckpt.tensor("adam.v").data;
    adam.t = ckpt.extra.at("adam_t").get<int64_t>();
    rng.set_state(ckpt.rng_state);
    start_step = ckpt.step;
    history = read_finetune_history(cfg.out_dir + "/history.csv", start_step);
  } else {
    model.init(rng);
    if (!init_checkpoint.empty())
      load_backbone_into(init_checkpoint, &model);  // classifier stays fresh
  }

  const std::vector<int> subset =
      label_subset(static_cast<int>(data.train.size()), cfg.label_fraction,
                   cfg.label_subset_seed);
  const int W = cfg.window.window_len;
  for (const int v : subset)
    if (data.train[v].frames.rows() < W)
      throw Error("finetune: video shorter than the training window");

  for (int64_t step = start_step; step < cfg.steps; ++step) {
    std::vector<Mat> windows(cfg.batch);
    Mat targets(static_cast<Eigen::Index>(cfg.batch) * W, C);
    for (int b = 0; b < cfg.batch; ++b) {
      const VideoData& video =
          data.train[subset[rng.index(static_cast<int64_t>(subset.size()))]];
      const int max_off = static_cast<int>(video.frames.rows()) - W;
      const int off = static_cast<int>(rng.index(max_off + 1));
      windows[b] = video.frames.middleRows(off, W);
      targets.middleRows(static_cast<Eigen::Index>(b) * W, W) =
          video.labels.middleRows(off, W);
    }
    std::vector<const Mat*> views;
    for (const auto& w : windows) views.push_back(&w);

    VisualEncoderModel::Cache cache;
    const Mat frames = model.frame_features_batch(views, &cache);
    const Mat logits = model.classifier.forward(frames);
    Mat d_logits;
    const double loss = bce_with_logits(logits, targets, &d_logits);
    if (!std::isfinite(loss))
      throw Error("finetune: diverged at step " + std::to_string(step + 1));

    VisualEncoderModel grads{ecfg};
    const Mat d_frames = model.classifier.backward(
        frames, d_logits, &grads.classifier.weight, &grads.classifier.bias);
    model.frame_features_backward(d_frames, cache, &grads);

    TensorRefs refs = model.tensors();
    Vec theta = refs.flatten();
    adam.step(theta, grads.tensors().flatten());
    refs.assign(theta);

    history.push_back({step + 1, loss});
    if ((step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.steps) {
      save_finetune_checkpoint(model, adam, rng, step + 1, cfg,
                               cfg.out_dir + "/ckpt_step" +
                                   std::to_string(step + 1) + ".json");
      write_finetune_history(history, cfg.out_dir + "/history.csv");
    }
  }

  const std::string final_path = cfg.out_dir + "/ckpt_final.json";
  save_finetune_checkpoint(model, adam, rng, cfg.steps, cfg, final_path);
  write_finetune_history(history, cfg.out_dir + "/history.csv");
  return {final_path, std::move(history)};
}

Dense train_softmax_probe(const Mat& features, const std::vector<int>& labels,
                          int num_classes, int steps, double lr, uint64_t seed) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw Error("probe: feature/label count mismatch");
  Dense probe(static_cast<int>(features.cols()), num_classes);
  Rng rng(mix_seed(seed, 0x9B0B));
  probe.init(rng);
  TensorRefs refs;
  refs.mats = {{"w", &probe.weight}};
  refs.vecs = {{"b", &probe.bias}};
  Adam adam(refs.size(), lr);

  const int N = static_cast<int>(features.rows());
  for (int step = 0; step < steps; ++step) {
    const Mat logits = probe.forward(features);
    Mat d_logits(N, num_classes);
    for (int i = 0; i < N; ++i) {
      const double m = logits.row(i).maxCoeff();
      Eigen::RowVectorXd p = (logits.row(i).array() - m).exp();
      p /= p.sum();
      p(labels[i]) -= 1.0;
      d_logits.row(i) = p / N;
    }
    Mat dw = Mat::Zero(probe.weight.rows(), probe.weight.cols());
    Vec db = Vec::Zero(probe.bias.size());
    (void)probe.backward(features, d_logits, &dw, &db);
    TensorRefs grefs;
    grefs.mats = {{"w", &dw}};
    grefs.vecs = {{"b", &db}};
    Vec theta = refs.flatten();
    adam.step(theta, grefs.flatten());
    refs.assign(theta);
  }
  return probe;
}

double softmax_probe_accuracy(const Dense& probe, const Mat& features,
                              const std::vector<int>& labels) {
  const Mat logits = probe.forward(features);
  int correct = 0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    correct += best == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

Dense train_bce_probe(const Mat& features, const Mat& targets, int steps,
                      int batch, double lr, uint64_t seed) {
  if (features.rows() != targets.rows())
    throw Error("probe: feature/target count mismatch");
  Dense probe(static_cast<int>(features.cols()),
              static_cast<int>(targets.cols()));
  Rng rng(mix_seed(seed, 0x9B0C));
  probe.init(rng);
  TensorRefs refs;
  refs.mats = {{"w", &probe.weight}};
  refs.vecs = {{"b", &probe.bias}};
  Adam adam(refs.size(), lr);

  const int N = static_cast<int>(features.rows());
  for (int step = 0; step < steps; ++step) {
    Mat x(batch, features.cols()), y(batch, targets.cols());
    for (int b = 0; b < batch; ++b) {
      const int i = static_cast<int>(rng.index(N));
      x.row(b) = features.row(i);
      y.row(b) = targets.row(i);
    }
    const Mat logits = probe.forward(x);
    Mat d_logits;
    (void)bce_with_logits(logits, y, &d_logits);
    Mat dw = Mat::Zero(probe.weight.rows(), probe.weight.cols());
    Vec db = Vec::Zero(probe.bias.size());
    (void)probe.backward(x, d_logits, &dw, &db);
    TensorRefs grefs;
    grefs.mats = {{"w", &dw}};
    grefs.vecs = {{"b", &db}};
    Vec theta = refs.flatten();
    adam.step(theta, grefs.flatten());
    refs.assign(theta);
  }
  return probe;
}

ProbeResult linear_probe(const DatasetManifest& manifest,
                         const std::string& data_dir,
                         const std::string& frozen_checkpoint,
                         const ProbeConfig& cfg) {
  // Backbone only; its parameters are never part of any optimizer here.
  const Checkpoint ckpt = load_checkpoint(frozen_checkpoint);
  VisualEncoderConfig ecfg;
  if (ckpt.kind == "contrastive")
    ecfg = visual_config_from_json(ckpt.config.at("encoder"));
  else if (ckpt.kind == "visual_encoder")
    ecfg = visual_config_from_json(ckpt.config);
  else
    throw Error("linear_probe: checkpoint holds no visual backbone");
  ecfg.num_classes = 0;
  VisualEncoderModel backbone{ecfg};
  load_backbone_into(frozen_checkpoint, &backbone);

  ProbeResult result;
  if (manifest.kind == ManifestKind::kUntrimmed) {
    result.metric_name = "frame_map";
    const UntrimmedData data = load_untrimmed(manifest, data_dir);
    const int C = static_cast<int>(data.class_names.size());

    auto video_features = [&](const std::vector<VideoData>& videos) {
      std::vector<Mat> features(videos.size());
      parallel_for(static_cast<int>(videos.size()), [&](int i) {
        features[i] = backbone.frame_features_batch({&videos[i].frames});
      });
      return features;
    };
    const std::vector<Mat> train_feats = video_features(data.train);
    Eigen::Index rows = 0;
    for (const auto& f : train_feats) rows += f.rows();
    Mat X(rows, backbone.config.feature_dim());
    Mat Y(rows, C);
    Eigen::Index at = 0;
    for (size_t i = 0; i < train_feats.size(); ++i) {
      X.middleRows(at, train_feats[i].rows()) = train_feats[i];
      Y.middleRows(at, train_feats[i].rows()) = data.train[i].labels;
      at += train_feats[i].rows();
    }
    const Dense probe =
        train_bce_probe(X, Y, cfg.steps, cfg.batch, cfg.lr, cfg.seed);

    auto map_of = [&](const std::vector<VideoData>& videos,
                      const std::vector<Mat>& feats) {
      double sum = 0.0;
      int counted = 0;
      for (size_t i = 0; i < videos.size(); ++i) {
        const Mat logits = probe.forward(feats[i]);
        const Mat scores =
            logits.unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
        sum += frame_map(scores, videos[i].labels).mean;
        ++counted;
      }
      return counted ? sum / counted : 0.0;
    };
    result.train_metric = map_of(data.train, train_feats);
    if (!data.test.empty())
      result.test_metric = map_of(data.test, video_features(data.test));
    return result;
  }

  // Trimmed manifests: single-label sequence classification by motion kind.
  result.metric_name = "accuracy";
  std::vector<const ManifestEntry*> entries;
  for (const auto& e : manifest.entries) entries.push_back(&e);
  std::vector<Vec> feats(entries.size());
  std::vector<int> labels(entries.size());
  parallel_for(static_cast<int>(entries.size()), [&](int i) {
    const SkeletonSequence seq =
        read_sequence(data_dir + "/" + entries[i]->sequence_path);
    feats[i] = encode_sequence(seq, backbone);
    if (entries[i]->motion_ids.size() < 2)
      throw Error("linear_probe: trimmed entry lacks a kind label");
    labels[i] = static_cast<int>(motion_kind_from_string(entries[i]->motion_ids[1]));
  });

  std::vector<int> train_rows, test_rows;
  for (size_t i = 0; i < entries.size(); ++i)
    (entries[i]->split == "train" ? train_rows : test_rows).push_back(static_cast<int>(i));
  if (train_rows.empty()) throw Error("linear_probe: empty train split");

  auto gather = [&](const std::vector<int>& rows, Mat* X, std::vector<int>* y) {
    X->resize(rows.size(), backbone.config.feature_dim());
    y->clear();
    for (size_t i = 0; i < rows.size(); ++i) {
      X->row(i) = feats[rows[i]].transpose();
      y->push_back(labels[rows[i]]);
    }
  };
  Mat Xtr;
  std::vector<int> ytr;
  gather(train_rows, &Xtr, &ytr);
  const Dense probe = train_softmax_probe(Xtr, ytr, kNumMotionKinds, cfg.steps,
                                          cfg.lr, cfg.seed);
  result.train_metric = softmax_probe_accuracy(probe, Xtr, ytr);
  if (!test_rows.empty()) {
    Mat Xte;
    std::vector<int> yte;
    gather(test_rows, &Xte, &yte);
    result.test_metric = softmax_probe_accuracy(probe, Xte, yte);
  }
  return result;
}

}  // namespace lac
