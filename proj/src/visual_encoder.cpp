#include "lac/visual_encoder.hpp"

#include <cmath>

namespace lac {

using nlohmann::json;

void VisualEncoderConfig::check() const {
  if (num_joints < 1 || channels_in < 1)
    throw Error("visual encoder config: bad input shape");
  for (const int c : stage_channels)
    if (c < 1) throw Error("visual encoder config: bad channel count");
  for (const int b : stage_blocks)
    if (b < 1) throw Error("visual encoder config: each stage needs a block");
  if (num_classes < 0) throw Error("visual encoder config: bad num_classes");
}

json visual_config_to_json(const VisualEncoderConfig& cfg) {
  return json{{"backbone", cfg.backbone},
              {"num_joints", cfg.num_joints},
              {"channels_in", cfg.channels_in},
              {"stage_channels", cfg.stage_channels},
              {"stage_blocks", cfg.stage_blocks},
              {"num_classes", cfg.num_classes},
              {"label_mode", cfg.multi_label ? "multi" : "single"}};
}

VisualEncoderConfig visual_config_from_json(const json& j) {
  VisualEncoderConfig cfg;
  cfg.backbone = j.at("backbone").get<std::string>();
  cfg.num_joints = j.at("num_joints").get<int>();
  cfg.channels_in = j.at("channels_in").get<int>();
  const auto ch = j.at("stage_channels").get<std::vector<int>>();
  const auto bl = j.at("stage_blocks").get<std::vector<int>>();
  if (ch.size() != 3 || bl.size() != 3)
    throw Error("visual encoder config: bad stage lists");
  cfg.stage_channels = {ch[0], ch[1], ch[2]};
  cfg.stage_blocks = {bl[0], bl[1], bl[2]};
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.multi_label = j.at("label_mode").get<std::string>() == "multi";
  cfg.check();
  return cfg;
}

VisualEncoderModel::VisualEncoderModel(const VisualEncoderConfig& cfg)
    : config(cfg) {
  config.check();
  int in_ch = config.channels_in;
  for (int stage = 0; stage < 3; ++stage) {
    const int out_ch = config.stage_channels[stage];
    for (int b = 0; b < config.stage_blocks[stage]; ++b) {
      Block block;
      block.mix = Dense(in_ch, out_ch);
      block.temporal = Conv1d(out_ch, out_ch, 9, 1, 4);
      blocks.push_back(std::move(block));
      in_ch = out_ch;
    }
  }
  if (config.num_classes > 0)
    classifier = Dense(config.feature_dim(), config.num_classes);
}

void VisualEncoderModel::init(Rng& rng) {
  for (auto& b : blocks) {
    b.mix.init(rng);
    b.temporal.init(rng);
  }
  if (config.num_classes > 0) classifier.init(rng);
}

TensorRefs VisualEncoderModel::backbone_tensors() {
  TensorRefs refs;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i) + ".";
    refs.mats.emplace_back(p + "mix.weight", &blocks[i].mix.weight);
    refs.mats.emplace_back(p + "temporal.weight", &blocks[i].temporal.weight);
    refs.vecs.emplace_back(p + "mix.bias", &blocks[i].mix.bias);
    refs.vecs.emplace_back(p + "temporal.bias", &blocks[i].temporal.bias);
  }
  return refs;
}

TensorRefs VisualEncoderModel::classifier_tensors() {
  TensorRefs refs;
  if (config.num_classes > 0) {
    refs.mats.emplace_back("classifier.weight", &classifier.weight);
    refs.vecs.emplace_back("classifier.bias", &classifier.bias);
  }
  return refs;
}

TensorRefs VisualEncoderModel::tensors() {
  TensorRefs refs = backbone_tensors();
  const TensorRefs cls = classifier_tensors();
  refs.mats.insert(refs.mats.end(), cls.mats.begin(), cls.mats.end());
  refs.vecs.insert(refs.vecs.end(), cls.vecs.begin(), cls.vecs.end());
  return refs;
}

namespace {

// (b, t, v, c) layout change: frame matrices hold (t, v*C+c); the temporal
// convs want per-joint sequences, batch index b*V + v.
SeqBatch to_joint_batch(const std::vector<const Mat*>& seqs, int V, int C) {
  const int B = static_cast<int>(seqs.size());
  const int T = static_cast<int>(seqs[0]->rows());
  SeqBatch out(B * V, T, C);
  for (int b = 0; b < B; ++b) {
    if (seqs[b]->rows() != T || seqs[b]->cols() != static_cast<Eigen::Index>(V) * C)
      throw Error("visual encoder: inconsistent sequence shapes in batch");
    for (int v = 0; v < V; ++v)
      for (int t = 0; t < T; ++t)
        for (int c = 0; c < C; ++c)
          out.item(b * V + v)(t, c) = (*seqs[b])(t, v * C + c);
  }
  return out;
}

}  // namespace

Mat VisualEncoderModel::frame_features_batch(const std::vector<const Mat*>& seqs,
                                             Cache* cache) const {
  if (seqs.empty()) throw Error("visual encoder: empty batch");
  const int V = config.num_joints;
  const int C = config.channels_in;
  const int B = static_cast<int>(seqs.size());
  if (seqs[0]->cols() != static_cast<Eigen::Index>(V) * C)
    throw Error("visual encoder: joint-count mismatch with model config");
  SeqBatch h = to_joint_batch(seqs, V, C);
  const int T = h.len;

  Cache local;
  Cache& cc = cache ? *cache : local;
  cc.blocks.resize(blocks.size());
  cc.batch = B;
  cc.T = T;
  for (size_t i = 0; i < blocks.size(); ++i) {
    auto& bc = cc.blocks[i];
    bc.mix_in = h.data;
    bc.mix_pre = blocks[i].mix.forward(h.data);
    h.data = leaky_relu(bc.mix_pre, 0.0);
    h = blocks[i].temporal.forward(h, &bc.conv);
    bc.conv_pre = h.data;
    h.data = leaky_relu(bc.conv_pre, 0.0);
  }

  // S-GAP over joints: frame feature (b, t) = mean over v.
  const int F = config.feature_dim();
  Mat frames = Mat::Zero(static_cast<Eigen::Index>(B) * T, F);
  for (int b = 0; b < B; ++b)
    for (int v = 0; v < V; ++v)
      frames.middleRows(static_cast<Eigen::Index>(b) * T, T) += h.item(b * V + v);
  frames /= static_cast<double>(V);
  return frames;
}

void VisualEncoderModel::frame_features_backward(const Mat& d_frames,
                                                 const Cache& cache,
                                                 VisualEncoderModel* grads) const {
  const int V = config.num_joints;
  const int B = cache.batch;
  const int T = cache.T;
  SeqBatch g(B * V, T, config.feature_dim());
  const double inv = 1.0 / V;
  for (int b = 0; b < B; ++b)
    for (int v = 0; v < V; ++v)
      g.item(b * V + v) =
          inv * d_frames.middleRows(static_cast<Eigen::Index>(b) * T, T);

  for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i) {
    const auto& bc = cache.blocks[i];
    g.data = leaky_relu_backward(bc.conv_pre, g.data, 0.0);
    g = blocks[i].temporal.backward(
        g, bc.conv, grads ? &grads->blocks[i].temporal.weight : nullptr,
        grads ? &grads->blocks[i].temporal.bias : nullptr);
    g.data = leaky_relu_backward(bc.mix_pre, g.data, 0.0);
    g.data = blocks[i].mix.backward(bc.mix_in, g.data,
                                    grads ? &grads->blocks[i].mix.weight : nullptr,
                                    grads ? &grads->blocks[i].mix.bias : nullptr);
  }
}

namespace {

void check_sequence(const SkeletonSequence& seq, const VisualEncoderModel& model) {
  if (seq.num_joints != model.config.num_joints)
    throw Error("visual encoder: joint-count mismatch");
  if (seq.channels != model.config.channels_in)
    throw Error("visual encoder: channel-count mismatch");
}

}  // namespace

Mat encode_frames(const SkeletonSequence& seq, const VisualEncoderModel& model) {
  check_sequence(seq, model);
  return model.frame_features_batch({&seq.frames});
}

Vec encode_sequence(const SkeletonSequence& seq, const VisualEncoderModel& model) {
  const Mat frames = encode_frames(seq, model);
  return frames.colwise().mean().transpose();
}

Mat classify_features(const Mat& frame_features, const VisualEncoderModel& model) {
  if (model.config.num_classes < 1)
    throw Error("classify_frames: classifier absent");
  const Mat logits = model.classifier.forward(frame_features);
  if (model.config.multi_label)
    return logits.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index t = 0; t < logits.rows(); ++t) {
    const double m = logits.row(t).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(t).array() - m).exp();
    out.row(t) = e / e.sum();
  }
  return out;
}

Mat classify_frames(const SkeletonSequence& seq, const VisualEncoderModel& model) {
  check_sequence(seq, model);
  return classify_features(encode_frames(seq, model), model);
}

}  // namespace lac
