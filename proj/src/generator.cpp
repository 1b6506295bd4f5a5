#include "lac/generator.hpp"

namespace lac {

void GeneratorConfig::check() const {
  if (num_joints < 1 || (channels != 2 && channels != 3))
    throw Error("generator config: bad joint/channel counts");
  if (encoder_channels[2] != c_out)
    throw Error("generator config: last encoder stage must emit c_out channels");
  if (J < 1 || K < 1 || J + K != c_out)
    throw Error("generator config: need J >= 1, K >= 1, J + K = c_out");
}

GeneratorModel::GeneratorModel(const GeneratorConfig& cfg) : config(cfg) {
  config.check();
  const int w = config.in_width();
  const int ek = config.encoder_kernel;
  // stride-2 stages with pad (k - stride)/2 keep T' = T/2 per stage
  const int ep = (ek - 2) / 2;
  enc1 = Conv1d(w, config.encoder_channels[0], ek, 2, ep);
  enc2 = Conv1d(config.encoder_channels[0], config.encoder_channels[1], ek, 2, ep);
  enc3 = Conv1d(config.encoder_channels[1], config.encoder_channels[2], ek, 2, ep);
  const int dk = config.decoder_kernel;
  const int dp = (dk - 1) / 2;
  dec1 = Conv1d(config.c_out, config.decoder_channels[0], dk, 1, dp);
  dec2 = Conv1d(config.decoder_channels[0], config.decoder_channels[1], dk, 1, dp);
  dec3 = Conv1d(config.decoder_channels[1], w, dk, 1, dp);
  dictionary = ActionDictionary(config.c_out, config.J, config.K);
}

void GeneratorModel::init(Rng& rng) {
  enc1.init(rng);
  enc2.init(rng);
  enc3.init(rng);
  dec1.init(rng);
  dec2.init(rng);
  dec3.init(rng);
  dictionary.init(rng);
}

TensorRefs GeneratorModel::tensors() {
  TensorRefs refs;
  refs.mats = {{"enc1.weight", &enc1.weight}, {"enc2.weight", &enc2.weight},
               {"enc3.weight", &enc3.weight}, {"dec1.weight", &dec1.weight},
               {"dec2.weight", &dec2.weight}, {"dec3.weight", &dec3.weight},
               {"dictionary.raw", &dictionary.raw}};
  refs.vecs = {{"enc1.bias", &enc1.bias}, {"enc2.bias", &enc2.bias},
               {"enc3.bias", &enc3.bias}, {"dec1.bias", &dec1.bias},
               {"dec2.bias", &dec2.bias}, {"dec3.bias", &dec3.bias}};
  return refs;
}

SeqBatch GeneratorModel::encode_batch(const SeqBatch& x, EncoderCache* cache) const {
  EncoderCache local;
  EncoderCache& c = cache ? *cache : local;
  c.batch = x.batch;
  c.in_len = x.len;
  SeqBatch h = enc1.forward(x, &c.c1);
  c.a1 = h.data;
  h.data = leaky_relu(h.data, kGeneratorLeakySlope);
  h = enc2.forward(h, &c.c2);
  c.a2 = h.data;
  h.data = leaky_relu(h.data, kGeneratorLeakySlope);
  return enc3.forward(h, &c.c3);
}

SeqBatch GeneratorModel::encode_backward(const SeqBatch& dz,
                                         const EncoderCache& cache,
                                         GeneratorModel* grads) const {
  SeqBatch g = enc3.backward(dz, cache.c3, grads ? &grads->enc3.weight : nullptr,
                             grads ? &grads->enc3.bias : nullptr);
  g.data = leaky_relu_backward(cache.a2, g.data, kGeneratorLeakySlope);
  g = enc2.backward(g, cache.c2, grads ? &grads->enc2.weight : nullptr,
                    grads ? &grads->enc2.bias : nullptr);
  g.data = leaky_relu_backward(cache.a1, g.data, kGeneratorLeakySlope);
  return enc1.backward(g, cache.c1, grads ? &grads->enc1.weight : nullptr,
                       grads ? &grads->enc1.bias : nullptr);
}

SeqBatch GeneratorModel::decode_batch(const SeqBatch& f, DecoderCache* cache) const {
  DecoderCache local;
  DecoderCache& c = cache ? *cache : local;
  c.batch = f.batch;
  c.in_len = f.len;
  SeqBatch h = upsample2(f);
  h = dec1.forward(h, &c.c1);
  c.a1 = h.data;
  h.data = leaky_relu(h.data, kGeneratorLeakySlope);
  h = upsample2(h);
  h = dec2.forward(h, &c.c2);
  c.a2 = h.data;
  h.data = leaky_relu(h.data, kGeneratorLeakySlope);
  h = upsample2(h);
  return dec3.forward(h, &c.c3);
}

SeqBatch GeneratorModel::decode_backward(const SeqBatch& dy,
                                         const DecoderCache& cache,
                                         GeneratorModel* grads) const {
  SeqBatch g = dec3.backward(dy, cache.c3, grads ? &grads->dec3.weight : nullptr,
                             grads ? &grads->dec3.bias : nullptr);
  g = upsample2_backward(g);
  g.data = leaky_relu_backward(cache.a2, g.data, kGeneratorLeakySlope);
  g = dec2.backward(g, cache.c2, grads ? &grads->dec2.weight : nullptr,
                    grads ? &grads->dec2.bias : nullptr);
  g = upsample2_backward(g);
  g.data = leaky_relu_backward(cache.a1, g.data, kGeneratorLeakySlope);
  g = dec1.backward(g, cache.c1, grads ? &grads->dec1.weight : nullptr,
                    grads ? &grads->dec1.bias : nullptr);
  return upsample2_backward(g);
}

namespace {

SeqBatch sequence_to_batch(const SkeletonSequence& seq) {
  SeqBatch b(1, seq.length(), static_cast<int>(seq.frames.cols()));
  b.data = seq.frames;
  return b;
}

SkeletonSequence batch_to_sequence(const SeqBatch& b, const GeneratorConfig& cfg) {
  SkeletonSequence seq;
  seq.num_joints = cfg.num_joints;
  seq.channels = cfg.channels;
  seq.frames = b.data;
  seq.meta["synthesized"] = "generator";
  return seq;
}

void check_input(const SkeletonSequence& seq, const GeneratorModel& model) {
  if (seq.num_joints != model.config.num_joints ||
      seq.channels != model.config.channels)
    throw Error("encode: sequence shape does not match the model");
  if (seq.length() % GeneratorConfig::temporal_stride != 0)
    throw Error("encode: sequence length " + std::to_string(seq.length()) +
                " is not divisible by " +
                std::to_string(GeneratorConfig::temporal_stride) +
                "; pad the sequence before encoding");
}

}  // namespace

LatentCode encode(const SkeletonSequence& seq, const GeneratorModel& model) {
  check_input(seq, model);
  const SeqBatch z = model.encode_batch(sequence_to_batch(seq));
  LatentCode code;
  code.values = z.data;
  code.source_T = seq.length();
  return code;
}

SkeletonSequence decode(const Mat& features, const GeneratorModel& model) {
  if (features.cols() != model.config.c_out)
    throw Error("decode: feature width must equal c_out");
  if (!features.allFinite()) throw Error("decode: non-finite features");
  SeqBatch f(1, static_cast<int>(features.rows()), model.config.c_out);
  f.data = features;
  return batch_to_sequence(model.decode_batch(f), model.config);
}

Mat decoder_features(const Recombined& rec) {
  Mat f = rec.motion;
  f.rowwise() += rec.statics;
  return f;
}

SkeletonSequence reconstruct(const SkeletonSequence& seq,
                             const GeneratorModel& model) {
  const LatentCode code = encode(seq, model);
  const Mat ortho = orthogonalize(model.dictionary.raw);
  const LatentDecomposition decomp =
      decompose(code.values, ortho, model.dictionary.J);
  SkeletonSequence out =
      decode(decoder_features(recombine(decomp, ortho, model.dictionary.J)), model);
  out.fps = seq.fps;
  return out;
}

std::pair<SkeletonSequence, SkeletonSequence> retarget(
    const SkeletonSequence& seq_a, const SkeletonSequence& seq_b,
    const GeneratorModel& model) {
  if (seq_a.length() != seq_b.length())
    throw Error("retarget: sequences must have the same length");
  const Mat ortho = orthogonalize(model.dictionary.raw);
  const int J = model.dictionary.J;
  const LatentDecomposition da = decompose(encode(seq_a, model).values, ortho, J);
  const LatentDecomposition db = decompose(encode(seq_b, model).values, ortho, J);
  const Recombined ra = recombine(da, ortho, J);
  const Recombined rb = recombine(db, ortho, J);

  Mat f_ab = ra.motion;
  f_ab.rowwise() += rb.statics;
  Mat f_ba = rb.motion;
  f_ba.rowwise() += ra.statics;
  SkeletonSequence out_ab = decode(f_ab, model);
  SkeletonSequence out_ba = decode(f_ba, model);
  out_ab.fps = seq_a.fps;
  out_ba.fps = seq_b.fps;
  return {std::move(out_ab), std::move(out_ba)};
}

SkeletonSequence compose(const std::vector<const SkeletonSequence*>& seqs,
                         int static_source_index, const GeneratorModel& model) {
  if (seqs.size() < 2) throw Error("compose: need at least 2 sequences");
  if (static_source_index < 0 ||
      static_source_index >= static_cast<int>(seqs.size()))
    throw Error("compose: static_source_index out of range");
  const int T = seqs.front()->length();
  for (const auto* s : seqs)
    if (s->length() != T) throw Error("compose: sequences must share T");

  const Mat ortho = orthogonalize(model.dictionary.raw);
  const int J = model.dictionary.J;
  Mat mean_motion;
  Eigen::RowVectorXd statics;
  for (size_t i = 0; i < seqs.size(); ++i) {
    const LatentDecomposition d =
        decompose(encode(*seqs[i], model).values, ortho, J);
    const Recombined rec = recombine(d, ortho, J);
    if (i == 0)
      mean_motion = rec.motion;
    else
      mean_motion += rec.motion;
    if (static_cast<int>(i) == static_source_index) statics = rec.statics;
  }
  mean_motion /= static_cast<double>(seqs.size());
  mean_motion.rowwise() += statics;
  SkeletonSequence out = decode(mean_motion, model);
  out.fps = seqs.front()->fps;
  return out;
}

}  // namespace lac
