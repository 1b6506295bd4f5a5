#include "lac/contrastive.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lac/checkpoint.hpp"
#include "lac/retarget_trainer.hpp"

namespace lac {

using nlohmann::json;

ProjectionHead::ProjectionHead(const ProjectionHeadConfig& cfg) {
  if (cfg.in < 1 || cfg.hidden < 1 || cfg.out < 1)
    throw Error("projection head: dimensions must be positive");
  fc1 = Dense(cfg.in, cfg.hidden);
  fc2 = Dense(cfg.hidden, cfg.out);
}

void ProjectionHead::init(Rng& rng) {
  fc1.init(rng);
  fc2.init(rng);
}

TensorRefs ProjectionHead::tensors() {
  TensorRefs refs;
  refs.mats = {{"fc1.weight", &fc1.weight}, {"fc2.weight", &fc2.weight}};
  refs.vecs = {{"fc1.bias", &fc1.bias}, {"fc2.bias", &fc2.bias}};
  return refs;
}

Mat ProjectionHead::forward(const Mat& x, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  c.in = x;
  c.pre = fc1.forward(x);
  return fc2.forward(leaky_relu(c.pre, 0.0));
}

Mat ProjectionHead::backward(const Mat& dy, const Cache& cache,
                             ProjectionHead* grads) const {
  const Mat hidden = leaky_relu(cache.pre, 0.0);
  Mat dh = fc2.backward(hidden, dy, grads ? &grads->fc2.weight : nullptr,
                        grads ? &grads->fc2.bias : nullptr);
  dh = leaky_relu_backward(cache.pre, dh, 0.0);
  return fc1.backward(cache.in, dh, grads ? &grads->fc1.weight : nullptr,
                      grads ? &grads->fc1.bias : nullptr);
}

NegativeQueue::NegativeQueue(int capacity) : capacity_(capacity) {
  if (capacity < 1) throw Error("negative queue: capacity must be positive");
}

void NegativeQueue::push(QueueEntry entry) {
  entries_.push_back(std::move(entry));
  while (static_cast<int>(entries_.size()) > capacity_) entries_.pop_front();
}

namespace {

constexpr double kNormGuard = 1e-12;

Vec normalized_or_throw(const Vec& v, const char* what) {
  const double n = v.norm();
  if (n < kNormGuard) throw Error(std::string(what) + ": degenerate embedding");
  return v / n;
}

double logsumexp(const std::vector<double>& s) {
  double m = s.front();
  for (const double v : s) m = std::max(m, v);
  double acc = 0.0;
  for (const double v : s) acc += std::exp(v - m);
  return m + std::log(acc);
}

// dL/ds for L = LSE(negatives [+ positives]) - LSE(positives).
void nce_weights(const std::vector<double>& pos, const std::vector<double>& neg,
                 bool pos_in_denominator, std::vector<double>* w_pos,
                 std::vector<double>* w_neg, double* loss) {
  const double lse_pos = logsumexp(pos);
  std::vector<double> den = neg;
  if (pos_in_denominator) den.insert(den.end(), pos.begin(), pos.end());
  const double lse_den = logsumexp(den);
  *loss = lse_den - lse_pos;

  w_pos->assign(pos.size(), 0.0);
  w_neg->assign(neg.size(), 0.0);
  for (size_t p = 0; p < pos.size(); ++p)
    (*w_pos)[p] = -std::exp(pos[p] - lse_pos);
  for (size_t n = 0; n < neg.size(); ++n)
    (*w_neg)[n] = std::exp(neg[n] - lse_den);
  if (pos_in_denominator)
    for (size_t p = 0; p < pos.size(); ++p)
      (*w_pos)[p] += std::exp(pos[p] - lse_den);
}

}  // namespace

double similarity(const Vec& x, const Vec& y, const ProjectionHead& head,
                  double temp) {
  if (!(temp > 0.0)) throw Error("similarity: temperature must be positive");
  const Mat px = head.forward(x.transpose());
  const Mat py = head.forward(y.transpose());
  const double nx = px.row(0).norm();
  const double ny = py.row(0).norm();
  if (nx < kNormGuard || ny < kNormGuard)
    throw Error("similarity: degenerate embedding");
  return px.row(0).dot(py.row(0)) / (nx * ny * temp);
}

double info_nce_sequence(const Vec& q_feat, const Mat& pos_feats,
                         const NegativeQueue& queue, const ProjectionHead& head,
                         double temp, bool positives_in_denominator) {
  if (!(temp > 0.0)) throw Error("info_nce_sequence: temperature must be positive");
  if (pos_feats.rows() < 1) throw Error("info_nce_sequence: need positives");
  if (queue.size() == 0) throw Error("info_nce_sequence: empty queue");

  const Vec qhat =
      normalized_or_throw(head.forward(q_feat.transpose()).row(0).transpose(),
                          "info_nce_sequence");
  std::vector<double> pos, neg;
  for (Eigen::Index p = 0; p < pos_feats.rows(); ++p) {
    const Vec khat = normalized_or_throw(
        head.forward(pos_feats.row(p)).row(0).transpose(), "info_nce_sequence");
    pos.push_back(qhat.dot(khat) / temp);
  }
  for (const auto& e : queue.entries()) neg.push_back(qhat.dot(e.seq) / temp);

  std::vector<double> wp, wn;
  double loss = 0.0;
  nce_weights(pos, neg, positives_in_denominator, &wp, &wn, &loss);
  return loss;
}

std::vector<int> frame_subsample_indices(int T, int sample_rate) {
  if (sample_rate < 1) throw Error("sample_rate must be positive");
  std::vector<int> idx;
  for (int t = 0; t < T; t += sample_rate) idx.push_back(t);
  return idx;
}

double info_nce_frame(const Mat& q_frames, const std::vector<Mat>& pos_frames,
                      const NegativeQueue& queue, const ProjectionHead& head,
                      double temp, bool positives_in_denominator) {
  if (!(temp > 0.0)) throw Error("info_nce_frame: temperature must be positive");
  if (pos_frames.empty()) throw Error("info_nce_frame: need positives");
  if (queue.size() == 0) throw Error("info_nce_frame: empty queue");
  const int Ts = static_cast<int>(q_frames.rows());
  for (const auto& p : pos_frames)
    if (p.rows() != Ts) throw Error("info_nce_frame: T_s mismatch");
  for (const auto& e : queue.entries())
    if (e.frames.rows() != Ts) throw Error("info_nce_frame: T_s mismatch");

  Mat qhat(Ts, head.out_dim());
  const Mat proj = head.forward(q_frames);
  for (int t = 0; t < Ts; ++t)
    qhat.row(t) =
        normalized_or_throw(proj.row(t).transpose(), "info_nce_frame").transpose();

  std::vector<double> pos, neg;
  for (const auto& p : pos_frames) {
    const Mat kp = head.forward(p);
    double s = 0.0;
    for (int t = 0; t < Ts; ++t)
      s += qhat.row(t).dot(
          normalized_or_throw(kp.row(t).transpose(), "info_nce_frame").transpose());
    pos.push_back(s / temp);
  }
  for (const auto& e : queue.entries())
    neg.push_back(qhat.cwiseProduct(e.frames).sum() / temp);

  std::vector<double> wp, wn;
  double loss = 0.0;
  nce_weights(pos, neg, positives_in_denominator, &wp, &wn, &loss);
  return loss;
}

ContrastiveBatch make_query_and_keys(
    const SkeletonSequence& seq_a, const SkeletonSequence& seq_b,
    const GeneratorModel& generator, int P,
    const std::vector<const SkeletonSequence*>& static_pool, Rng& rng) {
  if (P < 1) throw Error("make_query_and_keys: P must be >= 1");
  if (static_pool.empty()) throw Error("make_query_and_keys: empty static pool");
  const int T = seq_a.length();
  if (seq_b.length() != T) throw Error("make_query_and_keys: length mismatch");
  for (const auto* s : static_pool)
    if (s->length() != T) throw Error("make_query_and_keys: length mismatch in pool");

  const Mat ortho = orthogonalize(generator.dictionary.raw);
  const int J = generator.dictionary.J;
  auto motion_and_static = [&](const SkeletonSequence& s) {
    const LatentDecomposition d = decompose(encode(s, generator).values, ortho, J);
    return recombine(d, ortho, J);
  };
  const Recombined ra = motion_and_static(seq_a);
  const Recombined rb = motion_and_static(seq_b);
  const Mat mean_motion = 0.5 * (ra.motion + rb.motion);

  ContrastiveBatch batch;
  batch.query = decode(Mat(mean_motion.rowwise() + ra.statics), generator);
  batch.query.fps = seq_a.fps;
  auto meta_id = [](const SkeletonSequence& s) {
    const auto it = s.meta.find("sequence_id");
    return it == s.meta.end() ? std::string() : it->second;
  };
  batch.provenance = {meta_id(seq_a), meta_id(seq_b)};

  // Distinct static sources when the pool is large enough.
  const int n = static_cast<int>(static_pool.size());
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  std::vector<int> chosen;
  if (n >= P) {
    for (int i = 0; i < P; ++i) {
      const int j = i + static_cast<int>(rng.index(n - i));
      std::swap(order[i], order[j]);
      chosen.push_back(order[i]);
    }
  } else {
    for (int i = 0; i < P; ++i) chosen.push_back(static_cast<int>(rng.index(n)));
  }

  for (const int idx : chosen) {
    const Recombined rs = motion_and_static(*static_pool[idx]);
    SkeletonSequence key =
        decode(Mat(mean_motion.rowwise() + rs.statics), generator);
    key.fps = seq_a.fps;
    batch.positives.push_back(std::move(key));
  }
  return batch;
}

ContrastiveLosses contrastive_loss_with_grads(
    const VisualEncoderModel& encoder, const ProjectionHead& head_s,
    const ProjectionHead& head_f, const Mat& query_frames,
    const Mat& pos_seq_khat, const std::vector<Mat>& pos_frame_khat,
    const NegativeQueue& queue, double temp, int sample_rate, bool frame_level,
    bool positives_in_denominator, VisualEncoderModel* enc_grads,
    ProjectionHead* hs_grads, ProjectionHead* hf_grads) {
  if (!(temp > 0.0)) throw Error("contrastive loss: temperature must be positive");
  if (queue.size() == 0) throw Error("contrastive loss: empty queue");
  const int P = static_cast<int>(pos_seq_khat.rows());
  if (P < 1) throw Error("contrastive loss: need positives");

  VisualEncoderModel::Cache cache;
  const Mat F_q = encoder.frame_features_batch({&query_frames},
                                               enc_grads ? &cache : nullptr);
  const int T = static_cast<int>(F_q.rows());
  Mat dF_q = Mat::Zero(T, F_q.cols());
  ContrastiveLosses losses;

  // Sequence level.
  {
    const Eigen::RowVectorXd s_q = F_q.colwise().mean();
    ProjectionHead::Cache hc;
    const Mat proj = head_s.forward(s_q, enc_grads ? &hc : nullptr);
    const double n = proj.row(0).norm();
    if (n < kNormGuard) throw Error("contrastive loss: degenerate embedding");
    const Vec qhat = proj.row(0).transpose() / n;

    std::vector<double> pos(P), neg(queue.size());
    for (int p = 0; p < P; ++p) pos[p] = pos_seq_khat.row(p).dot(qhat) / temp;
    int i = 0;
    for (const auto& e : queue.entries()) neg[i++] = e.seq.dot(qhat) / temp;

    std::vector<double> wp, wn;
    nce_weights(pos, neg, positives_in_denominator, &wp, &wn, &losses.l_qs);

    if (enc_grads) {
      Vec dqhat = Vec::Zero(qhat.size());
      for (int p = 0; p < P; ++p)
        dqhat += (wp[p] / temp) * pos_seq_khat.row(p).transpose();
      i = 0;
      for (const auto& e : queue.entries()) dqhat += (wn[i++] / temp) * e.seq;
      const Vec dproj = (dqhat - qhat * qhat.dot(dqhat)) / n;
      const Mat ds_q = head_s.backward(dproj.transpose(), hc, hs_grads);
      dF_q.rowwise() += ds_q.row(0) / static_cast<double>(T);
    }
  }

  // Frame level.
  if (frame_level) {
    const std::vector<int> idx = frame_subsample_indices(T, sample_rate);
    const int Ts = static_cast<int>(idx.size());
    for (const auto& k : pos_frame_khat)
      if (k.rows() != Ts) throw Error("contrastive loss: T_s mismatch");
    for (const auto& e : queue.entries())
      if (e.frames.rows() != Ts) throw Error("contrastive loss: T_s mismatch");

    Mat Qf(Ts, F_q.cols());
    for (int t = 0; t < Ts; ++t) Qf.row(t) = F_q.row(idx[t]);
    ProjectionHead::Cache hc;
    const Mat proj = head_f.forward(Qf, enc_grads ? &hc : nullptr);
    Mat qhat(Ts, proj.cols());
    Vec norms(Ts);
    for (int t = 0; t < Ts; ++t) {
      norms(t) = proj.row(t).norm();
      if (norms(t) < kNormGuard)
        throw Error("contrastive loss: degenerate embedding");
      qhat.row(t) = proj.row(t) / norms(t);
    }

    std::vector<double> pos(pos_frame_khat.size()), neg(queue.size());
    for (size_t p = 0; p < pos_frame_khat.size(); ++p)
      pos[p] = qhat.cwiseProduct(pos_frame_khat[p]).sum() / temp;
    int i = 0;
    for (const auto& e : queue.entries())
      neg[i++] = qhat.cwiseProduct(e.frames).sum() / temp;

    std::vector<double> wp, wn;
    nce_weights(pos, neg, positives_in_denominator, &wp, &wn, &losses.l_qf);

    if (enc_grads) {
      Mat dqhat = Mat::Zero(Ts, proj.cols());
      for (size_t p = 0; p < pos_frame_khat.size(); ++p)
        dqhat += (wp[p] / temp) * pos_frame_khat[p];
      i = 0;
      for (const auto& e : queue.entries())
        dqhat += (wn[i++] / temp) * e.frames;
      Mat dproj(Ts, proj.cols());
      for (int t = 0; t < Ts; ++t) {
        const Eigen::RowVectorXd qr = qhat.row(t);
        dproj.row(t) = (dqhat.row(t) - qr * qr.dot(dqhat.row(t))) / norms(t);
      }
      const Mat dQf = head_f.backward(dproj, hc, hf_grads);
      for (int t = 0; t < Ts; ++t) dF_q.row(idx[t]) += dQf.row(t);
    }
  }

  if (enc_grads) encoder.frame_features_backward(dF_q, cache, enc_grads);
  return losses;
}

void PretrainConfig::check() const {
  if (steps < 0 || batch < 2 || P < 1 || N < 1 || sample_rate < 1)
    throw Error("pretrain config: bad values");
  if (batch < P + 1)
    throw Error("pretrain config: batch must hold at least P+1 sequences");
  if (!(temp > 0.0)) throw Error("pretrain config: temperature must be positive");
  if (momentum < 0.0 || momentum > 1.0)
    throw Error("pretrain config: momentum must be in [0, 1]");
  if (out_dir.empty()) throw Error("pretrain config: out_dir required");
  encoder.check();
  if (head.in != encoder.feature_dim())
    throw Error("pretrain config: head input must match encoder feature dim");
}

namespace {

struct PretrainState {
  VisualEncoderModel online, momentum;
  ProjectionHead head_s, head_f, mhead_s, mhead_f;
  Adam adam;
  NegativeQueue queue;
  int64_t step = 0;

  PretrainState(const PretrainConfig& cfg)
      : online(cfg.encoder),
        momentum(cfg.encoder),
        head_s(cfg.head),
        head_f(cfg.head),
        mhead_s(cfg.head),
        mhead_f(cfg.head),
        queue(cfg.N) {}

  TensorRefs online_refs() {
    TensorRefs refs = online.tensors();
    const TensorRefs hs = head_s.tensors();
    const TensorRefs hf = head_f.tensors();
    refs.mats.insert(refs.mats.end(), hs.mats.begin(), hs.mats.end());
    refs.vecs.insert(refs.vecs.end(), hs.vecs.begin(), hs.vecs.end());
    refs.mats.insert(refs.mats.end(), hf.mats.begin(), hf.mats.end());
    refs.vecs.insert(refs.vecs.end(), hf.vecs.begin(), hf.vecs.end());
    return refs;
  }
  TensorRefs momentum_refs() {
    TensorRefs refs = momentum.tensors();
    const TensorRefs hs = mhead_s.tensors();
    const TensorRefs hf = mhead_f.tensors();
    refs.mats.insert(refs.mats.end(), hs.mats.begin(), hs.mats.end());
    refs.vecs.insert(refs.vecs.end(), hs.vecs.begin(), hs.vecs.end());
    refs.mats.insert(refs.mats.end(), hf.mats.begin(), hf.mats.end());
    refs.vecs.insert(refs.vecs.end(), hf.vecs.begin(), hf.vecs.end());
    return refs;
  }
};

json pretrain_config_to_json(const PretrainConfig& cfg) {
  return json{{"steps", cfg.steps},
              {"batch", cfg.batch},
              {"P", cfg.P},
              {"N", cfg.N},
              {"temp", cfg.temp},
              {"momentum", cfg.momentum},
              {"sample_rate", cfg.sample_rate},
              {"lr", cfg.lr},
              {"frame_level", cfg.frame_level},
              {"positives_in_denominator", cfg.positives_in_denominator},
              {"seed", cfg.seed},
              {"encoder", visual_config_to_json(cfg.encoder)},
              {"head",
               {{"in", cfg.head.in}, {"hidden", cfg.head.hidden}, {"out", cfg.head.out}}}};
}

void write_pretrain_history(const std::vector<PretrainLossRow>& history,
                            const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error("cannot open " + path + " for writing");
  std::fputs("step,L_qs,L_qf,L_total,queue_len\n", f);
  for (const auto& r : history)
    std::fprintf(f, "%lld,%.17g,%.17g,%.17g,%d\n",
                 static_cast<long long>(r.step), r.l_qs, r.l_qf, r.l_total,
                 r.queue_len);
  std::fclose(f);
}

std::vector<PretrainLossRow> read_pretrain_history(const std::string& path,
                                                   int64_t max_step) {
  std::vector<PretrainLossRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    PretrainLossRow r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lg,%lg,%lg,%d", &step, &r.l_qs, &r.l_qf,
                    &r.l_total, &r.queue_len) == 5) {
      r.step = step;
      if (r.step <= max_step) rows.push_back(r);
    }
  }
  return rows;
}

void save_pretrain_checkpoint(PretrainState& state, const PretrainConfig& cfg,
                              const Rng& rng, const std::string& path) {
  Checkpoint ckpt;
  ckpt.kind = "contrastive";
  ckpt.config = pretrain_config_to_json(cfg);
  ckpt.step = state.step;
  ckpt.rng_state = rng.state();
  ckpt.put_tensors("online.", state.online.tensors());
  ckpt.put_tensors("momentum.", state.momentum.tensors());
  ckpt.put_tensors("head_s.", state.head_s.tensors());
  ckpt.put_tensors("head_f.", state.head_f.tensors());
  ckpt.put_tensors("mhead_s.", state.mhead_s.tensors());
  ckpt.put_tensors("mhead_f.", state.mhead_f.tensors());
  ckpt.put_vec("adam.m", state.adam.m);
  ckpt.put_vec("adam.v", state.adam.v);

  const int qn = state.queue.size();
  const int out = state.head_s.out_dim();
  int ts = 0;
  if (qn > 0) ts = static_cast<int>(state.queue.entries().front().frames.rows());
  // One contiguous slab per entry: sequence vectors then frame blocks.
  Vec qseq = Vec::Zero(std::max(qn, 1) * out);
  Vec qframes = Vec::Zero(std::max<int64_t>(qn, 1) * std::max(ts, 1) * out);
  int i = 0;
  for (const auto& e : state.queue.entries()) {
    qseq.segment(static_cast<Eigen::Index>(i) * out, out) = e.seq;
    qframes.segment(static_cast<Eigen::Index>(i) * ts * out,
                    static_cast<Eigen::Index>(ts) * out) =
        Eigen::Map<const Vec>(e.frames.data(), e.frames.size());
    ++i;
  }
  ckpt.put_vec("queue.seq", qseq);
  ckpt.put_vec("queue.frames", qframes);
  ckpt.extra = json{{"adam_t", state.adam.t},
                    {"queue_len", qn},
                    {"queue_ts", ts},
                    {"head_out", out}};
  save_checkpoint(ckpt, path);
}

}  // namespace

PretrainResult pretrain(const DatasetManifest& manifest,
                        const std::string& data_dir,
                        const std::string& generator_checkpoint,
                        const PretrainConfig& cfg,
                        const std::string& resume_path) {
  cfg.check();
  std::filesystem::create_directories(cfg.out_dir);
  const GeneratorModel generator = load_generator_model(generator_checkpoint);
  if (generator.config.num_joints != cfg.encoder.num_joints ||
      generator.config.channels != cfg.encoder.channels_in)
    throw Error("pretrain: generator and encoder disagree on skeleton shape");

  // All training sequences share one clip length so frame queue entries agree.
  const auto train = manifest.split_entries("train");
  if (static_cast<int>(train.size()) < cfg.batch)
    throw Error("pretrain: batch exceeds available training sequences");
  std::vector<SkeletonSequence> seqs(train.size());
  parallel_for(static_cast<int>(train.size()), [&](int i) {
    seqs[i] = read_sequence(data_dir + "/" + train[i]->sequence_path);
    seqs[i].meta["sequence_id"] = train[i]->sequence_path;
  });
  const int T = seqs.front().length();
  for (const auto& s : seqs)
    if (s.length() != T)
      throw Error("pretrain: all pretraining clips must share one length");
  const std::vector<int> sub_idx = frame_subsample_indices(T, cfg.sample_rate);
  const int Ts = static_cast<int>(sub_idx.size());

  PretrainState state(cfg);
  Rng rng(mix_seed(cfg.seed, 0xC027));
  std::vector<PretrainLossRow> history;

  // Projects key features with the momentum heads and normalizes.
  auto momentum_keys = [&](const std::vector<const Mat*>& frames, Mat* seq_khat,
                           std::vector<Mat>* frame_khat) {
    const int P = static_cast<int>(frames.size());
    const Mat F = state.momentum.frame_features_batch(frames);
    seq_khat->resize(P, state.mhead_s.out_dim());
    frame_khat->assign(P, Mat());
    for (int p = 0; p < P; ++p) {
      const Mat Fp = F.middleRows(static_cast<Eigen::Index>(p) * T, T);
      const Mat proj = state.mhead_s.forward(Fp.colwise().mean());
      const double n = proj.row(0).norm();
      if (n < kNormGuard) throw Error("pretrain: degenerate key embedding");
      seq_khat->row(p) = proj.row(0) / n;

      Mat sel(Ts, Fp.cols());
      for (int t = 0; t < Ts; ++t) sel.row(t) = Fp.row(sub_idx[t]);
      const Mat pf = state.mhead_f.forward(sel);
      Mat khat(Ts, pf.cols());
      for (int t = 0; t < Ts; ++t) {
        const double fn = pf.row(t).norm();
        if (fn < kNormGuard) throw Error("pretrain: degenerate key embedding");
        khat.row(t) = pf.row(t) / fn;
      }
      (*frame_khat)[p] = std::move(khat);
    }
  };

  if (resume_path.empty()) {
    state.online.init(rng);
    state.head_s.init(rng);
    state.head_f.init(rng);
    // Key paths start as copies of the online paths.
    momentum_update(state.online_refs(), state.momentum_refs(), 0.0);
    state.adam = Adam(state.online_refs().size(), cfg.lr, cfg.adam_beta1,
                      cfg.adam_beta2, cfg.adam_eps);

    // Warm the queue with momentum-encoded plain clips so the first step has
    // negatives; the printed objective is undefined on an empty queue.
    const int warm = std::min<int>(cfg.P, static_cast<int>(seqs.size()));
    std::vector<const Mat*> warm_frames;
    for (int i = 0; i < warm; ++i)
      warm_frames.push_back(&seqs[rng.index(static_cast<int64_t>(seqs.size()))].frames);
    Mat wk;
    std::vector<Mat> wkf;
    momentum_keys(warm_frames, &wk, &wkf);
    for (int i = 0; i < warm; ++i)
      state.queue.push({wk.row(i).transpose(), wkf[i]});
  } else {
    const Checkpoint ckpt = load_checkpoint(resume_path);
    require_checkpoint_kind(ckpt, "contrastive");
    if (visual_config_from_json(ckpt.config.at("encoder")) != cfg.encoder)
      throw Error("pretrain: checkpoint encoder config mismatch");
    ckpt.take_tensors("online.", state.online.tensors());
    ckpt.take_tensors("momentum.", state.momentum.tensors());
    ckpt.take_tensors("head_s.", state.head_s.tensors());
    ckpt.take_tensors("head_f.", state.head_f.tensors());
    ckpt.take_tensors("mhead_s.", state.mhead_s.tensors());
    ckpt.take_tensors("mhead_f.", state.mhead_f.tensors());
    state.adam = Adam(state.online_refs().size(), cfg.lr, cfg.adam_beta1,
                      cfg.adam_beta2, cfg.adam_eps);
    state.adam.m = ckpt.tensor("adam.m").data;
    state.adam.v = ckpt.tensor("adam.v").data;
    state.adam.t = ckpt.extra.at("adam_t").get<int64_t>();
    state.step = ckpt.step;
    rng.set_state(ckpt.rng_state);
    const int qn = ckpt.extra.at("queue_len").get<int>();
    const int qts = ckpt.extra.at("queue_ts").get<int>();
    const int out = state.head_s.out_dim();
    const auto& tseq = ckpt.tensor("queue.seq");
    const auto& tfr = ckpt.tensor("queue.frames");
    for (int i = 0; i < qn; ++i) {
      QueueEntry e;
      e.seq = tseq.data.segment(static_cast<Eigen::Index>(i) * out, out);
      e.frames = Mat(qts, out);
      Eigen::Map<Vec>(e.frames.data(), e.frames.size()) =
          tfr.data.segment(static_cast<Eigen::Index>(i) * qts * out,
                           static_cast<Eigen::Index>(qts) * out);
      state.queue.push(std::move(e));
    }
    history = read_pretrain_history(cfg.out_dir + "/history.csv", state.step);
  }

  const int n = static_cast<int>(seqs.size());
  for (int64_t step = state.step; step < cfg.steps; ++step) {
    // Draw a batch of distinct sequences.
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    std::vector<int> batch_idx;
    for (int i = 0; i < cfg.batch; ++i) {
      const int j = i + static_cast<int>(rng.index(n - i));
      std::swap(order[i], order[j]);
      batch_idx.push_back(order[i]);
    }

    std::vector<const SkeletonSequence*> pool;
    for (size_t i = 1; i < batch_idx.size(); ++i)
      pool.push_back(&seqs[batch_idx[i]]);
    const ContrastiveBatch cb =
        make_query_and_keys(seqs[batch_idx[0]], seqs[batch_idx[1]], generator,
                            cfg.P, pool, rng);

    std::vector<const Mat*> key_frames;
    for (const auto& k : cb.positives) key_frames.push_back(&k.frames);
    Mat seq_khat;
    std::vector<Mat> frame_khat;
    momentum_keys(key_frames, &seq_khat, &frame_khat);

    VisualEncoderModel enc_grads{cfg.encoder};
    ProjectionHead hs_grads{cfg.head}, hf_grads{cfg.head};
    const ContrastiveLosses losses = contrastive_loss_with_grads(
        state.online, state.head_s, state.head_f, cb.query.frames, seq_khat,
        frame_khat, state.queue, cfg.temp, cfg.sample_rate, cfg.frame_level,
        cfg.positives_in_denominator, &enc_grads, &hs_grads, &hf_grads);
    if (!std::isfinite(losses.total()))
      throw Error("pretrain: diverged at step " + std::to_string(step + 1));

    TensorRefs grad_refs = enc_grads.tensors();
    {
      const TensorRefs hs = hs_grads.tensors();
      const TensorRefs hf = hf_grads.tensors();
      grad_refs.mats.insert(grad_refs.mats.end(), hs.mats.begin(), hs.mats.end());
      grad_refs.vecs.insert(grad_refs.vecs.end(), hs.vecs.begin(), hs.vecs.end());
      grad_refs.mats.insert(grad_refs.mats.end(), hf.mats.begin(), hf.mats.end());
      grad_refs.vecs.insert(grad_refs.vecs.end(), hf.vecs.begin(), hf.vecs.end());
    }
    TensorRefs online = state.online_refs();
    Vec theta = online.flatten();
    state.adam.step(theta, grad_refs.flatten());
    online.assign(theta);

    momentum_update(state.online_refs(), state.momentum_refs(), cfg.momentum);

    for (int p = 0; p < cfg.P; ++p)
      state.queue.push({seq_khat.row(p).transpose(), frame_khat[p]});

    PretrainLossRow row;
    row.step = step + 1;
    row.l_qs = losses.l_qs;
    row.l_qf = losses.l_qf;
    row.l_total = losses.total();
    row.queue_len = state.queue.size();
    history.push_back(row);
    state.step = step + 1;

    if ((step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.steps) {
      save_pretrain_checkpoint(state, cfg, rng,
                               cfg.out_dir + "/ckpt_step" +
                                   std::to_string(step + 1) + ".json");
      write_pretrain_history(history, cfg.out_dir + "/history.csv");
    }
  }

  state.step = cfg.steps;
  const std::string final_path = cfg.out_dir + "/ckpt_final.json";
  save_pretrain_checkpoint(state, cfg, rng, final_path);
  write_pretrain_history(history, cfg.out_dir + "/history.csv");
  return {final_path, std::move(history)};
}

}  // namespace lac
