#include "lac/retarget_trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include "lac/checkpoint.hpp"

namespace lac {

using nlohmann::json;

nlohmann::json generator_config_to_json(const GeneratorConfig& cfg) {
  return json{{"num_joints", cfg.num_joints},
              {"channels", cfg.channels},
              {"c_out", cfg.c_out},
              {"J", cfg.J},
              {"K", cfg.K},
              {"encoder_channels", cfg.encoder_channels},
              {"decoder_channels", cfg.decoder_channels},
              {"encoder_kernel", cfg.encoder_kernel},
              {"decoder_kernel", cfg.decoder_kernel},
              {"temporal_stride", GeneratorConfig::temporal_stride}};
}

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig cfg;
  cfg.num_joints = j.at("num_joints").get<int>();
  cfg.channels = j.at("channels").get<int>();
  cfg.c_out = j.at("c_out").get<int>();
  cfg.J = j.at("J").get<int>();
  cfg.K = j.at("K").get<int>();
  const auto enc = j.at("encoder_channels").get<std::vector<int>>();
  const auto dec = j.at("decoder_channels").get<std::vector<int>>();
  if (enc.size() != 3 || dec.size() != 2)
    throw Error("generator config: bad channel lists");
  cfg.encoder_channels = {enc[0], enc[1], enc[2]};
  cfg.decoder_channels = {dec[0], dec[1]};
  cfg.encoder_kernel = j.at("encoder_kernel").get<int>();
  cfg.decoder_kernel = j.at("decoder_kernel").get<int>();
  cfg.check();
  return cfg;
}

GeneratorModel load_generator_model(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  require_checkpoint_kind(ckpt, "generator");
  GeneratorModel model{generator_config_from_json(ckpt.config)};
  ckpt.take_tensors("", model.tensors());
  return model;
}

namespace detail {

struct PairView {
  const Mat* x;
  const Mat* y;
  const Mat* txy;
  const Mat* tyx;
};

struct PairLoss {
  double self = 0.0;
  double target = 0.0;
};

// Forward (and optionally backward) over one shard of pairs. Losses come
// back as sums of per-item element means; the caller divides by the total
// pair count. Gradients are scaled for that same mean.
PairLoss run_pairs(const GeneratorModel& model, const Mat& ortho,
                   const std::vector<PairView>& pairs, int total_pairs,
                   GeneratorModel* grads, Mat* d_ortho) {
  PairLoss loss;
  if (pairs.empty()) return loss;
  const int J = model.dictionary.J;
  const int n = static_cast<int>(pairs.size());
  const int T = static_cast<int>(pairs[0].x->rows());
  const int W = static_cast<int>(pairs[0].x->cols());

  SeqBatch enc_in(2 * n, T, W);
  for (int p = 0; p < n; ++p) {
    enc_in.item(2 * p) = *pairs[p].x;
    enc_in.item(2 * p + 1) = *pairs[p].y;
  }
  GeneratorModel::EncoderCache enc_cache;
  const SeqBatch z = model.encode_batch(enc_in, grads ? &enc_cache : nullptr);
  const int Tp = z.len;

  std::vector<LatentDecomposition> decomp(2 * n);
  std::vector<Recombined> rec(2 * n);
  for (int i = 0; i < 2 * n; ++i) {
    decomp[i] = decompose(z.item(i), ortho, J);
    rec[i] = recombine(decomp[i], ortho, J);
  }

  // Four decoder passes per pair: self x, self y, cross xy, cross yx.
  SeqBatch dec_in(4 * n, Tp, model.config.c_out);
  for (int p = 0; p < n; ++p) {
    const int a = 2 * p, b = 2 * p + 1;
    dec_in.item(4 * p + 0) = rec[a].motion.rowwise() + rec[a].statics;
    dec_in.item(4 * p + 1) = rec[b].motion.rowwise() + rec[b].statics;
    dec_in.item(4 * p + 2) = rec[a].motion.rowwise() + rec[b].statics;
    dec_in.item(4 * p + 3) = rec[b].motion.rowwise() + rec[a].statics;
  }
  GeneratorModel::DecoderCache dec_cache;
  const SeqBatch out = model.decode_batch(dec_in, grads ? &dec_cache : nullptr);

  const double elems = static_cast<double>(T) * W;
  SeqBatch d_out(4 * n, T, W);
  for (int p = 0; p < n; ++p) {
    const std::array<const Mat*, 4> targets = {pairs[p].x, pairs[p].y,
                                               pairs[p].txy, pairs[p].tyx};
    for (int k = 0; k < 4; ++k) {
      const Mat diff = out.item(4 * p + k) - *targets[k];
      const double msq = diff.squaredNorm() / elems;
      (k < 2 ? loss.self : loss.target) += msq;
      if (grads)
        d_out.item(4 * p + k) = (2.0 / (elems * total_pairs)) * diff;
    }
  }
  if (!grads) return loss;

  const SeqBatch d_features = model.decode_backward(d_out, dec_cache, grads);

  SeqBatch dz(2 * n, Tp, model.config.c_out);
  for (int p = 0; p < n; ++p) {
    const int a = 2 * p, b = 2 * p + 1;
    // Regroup feature gradients into motion/static components per item.
    const Mat d_f0 = d_features.item(4 * p + 0);
    const Mat d_f1 = d_features.item(4 * p + 1);
    const Mat d_f2 = d_features.item(4 * p + 2);
    const Mat d_f3 = d_features.item(4 * p + 3);

    const Mat d_motion_a = d_f0 + d_f2;
    const Mat d_motion_b = d_f1 + d_f3;
    const Eigen::RowVectorXd d_static_a =
        d_f0.colwise().sum() + d_f3.colwise().sum();
    const Eigen::RowVectorXd d_static_b =
        d_f1.colwise().sum() + d_f2.colwise().sum();

    const LatentDecomposition dd_a =
        recombine_backward(decomp[a], ortho, J, d_motion_a, d_static_a, d_ortho);
    const LatentDecomposition dd_b =
        recombine_backward(decomp[b], ortho, J, d_motion_b, d_static_b, d_ortho);
    dz.item(a) = decompose_backward(z.item(a), ortho, J, dd_a, d_ortho);
    dz.item(b) = decompose_backward(z.item(b), ortho, J, dd_b, d_ortho);
  }
  (void)model.encode_backward(dz, enc_cache, grads);
  return loss;
}

constexpr int kShards = 4;

struct ShardedStep {
  PairLoss loss;
  double ortho_error_after = 0.0;
};

// One full loss/grad evaluation over a batch of pairs, sharded for the
// worker pool but reduced in fixed order.
PairLoss evaluate_batch(const GeneratorModel& model, const Mat& ortho,
                        const std::vector<PairView>& batch,
                        GeneratorModel* grads, Mat* d_ortho_total) {
  const int total = static_cast<int>(batch.size());
  std::vector<std::vector<PairView>> shards(kShards);
  for (int p = 0; p < total; ++p) shards[p % kShards].push_back(batch[p]);

  std::vector<PairLoss> losses(kShards);
  std::vector<GeneratorModel> shard_grads;
  std::vector<Mat> shard_dq;
  if (grads) {
    shard_grads.assign(kShards, GeneratorModel{model.config});
    shard_dq.assign(kShards, Mat::Zero(model.config.c_out, model.config.c_out));
  }
  parallel_for(kShards, [&](int s) {
    if (shards[s].empty()) return;
    losses[s] = run_pairs(model, ortho, shards[s], total,
                          grads ? &shard_grads[s] : nullptr,
                          grads ? &shard_dq[s] : nullptr);
  });

  PairLoss sum;
  for (int s = 0; s < kShards; ++s) {
    sum.self += losses[s].self;
    sum.target += losses[s].target;
    if (grads) {
      grads->tensors().add_scaled(shard_grads[s].tensors(), 1.0);
      *d_ortho_total += shard_dq[s];
    }
  }
  sum.self /= total;
  sum.target /= total;
  return sum;
}

}  // namespace detail

void TrainConfig::check() const {
  if (learning_rate <= 0 || batch_size < 1 || steps < 0 || checkpoint_interval < 1)
    throw Error("train config: values must be positive");
  if (out_dir.empty()) throw Error("train config: out_dir required");
}

namespace {

std::vector<detail::PairView> batch_views(const RetargetBatch& batch,
                                          const GeneratorModel& model) {
  if (batch.pairs.empty()) throw Error("reconstruction_loss: empty batch");
  const int T = batch.pairs.front().p_mc.length();
  std::vector<detail::PairView> views;
  for (const auto& p : batch.pairs) {
    for (const SkeletonSequence* s :
         {&p.p_mc, &p.p_mpcp, &p.target_mcp, &p.target_mpc}) {
      if (s->length() != T || s->num_joints != model.config.num_joints ||
          s->channels != model.config.channels)
        throw Error("reconstruction_loss: inconsistent shapes in batch");
    }
    views.push_back({&p.p_mc.frames, &p.p_mpcp.frames, &p.target_mcp.frames,
                     &p.target_mpc.frames});
  }
  return views;
}

}  // namespace

ReconstructionLoss reconstruction_loss(const RetargetBatch& batch,
                                       const GeneratorModel& model) {
  const auto views = batch_views(batch, model);
  const Mat ortho = orthogonalize(model.dictionary.raw);
  const detail::PairLoss loss =
      detail::evaluate_batch(model, ortho, views, nullptr, nullptr);
  ReconstructionLoss out;
  out.self_term = loss.self;
  out.target_term = loss.target;
  out.total = loss.self + loss.target;
  if (!std::isfinite(out.total))
    throw Error("reconstruction_loss: non-finite loss");
  return out;
}

ReconstructionLoss reconstruction_loss_with_grads(const RetargetBatch& batch,
                                                  const GeneratorModel& model,
                                                  GeneratorModel* grads) {
  const auto views = batch_views(batch, model);
  GramSchmidtCache gs_cache;
  const Mat ortho = orthogonalize(model.dictionary.raw, &gs_cache);
  Mat d_ortho = Mat::Zero(model.config.c_out, model.config.c_out);
  const detail::PairLoss loss =
      detail::evaluate_batch(model, ortho, views, grads, &d_ortho);
  if (grads) grads->dictionary.raw += orthogonalize_backward(gs_cache, d_ortho);
  ReconstructionLoss out;
  out.self_term = loss.self;
  out.target_term = loss.target;
  out.total = loss.self + loss.target;
  if (!std::isfinite(out.total))
    throw Error("reconstruction_loss: non-finite loss");
  return out;
}

namespace {

struct TrainData {
  std::vector<Mat> frames;                   // per train entry
  std::vector<std::array<std::string, 3>> ids;  // motion, character, viewpoint
  std::unordered_map<std::string, int> index;   // "m|c|v" -> entry

  static std::string key(const std::string& m, const std::string& c,
                         const std::string& v) {
    return m + "|" + c + "|" + v;
  }
};

TrainData load_train_data(const DatasetManifest& manifest,
                          const std::string& data_dir,
                          const GeneratorConfig& cfg) {
  TrainData data;
  std::vector<const ManifestEntry*> train = manifest.split_entries("train");
  if (train.empty()) throw Error("train_retarget: empty train split");
  data.frames.resize(train.size());
  data.ids.resize(train.size());
  parallel_for(static_cast<int>(train.size()), [&](int i) {
    const SkeletonSequence seq =
        read_sequence(data_dir + "/" + train[i]->sequence_path);
    if (seq.num_joints != cfg.num_joints || seq.channels != cfg.channels)
      throw Error("train_retarget: sequence shape does not match generator config");
    data.frames[i] = seq.frames;
    data.ids[i] = {train[i]->motion_ids.front(), train[i]->character_id,
                   train[i]->viewpoint_id};
  });
  for (size_t i = 0; i < data.ids.size(); ++i)
    data.index[TrainData::key(data.ids[i][0], data.ids[i][1], data.ids[i][2])] =
        static_cast<int>(i);
  return data;
}

void write_history_csv(const std::vector<RetargetLossRow>& history,
                       const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw Error("cannot open " + path + " for writing");
  std::fputs("step,L_self,L_target,L_total,ortho_error\n", f);
  for (const auto& r : history)
    std::fprintf(f, "%lld,%.17g,%.17g,%.17g,%.17g\n",
                 static_cast<long long>(r.step), r.l_self, r.l_target, r.l_total,
                 r.ortho_error);
  std::fclose(f);
}

std::vector<RetargetLossRow> read_history_csv(const std::string& path,
                                              int64_t max_step) {
  std::vector<RetargetLossRow> rows;
  std::ifstream in(path);
  if (!in) return rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    RetargetLossRow r;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lg,%lg,%lg,%lg", &step, &r.l_self,
                    &r.l_target, &r.l_total, &r.ortho_error) == 5) {
      r.step = step;
      if (r.step <= max_step) rows.push_back(r);
    }
  }
  return rows;
}

void save_trainer_checkpoint(GeneratorModel& model, const Adam& adam,
                             const Rng& rng, int64_t step,
                             const TrainConfig& cfg, const std::string& path) {
  Checkpoint ckpt;
  ckpt.kind = "generator";
  ckpt.config = generator_config_to_json(model.config);
  ckpt.step = step;
  ckpt.rng_state = rng.state();
  ckpt.extra = json{{"seed", cfg.seed},
                    {"learning_rate", cfg.learning_rate},
                    {"batch_size", cfg.batch_size},
                    {"adam_t", adam.t}};
  ckpt.put_tensors("", model.tensors());
  ckpt.put_vec("adam.m", adam.m);
  ckpt.put_vec("adam.v", adam.v);
  save_checkpoint(ckpt, path);
}

}  // namespace

RetargetTrainResult train_retarget(const DatasetManifest& manifest,
                                   const std::string& data_dir,
                                   const GeneratorConfig& gen_cfg,
                                   const TrainConfig& cfg,
                                   const std::string& resume_path) {
  cfg.check();
  gen_cfg.check();
  std::filesystem::create_directories(cfg.out_dir);
  const TrainData data = load_train_data(manifest, data_dir, gen_cfg);
  const int n = static_cast<int>(data.frames.size());

  GeneratorModel model{gen_cfg};
  Rng rng(mix_seed(cfg.seed, 0x4E7));
  Adam adam(model.tensors().size(), cfg.learning_rate, cfg.adam_beta1,
            cfg.adam_beta2, cfg.adam_eps);
  int64_t start_step = 0;
  std::vector<RetargetLossRow> history;

  if (resume_path.empty()) {
    model.init(rng);
  } else {
    const Checkpoint ckpt = load_checkpoint(resume_path);
    require_checkpoint_kind(ckpt, "generator");
    const GeneratorConfig stored = generator_config_from_json(ckpt.config);
    if (!(stored == gen_cfg))
      throw Error("train_retarget: checkpoint config does not match requested config");
    ckpt.take_tensors("", model.tensors());
    adam.m = ckpt.tensor("adam.m").data;
    adam.v = ckpt.tensor("adam.v").data;
    adam.t = ckpt.extra.at("adam_t").get<int64_t>();
    rng.set_state(ckpt.rng_state);
    start_step = ckpt.step;
    history = read_history_csv(cfg.out_dir + "/history.csv", start_step);
  }

  // The orthogonalized view ahead of the first step; re-established after
  // every update.
  auto fresh_ortho = [&](GramSchmidtCache* cache) {
    for (int attempt = 0; attempt < 1 + model.config.c_out; ++attempt) {
      try {
        return orthogonalize(model.dictionary.raw, cache);
      } catch (const RankDeficientError& e) {
        std::cerr << "[train-retarget] rank guard tripped at dictionary row "
                  << e.row << "; re-randomizing row\n";
        model.dictionary.rerandomize_row(e.row, rng);
      }
    }
    throw Error("train_retarget: dictionary stayed rank-deficient after retries");
  };

  GramSchmidtCache gs_cache;
  Mat ortho = fresh_ortho(&gs_cache);

  for (int64_t step = start_step; step < cfg.steps; ++step) {
    std::vector<detail::PairView> batch;
    batch.reserve(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int i = static_cast<int>(rng.index(n));
      const int j = static_cast<int>(rng.index(n));
      const auto& mi = data.ids[i];
      const auto& mj = data.ids[j];
      const auto txy = data.index.find(TrainData::key(mi[0], mj[1], mj[2]));
      const auto tyx = data.index.find(TrainData::key(mj[0], mi[1], mi[2]));
      if (txy == data.index.end() || tyx == data.index.end())
        throw Error("train_retarget: missing cross target in manifest grid");
      batch.push_back({&data.frames[i], &data.frames[j],
                       &data.frames[txy->second], &data.frames[tyx->second]});
    }

    GeneratorModel grads{gen_cfg};
    Mat d_ortho = Mat::Zero(gen_cfg.c_out, gen_cfg.c_out);
    const detail::PairLoss loss =
        detail::evaluate_batch(model, ortho, batch, &grads, &d_ortho);
    const double total = loss.self + loss.target;
    if (!std::isfinite(total))
      throw Error("diverged at step " + std::to_string(step + 1));

    grads.dictionary.raw = orthogonalize_backward(gs_cache, d_ortho);

    Vec theta = model.tensors().flatten();
    adam.step(theta, grads.tensors().flatten());
    model.tensors().assign(theta);

    ortho = fresh_ortho(&gs_cache);
    RetargetLossRow row;
    row.step = step + 1;
    row.l_self = loss.self;
    row.l_target = loss.target;
    row.l_total = total;
    row.ortho_error = orthogonality_error(ortho);
    history.push_back(row);

    if ((step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.steps) {
      save_trainer_checkpoint(model, adam, rng, step + 1, cfg,
                              cfg.out_dir + "/ckpt_step" +
                                  std::to_string(step + 1) + ".json");
      write_history_csv(history, cfg.out_dir + "/history.csv");
    }
  }

  const std::string final_path = cfg.out_dir + "/ckpt_final.json";
  save_trainer_checkpoint(model, adam, rng, cfg.steps, cfg, final_path);
  write_history_csv(history, cfg.out_dir + "/history.csv");
  return {final_path, std::move(history)};
}

}  // namespace lac
