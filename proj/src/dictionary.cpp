#include "lac/dictionary.hpp"

#include <cmath>

namespace lac {

namespace {
constexpr double kRankGuard = 1e-8;
}

Mat orthogonalize(const Mat& raw, GramSchmidtCache* cache) {
  if (raw.rows() != raw.cols()) throw Error("orthogonalize: matrix must be square");
  const int n = static_cast<int>(raw.rows());
  Mat ortho(n, n);
  if (cache) {
    cache->states.assign(n, {});
    cache->norms = Vec::Zero(n);
  }
  for (int i = 0; i < n; ++i) {
    Vec u = raw.row(i).transpose();
    if (cache) cache->states[i].reserve(i + 1);
    for (int j = 0; j < i; ++j) {
      if (cache) cache->states[i].push_back(u);
      const double c = u.dot(ortho.row(j).transpose());
      u -= c * ortho.row(j).transpose();
    }
    if (cache) cache->states[i].push_back(u);  // pre-normalization state
    const double s = u.norm();
    if (s < kRankGuard) throw RankDeficientError(i);
    if (cache) cache->norms(i) = s;
    ortho.row(i) = (u / s).transpose();
  }
  if (cache) cache->ortho = ortho;
  return ortho;
}

Mat orthogonalize_backward(const GramSchmidtCache& cache, const Mat& d_ortho) {
  const Mat& Q = cache.ortho;
  const int n = static_cast<int>(Q.rows());
  if (d_ortho.rows() != n || d_ortho.cols() != n)
    throw Error("orthogonalize_backward: shape mismatch");

  Mat g = d_ortho;      // accumulated dL/dQ, grows as later rows feed earlier ones
  Mat d_raw(n, n);
  for (int i = n - 1; i >= 0; --i) {
    const Vec q = Q.row(i).transpose();
    const double s = cache.norms(i);
    // normalize: q = u/s
    Vec du = (g.row(i).transpose() - q * g.row(i).dot(Q.row(i))) / s;
    for (int j = i - 1; j >= 0; --j) {
      const Vec& u_before = cache.states[i][j];
      const Vec qj = Q.row(j).transpose();
      const double c = u_before.dot(qj);
      const double dc = -du.dot(qj);
      g.row(j) += (-c * du + dc * u_before).transpose();
      du += dc * qj;
    }
    d_raw.row(i) = du.transpose();
  }
  return d_raw;
}

ActionDictionary::ActionDictionary(int c_out, int J_, int K_) : J(J_), K(K_) {
  if (J < 1 || K < 1 || J + K != c_out)
    throw Error("ActionDictionary: need J >= 1, K >= 1, J + K = C_out");
  raw = Mat::Zero(c_out, c_out);
}

void ActionDictionary::init(Rng& rng) {
  const double sigma = 1.0 / std::sqrt(static_cast<double>(raw.rows()));
  for (Eigen::Index j = 0; j < raw.cols(); ++j)
    for (Eigen::Index i = 0; i < raw.rows(); ++i) raw(i, j) = sigma * rng.normal();
}

void ActionDictionary::rerandomize_row(int row, Rng& rng) {
  const double sigma = 1.0 / std::sqrt(static_cast<double>(raw.rows()));
  for (Eigen::Index j = 0; j < raw.cols(); ++j) raw(row, j) = sigma * rng.normal();
}

double orthogonality_error(const Mat& ortho) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < ortho.rows(); ++i) {
    worst = std::max(worst, std::abs(ortho.row(i).norm() - 1.0));
    for (Eigen::Index j = i + 1; j < ortho.rows(); ++j)
      worst = std::max(worst, std::abs(ortho.row(i).dot(ortho.row(j))));
  }
  return worst;
}

namespace {

Vec squared_row_norms(const Mat& m) { return m.rowwise().squaredNorm(); }

}  // namespace

LatentDecomposition decompose(const Mat& latent, const Mat& ortho, int J) {
  const int c = static_cast<int>(ortho.rows());
  if (latent.cols() != c) throw Error("decompose: latent width mismatch");
  if (J < 1 || J >= c) throw Error("decompose: J out of range");
  const int K = c - J;
  const Mat motion_dirs = ortho.topRows(J);
  const Mat static_dirs = ortho.bottomRows(K);
  const Vec s_m = squared_row_norms(motion_dirs);
  const Vec s_c = squared_row_norms(static_dirs);

  LatentDecomposition out;
  out.motion.noalias() = latent * motion_dirs.transpose();
  out.motion.array().rowwise() /= s_m.transpose().array();
  const Eigen::RowVectorXd pooled = latent.colwise().mean();
  out.statics = (static_dirs * pooled.transpose()).cwiseQuotient(s_c);
  return out;
}

Mat decompose_backward(const Mat& latent, const Mat& ortho, int J,
                       const LatentDecomposition& d_decomp, Mat* d_ortho) {
  const int c = static_cast<int>(ortho.rows());
  const int K = c - J;
  const int T = static_cast<int>(latent.rows());
  const Mat motion_dirs = ortho.topRows(J);
  const Mat static_dirs = ortho.bottomRows(K);
  const Vec s_m = squared_row_norms(motion_dirs);
  const Vec s_c = squared_row_norms(static_dirs);
  const LatentDecomposition decomp = decompose(latent, ortho, J);

  // Motion path: a(t,j) = <z_t, q_j> / s_j.
  Mat scaled = d_decomp.motion;  // T x J
  scaled.array().rowwise() /= s_m.transpose().array();
  Mat d_latent = scaled * motion_dirs;
  if (d_ortho) {
    Mat dqm = scaled.transpose() * latent;  // J x C
    const Vec w =
        2.0 * (d_decomp.motion.cwiseProduct(decomp.motion)).colwise().sum().transpose()
            .cwiseQuotient(s_m);
    dqm -= w.asDiagonal() * motion_dirs;
    d_ortho->topRows(J) += dqm;
  }

  // Static path through the temporal mean.
  const Eigen::RowVectorXd pooled = latent.colwise().mean();
  const Vec scaled_c = d_decomp.statics.cwiseQuotient(s_c);
  const Eigen::RowVectorXd d_pooled = scaled_c.transpose() * static_dirs;
  d_latent.rowwise() += d_pooled / static_cast<double>(T);
  if (d_ortho) {
    Mat dqc = scaled_c * pooled;  // K x C
    const Vec w = 2.0 * d_decomp.statics.cwiseProduct(decomp.statics).cwiseQuotient(s_c);
    dqc -= w.asDiagonal() * static_dirs;
    d_ortho->bottomRows(K) += dqc;
  }
  return d_latent;
}

Recombined recombine(const LatentDecomposition& decomp, const Mat& ortho, int J) {
  const int c = static_cast<int>(ortho.rows());
  const int K = c - J;
  if (decomp.motion.cols() != J || decomp.statics.size() != K)
    throw Error("recombine: decomposition shape mismatch");
  Recombined out;
  out.motion.noalias() = decomp.motion * ortho.topRows(J);
  out.statics.noalias() = decomp.statics.transpose() * ortho.bottomRows(K);
  return out;
}

LatentDecomposition recombine_backward(const LatentDecomposition& decomp,
                                       const Mat& ortho, int J,
                                       const Mat& d_motion,
                                       const Eigen::RowVectorXd& d_statics,
                                       Mat* d_ortho) {
  const int c = static_cast<int>(ortho.rows());
  const int K = c - J;
  LatentDecomposition grad;
  grad.motion.noalias() = d_motion * ortho.topRows(J).transpose();
  grad.statics.noalias() = ortho.bottomRows(K) * d_statics.transpose();
  if (d_ortho) {
    d_ortho->topRows(J).noalias() += decomp.motion.transpose() * d_motion;
    d_ortho->bottomRows(K).noalias() += decomp.statics * d_statics;
  }
  return grad;
}

}  // namespace lac
