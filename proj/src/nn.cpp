#include "lac/nn.hpp"

#include <cmath>

namespace lac {

int64_t TensorRefs::size() const {
  int64_t n = 0;
  for (const auto& [name, m] : mats) n += m->size();
  for (const auto& [name, v] : vecs) n += v->size();
  return n;
}

Vec TensorRefs::flatten() const {
  Vec out(size());
  int64_t at = 0;
  for (const auto& [name, m] : mats) {
    out.segment(at, m->size()) = Eigen::Map<const Vec>(m->data(), m->size());
    at += m->size();
  }
  for (const auto& [name, v] : vecs) {
    out.segment(at, v->size()) = *v;
    at += v->size();
  }
  return out;
}

void TensorRefs::assign(const Vec& flat) {
  if (flat.size() != size()) throw Error("TensorRefs::assign: size mismatch");
  int64_t at = 0;
  for (auto& [name, m] : mats) {
    Eigen::Map<Vec>(m->data(), m->size()) = flat.segment(at, m->size());
    at += m->size();
  }
  for (auto& [name, v] : vecs) {
    *v = flat.segment(at, v->size());
    at += v->size();
  }
}

void TensorRefs::add_scaled(const TensorRefs& other, double scale) {
  if (other.mats.size() != mats.size() || other.vecs.size() != vecs.size())
    throw Error("TensorRefs::add_scaled: tensor count mismatch");
  for (size_t i = 0; i < mats.size(); ++i) {
    if (other.mats[i].second->rows() != mats[i].second->rows() ||
        other.mats[i].second->cols() != mats[i].second->cols())
      throw Error("TensorRefs::add_scaled: shape mismatch at " + mats[i].first);
    *mats[i].second += scale * *other.mats[i].second;
  }
  for (size_t i = 0; i < vecs.size(); ++i) {
    if (other.vecs[i].second->size() != vecs[i].second->size())
      throw Error("TensorRefs::add_scaled: shape mismatch at " + vecs[i].first);
    *vecs[i].second += scale * *other.vecs[i].second;
  }
}

void TensorRefs::zero() {
  for (auto& [name, m] : mats) m->setZero();
  for (auto& [name, v] : vecs) v->setZero();
}

void momentum_update(const TensorRefs& query, TensorRefs key, double m) {
  if (m < 0.0 || m > 1.0) throw Error("momentum_update: m must be in [0, 1]");
  if (query.mats.size() != key.mats.size() || query.vecs.size() != key.vecs.size())
    throw Error("momentum_update: tensor count mismatch");
  for (size_t i = 0; i < key.mats.size(); ++i) {
    Mat& k = *key.mats[i].second;
    const Mat& q = *query.mats[i].second;
    if (k.rows() != q.rows() || k.cols() != q.cols())
      throw Error("momentum_update: shape mismatch at " + key.mats[i].first);
    k = m * k + (1.0 - m) * q;
  }
  for (size_t i = 0; i < key.vecs.size(); ++i) {
    Vec& k = *key.vecs[i].second;
    const Vec& q = *query.vecs[i].second;
    if (k.size() != q.size())
      throw Error("momentum_update: shape mismatch at " + key.vecs[i].first);
    k = m * k + (1.0 - m) * q;
  }
}

Conv1d::Conv1d(int in_ch_, int out_ch_, int kernel_, int stride_, int pad_)
    : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), stride(stride_), pad(pad_) {
  weight = Mat::Zero(kernel * in_ch, out_ch);
  bias = Vec::Zero(out_ch);
}

void Conv1d::init(Rng& rng) {
  const double sigma = 1.0 / std::sqrt(static_cast<double>(kernel * in_ch));
  for (Eigen::Index j = 0; j < weight.cols(); ++j)
    for (Eigen::Index i = 0; i < weight.rows(); ++i)
      weight(i, j) = sigma * rng.normal();
  bias.setZero();
}

int Conv1d::out_len(int in_len) const {
  const int span = in_len + 2 * pad - kernel;
  if (span < 0 || span % stride != 0)
    throw Error("Conv1d: input length " + std::to_string(in_len) +
                " incompatible with kernel/stride/pad");
  return span / stride + 1;
}

SeqBatch Conv1d::forward(const SeqBatch& x, Cache* cache) const {
  if (x.channels() != in_ch) throw Error("Conv1d: channel mismatch");
  const int T_out = out_len(x.len);
  Mat cols = Mat::Zero(static_cast<Eigen::Index>(x.batch) * T_out, kernel * in_ch);
  for (int b = 0; b < x.batch; ++b) {
    const auto xin = x.item(b);
    for (int t = 0; t < T_out; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * T_out + t;
      const int t0 = t * stride - pad;
      for (int k = 0; k < kernel; ++k) {
        const int ti = t0 + k;
        if (ti < 0 || ti >= x.len) continue;
        cols.block(row, static_cast<Eigen::Index>(k) * in_ch, 1, in_ch) = xin.row(ti);
      }
    }
  }
  SeqBatch y;
  y.batch = x.batch;
  y.len = T_out;
  y.data.noalias() = cols * weight;
  y.data.rowwise() += bias.transpose();
  if (cache) {
    cache->cols = std::move(cols);
    cache->batch = x.batch;
    cache->in_len = x.len;
    cache->out_len = T_out;
  }
  return y;
}

SeqBatch Conv1d::backward(const SeqBatch& dy, const Cache& cache, Mat* dweight,
                          Vec* dbias) const {
  if (dy.batch != cache.batch || dy.len != cache.out_len)
    throw Error("Conv1d::backward: cache mismatch");
  if (dweight) dweight->noalias() += cache.cols.transpose() * dy.data;
  if (dbias) *dbias += dy.data.colwise().sum().transpose();

  const Mat dcols = dy.data * weight.transpose();
  SeqBatch dx(cache.batch, cache.in_len, in_ch);
  for (int b = 0; b < cache.batch; ++b) {
    auto dxi = dx.item(b);
    for (int t = 0; t < cache.out_len; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(b) * cache.out_len + t;
      const int t0 = t * stride - pad;
      for (int k = 0; k < kernel; ++k) {
        const int ti = t0 + k;
        if (ti < 0 || ti >= cache.in_len) continue;
        dxi.row(ti) += dcols.block(row, static_cast<Eigen::Index>(k) * in_ch, 1, in_ch);
      }
    }
  }
  return dx;
}

Dense::Dense(int in, int out) {
  weight = Mat::Zero(in, out);
  bias = Vec::Zero(out);
}

void Dense::init(Rng& rng) {
  const double sigma = 1.0 / std::sqrt(static_cast<double>(weight.rows()));
  for (Eigen::Index j = 0; j < weight.cols(); ++j)
    for (Eigen::Index i = 0; i < weight.rows(); ++i)
      weight(i, j) = sigma * rng.normal();
  bias.setZero();
}

Mat Dense::forward(const Mat& x) const {
  if (x.cols() != weight.rows()) throw Error("Dense: input width mismatch");
  Mat y = x * weight;
  y.rowwise() += bias.transpose();
  return y;
}

Mat Dense::backward(const Mat& x, const Mat& dy, Mat* dweight, Vec* dbias) const {
  if (dweight) dweight->noalias() += x.transpose() * dy;
  if (dbias) *dbias += dy.colwise().sum().transpose();
  return dy * weight.transpose();
}

Mat leaky_relu(const Mat& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Mat leaky_relu_backward(const Mat& x, const Mat& dy, double slope) {
  return dy.binaryExpr(x, [slope](double g, double v) {
    return v > 0.0 ? g : slope * g;
  });
}

SeqBatch upsample2(const SeqBatch& x) {
  SeqBatch y(x.batch, x.len * 2, x.channels());
  for (int b = 0; b < x.batch; ++b) {
    const auto xi = x.item(b);
    auto yi = y.item(b);
    for (int t = 0; t < x.len; ++t) {
      yi.row(2 * t) = xi.row(t);
      yi.row(2 * t + 1) = xi.row(t);
    }
  }
  return y;
}

SeqBatch upsample2_backward(const SeqBatch& dy) {
  if (dy.len % 2 != 0) throw Error("upsample2_backward: odd length");
  SeqBatch dx(dy.batch, dy.len / 2, dy.channels());
  for (int b = 0; b < dy.batch; ++b) {
    const auto gi = dy.item(b);
    auto dxi = dx.item(b);
    for (int t = 0; t < dx.len; ++t)
      dxi.row(t) = gi.row(2 * t) + gi.row(2 * t + 1);
  }
  return dx;
}

Mat mean_over_time(const SeqBatch& x) {
  Mat out(x.batch, x.channels());
  for (int b = 0; b < x.batch; ++b) out.row(b) = x.item(b).colwise().mean();
  return out;
}

SeqBatch mean_over_time_backward(const Mat& dy, int batch, int len) {
  SeqBatch dx(batch, len, static_cast<int>(dy.cols()));
  const double inv = 1.0 / len;
  for (int b = 0; b < batch; ++b)
    dx.item(b).rowwise() = (inv * dy.row(b)).eval();
  return dx;
}

Adam::Adam(int64_t dim, double lr_, double beta1_, double beta2_, double eps_)
    : lr(lr_), beta1(beta1_), beta2(beta2_), eps(eps_), t(0) {
  m = Vec::Zero(dim);
  v = Vec::Zero(dim);
}

void Adam::step(Vec& theta, const Vec& grad) {
  if (theta.size() != m.size() || grad.size() != m.size())
    throw Error("Adam::step: size mismatch");
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  theta -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
}

}  // namespace lac
