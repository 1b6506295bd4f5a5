#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "lac/nn.hpp"
#include "test_util.hpp"

using namespace lac;

namespace {

SeqBatch random_batch(Rng& rng, int batch, int len, int ch) {
  SeqBatch x(batch, len, ch);
  for (Eigen::Index i = 0; i < x.data.rows(); ++i)
    for (Eigen::Index j = 0; j < x.data.cols(); ++j) x.data(i, j) = rng.normal();
  return x;
}

// Direct elementwise convolution, the oracle for the im2col path.
SeqBatch conv_oracle(const Conv1d& conv, const SeqBatch& x) {
  const int T_out = conv.out_len(x.len);
  SeqBatch y(x.batch, T_out, conv.out_ch);
  for (int b = 0; b < x.batch; ++b)
    for (int t = 0; t < T_out; ++t)
      for (int o = 0; o < conv.out_ch; ++o) {
        double acc = conv.bias(o);
        for (int k = 0; k < conv.kernel; ++k) {
          const int ti = t * conv.stride - conv.pad + k;
          if (ti < 0 || ti >= x.len) continue;
          for (int c = 0; c < conv.in_ch; ++c)
            acc += x.item(b)(ti, c) * conv.weight(k * conv.in_ch + c, o);
        }
        y.item(b)(t, o) = acc;
      }
  return y;
}

}  // namespace

TEST_CASE("conv1d matches the elementwise oracle") {
  Rng rng(1);
  Conv1d conv(3, 5, 8, 2, 3);
  conv.init(rng);
  for (Eigen::Index i = 0; i < conv.bias.size(); ++i) conv.bias(i) = rng.normal();
  const SeqBatch x = random_batch(rng, 2, 16, 3);
  const SeqBatch y = conv.forward(x);
  const SeqBatch ref = conv_oracle(conv, x);
  CHECK(y.len == 8);
  CHECK(testutil::max_abs_diff(y.data, ref.data) < 1e-12);
}

TEST_CASE("conv1d gradients match finite differences") {
  Rng rng(2);
  Conv1d conv(2, 3, 5, 1, 2);
  conv.init(rng);
  const SeqBatch x = random_batch(rng, 2, 7, 2);
  Mat target = Mat::Zero(2 * 7, 3);
  for (Eigen::Index i = 0; i < target.rows(); ++i)
    for (Eigen::Index j = 0; j < target.cols(); ++j) target(i, j) = rng.normal();

  TensorRefs refs;
  refs.mats = {{"w", &conv.weight}};
  refs.vecs = {{"b", &conv.bias}};
  const Vec theta = refs.flatten();

  auto loss_at = [&](const Vec& flat) {
    Conv1d c = conv;
    TensorRefs r;
    r.mats = {{"w", &c.weight}};
    r.vecs = {{"b", &c.bias}};
    r.assign(flat);
    return 0.5 * (c.forward(x).data - target).squaredNorm();
  };

  Conv1d::Cache cache;
  const SeqBatch y = conv.forward(x, &cache);
  SeqBatch dy = y;
  dy.data = y.data - target;
  Mat dw = Mat::Zero(conv.weight.rows(), conv.weight.cols());
  Vec db = Vec::Zero(conv.bias.size());
  const SeqBatch dx = conv.backward(dy, cache, &dw, &db);

  TensorRefs grads;
  grads.mats = {{"w", &dw}};
  grads.vecs = {{"b", &db}};
  CHECK(testutil::gradient_check(loss_at, theta, grads.flatten()) < 1e-6);

  // Input gradient via finite differences on a few coordinates.
  for (const auto [bi, ti, ci] : {std::tuple{0, 0, 0}, {1, 3, 1}, {0, 6, 1}}) {
    SeqBatch xp = x;
    const double h = 1e-6;
    xp.item(bi)(ti, ci) += h;
    const double up = 0.5 * (conv.forward(xp).data - target).squaredNorm();
    xp.item(bi)(ti, ci) -= 2 * h;
    const double down = 0.5 * (conv.forward(xp).data - target).squaredNorm();
    const double fd = (up - down) / (2 * h);
    CHECK(std::abs(fd - dx.item(bi)(ti, ci)) < 1e-5);
  }
}

TEST_CASE("dense gradients match finite differences") {
  Rng rng(3);
  Dense dense(4, 3);
  dense.init(rng);
  Mat x(5, 4), target(5, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = rng.normal();

  TensorRefs refs;
  refs.mats = {{"w", &dense.weight}};
  refs.vecs = {{"b", &dense.bias}};
  auto loss_at = [&](const Vec& flat) {
    Dense d = dense;
    TensorRefs r;
    r.mats = {{"w", &d.weight}};
    r.vecs = {{"b", &d.bias}};
    r.assign(flat);
    return 0.5 * (d.forward(x) - target).squaredNorm();
  };
  const Mat y = dense.forward(x);
  Mat dw = Mat::Zero(4, 3);
  Vec db = Vec::Zero(3);
  (void)dense.backward(x, y - target, &dw, &db);
  TensorRefs grads;
  grads.mats = {{"w", &dw}};
  grads.vecs = {{"b", &db}};
  CHECK(testutil::gradient_check(loss_at, refs.flatten(), grads.flatten()) < 1e-6);
}

TEST_CASE("upsample2 and mean_over_time invert consistently") {
  Rng rng(4);
  const SeqBatch x = random_batch(rng, 2, 5, 3);
  const SeqBatch y = upsample2(x);
  CHECK(y.len == 10);
  CHECK(y.item(0).row(0) == x.item(0).row(0));
  CHECK(y.item(0).row(1) == x.item(0).row(0));
  // <dy, up(x)> == <up_backward(dy), x>  (adjoint identity)
  const SeqBatch dy = random_batch(rng, 2, 10, 3);
  const SeqBatch dx = upsample2_backward(dy);
  CHECK(std::abs(dy.data.cwiseProduct(y.data).sum() -
                 dx.data.cwiseProduct(x.data).sum()) < 1e-10);

  const Mat pooled = mean_over_time(x);
  CHECK(pooled.rows() == 2);
  const Mat dpool = Mat::Random(2, 3);
  const SeqBatch dxp = mean_over_time_backward(dpool, 2, 5);
  CHECK(std::abs(dpool.cwiseProduct(pooled).sum() -
                 dxp.data.cwiseProduct(x.data).sum()) < 1e-10);
}

TEST_CASE("leaky relu backward matches finite differences") {
  Rng rng(5);
  Mat x(3, 4);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  const Mat dy = Mat::Ones(3, 4);
  const Mat dx = leaky_relu_backward(x, dy, 0.2);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double expected = x.data()[i] > 0 ? 1.0 : 0.2;
    CHECK(dx.data()[i] == expected);
  }
}

TEST_CASE("momentum update is an elementwise convex combination") {
  Mat q(1, 1), k(1, 1);
  q << 4.0;
  k << 2.0;
  TensorRefs qr, kr;
  qr.mats = {{"w", &q}};
  kr.mats = {{"w", &k}};

  momentum_update(qr, kr, 0.5);
  CHECK(k(0, 0) == 3.0);
  momentum_update(qr, kr, 1.0);
  CHECK(k(0, 0) == 3.0);  // unchanged
  momentum_update(qr, kr, 0.0);
  CHECK(k(0, 0) == 4.0);  // copies query

  Rng rng(6);
  Mat q2(4, 4), k2(4, 4);
  for (Eigen::Index i = 0; i < q2.size(); ++i) {
    q2.data()[i] = rng.normal();
    k2.data()[i] = rng.normal();
  }
  const Mat before = k2;
  TensorRefs qr2, kr2;
  qr2.mats = {{"w", &q2}};
  kr2.mats = {{"w", &k2}};
  momentum_update(qr2, kr2, 0.999);
  for (Eigen::Index i = 0; i < q2.size(); ++i) {
    const double lo = std::min(before.data()[i], q2.data()[i]);
    const double hi = std::max(before.data()[i], q2.data()[i]);
    CHECK(k2.data()[i] >= lo - 1e-15);
    CHECK(k2.data()[i] <= hi + 1e-15);
  }

  Mat wrong(2, 2);
  TensorRefs wr;
  wr.mats = {{"w", &wrong}};
  CHECK_THROWS_AS(momentum_update(qr2, wr, 0.5), Error);
}

TEST_CASE("adam minimizes a quadratic") {
  Vec theta(2);
  theta << 5.0, -3.0;
  Adam adam(2, 0.05);
  for (int i = 0; i < 400; ++i) {
    const Vec grad = theta;  // d/dtheta 0.5|theta|^2
    adam.step(theta, grad);
  }
  CHECK(theta.norm() < 0.1);
}

TEST_CASE("tensor refs flatten and assign round-trip") {
  Rng rng(7);
  Mat a(2, 3);
  Vec b(4);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rng.normal();
  TensorRefs refs;
  refs.mats = {{"a", &a}};
  refs.vecs = {{"b", &b}};
  const Vec flat = refs.flatten();
  Mat a2 = Mat::Zero(2, 3);
  Vec b2 = Vec::Zero(4);
  TensorRefs refs2;
  refs2.mats = {{"a", &a2}};
  refs2.vecs = {{"b", &b2}};
  refs2.assign(flat);
  CHECK(a2 == a);
  CHECK(b2 == b);
}
