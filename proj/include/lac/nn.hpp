#pragma once

#include <string>
#include <utility>
#include <vector>

#include "lac/common.hpp"

namespace lac {

/// A batch of equal-length sequences stored as one (batch*len) x channels
/// matrix. Row b*len + t holds frame t of item b.
struct SeqBatch {
  Mat data;
  int batch = 0;
  int len = 0;

  SeqBatch() = default;
  SeqBatch(int batch_, int len_, int channels)
      : data(Mat::Zero(static_cast<Eigen::Index>(batch_) * len_, channels)),
        batch(batch_),
        len(len_) {}

  int channels() const { return static_cast<int>(data.cols()); }
  auto item(int b) { return data.middleRows(static_cast<Eigen::Index>(b) * len, len); }
  auto item(int b) const {
    return data.middleRows(static_cast<Eigen::Index>(b) * len, len);
  }
};

/// Named views over a model's tensors; the single registry used by the
/// optimizer, momentum updates, checkpoints, and finite-difference probes.
struct TensorRefs {
  std::vector<std::pair<std::string, Mat*>> mats;
  std::vector<std::pair<std::string, Vec*>> vecs;

  int64_t size() const;
  Vec flatten() const;
  void assign(const Vec& flat);
  void add_scaled(const TensorRefs& other, double scale);  // this += scale*other
  void zero();
};

/// key <- m*key + (1-m)*query over two models' tensors. Throws on any shape
/// mismatch.
void momentum_update(const TensorRefs& query, TensorRefs key, double m);

/// 1-D temporal convolution with symmetric zero padding, as im2col + GEMM.
struct Conv1d {
  int in_ch = 0, out_ch = 0, kernel = 1, stride = 1, pad = 0;
  Mat weight;  // (kernel*in_ch) x out_ch
  Vec bias;    // out_ch

  struct Cache {
    Mat cols;  // (batch*out_len) x (kernel*in_ch)
    int batch = 0, in_len = 0, out_len = 0;
  };

  Conv1d() = default;
  Conv1d(int in_ch_, int out_ch_, int kernel_, int stride_, int pad_);
  void init(Rng& rng);

  int out_len(int in_len) const;
  SeqBatch forward(const SeqBatch& x, Cache* cache = nullptr) const;
  /// Returns dx; accumulates into dweight/dbias when non-null.
  SeqBatch backward(const SeqBatch& dy, const Cache& cache, Mat* dweight,
                    Vec* dbias) const;
};

/// Affine layer over rows; also serves as a 1x1 convolution on SeqBatch data.
struct Dense {
  Mat weight;  // in x out
  Vec bias;

  Dense() = default;
  Dense(int in, int out);
  void init(Rng& rng);

  Mat forward(const Mat& x) const;
  Mat backward(const Mat& x, const Mat& dy, Mat* dweight, Vec* dbias) const;
};

/// Leaky rectifier; slope 0 gives a plain rectifier. Caches nothing: the
/// backward recomputes the mask from the forward input.
Mat leaky_relu(const Mat& x, double slope);
Mat leaky_relu_backward(const Mat& x, const Mat& dy, double slope);

/// Nearest-neighbour temporal upsampling by 2.
SeqBatch upsample2(const SeqBatch& x);
SeqBatch upsample2_backward(const SeqBatch& dy);

/// Temporal mean per item: (batch*len) x C -> batch x C.
Mat mean_over_time(const SeqBatch& x);
SeqBatch mean_over_time_backward(const Mat& dy, int batch, int len);

/// Adam with bias correction. State is exposed for checkpointing.
class Adam {
 public:
  Adam() = default;
  Adam(int64_t dim, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step(Vec& theta, const Vec& grad);

  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t t = 0;
  Vec m, v;
};

}  // namespace lac
