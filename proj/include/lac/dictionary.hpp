#pragma once

#include <vector>

#include "lac/common.hpp"

namespace lac {

class RankDeficientError : public Error {
 public:
  explicit RankDeficientError(int row)
      : Error("rank-deficient dictionary (row " + std::to_string(row) + ")"),
        row(row) {}
  int row;
};

/// Saved intermediates of the modified Gram-Schmidt sweep; states[i][j] is
/// row i after subtracting its projections onto the first j orthonormal rows.
struct GramSchmidtCache {
  std::vector<std::vector<Vec>> states;
  Vec norms;
  Mat ortho;
};

/// Row-orthonormalization by modified Gram-Schmidt. Row i of the output lies
/// in the span of input rows 0..i. Throws RankDeficientError when a residual
/// row norm drops below 1e-8.
Mat orthogonalize(const Mat& raw, GramSchmidtCache* cache = nullptr);

/// Reverse-mode derivative of orthogonalize: d(raw) from d(ortho).
Mat orthogonalize_backward(const GramSchmidtCache& cache, const Mat& d_ortho);

/// Learnable action dictionary: a raw square matrix whose orthogonalized view
/// splits into J motion rows (0..J-1) and K static rows (J..C_out-1).
struct ActionDictionary {
  Mat raw;  // C_out x C_out
  int J = 0;
  int K = 0;

  ActionDictionary() = default;
  ActionDictionary(int c_out, int J_, int K_);
  void init(Rng& rng);  // zero-mean Gaussian, sigma = 1/sqrt(C_out)
  int c_out() const { return static_cast<int>(raw.rows()); }

  /// Resamples one raw row (the trainer's response to a rank-guard trip).
  void rerandomize_row(int row, Rng& rng);
};

/// Per-frame motion magnitudes and pooled static magnitudes of one latent.
struct LatentDecomposition {
  Mat motion;  // T' x J
  Vec statics;  // K
};

/// Worst orthogonality defect of a dictionary view: max of off-diagonal
/// |<d_i,d_j>| and |norm(d_i)-1|.
double orthogonality_error(const Mat& ortho);

/// Projections of a latent (rows = frames) onto an orthogonalized dictionary:
/// motion magnitudes per frame, static magnitudes of the time-pooled latent.
LatentDecomposition decompose(const Mat& latent, const Mat& ortho, int J);

/// Gradient of decompose with respect to both the latent and the dictionary.
/// d_ortho may be null when the dictionary is frozen.
Mat decompose_backward(const Mat& latent, const Mat& ortho, int J,
                       const LatentDecomposition& d_decomp, Mat* d_ortho);

struct Recombined {
  Mat motion;            // T' x C_out
  Eigen::RowVectorXd statics;  // 1 x C_out
};

Recombined recombine(const LatentDecomposition& decomp, const Mat& ortho, int J);

LatentDecomposition recombine_backward(const LatentDecomposition& decomp,
                                       const Mat& ortho, int J,
                                       const Mat& d_motion,
                                       const Eigen::RowVectorXd& d_statics,
                                       Mat* d_ortho);

}  // namespace lac
