#pragma once

#include <cstddef>
#include <vector>

#include "kspd/matrix.hpp"
#include "kspd/random.hpp"

namespace kspd {

/// Backward may consume a tape exactly once.
class SingleUseTape {
 public:
  void consume(const char* layer);
  bool consumed() const noexcept { return consumed_; }

 private:
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Descriptor block: conv3x3 → ReLU → maxpool2x2 → conv3x3 → ReLU.

/// A c×h×w image stored as a c × (h·w) matrix, pixels row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  Matrix data;

  std::size_t channels() const noexcept { return data.rows(); }
};

/// Conv kernels are stored as c_out × (c_in·9), taps ordered (c_in, ky, kx).
struct ConvBlockParams {
  Matrix w1;
  std::vector<double> b1;
  Matrix w2;
  std::vector<double> b2;

  bool empty() const noexcept { return w1.empty(); }
  std::size_t in_channels() const { return w1.cols() / 9; }
  std::size_t c1() const { return w1.rows(); }
  std::size_t c2() const { return w2.rows(); }

  /// He-initialized kernels, zero biases.
  static ConvBlockParams init(std::size_t in_channels, std::size_t c1, std::size_t c2, Rng& rng);
  static ConvBlockParams zeros_like(const ConvBlockParams& p);
};

struct ConvBlockTape : SingleUseTape {
  Image input;
  Matrix pre1;     // c1 × (h·w), before ReLU
  Matrix pooled;   // c1 × (h/2 · w/2)
  std::vector<std::size_t> argmax;  // per pooled cell, linear pixel index into pre1 row
  Matrix pre2;     // c2 × (h/2 · w/2), before ReLU
  std::size_t pooled_height = 0;
  std::size_t pooled_width = 0;
};

struct ConvBlockOutput {
  Matrix x;  // c2 × n descriptor matrix, n = (h/2)(w/2)
  ConvBlockTape tape;
};

struct ConvBlockGradients {
  Image dimage;
  ConvBlockParams dparams;
};

ConvBlockOutput convblock_forward(const Image& image, const ConvBlockParams& params);
ConvBlockGradients convblock_backward(ConvBlockTape& tape, const ConvBlockParams& params,
                                      const Matrix& dj_dx);

// ---------------------------------------------------------------------------

inline constexpr double kL2Eps = 1e-8;

struct L2NormTape : SingleUseTape {
  Matrix x;
  std::vector<double> norms;
};

/// Per-column normalization x_i / (‖x_i‖₂ + 1e-8).
Matrix l2norm_forward(const Matrix& x, L2NormTape& tape);
Matrix l2norm_backward(L2NormTape& tape, const Matrix& dj_dy);

// ---------------------------------------------------------------------------

struct TriuTape : SingleUseTape {
  std::size_t dim = 0;
};

std::size_t triu_length(std::size_t d);

/// Row-major upper triangle including the diagonal: (h11, h12, ..., h1d, h22, ...).
std::vector<double> triu_forward(const Matrix& h, TriuTape& tape);

/// Diagonal slots map straight back; off-diagonal slot (i,j) contributes half
/// to (i,j) and half to (j,i). The result is exactly symmetric.
Matrix triu_backward(TriuTape& tape, const std::vector<double>& dj_dv);

// ---------------------------------------------------------------------------

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

enum class BatchNormMode { Training, Inference };

struct BatchNormParams {
  std::vector<double> gamma;
  std::vector<double> beta;

  static BatchNormParams init(std::size_t features);
};

struct BatchNormStats {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  static BatchNormStats init(std::size_t features);
};

struct BatchNormTape : SingleUseTape {
  BatchNormMode mode = BatchNormMode::Training;
  Matrix xhat;
  std::vector<double> inv_std;
  std::vector<double> gamma;
};

struct BatchNormGradients {
  Matrix dv;
  std::vector<double> dgamma;
  std::vector<double> dbeta;
};

/// v is batch × features. Training mode normalizes with the batch mean and
/// population variance and updates the running statistics
/// (running = 0.9·running + 0.1·batch); inference mode uses the running
/// statistics and leaves them untouched.
Matrix batchnorm_forward(const Matrix& v, const BatchNormParams& params, BatchNormStats& stats,
                         BatchNormMode mode, BatchNormTape& tape);
BatchNormGradients batchnorm_backward(BatchNormTape& tape, const Matrix& dj_dy);

// ---------------------------------------------------------------------------

struct FcParams {
  Matrix w;  // classes × features
  std::vector<double> b;

  static FcParams init(std::size_t classes, std::size_t features, Rng& rng);
};

struct FcSoftmaxResult {
  double loss = 0.0;  // mean cross-entropy over the batch
  Matrix probs;       // batch × classes
  Matrix dv;          // batch × features
  Matrix dw;
  std::vector<double> db;
};

FcSoftmaxResult fc_softmax_xent(const Matrix& v, const FcParams& params,
                                const std::vector<int>& labels);

/// Logits → probabilities with max subtraction, row by row.
Matrix softmax_rows(const Matrix& logits);

}  // namespace kspd
