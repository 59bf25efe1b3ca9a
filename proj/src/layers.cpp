#include "kspd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kspd/errors.hpp"

namespace kspd {

void SingleUseTape::consume(const char* layer) {
  if (consumed_) {
    throw UsageError("layers", std::string(layer) + ": backward called on a stale tape");
  }
  consumed_ = true;
}

// ---------------------------------------------------------------------------
// Convolution block

namespace {

Matrix conv3x3(const Matrix& in, std::size_t h, std::size_t w, const Matrix& weights,
               const std::vector<double>& bias) {
  const std::size_t cin = in.rows();
  const std::size_t cout = weights.rows();
  Matrix out(cout, h * w);
  for (std::size_t o = 0; o < cout; ++o) {
    auto orow = out.row(o);
    std::fill(orow.begin(), orow.end(), bias[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      auto irow = in.row(c);
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double wt = weights(o, c * 9 + ky * 3 + kx);
          if (wt == 0.0) continue;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t x = 0; x < w; ++x) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
              orow[y * w + x] += wt * irow[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
            }
          }
        }
      }
    }
  }
  return out;
}

// Accumulates dJ/dW, dJ/db and returns dJ/din for conv3x3.
Matrix conv3x3_backward(const Matrix& in, std::size_t h, std::size_t w, const Matrix& weights,
                        const Matrix& dout, Matrix& dw, std::vector<double>& db) {
  const std::size_t cin = in.rows();
  const std::size_t cout = weights.rows();
  Matrix din(cin, h * w);
  for (std::size_t o = 0; o < cout; ++o) {
    auto drow = dout.row(o);
    for (double v : drow) db[o] += v;
    for (std::size_t c = 0; c < cin; ++c) {
      auto irow = in.row(c);
      auto dirow = din.row(c);
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::size_t tap = c * 9 + ky * 3 + kx;
          const double wt = weights(o, tap);
          double acc = 0.0;
          for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t x = 0; x < w; ++x) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t src = static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx);
              const double g = drow[y * w + x];
              acc += g * irow[src];
              dirow[src] += wt * g;
            }
          }
          dw(o, tap) += acc;
        }
      }
    }
  }
  return din;
}

Matrix relu(const Matrix& m) {
  Matrix r = m;
  for (double& v : r.data()) v = v > 0.0 ? v : 0.0;
  return r;
}

void relu_backward_inplace(const Matrix& pre, Matrix& grad) {
  auto p = pre.data();
  auto g = grad.data();
  for (std::size_t k = 0; k < g.size(); ++k)
    if (!(p[k] > 0.0)) g[k] = 0.0;
}

}  // namespace

ConvBlockParams ConvBlockParams::init(std::size_t in_channels, std::size_t c1, std::size_t c2,
                                      Rng& rng) {
  ConvBlockParams p;
  p.w1 = random_normal(c1, in_channels * 9, rng, std::sqrt(2.0 / (9.0 * in_channels)));
  p.b1.assign(c1, 0.0);
  p.w2 = random_normal(c2, c1 * 9, rng, std::sqrt(2.0 / (9.0 * c1)));
  p.b2.assign(c2, 0.0);
  return p;
}

ConvBlockParams ConvBlockParams::zeros_like(const ConvBlockParams& p) {
  if (p.empty()) return {};
  ConvBlockParams z;
  z.w1 = Matrix(p.w1.rows(), p.w1.cols());
  z.b1.assign(p.b1.size(), 0.0);
  z.w2 = Matrix(p.w2.rows(), p.w2.cols());
  z.b2.assign(p.b2.size(), 0.0);
  return z;
}

ConvBlockOutput convblock_forward(const Image& image, const ConvBlockParams& params) {
  if (params.empty()) throw UsageError("layers", "convblock_forward: parameters not initialized");
  if (image.height < 4 || image.width < 4) {
    throw InputError("layers", "convblock_forward: image must be at least 4x4, got " +
                                   std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  if (image.data.cols() != image.height * image.width) {
    throw DimensionError("layers", "convblock_forward: image data does not match height×width");
  }
  if (image.channels() != params.in_channels()) {
    throw DimensionError("layers", "convblock_forward: expected " +
                                       std::to_string(params.in_channels()) + " input channels, got " +
                                       std::to_string(image.channels()));
  }
  if (!image.data.all_finite()) throw InputError("layers", "convblock_forward: non-finite image");

  const std::size_t h = image.height;
  const std::size_t w = image.width;
  const std::size_t ph = h / 2;
  const std::size_t pw = w / 2;

  ConvBlockOutput out;
  auto& tape = out.tape;
  tape.input = image;
  tape.pooled_height = ph;
  tape.pooled_width = pw;
  tape.pre1 = conv3x3(image.data, h, w, params.w1, params.b1);

  const std::size_t c1 = params.c1();
  tape.pooled = Matrix(c1, ph * pw);
  tape.argmax.assign(c1 * ph * pw, 0);
  for (std::size_t c = 0; c < c1; ++c) {
    for (std::size_t py = 0; py < ph; ++py) {
      for (std::size_t px = 0; px < pw; ++px) {
        // Window cells in row-major order; strict > keeps the lowest index on ties.
        const std::size_t cells[4] = {(2 * py) * w + 2 * px, (2 * py) * w + 2 * px + 1,
                                      (2 * py + 1) * w + 2 * px, (2 * py + 1) * w + 2 * px + 1};
        std::size_t best = cells[0];
        double best_v = std::max(tape.pre1(c, best), 0.0);
        for (std::size_t k = 1; k < 4; ++k) {
          const double v = std::max(tape.pre1(c, cells[k]), 0.0);
          if (v > best_v) {
            best_v = v;
            best = cells[k];
          }
        }
        tape.pooled(c, py * pw + px) = best_v;
        tape.argmax[c * ph * pw + py * pw + px] = best;
      }
    }
  }

  tape.pre2 = conv3x3(tape.pooled, ph, pw, params.w2, params.b2);
  out.x = relu(tape.pre2);
  return out;
}

ConvBlockGradients convblock_backward(ConvBlockTape& tape, const ConvBlockParams& params,
                                      const Matrix& dj_dx) {
  tape.consume("convblock_backward");
  require_same_shape(tape.pre2, dj_dx, "convblock_backward");

  const std::size_t h = tape.input.height;
  const std::size_t w = tape.input.width;
  const std::size_t ph = tape.pooled_height;
  const std::size_t pw = tape.pooled_width;

  ConvBlockGradients g;
  g.dparams = ConvBlockParams::zeros_like(params);

  Matrix dpre2 = dj_dx;
  relu_backward_inplace(tape.pre2, dpre2);
  const Matrix dpooled =
      conv3x3_backward(tape.pooled, ph, pw, params.w2, dpre2, g.dparams.w2, g.dparams.b2);

  Matrix dpre1(params.c1(), h * w);
  for (std::size_t c = 0; c < params.c1(); ++c)
    for (std::size_t k = 0; k < ph * pw; ++k)
      dpre1(c, tape.argmax[c * ph * pw + k]) += dpooled(c, k);
  relu_backward_inplace(tape.pre1, dpre1);

  g.dimage.height = h;
  g.dimage.width = w;
  g.dimage.data =
      conv3x3_backward(tape.input.data, h, w, params.w1, dpre1, g.dparams.w1, g.dparams.b1);
  return g;
}

// ---------------------------------------------------------------------------
// L2 normalization

Matrix l2norm_forward(const Matrix& x, L2NormTape& tape) {
  tape = L2NormTape{};
  tape.x = x;
  tape.norms.assign(x.cols(), 0.0);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) tape.norms[j] += x(i, j) * x(i, j);
  for (double& n : tape.norms) n = std::sqrt(n);

  Matrix y = x;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) /= tape.norms[j] + kL2Eps;
  return y;
}

Matrix l2norm_backward(L2NormTape& tape, const Matrix& dj_dy) {
  tape.consume("l2norm_backward");
  require_same_shape(tape.x, dj_dy, "l2norm_backward");
  const Matrix& x = tape.x;
  Matrix dx(x.rows(), x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    const double r = tape.norms[j];
    const double s = r + kL2Eps;
    double xg = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) xg += x(i, j) * dj_dy(i, j);
    // dy/dx = I/s − x xᵀ/(r s²); the second term vanishes with x.
    const double coef = r > 0.0 ? xg / (r * s * s) : 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) dx(i, j) = dj_dy(i, j) / s - coef * x(i, j);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Upper-triangular vectorization

std::size_t triu_length(std::size_t d) { return d * (d + 1) / 2; }

std::vector<double> triu_forward(const Matrix& h, TriuTape& tape) {
  require_square(h, "triu_forward");
  tape = TriuTape{};
  tape.dim = h.rows();
  std::vector<double> v;
  v.reserve(triu_length(h.rows()));
  for (std::size_t i = 0; i < h.rows(); ++i)
    for (std::size_t j = i; j < h.cols(); ++j) v.push_back(h(i, j));
  return v;
}

Matrix triu_backward(TriuTape& tape, const std::vector<double>& dj_dv) {
  tape.consume("triu_backward");
  const std::size_t d = tape.dim;
  if (dj_dv.size() != triu_length(d)) {
    throw DimensionError("layers", "triu_backward: expected length " +
                                       std::to_string(triu_length(d)) + ", got " +
                                       std::to_string(dj_dv.size()));
  }
  Matrix dh(d, d);
  std::size_t k = 0;
  for (std::size_t i = 0; i < d; ++i) {
    dh(i, i) = dj_dv[k++];
    for (std::size_t j = i + 1; j < d; ++j) {
      const double half = 0.5 * dj_dv[k++];
      dh(i, j) = half;
      dh(j, i) = half;
    }
  }
  return dh;
}

// ---------------------------------------------------------------------------
// Batch normalization

BatchNormParams BatchNormParams::init(std::size_t features) {
  return {std::vector<double>(features, 1.0), std::vector<double>(features, 0.0)};
}

BatchNormStats BatchNormStats::init(std::size_t features) {
  return {std::vector<double>(features, 0.0), std::vector<double>(features, 1.0)};
}

Matrix batchnorm_forward(const Matrix& v, const BatchNormParams& params, BatchNormStats& stats,
                         BatchNormMode mode, BatchNormTape& tape) {
  const std::size_t batch = v.rows();
  const std::size_t f = v.cols();
  if (params.gamma.size() != f || params.beta.size() != f || stats.running_mean.size() != f ||
      stats.running_var.size() != f) {
    throw DimensionError("layers", "batchnorm_forward: parameter size does not match " +
                                       std::to_string(f) + " features");
  }
  if (mode == BatchNormMode::Training && batch < 2) {
    throw UsageError("layers", "batchnorm_forward: training mode needs a batch of at least 2");
  }

  tape = BatchNormTape{};
  tape.mode = mode;
  tape.gamma = params.gamma;
  tape.inv_std.assign(f, 0.0);
  tape.xhat = Matrix(batch, f);
  Matrix y(batch, f);

  for (std::size_t j = 0; j < f; ++j) {
    double mean;
    double var;
    if (mode == BatchNormMode::Training) {
      mean = 0.0;
      for (std::size_t b = 0; b < batch; ++b) mean += v(b, j);
      mean /= static_cast<double>(batch);
      var = 0.0;
      for (std::size_t b = 0; b < batch; ++b) var += (v(b, j) - mean) * (v(b, j) - mean);
      var /= static_cast<double>(batch);
      stats.running_mean[j] = kBatchNormMomentum * stats.running_mean[j] + (1.0 - kBatchNormMomentum) * mean;
      stats.running_var[j] = kBatchNormMomentum * stats.running_var[j] + (1.0 - kBatchNormMomentum) * var;
    } else {
      mean = stats.running_mean[j];
      var = stats.running_var[j];
    }
    const double inv_std = 1.0 / std::sqrt(var + kBatchNormEps);
    tape.inv_std[j] = inv_std;
    for (std::size_t b = 0; b < batch; ++b) {
      const double xh = (v(b, j) - mean) * inv_std;
      tape.xhat(b, j) = xh;
      y(b, j) = params.gamma[j] * xh + params.beta[j];
    }
  }
  return y;
}

BatchNormGradients batchnorm_backward(BatchNormTape& tape, const Matrix& dj_dy) {
  tape.consume("batchnorm_backward");
  require_same_shape(tape.xhat, dj_dy, "batchnorm_backward");
  const std::size_t batch = dj_dy.rows();
  const std::size_t f = dj_dy.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);

  BatchNormGradients g{Matrix(batch, f), std::vector<double>(f, 0.0), std::vector<double>(f, 0.0)};
  for (std::size_t j = 0; j < f; ++j) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      sum_g += dj_dy(b, j);
      sum_gx += dj_dy(b, j) * tape.xhat(b, j);
    }
    g.dbeta[j] = sum_g;
    g.dgamma[j] = sum_gx;
    const double scale = tape.gamma[j] * tape.inv_std[j];
    for (std::size_t b = 0; b < batch; ++b) {
      g.dv(b, j) = tape.mode == BatchNormMode::Training
                       ? scale * (dj_dy(b, j) - inv_b * sum_g - tape.xhat(b, j) * inv_b * sum_gx)
                       : scale * dj_dy(b, j);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Fully connected + softmax cross-entropy

FcParams FcParams::init(std::size_t classes, std::size_t features, Rng& rng) {
  return {random_normal(classes, features, rng, std::sqrt(1.0 / static_cast<double>(features))),
          std::vector<double>(classes, 0.0)};
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix p = logits;
  for (std::size_t b = 0; b < p.rows(); ++b) {
    auto r = p.row(b);
    const double m = *std::max_element(r.begin(), r.end());
    double z = 0.0;
    for (double& v : r) {
      v = std::exp(v - m);
      z += v;
    }
    for (double& v : r) v /= z;
  }
  return p;
}

FcSoftmaxResult fc_softmax_xent(const Matrix& v, const FcParams& params,
                                const std::vector<int>& labels) {
  const std::size_t batch = v.rows();
  const std::size_t classes = params.w.rows();
  if (params.w.cols() != v.cols() || params.b.size() != classes) {
    throw DimensionError("layers", "fc_softmax_xent: weight shape does not match features");
  }
  if (labels.size() != batch) {
    throw DimensionError("layers", "fc_softmax_xent: one label per sample required");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InputError("layers", "fc_softmax_xent: label " + std::to_string(y) +
                                     " outside [0, " + std::to_string(classes) + ")");
    }
  }

  Matrix logits = matmul_nt(v, params.w);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < classes; ++c) logits(b, c) += params.b[c];

  FcSoftmaxResult r;
  r.probs = softmax_rows(logits);
  const double inv_b = 1.0 / static_cast<double>(batch);

  // dJ/dlogits = (p − onehot)/B
  Matrix dlogits = r.probs;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto y = static_cast<std::size_t>(labels[b]);
    // log-sum-exp form keeps the loss finite for saturated probabilities.
    auto lrow = logits.row(b);
    const double m = *std::max_element(lrow.begin(), lrow.end());
    double z = 0.0;
    for (double l : lrow) z += std::exp(l - m);
    r.loss += (m + std::log(z) - logits(b, y)) * inv_b;
    dlogits(b, y) -= 1.0;
  }
  dlogits *= inv_b;

  r.dv = matmul(dlogits, params.w);
  r.dw = matmul_tn(dlogits, v);
  r.db.assign(classes, 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < classes; ++c) r.db[c] += dlogits(b, c);
  return r;
}

}  // namespace kspd
