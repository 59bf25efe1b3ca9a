#pragma once

#include <span>
#include <string>
#include <vector>

#include "kspd/kernel_layer.hpp"
#include "kspd/layers.hpp"
#include "kspd/spdfun.hpp"

namespace kspd {

/// Fixed (non-learned) structure of the network.
///
/// Input samples are c × m matrices. Without the conv block each sample is
/// already the descriptor matrix X (d = c, n = m). With the conv block each
/// sample is an image with c channels and m = image_height · image_width
/// pixels, and X is the conv block output.
struct NetworkConfig {
  KernelKind kernel = GaussianKernel{0.1};
  RegPolicy reg;
  bool use_conv = false;
  std::size_t image_height = 0;
  std::size_t image_width = 0;
};

/// Every learnable quantity. theta is ignored by the linear kernel.
struct Parameters {
  ConvBlockParams conv;
  double theta = 0.1;
  BatchNormParams bn;
  FcParams fc;

  static Parameters zeros_like(const Parameters& p);
};

struct ParamGroup {
  std::string name;
  std::span<double> values;
};

/// Stable order: conv.w1 conv.b1 conv.w2 conv.b2 (conv mode only), theta,
/// bn.gamma, bn.beta, fc.w, fc.b.
std::vector<ParamGroup> param_groups(Parameters& p);

/// Descriptor dimension d fed to the kernel layer.
std::size_t descriptor_dim(const NetworkConfig& cfg, const Parameters& p, std::size_t input_rows);

Parameters init_parameters(const NetworkConfig& cfg, std::size_t input_rows,
                           std::size_t num_classes, double theta, std::size_t conv_c1,
                           std::size_t conv_c2, Rng& rng);

struct BatchResult {
  double loss = 0.0;
  Matrix probs;
  Parameters grads;
  std::vector<Matrix> input_grads;  // filled only on request
};

/// Forward and backward over one batch. BN statistics are updated in
/// training mode.
BatchResult network_forward_backward(const NetworkConfig& cfg, const Parameters& params,
                                     BatchNormStats& stats, std::span<const Matrix> inputs,
                                     const std::vector<int>& labels, BatchNormMode mode,
                                     bool want_input_grads = false);

/// Loss only (no backward). Used by the finite-difference oracle.
double network_loss(const NetworkConfig& cfg, const Parameters& params, BatchNormStats stats,
                    std::span<const Matrix> inputs, const std::vector<int>& labels,
                    BatchNormMode mode);

/// Class probabilities in inference mode (running BN statistics).
Matrix network_predict(const NetworkConfig& cfg, const Parameters& params,
                       const BatchNormStats& stats, std::span<const Matrix> inputs);

/// The KSPD vector triu(f(K)) for one descriptor matrix (no L2 normalization).
std::vector<double> kspd_vector(const Matrix& x, const KernelKind& kernel, const RegPolicy& reg);

}  // namespace kspd
