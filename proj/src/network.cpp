#include "kspd/network.hpp"

#include <optional>

#include "kspd/errors.hpp"

namespace kspd {

namespace {

struct SampleTape {
  std::optional<ConvBlockTape> conv;
  L2NormTape l2;
  KernelTape kernel;
  SpdFunResult logm;
  TriuTape triu;
};

KernelKind effective_kernel(const NetworkConfig& cfg, const Parameters& p) {
  if (std::holds_alternative<GaussianKernel>(cfg.kernel)) return GaussianKernel{p.theta};
  return cfg.kernel;
}

Image as_image(const NetworkConfig& cfg, const Matrix& input) {
  if (input.cols() != cfg.image_height * cfg.image_width) {
    throw DimensionError("network", "sample has " + std::to_string(input.cols()) +
                                        " columns, expected image_height*image_width = " +
                                        std::to_string(cfg.image_height * cfg.image_width));
  }
  return Image{cfg.image_height, cfg.image_width, input};
}

std::vector<double> forward_sample(const NetworkConfig& cfg, const Parameters& p,
                                   const Matrix& input, SampleTape& tape) {
  Matrix x;
  if (cfg.use_conv) {
    auto out = convblock_forward(as_image(cfg, input), p.conv);
    x = std::move(out.x);
    tape.conv = std::move(out.tape);
  } else {
    x = input;
  }
  const Matrix xn = l2norm_forward(x, tape.l2);
  tape.kernel = kernel_forward(xn, effective_kernel(cfg, p));
  tape.logm = spdfun_forward(tape.kernel.k, log_fn(), cfg.reg);
  return triu_forward(tape.logm.h, tape.triu);
}

Matrix stack_rows(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t b = 0; b < rows.size(); ++b)
    std::copy(rows[b].begin(), rows[b].end(), m.row(b).begin());
  return m;
}

void add_into(std::span<double> dst, std::span<const double> src) {
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

void check_inputs(std::span<const Matrix> inputs) {
  if (inputs.empty()) throw InputError("network", "empty batch");
}

}  // namespace

Parameters Parameters::zeros_like(const Parameters& p) {
  Parameters z;
  z.conv = ConvBlockParams::zeros_like(p.conv);
  z.theta = 0.0;
  z.bn.gamma.assign(p.bn.gamma.size(), 0.0);
  z.bn.beta.assign(p.bn.beta.size(), 0.0);
  z.fc.w = Matrix(p.fc.w.rows(), p.fc.w.cols());
  z.fc.b.assign(p.fc.b.size(), 0.0);
  return z;
}

std::vector<ParamGroup> param_groups(Parameters& p) {
  std::vector<ParamGroup> g;
  if (!p.conv.empty()) {
    g.push_back({"conv.w1", p.conv.w1.data()});
    g.push_back({"conv.b1", p.conv.b1});
    g.push_back({"conv.w2", p.conv.w2.data()});
    g.push_back({"conv.b2", p.conv.b2});
  }
  g.push_back({"theta", std::span<double>(&p.theta, 1)});
  g.push_back({"bn.gamma", p.bn.gamma});
  g.push_back({"bn.beta", p.bn.beta});
  g.push_back({"fc.w", p.fc.w.data()});
  g.push_back({"fc.b", p.fc.b});
  return g;
}

std::size_t descriptor_dim(const NetworkConfig& cfg, const Parameters& p, std::size_t input_rows) {
  return cfg.use_conv ? p.conv.c2() : input_rows;
}

Parameters init_parameters(const NetworkConfig& cfg, std::size_t input_rows,
                           std::size_t num_classes, double theta, std::size_t conv_c1,
                           std::size_t conv_c2, Rng& rng) {
  if (num_classes < 2) throw ParameterError("network", "need at least two classes");
  Parameters p;
  if (cfg.use_conv) p.conv = ConvBlockParams::init(input_rows, conv_c1, conv_c2, rng);
  p.theta = theta;
  const std::size_t features = triu_length(descriptor_dim(cfg, p, input_rows));
  p.bn = BatchNormParams::init(features);
  p.fc = FcParams::init(num_classes, features, rng);
  return p;
}

BatchResult network_forward_backward(const NetworkConfig& cfg, const Parameters& params,
                                     BatchNormStats& stats, std::span<const Matrix> inputs,
                                     const std::vector<int>& labels, BatchNormMode mode,
                                     bool want_input_grads) {
  check_inputs(inputs);
  const std::size_t batch = inputs.size();
  std::vector<SampleTape> tapes(batch);
  std::vector<std::vector<double>> feats(batch);
  for (std::size_t b = 0; b < batch; ++b) feats[b] = forward_sample(cfg, params, inputs[b], tapes[b]);

  BatchNormTape bn_tape;
  const Matrix y = batchnorm_forward(stack_rows(feats), params.bn, stats, mode, bn_tape);
  auto head = fc_softmax_xent(y, params.fc, labels);

  BatchResult r;
  r.loss = head.loss;
  r.probs = std::move(head.probs);
  r.grads = Parameters::zeros_like(params);
  r.grads.fc.w = std::move(head.dw);
  r.grads.fc.b = std::move(head.db);

  auto bn_grads = batchnorm_backward(bn_tape, head.dv);
  r.grads.bn.gamma = std::move(bn_grads.dgamma);
  r.grads.bn.beta = std::move(bn_grads.dbeta);

  const bool gaussian = std::holds_alternative<GaussianKernel>(cfg.kernel);
  if (want_input_grads) r.input_grads.resize(batch);
  // Fixed sample order keeps the reduction deterministic.
  for (std::size_t b = 0; b < batch; ++b) {
    auto& t = tapes[b];
    auto row = bn_grads.dv.row(b);
    const Matrix dh = triu_backward(t.triu, std::vector<double>(row.begin(), row.end()));
    const Matrix dk_reg = spdfun_backward(t.logm.eig, dh, log_fn());
    const Matrix dk = regularize_spd_backward(dk_reg, cfg.reg);
    auto kg = kernel_backward(t.kernel, dk);
    if (gaussian) r.grads.theta += kg.dtheta;
    Matrix dx = l2norm_backward(t.l2, kg.dx);
    if (cfg.use_conv) {
      auto cg = convblock_backward(*t.conv, params.conv, dx);
      add_into(r.grads.conv.w1.data(), cg.dparams.w1.data());
      add_into(r.grads.conv.b1, cg.dparams.b1);
      add_into(r.grads.conv.w2.data(), cg.dparams.w2.data());
      add_into(r.grads.conv.b2, cg.dparams.b2);
      dx = std::move(cg.dimage.data);
    }
    if (want_input_grads) r.input_grads[b] = std::move(dx);
  }
  return r;
}

double network_loss(const NetworkConfig& cfg, const Parameters& params, BatchNormStats stats,
                    std::span<const Matrix> inputs, const std::vector<int>& labels,
                    BatchNormMode mode) {
  check_inputs(inputs);
  std::vector<std::vector<double>> feats(inputs.size());
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    SampleTape tape;
    feats[b] = forward_sample(cfg, params, inputs[b], tape);
  }
  BatchNormTape bn_tape;
  const Matrix y = batchnorm_forward(stack_rows(feats), params.bn, stats, mode, bn_tape);
  return fc_softmax_xent(y, params.fc, labels).loss;
}

Matrix network_predict(const NetworkConfig& cfg, const Parameters& params,
                       const BatchNormStats& stats, std::span<const Matrix> inputs) {
  check_inputs(inputs);
  std::vector<std::vector<double>> feats(inputs.size());
  for (std::size_t b = 0; b < inputs.size(); ++b) {
    SampleTape tape;
    feats[b] = forward_sample(cfg, params, inputs[b], tape);
  }
  BatchNormStats frozen = stats;
  BatchNormTape bn_tape;
  const Matrix y =
      batchnorm_forward(stack_rows(feats), params.bn, frozen, BatchNormMode::Inference, bn_tape);
  Matrix logits = matmul_nt(y, params.fc.w);
  for (std::size_t b = 0; b < logits.rows(); ++b)
    for (std::size_t c = 0; c < logits.cols(); ++c) logits(b, c) += params.fc.b[c];
  return softmax_rows(logits);
}

std::vector<double> kspd_vector(const Matrix& x, const KernelKind& kernel, const RegPolicy& reg) {
  const auto tape = kernel_forward(x, kernel);
  const auto logm = spdfun_forward(tape.k, log_fn(), reg);
  TriuTape triu;
  return triu_forward(logm.h, triu);
}

}  // namespace kspd
