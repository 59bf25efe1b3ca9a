#include "kspd/training.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kspd/errors.hpp"

namespace kspd {

std::size_t Dataset::num_classes() const {
  int top = -1;
  for (int label : y) top = std::max(top, label);
  return static_cast<std::size_t>(top + 1);
}

void Dataset::validate(const char* what) const {
  if (x.empty()) throw InputError("training", std::string(what) + ": dataset is empty");
  if (x.size() != y.size()) {
    throw InputError("training", std::string(what) + ": " + std::to_string(x.size()) +
                                     " samples but " + std::to_string(y.size()) + " labels");
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].rows() != x[0].rows() || x[i].cols() != x[0].cols()) {
      throw InputError("training", std::string(what) + ": sample " + std::to_string(i) +
                                       " has a different shape from sample 0");
    }
    if (y[i] < 0) throw InputError("training", std::string(what) + ": negative label");
  }
  std::vector<bool> seen(num_classes(), false);
  for (int label : y) seen[static_cast<std::size_t>(label)] = true;
  for (std::size_t c = 0; c < seen.size(); ++c)
    if (!seen[c]) {
      throw InputError("training", std::string(what) + ": labels are not contiguous (class " +
                                       std::to_string(c) + " missing)");
    }
}

DescriptorBlock parse_descriptor_block(const std::string& s) {
  if (s == "none") return DescriptorBlock::None;
  if (s == "conv") return DescriptorBlock::Conv;
  throw ParameterError("training", "descriptor_block must be none or conv, got '" + s + "'");
}

std::string to_string(DescriptorBlock b) { return b == DescriptorBlock::Conv ? "conv" : "none"; }

void TrainConfig::validate() const {
  if (batch_size < 2) throw ParameterError("training", "batch_size must be at least 2");
  if (total_epochs == 0) throw ParameterError("training", "total_epochs must be positive");
  if (stage1_epochs > total_epochs) {
    throw ParameterError("training", "stage1_epochs exceeds total_epochs");
  }
  for (double lr : {lr_stage1, lr_stage2})
    if (!(lr > 0.0) || !std::isfinite(lr)) {
      throw ParameterError("training", "learning rates must be positive and finite");
    }
  if (!(theta_init >= kThetaMin) || !std::isfinite(theta_init)) {
    throw ParameterError("training", "theta_init must be finite and >= 1e-4");
  }
  if (!(reg_rel_eps >= 0.0) || !std::isfinite(reg_rel_eps)) {
    throw ParameterError("training", "reg_rel_eps must be finite and non-negative");
  }
  if (descriptor_block == DescriptorBlock::Conv) {
    if (conv_c1 == 0 || conv_c2 == 0) throw ParameterError("training", "conv channels must be positive");
    if (image_height == 0) throw ParameterError("training", "conv mode needs image_height");
  }
}

NetworkConfig network_config(const TrainConfig& cfg, std::size_t input_cols) {
  NetworkConfig net;
  net.kernel = cfg.kernel;
  if (std::holds_alternative<GaussianKernel>(net.kernel)) net.kernel = GaussianKernel{cfg.theta_init};
  net.reg = RegPolicy{cfg.reg_rel_eps};
  if (cfg.descriptor_block == DescriptorBlock::Conv) {
    if (input_cols % cfg.image_height != 0) {
      throw DimensionError("training", "sample columns " + std::to_string(input_cols) +
                                           " not divisible by image_height " +
                                           std::to_string(cfg.image_height));
    }
    net.use_conv = true;
    net.image_height = cfg.image_height;
    net.image_width = input_cols / cfg.image_height;
  }
  return net;
}

ModelState ModelState::init(const TrainConfig& cfg, std::size_t input_rows,
                            std::size_t input_cols, std::size_t num_classes, Rng& rng) {
  ModelState s;
  s.net = network_config(cfg, input_cols);
  s.input_rows = input_rows;
  s.input_cols = input_cols;
  s.num_classes = num_classes;
  s.params = init_parameters(s.net, input_rows, num_classes, cfg.theta_init, cfg.conv_c1,
                             cfg.conv_c2, rng);
  s.stats = BatchNormStats::init(s.params.bn.gamma.size());
  s.adam_m = Parameters::zeros_like(s.params);
  s.adam_v = Parameters::zeros_like(s.params);
  s.group_steps.assign(param_groups(s.params).size(), 0);
  return s;
}

void adam_step(ModelState& state, const Parameters& grads, double lr, const GroupFilter& trainable,
               const AdamHyper& hyper) {
  Parameters g = grads;
  auto gg = param_groups(g);
  auto pg = param_groups(state.params);
  auto mg = param_groups(state.adam_m);
  auto vg = param_groups(state.adam_v);
  if (gg.size() != pg.size() || state.group_steps.size() != pg.size()) {
    throw DimensionError("training", "adam_step: gradient groups do not match the model");
  }
  for (std::size_t k = 0; k < gg.size(); ++k) {
    if (gg[k].values.size() != pg[k].values.size()) {
      throw DimensionError("training", "adam_step: gradient shape mismatch in " + gg[k].name);
    }
    for (double v : gg[k].values)
      if (!std::isfinite(v)) {
        throw TrainingError("training", "non-finite gradient in parameter group " + gg[k].name);
      }
  }

  for (std::size_t k = 0; k < gg.size(); ++k) {
    if (trainable && !trainable(pg[k].name)) continue;
    const auto t = static_cast<double>(++state.group_steps[k]);
    const double c1 = 1.0 - std::pow(hyper.beta1, t);
    const double c2 = 1.0 - std::pow(hyper.beta2, t);
    auto p = pg[k].values;
    auto m = mg[k].values;
    auto v = vg[k].values;
    auto d = gg[k].values;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * d[i];
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * d[i] * d[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
  }
  state.params.theta = std::max(state.params.theta, kThetaMin);
  ++state.step;
}

bool stage1_trainable(const std::string& group) {
  return group.starts_with("bn.") || group.starts_with("fc.");
}

namespace {

std::size_t argmax_row(const Matrix& probs, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < probs.cols(); ++c)
    if (probs(r, c) > probs(r, best)) best = c;
  return best;
}

}  // namespace

TrainResult two_stage_train(const TrainConfig& cfg, const Dataset& train,
                            const EpochCallback& on_epoch) {
  cfg.validate();
  train.validate("train");
  if (train.num_classes() < 2) throw InputError("training", "training data has a single class");
  if (train.size() < 2) throw InputError("training", "need at least two training samples");

  Rng rng(cfg.seed);
  TrainResult out;
  ModelState& state = out.state;
  state = ModelState::init(cfg, train.x[0].rows(), train.x[0].cols(), train.num_classes(), rng);

  std::vector<Matrix> batch_x;
  std::vector<int> batch_y;
  for (std::size_t epoch = 1; epoch <= cfg.total_epochs; ++epoch) {
    const bool stage1 = epoch <= cfg.stage1_epochs;
    const double lr = stage1 ? cfg.lr_stage1 : cfg.lr_stage2;
    const GroupFilter filter = stage1 ? GroupFilter(stage1_trainable) : GroupFilter();
    const auto order = random_permutation(train.size(), rng);

    double loss_sum = 0.0;
    std::size_t correct = 0, seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      if (stop - start < 2) break;
      batch_x.clear();
      batch_y.clear();
      for (std::size_t i = start; i < stop; ++i) {
        batch_x.push_back(train.x[order[i]]);
        batch_y.push_back(train.y[order[i]]);
      }
      auto r = network_forward_backward(state.net, state.params, state.stats, batch_x, batch_y,
                                        BatchNormMode::Training);
      if (!std::isfinite(r.loss)) {
        throw TrainingError("training", "non-finite loss in epoch " + std::to_string(epoch));
      }
      const std::size_t b = stop - start;
      loss_sum += r.loss * static_cast<double>(b);
      for (std::size_t i = 0; i < b; ++i)
        if (static_cast<int>(argmax_row(r.probs, i)) == batch_y[i]) ++correct;
      seen += b;
      adam_step(state, r.grads, lr, filter);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.stage = stage1 ? 1 : 2;
    m.loss = loss_sum / static_cast<double>(seen);
    m.acc = static_cast<double>(correct) / static_cast<double>(seen);
    m.theta = state.params.theta;
    out.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return out;
}

std::vector<int> predict(const ModelState& state, const Dataset& data) {
  std::vector<int> labels;
  labels.reserve(data.size());
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t stop = std::min(data.size(), start + chunk);
    const std::span<const Matrix> xs(data.x.data() + start, stop - start);
    const Matrix probs = network_predict(state.net, state.params, state.stats, xs);
    for (std::size_t i = 0; i < probs.rows(); ++i) labels.push_back(static_cast<int>(argmax_row(probs, i)));
  }
  return labels;
}

double evaluate(const ModelState& state, const Dataset& data) {
  if (data.empty()) throw InputError("training", "evaluate: dataset is empty");
  const auto labels = predict(state, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == data.y[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// ---------------------------------------------------------------------------

DatasetVariant parse_dataset_variant(const std::string& s) {
  if (s == "covariance") return DatasetVariant::Covariance;
  if (s == "higher_order") return DatasetVariant::HigherOrder;
  throw ParameterError("training", "variant must be covariance or higher_order, got '" + s + "'");
}

std::string to_string(DatasetVariant v) {
  return v == DatasetVariant::HigherOrder ? "higher_order" : "covariance";
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw ParameterError("training", "num_classes must be at least 2");
  if (variant == DatasetVariant::HigherOrder && num_classes != 2) {
    throw ParameterError("training", "the higher_order variant has exactly two classes");
  }
  if (train_per_class == 0) throw ParameterError("training", "train_per_class must be positive");
  if (dim < 2 || count < 1) throw ParameterError("training", "need dim >= 2 and count >= 1");
  if (!(spectrum_ratio >= 1.0) || !std::isfinite(spectrum_ratio)) {
    throw ParameterError("training", "spectrum_ratio must be finite and >= 1");
  }
}

namespace {

// Q diag(values) Qᵀ
Matrix frame_product(const Matrix& q, const std::vector<double>& values) {
  Matrix scaled = q;
  for (std::size_t i = 0; i < q.rows(); ++i)
    for (std::size_t j = 0; j < q.cols(); ++j) scaled(i, j) *= values[j];
  return symmetrize(matmul_nt(scaled, q));
}

Matrix signed_permutation(std::size_t d, Rng& rng) {
  const auto perm = random_permutation(d, rng);
  Matrix p(d, d);
  for (std::size_t j = 0; j < d; ++j) p(perm[j], j) = (rng() & 1U) ? -1.0 : 1.0;
  return p;
}

std::vector<double> log_uniform_spectrum(std::size_t d, Rng& rng, double lo, double hi) {
  std::vector<double> s(d);
  for (double& v : s) v = std::exp(uniform(rng, std::log(lo), std::log(hi)));
  return s;
}

Matrix squared_distances(const Matrix& x) {
  const Matrix a = matmul_nt(x, x);
  Matrix e(a.rows(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.rows(); ++j) e(i, j) = std::max(0.0, a(i, i) + a(j, j) - 2.0 * a(i, j));
  return e;
}

struct ClassSamples {
  std::vector<std::vector<Matrix>> per_class;
};

ClassSamples draw_covariance(const DatasetSpec& spec, Rng& rng) {
  const std::size_t total = spec.train_per_class + spec.test_per_class;
  ClassSamples out;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    auto spectrum = log_uniform_spectrum(spec.dim, rng, 0.2, 5.0);
    for (double& v : spectrum) v = std::sqrt(v);
    const Matrix root = random_spd_with_spectrum(spectrum, rng);
    std::vector<Matrix> xs;
    for (std::size_t i = 0; i < total; ++i) xs.push_back(matmul(root, random_normal(spec.dim, spec.count, rng)));
    out.per_class.push_back(std::move(xs));
  }
  return out;
}

ClassSamples draw_higher_order(const DatasetSpec& spec, Rng& rng) {
  const std::size_t d = spec.dim;
  const std::size_t total = spec.train_per_class + spec.test_per_class;
  // Geometric spectrum with unit mean.
  std::vector<double> lambda(d);
  double mean = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    lambda[j] = std::pow(spec.spectrum_ratio, -static_cast<double>(j) / static_cast<double>(d - 1));
    mean += lambda[j] / static_cast<double>(d);
  }

  ClassSamples out;
  for (std::size_t c = 0; c < 2; ++c) {
    std::vector<Matrix> xs;
    Matrix frame;
    for (std::size_t i = 0; i < total; ++i) {
      const std::size_t shift = i % d;
      if (shift == 0) frame = c == 0 ? random_orthogonal(d, rng) : signed_permutation(d, rng);
      std::vector<double> root(d);
      for (std::size_t j = 0; j < d; ++j) root[j] = std::sqrt(lambda[(j + shift) % d] / mean);
      xs.push_back(matmul(frame_product(frame, root), random_normal(d, spec.count, rng)));
    }
    out.per_class.push_back(std::move(xs));
  }
  return out;
}

double relative_gap(const Matrix& a, const Matrix& b) {
  return frobenius_norm(a - b) / frobenius_norm(a);
}

void measure(const ClassSamples& s, GeneratorReport& report) {
  const std::size_t d = s.per_class[0][0].rows();
  const double n = static_cast<double>(s.per_class[0][0].cols());

  double e_sum = 0.0;
  std::size_t e_count = 0;
  for (const auto& x : s.per_class[0]) {
    const Matrix e = squared_distances(x);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j)
        if (i != j) {
          e_sum += e(i, j);
          ++e_count;
        }
  }
  const double theta = 2.0 * static_cast<double>(e_count) / e_sum;

  std::vector<Matrix> moment, kernel;
  for (const auto& xs : s.per_class) {
    Matrix m(d, d), k(d, d);
    for (const auto& x : xs) {
      Matrix a = matmul_nt(x, x);
      a *= 1.0 / (n * static_cast<double>(xs.size()));
      m += a;
      Matrix kx = kernel_forward(x, GaussianKernel{theta}).k;
      kx *= 1.0 / static_cast<double>(xs.size());
      k += kx;
    }
    moment.push_back(std::move(m));
    kernel.push_back(std::move(k));
  }
  report.kernel_theta = theta;
  report.moment_gap = relative_gap(moment[0], moment[1]);
  report.kernel_gap = relative_gap(kernel[0], kernel[1]);
}

SyntheticData assemble(const DatasetSpec& spec, ClassSamples samples) {
  SyntheticData out;
  for (std::size_t c = 0; c < samples.per_class.size(); ++c) {
    auto& xs = samples.per_class[c];
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Dataset& target = i < spec.train_per_class ? out.train : out.test;
      target.x.push_back(std::move(xs[i]));
      target.y.push_back(static_cast<int>(c));
    }
  }
  return out;
}

}  // namespace

SyntheticData generate_synthetic(const DatasetSpec& spec) {
  spec.validate();
  constexpr std::size_t max_attempts = 5;
  for (std::size_t attempt = 0;; ++attempt) {
    const std::uint64_t seed = spec.seed + attempt * 0x9E3779B97F4A7C15ULL;
    Rng rng(seed);
    const bool higher = spec.variant == DatasetVariant::HigherOrder;
    ClassSamples samples = higher ? draw_higher_order(spec, rng) : draw_covariance(spec, rng);

    GeneratorReport report;
    report.attempts = attempt + 1;
    report.seed_used = seed;
    measure(samples, report);
    if (higher) {
      report.checks_passed =
          report.moment_gap < kMaxMomentGap && report.kernel_gap > kMinKernelGap;
    }
    if (report.checks_passed || attempt + 1 == max_attempts) {
      SyntheticData out = assemble(spec, std::move(samples));
      out.report = report;
      return out;
    }
  }
}

}  // namespace kspd
