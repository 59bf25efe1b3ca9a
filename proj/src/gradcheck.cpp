#include "kspd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "kspd/errors.hpp"
#include "kspd/kernel_layer.hpp"
#include "kspd/layers.hpp"
#include "kspd/network.hpp"
#include "kspd/random.hpp"
#include "kspd/spdfun.hpp"

namespace kspd {

std::vector<double> fd_gradient(const ScalarObjective& f, std::span<const double> p,
                                double rel_step) {
  std::vector<double> work(p.begin(), p.end());
  std::vector<double> grad(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(p[i]));
    work[i] = p[i] + h;
    const double fp = f(work);
    work[i] = p[i] - h;
    const double fm = f(work);
    work[i] = p[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw OracleError("gradcheck", "objective is not finite at coordinate " + std::to_string(i));
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::max(std::abs(analytic), std::abs(numeric)) + 1e-12);
}

GroupReport compare_gradients(const std::string& group, std::span<const double> analytic,
                              std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) {
    throw DimensionError("gradcheck", "gradient length mismatch in group " + group);
  }
  GroupReport r;
  r.group = group;
  r.size = analytic.size();
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double e = relative_error(analytic[i], numeric[i]);
    if (e > r.max_rel_error || i == 0) {
      r.max_rel_error = e;
      r.argmax = i;
      r.analytic_at_max = analytic[i];
      r.numeric_at_max = numeric[i];
    }
  }
  return r;
}

double FdReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& g : groups) m = std::max(m, g.max_rel_error);
  return m;
}

std::string FdReport::render_text() const {
  std::size_t width = 5;
  for (const auto& g : groups) width = std::max(width, g.group.size());
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "gradcheck target=%s seed=%llu step=%.1e tol=%.1e\n",
                target.c_str(), static_cast<unsigned long long>(seed), step, tol);
  os << line;
  std::snprintf(line, sizeof line, "  %-*s %6s %12s %6s %14s %14s  %s\n", static_cast<int>(width),
                "group", "size", "max_rel_err", "at", "analytic", "numeric", "status");
  os << line;
  for (const auto& g : groups) {
    std::snprintf(line, sizeof line, "  %-*s %6zu %12.3e %6zu %14.6e %14.6e  %s\n",
                  static_cast<int>(width), g.group.c_str(), g.size, g.max_rel_error, g.argmax,
                  g.analytic_at_max, g.numeric_at_max, g.max_rel_error < tol ? "ok" : "FAIL");
    os << line;
  }
  std::snprintf(line, sizeof line, "  result: %s (max relative error %.3e)\n",
                passed() ? "PASS" : "FAIL", max_rel_error());
  os << line;
  return os.str();
}

std::string FdReport::render_csv(bool header) const {
  std::ostringstream os;
  if (header) os << "target,seed,group,size,max_rel_error,argmax,analytic,numeric,step,pass\n";
  char line[512];
  for (const auto& g : groups) {
    std::snprintf(line, sizeof line, "%s,%llu,%s,%zu,%.6e,%zu,%.12e,%.12e,%.3e,%d\n",
                  target.c_str(), static_cast<unsigned long long>(seed), g.group.c_str(), g.size,
                  g.max_rel_error, g.argmax, g.analytic_at_max, g.numeric_at_max, step,
                  g.max_rel_error < tol ? 1 : 0);
    os << line;
  }
  return os.str();
}

namespace {

const std::vector<std::pair<CheckTarget, std::string>>& target_table() {
  static const std::vector<std::pair<CheckTarget, std::string>> table = {
      {CheckTarget::Kernel, "kernel"},     {CheckTarget::Logm, "logm"},
      {CheckTarget::ConvBlock, "convblock"}, {CheckTarget::L2Norm, "l2norm"},
      {CheckTarget::Triu, "triu"},         {CheckTarget::BatchNorm, "batchnorm"},
      {CheckTarget::Fc, "fc"},             {CheckTarget::EndToEnd, "end_to_end"}};
  return table;
}

using Groups = std::vector<std::vector<double>>;

// A differentiable instance: named flat parameter groups, the objective over
// all groups, and the analytic gradient per group.
struct Instance {
  std::vector<std::string> names;
  Groups values;
  std::function<double(const Groups&)> objective;
  Groups analytic;
};

std::vector<double> flat(const Matrix& m) { return {m.data().begin(), m.data().end()}; }

Matrix unflat(const std::vector<double>& v, std::size_t rows, std::size_t cols) {
  return Matrix(rows, cols, v);
}

// Free (upper-triangular) coordinates of a symmetric matrix.
std::vector<double> sym_free(const Matrix& s) {
  std::vector<double> v;
  for (std::size_t i = 0; i < s.rows(); ++i)
    for (std::size_t j = i; j < s.cols(); ++j) v.push_back(s(i, j));
  return v;
}

Matrix sym_from_free(const std::vector<double>& v, std::size_t d) {
  Matrix s(d, d);
  std::size_t k = 0;
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      s(i, j) = v[k];
      s(j, i) = v[k];
      ++k;
    }
  return s;
}

// dJ/d(free coordinate) given the full-matrix gradient G: diagonal G_ii,
// off-diagonal G_ij + G_ji.
std::vector<double> sym_free_grad(const Matrix& g) {
  std::vector<double> v;
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = i; j < g.cols(); ++j) v.push_back(i == j ? g(i, i) : g(i, j) + g(j, i));
  return v;
}

Instance kernel_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 4 + seed % 3;
  const std::size_t n = 6 + seed % 5;
  const Matrix x = random_normal(d, n, rng, 0.3);
  const Matrix w = random_symmetric(d, rng);
  const double theta = 0.5;

  Instance inst;
  inst.names = {"x", "theta"};
  inst.values = {flat(x), {theta}};
  inst.objective = [=](const Groups& v) {
    return inner(w, kernel_forward(unflat(v[0], d, n), GaussianKernel{v[1][0]}).k);
  };
  const auto g = kernel_backward(kernel_forward(x, GaussianKernel{theta}), w);
  inst.analytic = {flat(g.dx), {g.dtheta}};
  return inst;
}

Instance logm_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 5;
  const auto spectrum = random_gapped_spectrum(d, rng, 0.5, 5.0, 0.05);
  const Matrix k = random_spd_with_spectrum(spectrum, rng);
  const Matrix w = random_symmetric(d, rng);
  const RegPolicy reg;

  Instance inst;
  inst.names = {"k"};
  inst.values = {sym_free(k)};
  inst.objective = [=](const Groups& v) {
    return inner(w, spdfun_forward(sym_from_free(v[0], d), log_fn(), reg).h);
  };
  const auto fwd = spdfun_forward(k, log_fn(), reg);
  const Matrix dk = regularize_spd_backward(spdfun_backward(fwd.eig, w, log_fn()), reg);
  inst.analytic = {sym_free_grad(dk)};
  return inst;
}

Instance convblock_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t c = 2, h = 8, wd = 8, c1 = 3, c2 = 4;
  const Matrix img = random_normal(c, h * wd, rng);
  ConvBlockParams params = ConvBlockParams::init(c, c1, c2, rng);
  for (double& b : params.b1) b = 0.1 * normal(rng);
  for (double& b : params.b2) b = 0.1 * normal(rng);
  const Matrix w = random_normal(c2, (h / 2) * (wd / 2), rng);

  auto build = [=](const Groups& v) {
    ConvBlockParams p;
    p.w1 = unflat(v[1], c1, c * 9);
    p.b1 = v[2];
    p.w2 = unflat(v[3], c2, c1 * 9);
    p.b2 = v[4];
    return std::pair{Image{h, wd, unflat(v[0], c, h * wd)}, p};
  };

  Instance inst;
  inst.names = {"image", "w1", "b1", "w2", "b2"};
  inst.values = {flat(img), flat(params.w1), params.b1, flat(params.w2), params.b2};
  inst.objective = [=](const Groups& v) {
    auto [image, p] = build(v);
    return inner(w, convblock_forward(image, p).x);
  };
  auto out = convblock_forward(Image{h, wd, img}, params);
  auto g = convblock_backward(out.tape, params, w);
  inst.analytic = {flat(g.dimage.data), flat(g.dparams.w1), g.dparams.b1, flat(g.dparams.w2),
                   g.dparams.b2};
  return inst;
}

Instance l2norm_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 4, n = 6;
  const Matrix x = random_normal(d, n, rng);
  const Matrix w = random_normal(d, n, rng);
  Instance inst;
  inst.names = {"x"};
  inst.values = {flat(x)};
  inst.objective = [=](const Groups& v) {
    L2NormTape tape;
    return inner(w, l2norm_forward(unflat(v[0], d, n), tape));
  };
  L2NormTape tape;
  l2norm_forward(x, tape);
  inst.analytic = {flat(l2norm_backward(tape, w))};
  return inst;
}

Instance triu_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t d = 4;
  const Matrix h = random_symmetric(d, rng);
  std::vector<double> w(triu_length(d));
  for (double& v : w) v = normal(rng);
  Instance inst;
  inst.names = {"h"};
  inst.values = {sym_free(h)};
  inst.objective = [=](const Groups& v) {
    TriuTape tape;
    const auto out = triu_forward(sym_from_free(v[0], d), tape);
    double s = 0.0;
    for (std::size_t k = 0; k < out.size(); ++k) s += w[k] * out[k];
    return s;
  };
  TriuTape tape;
  triu_forward(h, tape);
  inst.analytic = {sym_free_grad(triu_backward(tape, w))};
  return inst;
}

Instance batchnorm_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t batch = 4, f = 5;
  const Matrix v = random_normal(batch, f, rng);
  BatchNormParams params = BatchNormParams::init(f);
  for (double& g : params.gamma) g = 1.0 + 0.3 * normal(rng);
  for (double& b : params.beta) b = 0.3 * normal(rng);
  const Matrix w = random_normal(batch, f, rng);
  const BatchNormStats stats = BatchNormStats::init(f);

  Instance inst;
  inst.names = {"v", "gamma", "beta"};
  inst.values = {flat(v), params.gamma, params.beta};
  inst.objective = [=](const Groups& g) {
    BatchNormStats s = stats;
    BatchNormTape tape;
    return inner(w, batchnorm_forward(unflat(g[0], batch, f), {g[1], g[2]}, s,
                                      BatchNormMode::Training, tape));
  };
  BatchNormStats s = stats;
  BatchNormTape tape;
  batchnorm_forward(v, params, s, BatchNormMode::Training, tape);
  auto g = batchnorm_backward(tape, w);
  inst.analytic = {flat(g.dv), g.dgamma, g.dbeta};
  return inst;
}

Instance fc_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t batch = 3, f = 5, classes = 4;
  const Matrix v = random_normal(batch, f, rng);
  FcParams params = FcParams::init(classes, f, rng);
  for (double& b : params.b) b = 0.3 * normal(rng);
  std::vector<int> labels(batch);
  for (int& y : labels) y = static_cast<int>(std::uniform_int_distribution<int>(0, classes - 1)(rng));

  Instance inst;
  inst.names = {"v", "w", "b"};
  inst.values = {flat(v), flat(params.w), params.b};
  inst.objective = [=](const Groups& g) {
    return fc_softmax_xent(unflat(g[0], batch, f), {unflat(g[1], classes, f), g[2]}, labels).loss;
  };
  auto r = fc_softmax_xent(v, params, labels);
  inst.analytic = {flat(r.dv), flat(r.dw), r.db};
  return inst;
}

Instance end_to_end_instance(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t channels = 2, h = 8, w = 8, c1 = 4, c2 = 6, classes = 3;
  NetworkConfig cfg;
  cfg.kernel = GaussianKernel{0.5};
  cfg.use_conv = true;
  cfg.image_height = h;
  cfg.image_width = w;

  Parameters params = init_parameters(cfg, channels, classes, 0.5, c1, c2, rng);
  // Positive biases keep every conv channel active.
  // Positive biases keep every conv channel active.
  for (double& b : params.conv.b1) b = 1.0 + 0.1 * normal(rng);
  for (double& b : params.conv.b2) b = 1.0 + 0.1 * normal(rng);
  for (double& g : params.bn.gamma) g = 1.0 + 0.3 * normal(rng);
  for (double& b : params.bn.beta) b = 0.3 * normal(rng);
  for (double& b : params.fc.b) b = 0.3 * normal(rng);

  constexpr std::size_t batch = 4;
  std::vector<Matrix> images;
  for (std::size_t b = 0; b < batch; ++b) images.push_back(random_normal(channels, h * w, rng));
  const std::vector<int> labels = {0, 1, 2, 0};
  const BatchNormStats stats = BatchNormStats::init(params.bn.gamma.size());

  const Parameters shape = params;
  auto rebuild = [=](const Groups& v) {
    Parameters p = shape;
    auto groups = param_groups(p);
    for (std::size_t g = 0; g < groups.size(); ++g)
      std::copy(v[g + batch].begin(), v[g + batch].end(), groups[g].values.begin());
    std::vector<Matrix> imgs;
    for (std::size_t b = 0; b < batch; ++b) imgs.push_back(unflat(v[b], channels, h * w));
    return std::pair{p, imgs};
  };

  Instance inst;
  for (std::size_t b = 0; b < batch; ++b) {
    inst.names.push_back("image" + std::to_string(b));
    inst.values.push_back(flat(images[b]));
  }
  for (auto& g : param_groups(params)) {
    inst.names.push_back(g.name);
    inst.values.emplace_back(g.values.begin(), g.values.end());
  }
  inst.objective = [=](const Groups& v) {
    auto [p, imgs] = rebuild(v);
    return network_loss(cfg, p, stats, imgs, labels, BatchNormMode::Training);
  };

  BatchNormStats s = stats;
  auto r = network_forward_backward(cfg, params, s, images, labels, BatchNormMode::Training, true);
  for (const auto& g : r.input_grads) inst.analytic.push_back(flat(g));
  for (auto& g : param_groups(r.grads)) inst.analytic.emplace_back(g.values.begin(), g.values.end());
  return inst;
}

Instance build_instance(CheckTarget target, std::uint64_t seed) {
  switch (target) {
    case CheckTarget::Kernel: return kernel_instance(seed);
    case CheckTarget::Logm: return logm_instance(seed);
    case CheckTarget::ConvBlock: return convblock_instance(seed);
    case CheckTarget::L2Norm: return l2norm_instance(seed);
    case CheckTarget::Triu: return triu_instance(seed);
    case CheckTarget::BatchNorm: return batchnorm_instance(seed);
    case CheckTarget::Fc: return fc_instance(seed);
    case CheckTarget::EndToEnd: return end_to_end_instance(seed);
  }
  throw UsageError("gradcheck", "unknown target");
}

}  // namespace

CheckTarget parse_check_target(const std::string& name) {
  for (const auto& [t, n] : target_table())
    if (n == name) return t;
  std::string known;
  for (const auto& n : check_target_names()) known += (known.empty() ? "" : ", ") + n;
  throw UsageError("gradcheck", "unknown target '" + name + "' (expected one of " + known + ")");
}

std::string to_string(CheckTarget t) {
  for (const auto& [tt, n] : target_table())
    if (tt == t) return n;
  return "unknown";
}

const std::vector<std::string>& check_target_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> v;
    for (const auto& [t, n] : target_table()) v.push_back(n);
    return v;
  }();
  return names;
}

FdReport check_module(CheckTarget target, std::uint64_t seed, double tol, double rel_step) {
  const Instance inst = build_instance(target, seed);
  FdReport report;
  report.target = to_string(target);
  report.seed = seed;
  report.step = rel_step;
  report.tol = tol;
  for (std::size_t g = 0; g < inst.values.size(); ++g) {
    if (inst.values[g].empty()) continue;
    auto objective = [&](std::span<const double> p) {
      Groups v = inst.values;
      v[g].assign(p.begin(), p.end());
      return inst.objective(v);
    };
    const auto numeric = fd_gradient(objective, inst.values[g], rel_step);
    report.groups.push_back(compare_gradients(inst.names[g], inst.analytic[g], numeric));
  }
  return report;
}

}  // namespace kspd
