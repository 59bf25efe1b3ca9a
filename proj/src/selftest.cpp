#include "kspd/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "kspd/errors.hpp"
#include "kspd/gradcheck.hpp"
#include "kspd/io.hpp"
#include "kspd/random.hpp"
#include "kspd/spdfun.hpp"
#include "kspd/sym_eigen.hpp"
#include "kspd/training.hpp"

namespace kspd {

namespace {

std::string sci(double v) {
  std::ostringstream s;
  s.precision(3);
  s << std::scientific << v;
  return s.str();
}

// Worst value of measure over seeds 1..count must stay below limit.
SelftestResult worst_case(const std::string& name, int count, double limit,
                          const std::function<double(std::uint64_t)>& measure) {
  double worst = 0.0;
  for (int s = 1; s <= count; ++s) worst = std::max(worst, measure(static_cast<std::uint64_t>(s)));
  return {name, worst < limit, "worst " + sci(worst) + " (limit " + sci(limit) + ")"};
}

Matrix gapped_spd(std::size_t d, Rng& rng) {
  return random_spd_with_spectrum(random_gapped_spectrum(d, rng, 0.5, 5.0, 0.05), rng);
}

double eigen_residual(std::uint64_t seed) {
  Rng rng(seed);
  const Matrix s = random_symmetric(8, rng);
  const auto e = sym_eigen(s);
  const auto again = sym_eigen(s);
  if (!(again.u == e.u) || again.lambdas != e.lambdas) return 1.0;
  for (std::size_t i = 1; i < e.lambdas.size(); ++i)
    if (e.lambdas[i] > e.lambdas[i - 1]) return 1.0;
  const double rec = frobenius_norm(e.reconstruct() - s) / frobenius_norm(s);
  const double orth = frobenius_norm(matmul_tn(e.u, e.u) - Matrix::identity(8));
  return std::max(rec, orth);
}

double loewner_psd_violation(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> spectrum(8);
  for (double& v : spectrum) v = std::exp(uniform(rng, std::log(1e-3), std::log(1e3)));
  const Matrix g = loewner(spectrum, log_fn()).g;
  const double min_eig = sym_eigen(g).lambdas.back();
  return std::max(0.0, -min_eig / frobenius_norm(g));
}

double adjoint_gap(std::uint64_t seed) {
  Rng rng(seed);
  const auto eig = sym_eigen(gapped_spd(5, rng));
  const Matrix z = random_symmetric(5, rng);
  const Matrix b = random_symmetric(5, rng);
  const double lhs = inner(spdfun_backward(eig, z, log_fn()), b);
  const double rhs = inner(z, dk_apply(eig, b, log_fn()));
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs));
}

double prop1_gap(std::uint64_t seed) {
  Rng rng(seed);
  const auto eig = sym_eigen(gapped_spd(5, rng));
  const Matrix z = random_normal(5, 5, rng);
  const Matrix a = spdfun_backward(eig, z, log_fn());
  return frobenius_norm(prop1_backward(eig, z) - a) / frobenius_norm(a);
}

double exp_log_gap(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> spectrum(8);
  for (double& v : spectrum) v = std::exp(uniform(rng, std::log(0.1), std::log(10.0)));
  const Matrix k = random_spd_with_spectrum(spectrum, rng);
  const RegPolicy none{0.0};
  const Matrix h = spdfun_forward(k, log_fn(), none).h;
  const Matrix back = spdfun_forward(h, exp_fn(), none).h;
  return frobenius_norm(back - k) / frobenius_norm(k);
}

SelftestResult gradcheck_suite() {
  std::string worst_target;
  double worst = 0.0;
  bool ok = true;
  for (const auto& name : check_target_names()) {
    const CheckTarget t = parse_check_target(name);
    const bool e2e = t == CheckTarget::EndToEnd;
    const int seeds = e2e ? 1 : 3;
    const double tol = e2e ? 1e-4 : 1e-5;
    for (int s = 1; s <= seeds; ++s) {
      const auto r = check_module(t, static_cast<std::uint64_t>(s), tol);
      ok = ok && r.passed();
      if (r.max_rel_error() / tol > worst) {
        worst = r.max_rel_error() / tol;
        worst_target = name + " seed " + std::to_string(s) + ": " + sci(r.max_rel_error());
      }
    }
  }
  return {"gradcheck", ok, "worst " + worst_target};
}

SelftestResult adam_suite() {
  TrainConfig cfg;
  Rng rng(1);
  const ModelState fresh = ModelState::init(cfg, 3, 5, 2, rng);

  ModelState s = fresh;
  adam_step(s, Parameters::zeros_like(s.params), 1e-3);
  const bool zero_ok = s.params.fc.w == fresh.params.fc.w && s.params.theta == fresh.params.theta;

  s = fresh;
  Parameters g = Parameters::zeros_like(s.params);
  g.theta = 1.0;
  adam_step(s, g, 1e-3);
  const double moved = fresh.params.theta - s.params.theta;
  const bool ok = zero_ok && std::abs(moved - 1e-3) < 1e-3 * 1e-7;
  return {"adam", ok, "zero gradient keeps parameters; first step moves theta by " + sci(moved)};
}

SelftestResult dsm_suite() {
  Rng rng(3);
  const Matrix m = random_normal(4, 6, rng);
  const Matrix back = decode_dsm(encode_dsm(m));
  bool rejects = false;
  try {
    decode_dsm("XXXX" + encode_dsm(m).substr(4));
  } catch (const FormatError&) {
    rejects = true;
  }
  return {"dsm", back == m && rejects, "4x6 round trip bit-exact; bad magic rejected"};
}

SelftestResult generator_suite() {
  DatasetSpec spec;
  spec.train_per_class = 8;
  spec.test_per_class = 4;
  spec.count = 16;
  const auto a = generate_synthetic(spec);
  const auto b = generate_synthetic(spec);
  bool same = a.train.y == b.train.y && a.test.y == b.test.y;
  for (std::size_t i = 0; same && i < a.train.size(); ++i) same = a.train.x[i] == b.train.x[i];
  return {"generator", same, "fixed spec regenerates identical data"};
}

}  // namespace

std::vector<SelftestResult> run_selftest(std::ostream& out) {
  std::vector<std::function<SelftestResult()>> suites = {
      [] { return worst_case("eigen", 10, 1e-12, eigen_residual); },
      [] { return worst_case("loewner_psd", 50, 1e-10, loewner_psd_violation); },
      [] { return worst_case("dk_adjoint", 20, 1e-10, adjoint_gap); },
      [] { return worst_case("logm_backward_forms", 20, 1e-10, prop1_gap); },
      [] { return worst_case("exp_log_roundtrip", 20, 1e-9, exp_log_gap); },
      gradcheck_suite,
      adam_suite,
      dsm_suite,
      generator_suite,
  };
  std::vector<SelftestResult> results;
  for (const auto& suite : suites) {
    SelftestResult r;
    try {
      r = suite();
    } catch (const std::exception& e) {
      r = {"(suite)", false, e.what()};
    }
    out << (r.passed ? "[pass] " : "[FAIL] ") << r.name << "  " << r.detail << "\n";
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace kspd
