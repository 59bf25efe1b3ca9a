// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "kspd/cli.hpp"
#include "kspd/gradcheck.hpp"
#include "kspd/io.hpp"
#include "kspd/random.hpp"
#include "kspd/spdfun.hpp"
#include "kspd/training.hpp"

namespace fs = std::filesystem;
using namespace kspd;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double time_limit_s;
  std::function<Outcome()> run;
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", 100.0 * v);
  return buf;
}

Matrix gapped_spd(std::size_t d, Rng& rng) {
  return random_spd_with_spectrum(random_gapped_spectrum(d, rng, 0.5, 5.0, 0.05), rng);
}

Outcome gradcheck_seeds(CheckTarget target, std::uint64_t seeds, double tol) {
  double worst = 0.0;
  std::uint64_t worst_seed = 1;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    const double e = check_module(target, seed, tol).max_rel_error();
    if (e > worst) worst = e, worst_seed = seed;
  }
  return {worst < tol, "max rel error " + sci(worst) + " (seed " + std::to_string(worst_seed) + ")"};
}

Outcome prop1_equivalence() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const auto eig = sym_eigen(gapped_spd(5, rng));
    const Matrix z = random_normal(5, 5, rng);
    const Matrix ref = spdfun_backward(eig, z, log_fn());
    worst = std::max(worst, frobenius_norm(prop1_backward(eig, z) - ref) / frobenius_norm(ref));
  }
  return {worst < 1e-10, "max rel Frobenius diff " + sci(worst)};
}

Outcome dk_adjoint() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const auto eig = sym_eigen(gapped_spd(5, rng));
    const Matrix z = random_symmetric(5, rng);
    const Matrix b = random_symmetric(5, rng);
    const double lhs = inner(spdfun_backward(eig, z, log_fn()), b);
    const double rhs = inner(z, dk_apply(eig, b, log_fn()));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
  }
  return {worst < 1e-10, "max rel gap " + sci(worst)};
}

Outcome loewner_psd() {
  double worst = INFINITY;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Rng rng(1000 + seed);
    std::vector<double> spectrum(8);
    for (double& v : spectrum) v = std::exp(uniform(rng, std::log(1e-3), std::log(1e3)));
    const Matrix g = loewner(spectrum, log_fn()).g;
    worst = std::min(worst, sym_eigen(g).lambdas.back() / frobenius_norm(g));
  }
  return {worst >= -1e-10, "smallest min eig / ||G||_F " + sci(worst)};
}

Outcome exp_log_roundtrip() {
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    std::vector<double> spectrum(8);
    for (double& v : spectrum) v = std::exp(uniform(rng, -3.0, 3.0));
    const Matrix k = random_spd_with_spectrum(spectrum, rng);
    const Matrix h = spdfun_forward(k, log_fn(), RegPolicy{0.0}).h;
    const Matrix back = spdfun_forward(h, exp_fn(), RegPolicy{0.0}).h;
    worst = std::max(worst, frobenius_norm(back - k) / frobenius_norm(k));
  }
  return {worst < 1e-9, "max rel error " + sci(worst)};
}

Outcome covariance_training() {
  DatasetSpec spec;
  spec.variant = DatasetVariant::Covariance;
  spec.dim = 8;
  spec.count = 64;
  spec.train_per_class = 100;
  spec.test_per_class = 50;
  const auto data = generate_synthetic(spec);

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.theta_init = 0.1;
  const auto r = two_stage_train(cfg, data.train);
  const double train_acc = evaluate(r.state, data.train);
  const double test_acc = evaluate(r.state, data.test);
  return {train_acc >= 0.95 && test_acc >= 0.90,
          std::to_string(cfg.total_epochs) + " epochs, train " + pct(train_acc) + ", test " + pct(test_acc)};
}

Outcome kspd_beats_cov() {
  double gauss = 0.0, linear = 0.0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    DatasetSpec spec;
    spec.variant = DatasetVariant::HigherOrder;
    spec.dim = 8;
    spec.count = 256;
    spec.train_per_class = 200;
    spec.test_per_class = 100;
    spec.seed = seed;
    const auto data = generate_synthetic(spec);

    TrainConfig cfg;
    cfg.total_epochs = 60;
    cfg.seed = seed;
    gauss += evaluate(two_stage_train(cfg, data.train).state, data.test) / 3.0;
    cfg.kernel = LinearKernel{};
    linear += evaluate(two_stage_train(cfg, data.train).state, data.test) / 3.0;
  }
  return {gauss >= 0.85 && linear <= 0.65,
          "mean test accuracy gaussian " + pct(gauss) + ", linear " + pct(linear)};
}

int cli(const std::vector<std::string>& args, std::string& out) {
  std::vector<const char*> argv{"kspd"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), o, e);
  out = o.str() + e.str();
  return code;
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("kspd-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  write_file(root / "spec.txt", "variant = covariance\ndim = 8\ncount = 64\ntrain_per_class = 40\ntest_per_class = 20\n");
  write_file(root / "train.txt", "batch_size = 8\n");

  std::string log, out_a, out_b;
  Outcome result;
  if (cli({"gen", "--spec", (root / "spec.txt").string(), "--out", (root / "data").string()}, log) != 0) {
    result = {false, "gen failed: " + log};
  } else if (cli({"train", "--data", (root / "data").string(), "--config", (root / "train.txt").string(), "--out",
                  (root / "a").string()},
                 out_a) != 0 ||
             cli({"train", "--data", (root / "data").string(), "--config", (root / "train.txt").string(), "--out",
                  (root / "b").string()},
                 out_b) != 0) {
    result = {false, "train failed: " + out_a + out_b};
  } else {
    std::size_t files = 0, differing = 0;
    for (const auto& e : fs::directory_iterator(root / "a")) {
      ++files;
      const fs::path twin = root / "b" / e.path().filename();
      if (!fs::exists(twin) || read_file(e.path()) != read_file(twin)) ++differing;
    }
    std::size_t files_b = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(root / "b")) ++files_b;
    const bool same = differing == 0 && files == files_b && out_a == out_b && files > 0;
    result = {same, std::to_string(files) + " files compared, " + std::to_string(differing) +
                        " differ, stdout " + (out_a == out_b ? "identical" : "differs")};
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  return result;
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "kernel gradcheck, 20 seeds, tol 1e-5", 10.0,
       [] { return gradcheck_seeds(CheckTarget::Kernel, 20, 1e-5); }},
      {2, "logm gradcheck, 20 seeds, tol 1e-5", 10.0, [] { return gradcheck_seeds(CheckTarget::Logm, 20, 1e-5); }},
      {3, "closed-form logm backward matches the Loewner form", 5.0, prop1_equivalence},
      {4, "Daleckii-Krein adjoint identity", 0.0, dk_adjoint},
      {5, "Loewner matrix of log is PSD, 50 spectra", 0.0, loewner_psd},
      {6, "exp(log K) round trip, 20 SPD 8x8", 0.0, exp_log_roundtrip},
      {7, "end-to-end gradcheck, tol 1e-4", 60.0, [] { return gradcheck_seeds(CheckTarget::EndToEnd, 1, 1e-4); }},
      {8, "covariance dataset training", 600.0, covariance_training},
      {9, "gaussian kernel beats linear on higher-order data", 1200.0, kspd_beats_cov},
      {10, "train runs are byte-identical", 0.0, determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool passed = o.passed;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f s", secs);
    std::string timing = buf;
    if (c.time_limit_s > 0.0) {
      std::snprintf(buf, sizeof buf, " / limit %.0f s", c.time_limit_s);
      timing += buf;
      if (secs >= c.time_limit_s) {
        passed = false;
        timing += " EXCEEDED";
      }
    }
    if (!passed) ++failures;
    std::cout << (passed ? "PASS" : "FAIL") << "  [" << c.id << "] " << c.name << ": " << o.detail << " (" << timing
              << ")" << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
