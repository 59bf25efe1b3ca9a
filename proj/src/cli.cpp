#include "kspd/cli.hpp"

#include <CLI11.hpp>

#include <sstream>

#include "kspd/errors.hpp"
#include "kspd/gradcheck.hpp"
#include "kspd/io.hpp"
#include "kspd/network.hpp"
#include "kspd/selftest.hpp"
#include "kspd/spdfun.hpp"
#include "kspd/training.hpp"

namespace kspd {

namespace {

int cmd_selftest(std::ostream& out) {
  bool ok = true;
  for (const auto& r : run_selftest(out)) ok = ok && r.passed;
  out << (ok ? "selftest: all suites passed\n" : "selftest: FAILED\n");
  return ok ? kExitOk : kExitFailure;
}

int cmd_gradcheck(const std::string& target, std::uint64_t seed, double tol, double step, bool csv,
                  std::ostream& out) {
  const auto report = check_module(parse_check_target(target), seed, tol, step);
  out << (csv ? report.render_csv() : report.render_text());
  return report.passed() ? kExitOk : kExitFailure;
}

int cmd_gen(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
  const DatasetSpec spec = parse_dataset_spec(read_file(spec_path), spec_path);
  const auto data = generate_synthetic(spec);
  save_dataset(out_dir, data.train, data.test);
  const auto& r = data.report;
  std::ostringstream meta;
  meta << "variant = " << to_string(spec.variant) << "\n"
       << "attempts = " << r.attempts << "\n"
       << "seed_used = " << r.seed_used << "\n"
       << "moment_gap = " << format_double(r.moment_gap) << "\n"
       << "kernel_gap = " << format_double(r.kernel_gap) << "\n"
       << "kernel_theta = " << format_double(r.kernel_theta) << "\n"
       << "checks_passed = " << (r.checks_passed ? "true" : "false") << "\n";
  write_file(fs::path(out_dir) / "generator.txt", meta.str());
  out << "wrote " << data.train.size() << " train and " << data.test.size() << " test samples to "
      << out_dir << "\n"
      << meta.str();
  if (!r.checks_passed) out << "warning: generator checks did not pass after " << r.attempts << " attempts\n";
  return kExitOk;
}

int cmd_train(const std::string& data_dir, const std::string& config_path, const std::string& out_dir,
              std::ostream& out) {
  const TrainConfig cfg = parse_train_config(read_file(config_path), config_path);
  const SplitData data = load_dataset(data_dir);
  out << "epoch,stage,loss,acc,theta\n";
  const auto result = two_stage_train(cfg, data.train, [&](const EpochMetrics& m) {
    out << render_metrics_line(m) << std::flush;
  });
  save_model(out_dir, result.state);
  write_file(fs::path(out_dir) / kMetricsName, render_metrics(result.metrics));
  write_file(fs::path(out_dir) / "config.txt", render_train_config(cfg));
  out << "train_accuracy = " << format_double(evaluate(result.state, data.train)) << "\n";
  if (!data.test.empty()) out << "test_accuracy = " << format_double(evaluate(result.state, data.test)) << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& data_dir, const std::string& model_dir, std::ostream& out) {
  const ModelState state = load_model(model_dir);
  const SplitData data = load_dataset(data_dir);
  for (const auto* d : {&data.train, &data.test}) {
    if (d->empty()) continue;
    if (d->x[0].rows() != state.input_rows || d->x[0].cols() != state.input_cols) {
      throw DimensionError("io", "samples do not match the model's input shape");
    }
    out << (d == &data.train ? "train_accuracy = " : "test_accuracy = ")
        << format_double(evaluate(state, *d)) << "\n";
  }
  return kExitOk;
}

int cmd_extract(const std::string& data_dir, const std::string& kernel, double reg,
                const std::string& out_dir, std::ostream& out) {
  const KernelKind kind = parse_kernel_kind(kernel);
  const fs::path in(data_dir), dst(out_dir);
  const auto entries = read_manifest(in);
  for (const auto& e : entries) write_dsm(dst / e.path, row_matrix(kspd_vector(read_dsm(in / e.path), kind, RegPolicy{reg})));
  write_file(dst / kManifestName, render_manifest(entries));
  out << "extracted " << entries.size() << " vectors (" << to_string(kind) << ") to " << out_dir << "\n";
  return kExitOk;
}

int cmd_logm(const std::string& in_path, const std::string& out_path, double reg, std::ostream& out) {
  const Matrix k = read_dsm(in_path);
  write_dsm(out_path, spdfun_forward(k, log_fn(), RegPolicy{reg}).h);
  out << "wrote " << out_path << "\n";
  return kExitOk;
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Deep kernel SPD descriptors: matrix functions, gradients and training"};
  app.name("kspd");
  app.require_subcommand(1);

  auto* selftest = app.add_subcommand("selftest", "Run the invariant suites");

  std::string target;
  std::uint64_t seed = 1;
  double tol = 1e-5, step = kDefaultFdStep;
  bool csv = false;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of one module");
  gradcheck->add_option("--target", target, "kernel, logm, convblock, l2norm, triu, batchnorm, fc, end_to_end")
      ->required();
  gradcheck->add_option("--seed", seed, "Instance seed")->capture_default_str();
  gradcheck->add_option("--tol", tol, "Relative error tolerance")->capture_default_str();
  gradcheck->add_option("--step", step, "Relative finite-difference step")->capture_default_str();
  gradcheck->add_flag("--csv", csv, "CSV output");

  std::string spec_path, out_dir;
  auto* gen = app.add_subcommand("gen", "Write a synthetic dataset");
  gen->add_option("--spec", spec_path, "Dataset spec (key = value)")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();

  std::string data_dir, config_path, model_dir;
  auto* train = app.add_subcommand("train", "Two-stage training");
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--config", config_path, "Training config (key = value)")->required();
  train->add_option("--out", model_dir, "Model directory")->required();

  auto* eval = app.add_subcommand("eval", "Accuracy of a trained model");
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--model", model_dir, "Model directory")->required();

  std::string kernel;
  double extract_reg = RegPolicy{}.rel_eps;
  auto* extract = app.add_subcommand("extract", "KSPD vector triu(log K) per sample");
  extract->add_option("--data", data_dir, "Dataset directory")->required();
  extract->add_option("--kernel", kernel, "gaussian[:theta], linear or linear:centered")->required();
  extract->add_option("--out", out_dir, "Output directory")->required();
  extract->add_option("--reg", extract_reg, "Relative regularization")->capture_default_str();

  std::string in_path, out_path;
  double logm_reg = 0.0;
  auto* logm = app.add_subcommand("logm", "Matrix logarithm of one SPD matrix");
  logm->add_option("--in", in_path, "Input DSM")->required();
  logm->add_option("--out", out_path, "Output DSM")->required();
  logm->add_option("--reg", logm_reg, "Relative regularization")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*selftest) return cmd_selftest(out);
    if (*gradcheck) return cmd_gradcheck(target, seed, tol, step, csv, out);
    if (*gen) return cmd_gen(spec_path, out_dir, out);
    if (*train) return cmd_train(data_dir, config_path, model_dir, out);
    if (*eval) return cmd_eval(data_dir, model_dir, out);
    if (*extract) return cmd_extract(data_dir, kernel, extract_reg, out_dir, out);
    if (*logm) return cmd_logm(in_path, out_path, logm_reg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace kspd
