#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace kspd {

using ScalarObjective = std::function<double(std::span<const double>)>;

inline constexpr double kDefaultFdStep = 1e-5;

/// Central differences (f(p + h_i e_i) − f(p − h_i e_i)) / (2 h_i) with
/// h_i = rel_step · max(1, |p_i|). Throws OracleError naming the coordinate
/// when f is not finite.
std::vector<double> fd_gradient(const ScalarObjective& f, std::span<const double> p,
                                double rel_step = kDefaultFdStep);

/// |a − n| / (max(|a|, |n|) + 1e-12)
double relative_error(double analytic, double numeric);

struct GroupReport {
  std::string group;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  std::size_t argmax = 0;
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
};

struct FdReport {
  std::string target;
  std::uint64_t seed = 0;
  double step = kDefaultFdStep;
  double tol = 0.0;
  std::vector<GroupReport> groups;

  double max_rel_error() const;
  bool passed() const { return max_rel_error() < tol; }

  /// Aligned plain-text table.
  std::string render_text() const;
  /// One CSV row per group: target,seed,group,size,max_rel_error,argmax,analytic,numeric,step,pass
  std::string render_csv(bool header = true) const;
};

GroupReport compare_gradients(const std::string& group, std::span<const double> analytic,
                              std::span<const double> numeric);

enum class CheckTarget { Kernel, Logm, ConvBlock, L2Norm, Triu, BatchNorm, Fc, EndToEnd };

CheckTarget parse_check_target(const std::string& name);
std::string to_string(CheckTarget t);
const std::vector<std::string>& check_target_names();

/// Builds the seeded instance for target, compares the analytic backward to
/// fd_gradient, and reports per parameter group.
FdReport check_module(CheckTarget target, std::uint64_t seed, double tol,
                      double rel_step = kDefaultFdStep);

}  // namespace kspd
