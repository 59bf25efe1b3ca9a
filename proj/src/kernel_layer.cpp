#include "kspd/kernel_layer.hpp"

#include <cmath>
#include <sstream>

#include "kspd/errors.hpp"

namespace kspd {

namespace {

Matrix center_rows(const Matrix& x) {
  Matrix c = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto r = c.row(i);
    double mean = 0.0;
    for (double v : r) mean += v;
    mean /= static_cast<double>(r.size());
    for (double& v : r) v -= mean;
  }
  return c;
}

}  // namespace

KernelKind parse_kernel_kind(const std::string& text) {
  if (text == "linear") return LinearKernel{false};
  if (text == "linear:centered") return LinearKernel{true};
  if (text == "gaussian") return GaussianKernel{};
  if (text.rfind("gaussian:", 0) == 0) {
    const std::string num = text.substr(9);
    std::size_t used = 0;
    double theta = 0.0;
    try {
      theta = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size()) {
      throw UsageError("kernel", "cannot parse gaussian width '" + num + "'");
    }
    if (!(theta > 0.0) || !std::isfinite(theta)) {
      throw ParameterError("kernel", "gaussian theta must be positive, got " + num);
    }
    return GaussianKernel{theta};
  }
  throw UsageError("kernel", "unknown kernel '" + text + "' (expected gaussian:<theta> or linear)");
}

std::string to_string(const KernelKind& kind) {
  if (const auto* g = std::get_if<GaussianKernel>(&kind)) {
    std::ostringstream os;
    os.precision(17);
    os << "gaussian:" << g->theta;
    return os.str();
  }
  return std::get<LinearKernel>(kind).centered ? "linear:centered" : "linear";
}

KernelTape kernel_forward(const Matrix& x, const KernelKind& kind) {
  if (x.empty()) throw InputError("kernel", "descriptor matrix must be non-empty");
  if (!x.all_finite()) throw InputError("kernel", "descriptor matrix has non-finite entries");

  KernelTape tape;
  tape.kind = kind;

  if (const auto* lin = std::get_if<LinearKernel>(&kind)) {
    tape.x = lin->centered ? center_rows(x) : x;
    tape.a = matmul_nt(tape.x, tape.x);
    tape.k = tape.a;
    return tape;
  }

  const double theta = std::get<GaussianKernel>(kind).theta;
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw ParameterError("kernel", "gaussian theta must be positive");
  }
  const std::size_t d = x.rows();
  tape.x = x;
  tape.a = matmul_nt(x, x);
  tape.e = Matrix(d, d);
  tape.k = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double e = tape.a(i, i) + tape.a(j, j) - 2.0 * tape.a(i, j);
      tape.e(i, j) = e > 0.0 ? e : 0.0;
      tape.k(i, j) = std::exp(-theta * tape.e(i, j));
    }
  }
  return tape;
}

KernelGradients kernel_backward(const KernelTape& tape, const Matrix& dj_dk) {
  const std::size_t d = tape.k.rows();
  if (dj_dk.rows() != d || dj_dk.cols() != d) {
    throw DimensionError("kernel", "dJ/dK must be " + std::to_string(d) + "x" + std::to_string(d));
  }
  const Matrix z = symmetrize(dj_dk);
  KernelGradients g;

  if (const auto* lin = std::get_if<LinearKernel>(&tape.kind)) {
    g.dx = matmul(z + transpose(z), tape.x);
    if (lin->centered) g.dx = center_rows(g.dx);
    return g;
  }

  const double theta = std::get<GaussianKernel>(tape.kind).theta;
  const Matrix dj_de = hadamard(tape.k * (-theta), z);

  const Matrix s = dj_de + transpose(dj_de);
  Matrix dj_da = dj_de * -2.0;
  for (std::size_t i = 0; i < d; ++i) {
    double row_sum = 0.0;
    for (double v : s.row(i)) row_sum += v;
    dj_da(i, i) += row_sum;
  }

  g.dx = matmul(dj_da + transpose(dj_da), tape.x);
  g.dtheta = -inner(z, hadamard(tape.k, tape.e));
  return g;
}

}  // namespace kspd
