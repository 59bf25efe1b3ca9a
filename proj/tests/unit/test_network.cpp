#include <doctest.h>

#include <cmath>

#include "kspd/errors.hpp"
#include "kspd/gradcheck.hpp"
#include "kspd/network.hpp"
#include "kspd/random.hpp"
#include "test_util.hpp"

using namespace kspd;

namespace {

std::vector<std::string> names(Parameters& p) {
  std::vector<std::string> out;
  for (const auto& g : param_groups(p)) out.push_back(g.name);
  return out;
}

std::vector<Matrix> random_batch(std::size_t b, std::size_t rows, std::size_t cols, Rng& rng) {
  std::vector<Matrix> xs;
  for (std::size_t i = 0; i < b; ++i) xs.push_back(random_normal(rows, cols, rng));
  return xs;
}

}  // namespace

TEST_CASE("parameter groups come in a stable order") {
  Rng rng(1);
  NetworkConfig plain;
  auto p = init_parameters(plain, 5, 3, 0.2, 4, 6, rng);
  CHECK(names(p) == std::vector<std::string>{"theta", "bn.gamma", "bn.beta", "fc.w", "fc.b"});
  CHECK(descriptor_dim(plain, p, 5) == 5);
  CHECK(p.theta == 0.2);
  CHECK(p.fc.w.rows() == 3);
  CHECK(p.fc.w.cols() == 15);

  NetworkConfig conv;
  conv.use_conv = true;
  conv.image_height = 4;
  conv.image_width = 4;
  auto q = init_parameters(conv, 2, 3, 0.2, 4, 6, rng);
  CHECK(names(q) == std::vector<std::string>{"conv.w1", "conv.b1", "conv.w2", "conv.b2", "theta", "bn.gamma",
                                             "bn.beta", "fc.w", "fc.b"});
  CHECK(descriptor_dim(conv, q, 2) == 6);

  const auto z = Parameters::zeros_like(q);
  CHECK(z.conv.w1 == Matrix(4, 18));
  CHECK(z.fc.w == Matrix(3, 21));
  CHECK(z.theta == 0.0);
}

TEST_CASE("loss-only pass matches the forward-backward pass") {
  Rng rng(2);
  NetworkConfig cfg;
  cfg.kernel = GaussianKernel{0.5};
  const auto params = init_parameters(cfg, 4, 3, 0.5, 4, 6, rng);
  const auto xs = random_batch(5, 4, 10, rng);
  const std::vector<int> labels{0, 1, 2, 1, 0};

  auto stats = BatchNormStats::init(10);
  const double loss = network_loss(cfg, params, stats, xs, labels, BatchNormMode::Training);
  const auto r = network_forward_backward(cfg, params, stats, xs, labels, BatchNormMode::Training);
  CHECK(r.loss == loss);
  CHECK(r.probs.rows() == 5);
  CHECK(stats.running_mean != BatchNormStats::init(10).running_mean);
  CHECK(r.input_grads.empty());
}

TEST_CASE("inference probabilities are rows of a distribution") {
  Rng rng(3);
  NetworkConfig cfg;
  cfg.kernel = LinearKernel{true};
  const auto params = init_parameters(cfg, 4, 2, 0.1, 4, 6, rng);
  const auto stats = BatchNormStats::init(10);
  const auto probs = network_predict(cfg, params, stats, random_batch(3, 4, 9, rng));
  for (std::size_t b = 0; b < 3; ++b) {
    double s = 0.0;
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(probs(b, c) >= 0.0);
      s += probs(b, c);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("input gradients against finite differences") {
  Rng rng(4);
  NetworkConfig cfg;
  cfg.kernel = GaussianKernel{0.5};
  const auto params = init_parameters(cfg, 3, 2, 0.5, 4, 6, rng);
  const auto xs = random_batch(3, 3, 6, rng);
  const std::vector<int> labels{0, 1, 1};
  auto stats = BatchNormStats::init(6);
  const auto r = network_forward_backward(cfg, params, stats, xs, labels, BatchNormMode::Training, true);
  REQUIRE(r.input_grads.size() == 3);

  const std::vector<double> p0(xs[1].data().begin(), xs[1].data().end());
  const auto fd = fd_gradient(
      [&](std::span<const double> p) {
        auto ys = xs;
        ys[1] = Matrix(3, 6, {p.begin(), p.end()});
        return network_loss(cfg, params, BatchNormStats::init(6), ys, labels, BatchNormMode::Training);
      },
      p0);
  CHECK(compare_gradients("x1", r.input_grads[1].data(), fd).max_rel_error < 1e-5);
}

TEST_CASE("argument validation") {
  Rng rng(5);
  NetworkConfig cfg;
  const auto params = init_parameters(cfg, 3, 2, 0.5, 4, 6, rng);
  auto stats = BatchNormStats::init(6);
  const auto xs = random_batch(2, 3, 6, rng);
  CHECK_THROWS_AS(network_forward_backward(cfg, params, stats, xs, {0}, BatchNormMode::Training), DimensionError);
  CHECK_THROWS_AS(network_forward_backward(cfg, params, stats, xs, {0, 2}, BatchNormMode::Training), InputError);
  const auto wrong = random_batch(2, 4, 6, rng);
  CHECK_THROWS(network_forward_backward(cfg, params, stats, wrong, {0, 1}, BatchNormMode::Training));
}

TEST_CASE("kspd_vector") {
  const auto zero = kspd_vector(Matrix::identity(3), LinearKernel{}, RegPolicy{0.0});
  CHECK(zero == std::vector<double>(6, 0.0));

  const auto v = kspd_vector(Matrix::identity(3), LinearKernel{}, RegPolicy{});
  REQUIRE(v.size() == 6);
  CHECK(v[0] == doctest::Approx(std::log1p(1e-6)).epsilon(1e-9));
  CHECK(v[1] == 0.0);

  Rng rng(6);
  const Matrix x = random_normal(4, 12, rng);
  const auto g = kspd_vector(x, GaussianKernel{0.3}, RegPolicy{});
  CHECK(g.size() == 10);
  CHECK(g == kspd_vector(x, GaussianKernel{0.3}, RegPolicy{}));
}
