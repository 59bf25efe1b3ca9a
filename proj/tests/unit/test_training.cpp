#include <doctest.h>

#include <cmath>
#include <limits>

#include "kspd/errors.hpp"
#include "kspd/random.hpp"
#include "kspd/training.hpp"

using namespace kspd;

namespace {

ModelState small_state(std::uint64_t seed = 1) {
  TrainConfig cfg;
  cfg.theta_init = 0.5;
  Rng rng(seed);
  return ModelState::init(cfg, 3, 6, 2, rng);
}

Parameters constant_grads(const Parameters& like, double value) {
  Parameters g = Parameters::zeros_like(like);
  for (auto& group : param_groups(g))
    for (double& v : group.values) v = value;
  return g;
}

std::vector<double> values_of(Parameters& p, const std::string& name) {
  for (const auto& g : param_groups(p))
    if (g.name == name) return {g.values.begin(), g.values.end()};
  FAIL("no group " << name);
  return {};
}

Dataset random_images(std::size_t n, Rng& rng) {
  Dataset d;
  for (std::size_t i = 0; i < n; ++i) {
    d.x.push_back(random_normal(2, 16, rng));
    d.y.push_back(static_cast<int>(i % 2));
  }
  return d;
}

DatasetSpec small_spec(DatasetVariant variant) {
  DatasetSpec spec;
  spec.variant = variant;
  spec.dim = 4;
  spec.count = 32;
  spec.train_per_class = 20;
  spec.test_per_class = 10;
  return spec;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  auto s = small_state();
  const auto before = s.params;
  adam_step(s, Parameters::zeros_like(s.params), 1e-2);
  auto a = s.params;
  auto b = before;
  const auto ga = param_groups(a);
  const auto gb = param_groups(b);
  for (std::size_t k = 0; k < ga.size(); ++k)
    CHECK(std::equal(ga[k].values.begin(), ga[k].values.end(), gb[k].values.begin()));
  CHECK(s.step == 1);
}

TEST_CASE("adam: the first step moves every entry by lr against the gradient sign") {
  auto s = small_state();
  const double theta0 = s.params.theta;
  const double lr = 1e-3;
  adam_step(s, constant_grads(s.params, 0.3), lr);
  CHECK(s.params.theta == doctest::Approx(theta0 - lr).epsilon(1e-9));

  auto s2 = small_state();
  auto before = s2.params;
  adam_step(s2, constant_grads(s2.params, -2.0), lr);
  const auto w0 = values_of(before, "fc.w");
  const auto w1 = values_of(s2.params, "fc.w");
  for (std::size_t i = 0; i < w0.size(); ++i) CHECK(w1[i] - w0[i] == doctest::Approx(lr).epsilon(1e-7));
}

TEST_CASE("adam: frozen groups keep values, moments and step counts") {
  auto s = small_state();
  const double theta0 = s.params.theta;
  const auto gamma0 = s.params.bn.gamma;
  adam_step(s, constant_grads(s.params, 1.0), 1e-2, stage1_trainable);
  CHECK(s.params.theta == theta0);
  CHECK(s.adam_m.theta == 0.0);
  CHECK(s.params.bn.gamma != gamma0);
  CHECK(s.group_steps == std::vector<std::uint64_t>{0, 1, 1, 1, 1});
  CHECK(stage1_trainable("bn.beta"));
  CHECK(stage1_trainable("fc.w"));
  CHECK_FALSE(stage1_trainable("theta"));
  CHECK_FALSE(stage1_trainable("conv.w1"));
}

TEST_CASE("adam: theta is clamped at its lower bound") {
  auto s = small_state();
  s.params.theta = 2e-4;
  adam_step(s, constant_grads(s.params, 5.0), 1.0);
  CHECK(s.params.theta == kThetaMin);
}

TEST_CASE("adam: a non-finite gradient names its group and changes nothing") {
  auto s = small_state();
  auto g = Parameters::zeros_like(s.params);
  param_groups(g)[3].values[2] = std::numeric_limits<double>::quiet_NaN();
  const double theta0 = s.params.theta;
  try {
    adam_step(s, g, 1e-2);
    FAIL("expected TrainingError");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("fc.w") != std::string::npos);
  }
  CHECK(s.params.theta == theta0);
  CHECK(s.step == 0);
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.batch_size = 1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.stage1_epochs = 40;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.lr_stage2 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.theta_init = 1e-5;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = TrainConfig{};
  cfg.descriptor_block = DescriptorBlock::Conv;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg.image_height = 4;
  CHECK_NOTHROW(cfg.validate());
  CHECK(parse_descriptor_block("conv") == DescriptorBlock::Conv);
  CHECK_THROWS_AS(parse_descriptor_block("resnet"), ParameterError);
}

TEST_CASE("dataset validation") {
  Dataset d;
  CHECK_THROWS_AS(d.validate("train"), InputError);
  d.x = {Matrix(2, 3), Matrix(2, 3)};
  d.y = {0, 2};
  CHECK_THROWS_AS(d.validate("train"), InputError);
  d.y = {1, 0};
  CHECK_NOTHROW(d.validate("train"));
  CHECK(d.num_classes() == 2);
  d.x[1] = Matrix(3, 3);
  CHECK_THROWS_AS(d.validate("train"), InputError);
}

TEST_CASE("stage 1 leaves the conv block and theta bit-identical") {
  Rng data_rng(3);
  const Dataset train = random_images(12, data_rng);
  TrainConfig cfg;
  cfg.descriptor_block = DescriptorBlock::Conv;
  cfg.image_height = 4;
  cfg.conv_c1 = 3;
  cfg.conv_c2 = 4;
  cfg.batch_size = 4;
  cfg.stage1_epochs = 3;
  cfg.total_epochs = 3;
  cfg.theta_init = 0.5;
  Rng rng(cfg.seed);
  auto init = ModelState::init(cfg, 2, 16, 2, rng);

  const auto r = two_stage_train(cfg, train);
  CHECK(r.state.params.conv.w1 == init.params.conv.w1);
  CHECK(r.state.params.conv.b2 == init.params.conv.b2);
  CHECK(r.state.params.theta == init.params.theta);
  CHECK(r.state.params.fc.w != init.params.fc.w);
  CHECK(r.metrics.size() == 3);
  for (const auto& m : r.metrics) CHECK(m.stage == 1);
}

TEST_CASE("training is deterministic and theta moves in stage 2") {
  const auto data = generate_synthetic(small_spec(DatasetVariant::HigherOrder));
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.stage1_epochs = 2;
  cfg.total_epochs = 5;
  cfg.theta_init = 0.5;
  const auto a = two_stage_train(cfg, data.train);
  const auto b = two_stage_train(cfg, data.train);
  REQUIRE(a.metrics.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a.metrics[i].loss == b.metrics[i].loss);
    CHECK(a.metrics[i].theta == b.metrics[i].theta);
  }
  CHECK(a.state.params.fc.w == b.state.params.fc.w);
  CHECK(a.metrics[1].theta == 0.5);
  CHECK(a.metrics[4].theta != 0.5);
  CHECK(a.metrics[4].stage == 2);

  const auto labels = predict(a.state, data.test);
  CHECK(labels.size() == data.test.size());
  const double acc = evaluate(a.state, data.test);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}

TEST_CASE("a diverging run raises a training error") {
  const auto data = generate_synthetic(small_spec(DatasetVariant::Covariance));
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.stage1_epochs = 5;
  cfg.total_epochs = 5;
  cfg.lr_stage1 = 1e308;
  CHECK_THROWS_AS(two_stage_train(cfg, data.train), TrainingError);
}

TEST_CASE("generator: shapes, labels and determinism") {
  for (auto variant : {DatasetVariant::Covariance, DatasetVariant::HigherOrder}) {
    const auto spec = small_spec(variant);
    const auto a = generate_synthetic(spec);
    const auto b = generate_synthetic(spec);
    CAPTURE(to_string(variant));
    CHECK(a.train.size() == 40);
    CHECK(a.test.size() == 20);
    CHECK(a.train.x[0].rows() == 4);
    CHECK(a.train.x[0].cols() == 32);
    CHECK(a.train.num_classes() == 2);
    CHECK(a.train.x == b.train.x);
    CHECK(a.test.y == b.test.y);
    CHECK(a.report.seed_used == b.report.seed_used);
  }
  auto other = small_spec(DatasetVariant::Covariance);
  other.seed = 2;
  CHECK(generate_synthetic(other).train.x != generate_synthetic(small_spec(DatasetVariant::Covariance)).train.x);
}

TEST_CASE("generator: higher-order classes share second moments but not kernels") {
  DatasetSpec spec;
  spec.variant = DatasetVariant::HigherOrder;
  const auto data = generate_synthetic(spec);
  CHECK(data.report.checks_passed);
  CHECK(data.report.moment_gap < kMaxMomentGap);
  CHECK(data.report.kernel_gap > kMinKernelGap);
  CHECK(data.report.attempts >= 1);
}

TEST_CASE("dataset spec validation and variant parsing") {
  DatasetSpec spec;
  spec.variant = DatasetVariant::HigherOrder;
  spec.num_classes = 3;
  CHECK_THROWS_AS(spec.validate(), ParameterError);
  spec = DatasetSpec{};
  spec.dim = 1;
  CHECK_THROWS_AS(spec.validate(), ParameterError);
  spec = DatasetSpec{};
  spec.spectrum_ratio = 0.5;
  CHECK_THROWS_AS(spec.validate(), ParameterError);
  CHECK(parse_dataset_variant("higher_order") == DatasetVariant::HigherOrder);
  CHECK(to_string(DatasetVariant::Covariance) == "covariance");
  CHECK_THROWS_AS(parse_dataset_variant("mnist"), ParameterError);
}
