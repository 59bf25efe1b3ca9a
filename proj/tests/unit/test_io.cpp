#include <doctest.h>

#include <bit>
#include <cmath>
#include <limits>

#include "kspd/errors.hpp"
#include "kspd/io.hpp"
#include "kspd/random.hpp"
#include "test_util.hpp"

using namespace kspd;
using kspd::testing::TempDir;

namespace {

std::string error_of(const std::string& bytes) {
  try {
    (void)decode_dsm(bytes, "sample.dsm");
  } catch (const FormatError& e) {
    return e.what();
  }
  return {};
}

std::string header(std::uint32_t rows, std::uint32_t cols, unsigned char dtype = kDsmFloat64) {
  std::string h = "DSM1";
  for (std::uint32_t v : {rows, cols})
    for (int b = 0; b < 4; ++b) h.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  h.push_back(static_cast<char>(dtype));
  return h;
}

}  // namespace

TEST_CASE("dsm: round trip is bit exact") {
  Rng rng(1);
  const Matrix m = random_normal(3, 5, rng, 1e5);
  const auto bytes = encode_dsm(m);
  CHECK(bytes.size() == kDsmHeaderBytes + 15 * 8);
  CHECK(bytes.substr(0, 4) == "DSM1");
  CHECK(decode_dsm(bytes) == m);

  TempDir dir;
  write_dsm(dir / "a/b/m.dsm", m);
  CHECK(read_dsm(dir / "a/b/m.dsm") == m);
}

TEST_CASE("dsm: layout is little-endian row-major") {
  const auto bytes = encode_dsm(Matrix{{1.0, 2.0}});
  CHECK(bytes.substr(0, kDsmHeaderBytes) == header(1, 2));
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= std::uint64_t(static_cast<unsigned char>(bytes[kDsmHeaderBytes + 8 + b])) << (8 * b);
  CHECK(std::bit_cast<double>(bits) == 2.0);
}

TEST_CASE("dsm: malformed input reports the byte offset") {
  CHECK(error_of("XXXX" + header(1, 1).substr(4) + std::string(8, '\0')).find("magic") != std::string::npos);
  CHECK(error_of("XXXX").find("byte offset 0") != std::string::npos);
  CHECK(error_of("DSM1\x02").find("truncated header") != std::string::npos);

  const auto truncated = error_of(header(2, 2));
  CHECK(truncated.find("truncated payload") != std::string::npos);
  CHECK(truncated.find("byte offset 13") != std::string::npos);

  CHECK(error_of(header(1, 1, 2) + std::string(8, '\0')).find("dtype") != std::string::npos);
  CHECK(error_of(header(0, 3)).find("empty") != std::string::npos);
  CHECK(error_of(header(1, 1) + std::string(9, '\0')).find("trailing") != std::string::npos);

  std::string nan = header(1, 2) + std::string(16, '\0');
  const auto bits = std::bit_cast<std::uint64_t>(std::numeric_limits<double>::quiet_NaN());
  for (int b = 0; b < 8; ++b) nan[kDsmHeaderBytes + 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  const auto msg = error_of(nan);
  CHECK(msg.find("non-finite") != std::string::npos);
  CHECK(msg.find("byte offset 21") != std::string::npos);
  CHECK(msg.rfind("io: sample.dsm", 0) == 0);

  TempDir dir;
  CHECK_THROWS_AS(read_dsm(dir / "missing.dsm"), InputError);
}

TEST_CASE("manifest: parse and render") {
  const auto entries = parse_manifest("# header\n\na.dsm,0\nb.dsm,1,test\nc.dsm,1,train\n", "m.csv");
  REQUIRE(entries.size() == 3);
  CHECK(entries[0].path == "a.dsm");
  CHECK(entries[0].split == Split::Train);
  CHECK(entries[1].split == Split::Test);
  CHECK(entries[2].label == 1);
  CHECK(render_manifest(entries) == "a.dsm,0,train\nb.dsm,1,test\nc.dsm,1,train\n");
  CHECK(parse_manifest(render_manifest(entries), "m.csv").size() == 3);

  CHECK_THROWS_AS(parse_manifest("a.dsm\n", "m.csv"), FormatError);
  CHECK_THROWS_AS(parse_manifest("a.dsm,-1\n", "m.csv"), FormatError);
  CHECK_THROWS_AS(parse_manifest("a.dsm,x\n", "m.csv"), FormatError);
  CHECK_THROWS_AS(parse_manifest("a.dsm,0,val\n", "m.csv"), FormatError);
  CHECK_THROWS_AS(parse_manifest(",0\n", "m.csv"), FormatError);
}

TEST_CASE("manifest: directory checks") {
  TempDir dir;
  write_dsm(dir / "a.dsm", Matrix::identity(2));
  write_file(dir / "manifest.csv", "a.dsm,0\nmissing.dsm,1\n");
  CHECK_THROWS_AS(read_manifest(dir.path()), InputError);

  write_dsm(dir / "b.dsm", Matrix::identity(2));
  write_file(dir / "manifest.csv", "a.dsm,0\nb.dsm,2\n");
  CHECK_THROWS_AS(read_manifest(dir.path()), InputError);

  write_file(dir / "manifest.csv", "# empty\n");
  CHECK_THROWS_AS(read_manifest(dir.path()), InputError);

  write_file(dir / "manifest.csv", "a.dsm,0\nb.dsm,1,test\n");
  const auto data = load_dataset(dir.path());
  CHECK(data.train.size() == 1);
  CHECK(data.test.size() == 1);
  CHECK(data.test.y[0] == 1);
}

TEST_CASE("dataset save and load round trip") {
  Rng rng(2);
  Dataset train, test;
  for (int i = 0; i < 4; ++i) {
    train.x.push_back(random_normal(3, 5, rng));
    train.y.push_back(i % 2);
  }
  test.x.push_back(random_normal(3, 5, rng));
  test.y.push_back(1);
  TempDir dir;
  save_dataset(dir.path(), train, test);
  CHECK(std::filesystem::exists(dir / "samples/000000.dsm"));
  const auto back = load_dataset(dir.path());
  CHECK(back.train.x == train.x);
  CHECK(back.train.y == train.y);
  CHECK(back.test.x == test.x);
}

TEST_CASE("key = value parsing") {
  const auto kv = parse_key_values("# c\na = 1\n  b=two  # trailing\n\n", "f");
  REQUIRE(kv.size() == 2);
  CHECK(kv[0] == std::pair<std::string, std::string>{"a", "1"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"b", "two"});
  CHECK_THROWS_AS(parse_key_values("a = 1\na = 2\n", "f"), FormatError);
  CHECK_THROWS_AS(parse_key_values("a\n", "f"), FormatError);
  CHECK_THROWS_AS(parse_key_values("a =\n", "f"), FormatError);
}

TEST_CASE("train config parsing") {
  const auto cfg = parse_train_config("batch_size = 8\ntotal_epochs = 40\nkernel = linear:centered\n", "c");
  CHECK(cfg.batch_size == 8);
  CHECK(cfg.total_epochs == 40);
  CHECK(std::get<LinearKernel>(cfg.kernel).centered);

  CHECK_THROWS_AS(parse_train_config("learning_rate = 1\n", "c"), FormatError);
  CHECK_THROWS_AS(parse_train_config("kernel = gaussian:0.5\n", "c"), FormatError);
  CHECK_THROWS_AS(parse_train_config("batch_size = -3\n", "c"), FormatError);
  CHECK_THROWS_AS(parse_train_config("batch_size = 1\n", "c"), ParameterError);

  TrainConfig custom;
  custom.lr_stage2 = 3e-4;
  custom.theta_init = 0.37;
  custom.descriptor_block = DescriptorBlock::Conv;
  custom.image_height = 8;
  const auto back = parse_train_config(render_train_config(custom), "c");
  CHECK(render_train_config(back) == render_train_config(custom));
  CHECK(back.lr_stage2 == custom.lr_stage2);
}

TEST_CASE("dataset spec parsing") {
  const auto spec = parse_dataset_spec("variant = higher_order\ndim = 6\nseed = 9\n", "s");
  CHECK(spec.variant == DatasetVariant::HigherOrder);
  CHECK(spec.dim == 6);
  CHECK(spec.seed == 9);
  CHECK_THROWS_AS(parse_dataset_spec("classes = 2\n", "s"), FormatError);
}

TEST_CASE("format_double is the shortest round-tripping text") {
  CHECK(format_double(0.1) == "0.1");
  CHECK(format_double(1e-4) == "1e-04");
  CHECK(format_double(2.0) == "2");
  const double x = 0.1 + 0.2;
  CHECK(std::stod(format_double(x)) == x);
}

TEST_CASE("model save and load round trip") {
  const auto data = generate_synthetic([] {
    DatasetSpec s;
    s.dim = 3;
    s.count = 12;
    s.train_per_class = 6;
    s.test_per_class = 2;
    return s;
  }());
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.stage1_epochs = 1;
  cfg.total_epochs = 2;
  const auto trained = two_stage_train(cfg, data.train).state;

  TempDir dir;
  save_model(dir.path(), trained);
  CHECK(std::filesystem::exists(dir / "model.txt"));
  CHECK(std::filesystem::exists(dir / "adam_m.fc.w.dsm"));
  CHECK(std::filesystem::exists(dir / "bn.running_var.dsm"));

  const auto back = load_model(dir.path());
  CHECK(back.params.fc.w == trained.params.fc.w);
  CHECK(back.params.theta == trained.params.theta);
  CHECK(back.stats.running_mean == trained.stats.running_mean);
  CHECK(back.adam_v.bn.gamma == trained.adam_v.bn.gamma);
  CHECK(back.group_steps == trained.group_steps);
  CHECK(back.step == trained.step);
  CHECK(predict(back, data.test) == predict(trained, data.test));

  TempDir again;
  save_model(again.path(), back);
  for (const auto& e : std::filesystem::directory_iterator(dir.path()))
    CHECK(read_file(e.path()) == read_file(again / e.path().filename().string()));

  write_dsm(dir / "fc.w.dsm", Matrix(1, 1));
  CHECK_THROWS_AS(load_model(dir.path()), FormatError);
  write_file(dir / "model.txt", "format = other\n");
  CHECK_THROWS_AS(load_model(dir.path()), FormatError);
}

TEST_CASE("metrics lines") {
  EpochMetrics m{3, 2, 0.25, 0.875, 0.1};
  CHECK(render_metrics_line(m) == "3,2,0.25,0.875,0.1\n");
  CHECK(render_metrics({m}) == "epoch,stage,loss,acc,theta\n3,2,0.25,0.875,0.1\n");
}
