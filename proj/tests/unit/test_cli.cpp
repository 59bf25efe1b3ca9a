#include <doctest.h>

#include <sstream>

#include "kspd/cli.hpp"
#include "kspd/io.hpp"
#include "kspd/network.hpp"
#include "kspd/random.hpp"
#include "test_util.hpp"

using namespace kspd;
using kspd::testing::TempDir;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "kspd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_identity_dataset(const TempDir& dir, std::size_t d) {
  write_dsm(dir / "a.dsm", Matrix::identity(d));
  Matrix b = Matrix::identity(d);
  b(0, 0) = 2.0;
  write_dsm(dir / "b.dsm", b);
  write_file(dir / "manifest.csv", "a.dsm,0\nb.dsm,1\n");
}

}  // namespace

TEST_CASE("usage errors exit with code 2") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"logm", "--in", "x.dsm", "--out", "y.dsm", "--bogus"}).code == kExitUsage);
  CHECK(run({"gradcheck"}).code == kExitUsage);

  const auto bad_target = run({"gradcheck", "--target", "softmax"});
  CHECK(bad_target.code == kExitUsage);
  CHECK(bad_target.err.rfind("error: gradcheck: ", 0) == 0);

  CHECK(run({"--help"}).code == kExitOk);
}

TEST_CASE("logm of the identity is zero") {
  TempDir dir;
  write_dsm(dir / "i.dsm", Matrix::identity(4));
  const auto r = run({"logm", "--in", (dir / "i.dsm").string(), "--out", (dir / "h.dsm").string()});
  CHECK(r.code == kExitOk);
  CHECK(read_dsm(dir / "h.dsm") == Matrix(4, 4));
}

TEST_CASE("computational and input errors exit with code 1") {
  TempDir dir;
  write_dsm(dir / "neg.dsm", Matrix{{1.0, 0.0}, {0.0, -1.0}});
  const auto r = run({"logm", "--in", (dir / "neg.dsm").string(), "--out", (dir / "h.dsm").string()});
  CHECK(r.code == kExitFailure);
  CHECK(r.err.rfind("error: spdfun: ", 0) == 0);

  write_file(dir / "bad.dsm", "XXXX");
  const auto f = run({"logm", "--in", (dir / "bad.dsm").string(), "--out", (dir / "h.dsm").string()});
  CHECK(f.code == kExitFailure);
  CHECK(f.err.find("byte offset 0") != std::string::npos);
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run({"gradcheck", "--target", "end_to_end", "--seed", "1", "--tol", "1e-4"});
  CHECK(r.code == kExitOk);
  CHECK(r.out.find("result: PASS") != std::string::npos);

  const auto csv = run({"gradcheck", "--target", "kernel", "--csv"});
  CHECK(csv.code == kExitOk);
  CHECK(csv.out.rfind("target,seed,group", 0) == 0);

  CHECK(run({"gradcheck", "--target", "kernel", "--tol", "1e-30"}).code == kExitFailure);
}

TEST_CASE("extract writes triu(log K) per sample") {
  TempDir in, out, exact;
  write_identity_dataset(in, 3);

  CHECK(run({"extract", "--data", in.path().string(), "--kernel", "linear", "--out", out.path().string()}).code ==
        kExitOk);
  const Matrix v = read_dsm(out / "a.dsm");
  CHECK(v.rows() == 1);
  CHECK(v.cols() == 6);
  for (double x : v.data()) CHECK(std::abs(x) < 1e-5);
  CHECK(read_file(out / "manifest.csv") == "a.dsm,0,train\nb.dsm,1,train\n");

  CHECK(run({"extract", "--data", in.path().string(), "--kernel", "linear", "--reg", "0", "--out",
             exact.path().string()})
            .code == kExitOk);
  CHECK(read_dsm(exact / "a.dsm") == Matrix(1, 6));

  Rng rng(3);
  const Matrix x = random_normal(4, 9, rng);
  TempDir g, gout;
  write_dsm(g / "x.dsm", x);
  write_file(g / "manifest.csv", "x.dsm,0\n");
  CHECK(run({"extract", "--data", g.path().string(), "--kernel", "gaussian:0.3", "--out", gout.path().string()})
            .code == kExitOk);
  CHECK(read_dsm(gout / "x.dsm") == row_matrix(kspd_vector(x, GaussianKernel{0.3}, RegPolicy{})));
}

TEST_CASE("gen, train and eval") {
  TempDir work;
  write_file(work / "spec.txt",
             "variant = covariance\ndim = 4\ncount = 24\ntrain_per_class = 12\ntest_per_class = 6\n");
  write_file(work / "train.txt", "batch_size = 6\nstage1_epochs = 2\ntotal_epochs = 3\n");
  const auto data = (work / "data").string();

  const auto g = run({"gen", "--spec", (work / "spec.txt").string(), "--out", data});
  REQUIRE(g.code == kExitOk);
  CHECK(g.out.find("checks_passed = true") != std::string::npos);
  CHECK(std::filesystem::exists(work / "data/generator.txt"));

  const auto m1 = (work / "m1").string(), m2 = (work / "m2").string();
  const auto t1 = run({"train", "--data", data, "--config", (work / "train.txt").string(), "--out", m1});
  const auto t2 = run({"train", "--data", data, "--config", (work / "train.txt").string(), "--out", m2});
  REQUIRE(t1.code == kExitOk);
  CHECK(t1.out == t2.out);
  CHECK(t1.out.rfind("epoch,stage,loss,acc,theta\n1,1,", 0) == 0);
  CHECK(t1.out.find("test_accuracy = ") != std::string::npos);
  for (const auto& e : std::filesystem::directory_iterator(m1))
    CHECK(read_file(e.path()) == read_file(std::filesystem::path(m2) / e.path().filename()));
  CHECK(std::filesystem::exists(work / "m1/metrics.csv"));
  CHECK(std::filesystem::exists(work / "m1/config.txt"));

  const auto e = run({"eval", "--data", data, "--model", m1});
  CHECK(e.code == kExitOk);
  CHECK(e.out.find("train_accuracy = ") != std::string::npos);
  CHECK(t1.out.find(e.out.substr(e.out.find("test_accuracy"))) != std::string::npos);

  CHECK(run({"eval", "--data", data, "--model", (work / "nope").string()}).code == kExitFailure);
}
