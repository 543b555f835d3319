#include "selfens/metrics.hpp"
#include "selfens/network.hpp"
#include "test_util.hpp"

#include <doctest.h>

using namespace selfens;

namespace {

struct Cli {
  testutil::TempDir dir{"selfens_cli"};
  int code = 0;
  std::string out, err;

  int run(const std::string &args) {
    code = testutil::run_cli(args, dir / "stdout", dir / "stderr");
    out = testutil::read_file(dir / "stdout");
    err = testutil::read_file(dir / "stderr");
    return code;
  }
  std::string path(const std::string &name) const { return (dir / name).string(); }
};

bool one_error_line(const std::string &err, const std::string &kind) {
  const std::string prefix = "error: " + kind + ": ";
  return err.rfind(prefix, 0) == 0 && err.find('\n') == err.size() - 1;
}

} // namespace

TEST_CASE("paramcount prints the segment table") {
  Cli cli;
  REQUIRE(cli.run("paramcount") == 0);
  CHECK(cli.out.find("total 877728") != std::string::npos);
  REQUIRE(cli.run("paramcount --classes 8") == 0);
  CHECK(cli.out.find("total 878496") != std::string::npos);
}

TEST_CASE("usage errors exit 1 with one line on stderr") {
  Cli cli;
  CHECK(cli.run("split --budget 3") == 1);
  CHECK(one_error_line(cli.err, "usage_error"));
  CHECK(cli.run("frobnicate") == 1);
  CHECK(one_error_line(cli.err, "usage_error"));
  CHECK(cli.run("paramcount --classes 1") == 1);
  CHECK(one_error_line(cli.err, "usage_error"));
}

TEST_CASE("data errors exit 2") {
  Cli cli;
  CHECK(cli.run("split --manifest " + cli.path("none.csv") + " --budget 3 --out " +
                cli.path("p.json")) == 2);
  CHECK(one_error_line(cli.err, "data_error"));
  testutil::write_file(cli.dir / "x.ckpt", "garbage");
  testutil::write_file(cli.dir / "m.csv", "path,label\n");
  CHECK(cli.run("eval --checkpoint " + cli.path("x.ckpt") + " --manifest " + cli.path("m.csv") +
                " --plan " + cli.path("p.json")) == 2);
  CHECK(one_error_line(cli.err, "data_error"));
}

TEST_CASE("a failed gradient check exits 3") {
  Cli cli;
  CHECK(cli.run("gradcheck --cases 1 --tolerance 0") == 3);
  CHECK(cli.out.find("conv2d") != std::string::npos);
  CHECK(one_error_line(cli.err, "numeric_error"));
}

TEST_CASE("synth-gen, split, train, eval and report end to end") {
  Cli cli;
  const std::string data = cli.path("data"), manifest = cli.path("data/manifest.csv");
  REQUIRE(cli.run("synth-gen --out " + data + " --per-class 12 --size 18 --images-per-subject 2") ==
          0);
  REQUIRE(cli.run("split --manifest " + manifest + " --budget 4 --seed 1 --test-fraction 0.25 "
                  "--out " + cli.path("plan.json")) == 0);
  testutil::write_file(cli.dir / "small.cfg", "crop_size = 16\nsource_size = 18\nbatch_size = 4\n");
  const std::string common = "train --manifest " + manifest + " --plan " + cli.path("plan.json") +
                             " --config " + cli.path("small.cfg") + " --epochs 1";
  REQUIRE(cli.run(common + " --alpha 1 --out-dir " + cli.path("semi")) == 0);
  REQUIRE(cli.run(common + " --alpha 0 --out-dir " + cli.path("sup")) == 0);
  for (const char *f : {"epochs.csv", "final.ckpt", "best.ckpt", "report.csv", "config.snapshot"})
    CHECK(std::filesystem::exists(cli.dir / "semi" / f));
  CHECK(testutil::read_file(cli.dir / "semi" / "config.snapshot").find("alpha = 1") !=
        std::string::npos);

  REQUIRE(cli.run("eval --checkpoint " + cli.path("semi/best.ckpt") + " --manifest " + manifest +
                  " --plan " + cli.path("plan.json") + " --out " + cli.path("eval.csv")) == 0);
  CHECK(read_report_csv(cli.dir / "eval.csv") == read_report_csv(cli.dir / "semi" / "report.csv"));

  REQUIRE(cli.run("report --runs " + cli.path("sup") + " " + cli.path("semi") + " --csv " +
                  cli.path("table.csv")) == 0);
  const std::string table = testutil::read_file(cli.dir / "table.csv");
  CHECK(table.rfind("labeled,unlabeled,round%,elongated%,ACC%\n4,", 0) == 0);

  CHECK(cli.run(common + " --set bogus=1 --out-dir " + cli.path("bad")) == 1);
  CHECK(one_error_line(cli.err, "usage_error"));
}
