#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "posemb/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = posemb::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::size_t occurrences(const std::string& haystack, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) ++n;
  return n;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("posemb_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("params prints the table one counts") {
    const Run r = run({"params", "--shared-only"});
    CHECK(r.code == 0);
    for (const char* n : {"393,216", "785,664", "12,276", "834,816", "454,644"}) CHECK(r.out.find(n) != std::string::npos);
    CHECK(r.out.find("MISMATCH") == std::string::npos);

    const Run tiny = run({"params", "--m", "1", "--n", "2", "--d", "2", "--h", "1"});
    CHECK(tiny.code == 0);
    CHECK(tiny.out.find("per-head tables") != std::string::npos);

    CHECK(run({"params", "--d", "10", "--h", "3"}).code == 2);
  }

  TEST_CASE("gradcheck exit codes") {
    const Run bad = run({"gradcheck", "--method", "m5"});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("shaw") != std::string::npos);

    const Run shaw = run({"gradcheck", "--method", "shaw"});
    CHECK(shaw.code == 0);
    CHECK(shaw.out.find("relative_table") != std::string::npos);

    CHECK(run({"gradcheck", "--method", "shaw", "--tol", "1e-9"}).code == 3);

    const Run all = run({"gradcheck", "--method", "all"});
    CHECK(all.code == 0);
    CHECK(occurrences(all.out, "\n== ") == 11);
  }

  TEST_CASE("pretrain smoke run, missing corpus and byte-identical rerun") {
    const fs::path dir = scratch("pretrain");
    const Run missing = run({"pretrain", "--output", (dir / "none").string(), "--steps", "10"});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("run.corpus") != std::string::npos);
    const Run absent = run({"pretrain", "--corpus", (dir / "nope.txt").string(), "--output", (dir / "none").string()});
    CHECK(absent.code == 2);
    CHECK(absent.err.find("run.corpus") != std::string::npos);

    const std::string corpus = (dir / "corpus.txt").string();
    REQUIRE(run({"synth-corpus", "--out", corpus, "--documents", "5", "--sentences", "40", "--words", "30"}).code == 0);

    std::ofstream(dir / "run.ini") << "[run]\nseed = 3\ncorpus = " << corpus
                                   << "\n[encoder]\nlayers = 1\nheads = 2\nwidth = 16\nff_width = 32\nmax_len = 24\n"
                                      "vocab_size = 64\n[method]\nkind = m4\nclip_k = 4\n";
    auto pretrain = [&](const std::string& out) {
      return run({"pretrain", "--config", (dir / "run.ini").string(), "--steps", "10", "--batch_size", "4", "--output",
                  (dir / out).string()});
    };
    const Run a = pretrain("a");
    REQUIRE(a.code == 0);
    const std::string metrics = slurp(dir / "a" / "metrics.csv");
    CHECK(count_lines(metrics) == 12);
    CHECK(metrics.rfind("# posemb metrics v1\nstep,loss,grad_norm,lr,finite\n1,", 0) == 0);
    for (const char* f : {"config.ini", "vocabulary.txt", "eval.csv", "checkpoint.bin", "summary.txt"})
      CHECK(fs::exists(dir / "a" / f));
    CHECK(slurp(dir / "a" / "config.ini").find("steps = 10") != std::string::npos);

    REQUIRE(pretrain("b").code == 0);
    for (const char* f : {"metrics.csv", "eval.csv", "checkpoint.bin"})
      CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

    const Run audit = run({"audit-checkpoint", (dir / "a" / "checkpoint.bin").string()});
    CHECK(audit.code == 0);
    CHECK(audit.out.find("all finite: yes") != std::string::npos);
    CHECK(run({"audit-checkpoint", (dir / "missing.bin").string()}).code == 2);
  }

  TEST_CASE("compare grid and probe") {
    const fs::path dir = scratch("compare");
    std::ofstream(dir / "cmp.ini") << "[run]\noutput = " << (dir / "out").string()
                                   << "\n[encoder]\nlayers = 1\nheads = 2\nwidth = 16\nff_width = 32\ndropout = 0\n"
                                      "[tasks]\nlength = 8\ncontent_vocab = 8\n"
                                      "[finetune]\nsteps = 20\nbatch_size = 8\ntrain_examples = 200\ntest_examples = 50\n"
                                      "[compare]\nmethods = none, m4\nseeds = 1, 2\n";
    const Run r = run({"compare", "--config", (dir / "cmp.ini").string()});
    REQUIRE(r.code == 0);
    const std::string results = slurp(dir / "out" / "results.csv");
    CHECK(count_lines(results) == 2 + 4);
    CHECK(slurp(dir / "out" / "report.txt").find("not the paper's") != std::string::npos);
    CHECK(fs::exists(dir / "out" / "long.csv"));
    CHECK(fs::exists(dir / "out" / "summary.csv"));
    CHECK(fs::exists(dir / "out" / "config.ini"));

    const Run again = run({"compare", "--config", (dir / "cmp.ini").string(), "--output", (dir / "again").string()});
    REQUIRE(again.code == 0);
    CHECK(slurp(dir / "again" / "results.csv") == results);

    const Run probe = run({"probe", "--config", (dir / "cmp.ini").string(), "--output", (dir / "probe").string(),
                           "--kind", "shaw"});
    CHECK(probe.code == 0);
    CHECK(count_lines(slurp(dir / "probe" / "probe.csv")) == 3);

    CHECK(run({"compare", "--config", (dir / "cmp.ini").string(), "--bogus", "1"}).code == 2);
  }

  TEST_CASE("usage errors") {
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"--help"}).code == 0);
  }
}
