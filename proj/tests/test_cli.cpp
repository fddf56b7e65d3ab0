// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "fdd/container.hpp"
#include "support.hpp"

using fdd::test::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run fdd_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = fdd::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);)
    if (!l.empty()) out.push_back(l);
  return out;
}

std::string last_field(const std::string& line) { return line.substr(line.find_last_of(' ') + 1); }

// One small pipeline shared by the cases below.
struct Pipeline {
  TempDir dir{"cli"};
  std::string data = (dir / "data").string();
  std::string teacher = (dir / "teacher.ckpt").string();
  std::vector<std::string> common{"--data", data, "--teacher", teacher, "--epochs", "2", "--batch-size", "16"};

  Pipeline() {
    REQUIRE(fdd_cli({"gen-data", "--out", data, "--n-per-class", "6", "--seed", "7"}).code == 0);
    REQUIRE(fdd_cli({"pretrain", "--data", data, "--out", teacher, "--epochs", "1", "--batch-size", "16"}).code == 0);
  }
  std::vector<std::string> with(std::vector<std::string> head) const {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  }
};

Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(fdd_cli({}).code == 2);
  CHECK(fdd_cli({"frobnicate"}).code == 2);
  TempDir dir("cli-usage");
  Run r = fdd_cli({"gen-data", "--out", dir.path().string(), "--n-per-class", "0"});
  CHECK(r.code == 2);
  CHECK(r.err.find("n-per-class") != std::string::npos);
  CHECK(fdd_cli({"gradcheck", "--cases", "-1"}).code == 2);
  CHECK(fdd_cli({"sweep", "--param", "tau"}).code == 2);
  CHECK(fdd_cli({"--help"}).code == 0);
}

TEST_CASE("gen-data is deterministic") {
  TempDir a("cli-gen-a"), b("cli-gen-b");
  Run ra = fdd_cli({"gen-data", "--out", a.path().string(), "--n-per-class", "3", "--seed", "7"});
  Run rb = fdd_cli({"gen-data", "--out", b.path().string(), "--n-per-class", "3", "--seed", "7"});
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(fdd::file_sha256(a / "source.fdd") == fdd::file_sha256(b / "source.fdd"));
  CHECK(fdd::file_sha256(a / "target.fdd") == fdd::file_sha256(b / "target.fdd"));
  CHECK(fs::exists(a / "manifest.json"));
  CHECK(ra.out.find(fdd::file_sha256(a / "target.fdd")) != std::string::npos);
}

TEST_CASE("eval rejects a missing checkpoint") {
  TempDir dir("cli-eval");
  const std::string missing = (dir / "nope.ckpt").string();
  Run r = fdd_cli({"eval", "--checkpoint", missing, "--dataset", (dir / "d.fdd").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find(missing) != std::string::npos);
}

TEST_CASE("gradcheck command") {
  Run zero = fdd_cli({"gradcheck", "--cases", "0"});
  CHECK(zero.code == 0);
  CHECK(zero.err.find("warning") != std::string::npos);

  Run ok = fdd_cli({"gradcheck", "--cases", "2", "--only", "couple,phase"});
  CHECK(ok.code == 0);
  Run bad = fdd_cli({"gradcheck", "--cases", "2", "--only", "couple,phase", "--inject-fault", "couple"});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("couple") != std::string::npos);
  CHECK(bad.err.find("phase") == std::string::npos);
}

TEST_CASE("train, eval and the plain baseline") {
  Pipeline& p = pipeline();
  const std::string run = (p.dir / "run").string();
  Run tr = fdd_cli(p.with({"train", "--run-dir", run, "--with-baseline"}));
  REQUIRE(tr.code == 0);
  const std::string metrics = fdd::read_file(fs::path(run) / "metrics.jsonl");
  const auto log = lines_of(metrics);
  CHECK(log.size() == 3);
  CHECK(fs::exists(fs::path(run) / "student.ckpt"));
  CHECK(fs::exists(fs::path(run) / "trainer.ckpt"));
  CHECK(fs::exists(fs::path(run) / "manifest.json"));

  // The final accuracy in the log is reproduced by eval.
  const auto out = lines_of(tr.out);
  const std::string final_line = out.back();
  CHECK(final_line.rfind("final variant full_4ds", 0) == 0);
  const std::string target = (fs::path(p.data) / "target.fdd").string();
  Run ev = fdd_cli({"eval", "--checkpoint", (fs::path(run) / "student.ckpt").string(), "--dataset", target});
  REQUIRE(ev.code == 0);
  const std::string acc = last_field(lines_of(ev.out).back());
  CHECK(acc.size() == 6);
  CHECK(final_line.find("student_acc " + acc) != std::string::npos);
  Run ev_train = fdd_cli({"eval", "--checkpoint", (fs::path(run) / "trainer.ckpt").string(), "--dataset", target,
                          "--split", "train"});
  REQUIRE(ev_train.code == 0);
  CHECK(ev_train.out.find("split=train") != std::string::npos);
  CHECK(ev.out.find("split=test") != std::string::npos);

  // no_both reproduces the plain baseline.
  const std::string nb = (p.dir / "nb").string();
  Run rn = fdd_cli(p.with({"train", "--run-dir", nb, "--variant", "no_both", "--with-baseline"}));
  REQUIRE(rn.code == 0);
  const std::string nb_final = lines_of(rn.out).back();
  CHECK(nb_final.find("delta +0.00") != std::string::npos);

  CHECK(fdd_cli(p.with({"train", "--run-dir", nb, "--variant", "bogus"})).code == 2);
}

TEST_CASE("ablate and sweep tables") {
  Pipeline& p = pipeline();
  Run ab = fdd_cli(p.with({"ablate", "--run-dir", (p.dir / "ab").string(), "--variants", "full_4ds,no_both"}));
  REQUIRE(ab.code == 0);
  const auto rows = lines_of(ab.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].rfind("full_4ds", 0) == 0);
  CHECK(last_field(rows[1]) == "+0.00");
  CHECK(lines_of(fdd::read_file(p.dir / "ab" / "ablation.jsonl")).size() == 2);

  // no_both row matches a separate plain baseline run.
  Run base = fdd_cli(p.with({"train", "--run-dir", (p.dir / "nb2").string(), "--variant", "no_both", "--with-baseline"}));
  REQUIRE(base.code == 0);
  const std::string bl = lines_of(base.out).back();
  const std::string baseline = bl.substr(bl.find("baseline_acc ") + 13, 6);
  CHECK(rows[2].find(baseline) != std::string::npos);

  CHECK(fdd_cli(p.with({"ablate", "--variants", "full_4ds,nope"})).code == 2);

  Run sw = fdd_cli(p.with({"sweep", "--param", "gamma", "--values", "1,0.01,0.1", "--run-dir",
                           (p.dir / "sw").string()}));
  REQUIRE(sw.code == 0);
  const auto srows = lines_of(sw.out);
  REQUIRE(srows.size() == 4);
  CHECK(srows[1].rfind("0.01", 0) == 0);
  CHECK(srows[2].rfind("0.1", 0) == 0);
  CHECK(srows[3].rfind("1", 0) == 0);
  CHECK(fdd_cli(p.with({"sweep", "--param", "beta", "--values", "0,1"})).code == 2);
}
