#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include <json.hpp>

#include "facerig/io.hpp"
#include "helpers.hpp"

#ifdef FACERIG_CLI_PATH

using json = nlohmann::json;
using facerig::testing::TempDir;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd =
      std::string("'") + FACERIG_CLI_PATH + "' " + args + " >'" + out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = facerig::read_text_file(out);
  r.err = facerig::read_text_file(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2 with a JSON error") {
    TempDir dir;
    RunResult r = run_cli(dir, "");
    CHECK(r.exit_code == 2);
    CHECK(json::parse(r.err)["error"]["kind"] == "usage");
    r = run_cli(dir, "gen-model --bogus 3 -o x.json");
    CHECK(r.exit_code == 2);
    r = run_cli(dir, "eval --dataset a --checkpoint b --split nope");
    CHECK(r.exit_code == 2);
  }

  TEST_CASE("runtime errors exit 1 with the error kind") {
    TempDir dir;
    RunResult r = run_cli(dir, "gen-rig --model " + q(dir / "missing.json") + " -o " + q(dir / "rig.json"));
    CHECK(r.exit_code == 1);
    const json e = json::parse(r.err);
    CHECK(e["error"]["kind"] == "io_error");
    CHECK(e["error"]["message"].get<std::string>().find("missing.json") != std::string::npos);

    r = run_cli(dir, "gen-model --vertices 10 -o " + q(dir / "m.json"));
    CHECK(r.exit_code == 1);
    CHECK(json::parse(r.err)["error"]["kind"] == "invalid_size");
  }

  TEST_CASE("small pipeline end to end") {
    TempDir dir;
    REQUIRE(run_cli(dir, "gen-model --seed 1 --vertices 150 --identity-dim 10 -o " + q(dir / "model.json")).exit_code ==
            0);
    REQUIRE(run_cli(dir, "gen-rig --seed 2 --model " + q(dir / "model.json") + " -k 6 -o " + q(dir / "rig.json"))
                .exit_code == 0);
    REQUIRE(run_cli(dir, "gen-dataset --seed 3 --rig " + q(dir / "rig.json") + " --model " + q(dir / "model.json") +
                             " --count 200 --split 160,20,20 -o " + q(dir / "ds.json"))
                .exit_code == 0);
    RunResult r = run_cli(dir, "train --seed 4 --dataset " + q(dir / "ds.json") +
                                   " --hidden 16 --epochs 3 -o " + q(dir / "cp.json"));
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("best epoch") != std::string::npos);

    r = run_cli(dir, "eval --dataset " + q(dir / "ds.json") + " --checkpoint " + q(dir / "cp.json"));
    REQUIRE(r.exit_code == 0);
    const json ev = json::parse(r.out);
    CHECK(ev["samples"] == 20);
    CHECK(ev["mae"].get<double>() >= 0.0);

    REQUIRE(run_cli(dir, "gen-landmarks --seed 5 --rig " + q(dir / "rig.json") + " --frames 12 -o " +
                             q(dir / "lm.json"))
                .exit_code == 0);
    const std::string animate = "animate --model " + q(dir / "model.json") + " --rig " + q(dir / "rig.json") +
                                " --checkpoint " + q(dir / "cp.json") + " --landmarks " + q(dir / "lm.json") +
                                " --report-timing -o ";
    r = run_cli(dir, animate + q(dir / "a1.json"));
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("per-frame time (fit + adapter):") != std::string::npos);
    REQUIRE(run_cli(dir, animate + q(dir / "a2.json")).exit_code == 0);
    CHECK(facerig::read_text_file(dir / "a1.json") == facerig::read_text_file(dir / "a2.json"));
    const facerig::AnimationExport e = facerig::load_animation_export(dir / "a1.json");
    CHECK(e.frames.size() == 12);
    CHECK(e.channels.size() == 6);
  }

  TEST_CASE("K mismatch between checkpoint and rig is reported") {
    TempDir dir;
    REQUIRE(run_cli(dir, "gen-model --vertices 150 --identity-dim 5 -o " + q(dir / "model.json")).exit_code == 0);
    REQUIRE(run_cli(dir, "gen-rig --model " + q(dir / "model.json") + " -k 4 -o " + q(dir / "rig4.json")).exit_code ==
            0);
    REQUIRE(run_cli(dir, "gen-rig --model " + q(dir / "model.json") + " -k 5 -o " + q(dir / "rig5.json")).exit_code ==
            0);
    REQUIRE(run_cli(dir, "gen-dataset --rig " + q(dir / "rig4.json") + " --model " + q(dir / "model.json") +
                             " --count 20 --split 16,2,2 -o " + q(dir / "ds.json"))
                .exit_code == 0);
    REQUIRE(run_cli(dir, "train --dataset " + q(dir / "ds.json") + " --hidden 4 --epochs 1 -o " + q(dir / "cp.json"))
                .exit_code == 0);
    REQUIRE(run_cli(dir, "gen-landmarks --rig " + q(dir / "rig5.json") + " --frames 3 -o " + q(dir / "lm.json"))
                .exit_code == 0);
    const RunResult r = run_cli(dir, "animate --model " + q(dir / "model.json") + " --rig " + q(dir / "rig5.json") +
                                         " --checkpoint " + q(dir / "cp.json") + " --landmarks " + q(dir / "lm.json") +
                                         " -o " + q(dir / "a.json"));
    CHECK(r.exit_code == 1);
    CHECK(json::parse(r.err)["error"]["message"].get<std::string>().find("K=") != std::string::npos);
  }
}

#endif
