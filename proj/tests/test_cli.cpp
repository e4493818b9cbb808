#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string output;
};

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "wmcir_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Run wmcir(const std::string& args) {
  const fs::path log = workdir() / "last.log";
  const std::string cmd = "cd '" + workdir().string() + "' && '" + WMCIR_CLI_PATH + "' " + args + " > '" +
                          log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream is(p);
  return nlohmann::json::parse(is);
}

const std::string kSmall = "--set max_steps=4 --set batch_size=4 --set predictor_depth=1 --set predictor_width=16 ";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("end-to-end pipeline") {
  Run r = wmcir("synth-data --n 8 --out data --seed 3");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(fs::exists(workdir() / "data" / "manifest.jsonl"));
  CHECK(fs::exists(workdir() / "data" / "run_manifest.json"));

  r = wmcir("train --data data --out run " + kSmall + "--seed 5 --log-every 0");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("L_pred") != std::string::npos);
  CHECK(fs::exists(workdir() / "run" / "checkpoint.ckpt"));
  CHECK(fs::exists(workdir() / "run" / "config.cfg"));
  const auto manifest = read_json(workdir() / "run" / "run_manifest.json");
  CHECK(manifest["command"] == "train");
  CHECK(manifest["seed"] == 5);
  CHECK(manifest.contains("version"));

  r = wmcir("embed-gallery --checkpoint run/checkpoint.ckpt --data data --out gal/gallery.bin --workers 2");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  r = wmcir("make-queries --data data --out qs --mode self");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  r = wmcir("make-queries --data data --out qc --mode composite --seed 4");
  REQUIRE_MESSAGE(r.code == 0, r.output);

  r = wmcir("evaluate --checkpoint run/checkpoint.ckpt --queries qc/queries.jsonl --gallery gal/gallery.bin "
            "--out ev1 --k 10,5,1");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto rep = read_json(workdir() / "ev1" / "report.json");
  CHECK(rep["ks"] == nlohmann::json::array({1, 5, 10}));
  CHECK(fs::exists(workdir() / "ev1" / "report.txt"));
  r = wmcir("evaluate --checkpoint run/checkpoint.ckpt --queries qc/queries.jsonl --gallery gal/gallery.bin "
            "--out ev2 --k 1,5,10 --workers 3");
  REQUIRE(r.code == 0);
  CHECK(read_json(workdir() / "ev2" / "report.json") == rep);

  r = wmcir("retrieve --checkpoint run/checkpoint.ckpt --queries qs/queries.jsonl --gallery gal/gallery.bin "
            "--out ret --top 3");
  REQUIRE_MESSAGE(r.code == 0, r.output);

  SUBCASE("resume continues the log") {
    r = wmcir("train --data data --out run --resume run/checkpoint.ckpt " + kSmall +
              "--set max_steps=6 --seed 5 --log-every 0");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    std::ifstream is(workdir() / "run" / "metrics.jsonl");
    int expect = 0;
    for (std::string line; std::getline(is, line); ++expect) CHECK(nlohmann::json::parse(line)["step"] == expect);
    CHECK(expect == 6);
  }

  SUBCASE("mismatched gallery dimension is an explicit error") {
    r = wmcir("train --data data --out run_d16 " + kSmall + "--set embed_dim=16 --log-every 0");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    r = wmcir("evaluate --checkpoint run_d16/checkpoint.ckpt --queries qc/queries.jsonl --gallery gal/gallery.bin "
              "--out ev3");
    CHECK(r.code == 1);
    CHECK(r.output.find("dimension") != std::string::npos);
  }
}

TEST_CASE("validation failures exit with code 1") {
  CHECK(wmcir("train --no-such-flag").code == 1);
  CHECK(wmcir("frobnicate").code == 1);
  Run r = wmcir("train --data data --out bad --set warmup_step=3");
  CHECK(r.code == 1);
  CHECK(r.output.find("warmup_steps") != std::string::npos);
  CHECK(wmcir("verify --suite nope").code == 1);
  CHECK(wmcir("evaluate --checkpoint missing.ckpt --queries q --gallery g --k 0").code != 0);
}

TEST_CASE("verify oracle suite") {
  Run r = wmcir("verify --suite oracle --out vr");
  CHECK_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("PASS") != std::string::npos);
  CHECK(read_json(workdir() / "vr" / "verify.json")["oracle"]["passed"] == true);
}

TEST_CASE("version flag") {
  Run r = wmcir("--version");
  CHECK(r.code == 0);
  CHECK_FALSE(r.output.empty());
}

}  // TEST_SUITE
