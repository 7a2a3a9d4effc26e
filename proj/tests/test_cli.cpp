#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "bkind/formats.hpp"
#include "test_support.hpp"

using namespace bkind;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const fs::path& cwd, const std::string& args) {
  const std::string cmd = "cd '" + cwd.string() + "' && '" BKIND_CLI "' " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

}  // namespace

TEST_CASE("end-to-end pipeline through the command line") {
  const fs::path dir = test::scratch("cli");

  auto r = run(dir, "synth --agents 2 --frames 20 --resolution 64 --seed 7 --out d");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "d" / "000019.png"));
  CHECK(fs::exists(dir / "d" / "masks" / "index.json"));
  CHECK(read_keypoint_csv(dir / "d" / "keypoints.csv").size() == 20 * 2 * 4);

  r = run(dir, "segment --frames d --detector oracle --out m");
  REQUIRE(r.code == 0);
  CHECK(nlohmann::json::parse(r.out)["ids"] == nlohmann::json({1, 2}));

  r = run(dir, "train --frames d --masks m --tiny --epochs 2 --frame-gap 2 --num-keypoints 4 --quiet --out run");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "run" / "epoch_0002.ckpt"));
  CHECK(fs::exists(dir / "run" / "config.snapshot"));

  SUBCASE("a run replays exactly from its snapshot") {
    r = run(dir, "train --frames d --masks m --config run/config.snapshot --quiet --out replay");
    REQUIRE(r.code == 0);
    CHECK(read_text(dir / "replay" / "config.snapshot") == read_text(dir / "run" / "config.snapshot"));
    CHECK(read_text(dir / "replay" / "losses.csv") == read_text(dir / "run" / "losses.csv"));
  }

  SUBCASE("inference, evaluation and plots") {
    r = run(dir, "infer --checkpoint run --frames d --masks m --out p.csv");
    REQUIRE(r.code == 0);
    const auto rows = read_inference_csv(dir / "p.csv");
    CHECK(rows.size() == 20 * 2 * 4);

    r = run(dir, "eval-regression --pred p.csv --gt d/keypoints.csv --image-size 64");
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["n_frames"] == 20);
    CHECK(j["pct_mse"].get<double>() >= 0.0);
    CHECK(j.contains("features_used"));

    r = run(dir, "features --pred p.csv --heatmap --out f.csv");
    REQUIRE(r.code == 0);
    const auto table = read_feature_csv(dir / "f.csv");
    CHECK(table.frames.size() == 20);
    CHECK(table.values.cols() == 8 + 8 + 28 + 28 + 8 * 4);

    std::vector<std::pair<int, int>> labels;
    for (int t = 0; t < 20; ++t) labels.emplace_back(t, (t / 5) % 2);
    write_label_csv(dir / "l.csv", labels);
    r = run(dir, "eval-behavior --features f.csv --labels l.csv --window 3 --epochs 2 --out beh");
    REQUIRE(r.code == 0);
    const auto b = nlohmann::json::parse(r.out);
    CHECK(b["map"].get<double>() >= 0.0);
    CHECK(b["map"].get<double>() <= 1.0);
    CHECK(fs::exists(dir / "beh" / "pr_class_1.csv"));

    r = run(dir, "plot --run run --frames d --pred p.csv --count 1");
    REQUIRE(r.code == 0);
    CHECK(fs::file_size(dir / "run" / "plots" / "losses.png") > 0);
    CHECK(fs::exists(dir / "run" / "plots" / "overlay_000000.png"));
    int frame0 = 0;
    for (const auto& row : rows) frame0 += row.frame == 0;
    CHECK(frame0 == 2 * 4);
  }

  SUBCASE("errors") {
    CHECK(run(dir, "train --frames d --no-such-flag").code == 2);
    CHECK(run(dir, "").code == 2);
    CHECK(run(dir, "train --frames d --masks m --epochs many").code == 2);
    CHECK(run(dir, "eval-regression --pred p.csv --gt d/keypoints.csv").code == 2);
    CHECK(run(dir, "infer --checkpoint nowhere --frames d --masks m").code == 1);
    fs::create_directories(dir / "empty");
    CHECK(run(dir, "plot --run empty").code == 1);
    CHECK(run(dir, "segment --help").code == 0);
  }
}

TEST_CASE("output root comes from the environment") {
  const fs::path dir = test::scratch("cli_env");
  const auto r = run(dir, "synth --frames 2 --resolution 64 --out '' >/dev/null; BKIND_OUTPUT_ROOT=root '" BKIND_CLI
                          "' synth --frames 2 --resolution 64");
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "root" / "synth" / "000001.png"));
}
