#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mf2sf/report.hpp"
#include "mf2sf/training.hpp"

using namespace mf2sf;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "mf2sf_test_cli";

int run(const std::string& args) {
  const std::string cmd = std::string("\"") + MF2SF_CLI_PATH + "\" " + args + " > \"" + (kRoot / "stdout.txt").string() +
                          "\" 2> \"" + (kRoot / "stderr.txt").string() + "\"";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string path(const std::string& name) { return "\"" + (kRoot / name).string() + "\""; }

// Shared small dataset and one trained baseline, built once.
struct Fixture {
  Fixture() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
    gen_status = run("gen-data --out " + path("data") + " --sequences 3 --frames 2 --seed 5 --val-fraction 0.34");
    train_status = run("train --mode baseline --data " + path("data") + " --out " + path("base") +
                       " --epochs 1 --batch 2 --channels 8 --quiet");
  }
  int gen_status = -1;
  int train_status = -1;
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("gen-data writes a deterministic dataset") {
  REQUIRE(fixture().gen_status == 0);
  REQUIRE(run("gen-data --out " + path("data2") + " --sequences 3 --frames 2 --seed 5 --val-fraction 0.34") == 0);
  for (const auto& name : {"seq_0000.mf2sf", "seq_0002.mf2sf", "dataset.txt", "manifest.json"}) {
    CHECK(slurp(kRoot / "data" / name) == slurp(kRoot / "data2" / name));
  }
  CHECK(load_split(kRoot / "data", Split::kValidation).size() == 1);
  const auto m = nlohmann::json::parse(slurp(kRoot / "data" / "manifest.json"));
  CHECK(m["command"] == "gen-data");
  CHECK(m["seeds"]["seed"] == 5);
  CHECK_FALSE(m.contains("timestamp"));
}

TEST_CASE("train writes a checkpoint, a step log and a manifest") {
  REQUIRE(fixture().train_status == 0);
  CHECK(fs::exists(kRoot / "base" / "model.ckpt"));
  CHECK(fs::exists(kRoot / "base" / "checkpoints" / "epoch_001.ckpt"));
  std::istringstream log(slurp(kRoot / "base" / "train_log.jsonl"));
  std::string line;
  int steps = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("lr"));
    CHECK(j.contains("l_c"));
    ++steps;
  }
  CHECK(steps == 2);  // 4 training frames, batch 2
  const auto m = nlohmann::json::parse(slurp(kRoot / "base" / "manifest.json"));
  CHECK(m["command"] == "train");
  CHECK(m["config"]["mode"] == "baseline");
}

TEST_CASE("usage errors exit with 2") {
  REQUIRE(fixture().gen_status == 0);
  CHECK(run("train --mode student --data " + path("data") + " --out " + path("s") + " --epochs 1") == 2);
  CHECK(run("train --mode baseline --data " + path("missing") + " --out " + path("s") + " --epochs 1") == 2);
  CHECK(run("train --mode baseline --data " + path("data") + " --out " + path("s") + " --teacher x.ckpt") == 2);
  CHECK(run("train --mode nonsense --data " + path("data") + " --out " + path("s")) == 2);
  CHECK(run("eval --data " + path("data") + " --out " + path("e")) == 2);
  CHECK(run("eval --ckpt " + path("nope.ckpt") + " --data " + path("data") + " --out " + path("e")) == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("--version") == 0);
}

TEST_CASE("a perfect prediction dump scores 100 everywhere") {
  REQUIRE(fixture().gen_status == 0);
  const auto val = load_split(kRoot / "data", Split::kValidation);
  auto frames = ground_truth_frames(val, GridConfig{}, ObjectClass::kVehicle);
  std::vector<std::pair<std::size_t, std::size_t>> ids;
  for (const auto& s : enumerate_samples(val)) ids.emplace_back(s.sequence, s.frame);
  for (auto& f : frames) {
    for (const auto& g : f.ground_truth) f.predictions.push_back({g.box, 0.9});
  }
  {
    std::ofstream out(kRoot / "perfect.json");
    out << predictions_to_json(frames, ids);
  }
  REQUIRE(run("eval --predictions " + path("perfect.json") + " --data " + path("data") + " --out " + path("perfect") +
              " --name Perfect") == 0);
  const auto rows = read_report_csv(kRoot / "perfect" / "results.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].first == "Perfect");
  for (std::size_t bin = 0; bin < kNumBins; ++bin) {
    if (rows[0].second.iou3d[bin]) CHECK(*rows[0].second.iou3d[bin] == 1.0);
    if (rows[0].second.bev[bin]) CHECK(*rows[0].second.bev[bin] == 1.0);
  }
  CHECK(rows[0].second.iou3d[0].has_value());

  // A dump whose frame ids do not match the split is refused.
  ids[0].second += 7;
  {
    std::ofstream out(kRoot / "wrong.json");
    out << predictions_to_json(frames, ids);
  }
  CHECK(run("eval --predictions " + path("wrong.json") + " --data " + path("data") + " --out " + path("wrong")) != 0);
}

TEST_CASE("eval of a checkpoint is deterministic and its dump re-evaluates identically") {
  REQUIRE(fixture().train_status == 0);
  const std::string base = "eval --ckpt " + path("base/model.ckpt") + " --data " + path("data") +
                           " --channels 8 --score-threshold 0.005 --dump-predictions --name Base --out ";
  REQUIRE(run(base + path("ev1")) == 0);
  REQUIRE(run(base + path("ev2")) == 0);
  CHECK(slurp(kRoot / "ev1" / "results.csv") == slurp(kRoot / "ev2" / "results.csv"));
  CHECK(slurp(kRoot / "ev1" / "predictions.json") == slurp(kRoot / "ev2" / "predictions.json"));
  CHECK(slurp(kRoot / "stdout.txt") == slurp(kRoot / "ev2" / "results.csv"));
  REQUIRE(run("eval --predictions " + path("ev1/predictions.json") + " --data " + path("data") +
              " --name Base --out " + path("ev3")) == 0);
  CHECK(slurp(kRoot / "ev3" / "results.csv") == slurp(kRoot / "ev1" / "results.csv"));
}

TEST_CASE("report merges runs into one table and plot") {
  REQUIRE(fixture().gen_status == 0);
  EvalReport r;
  r.bev = {0.5, 0.6, std::nullopt, 0.1};
  r.iou3d = {0.4, 0.5, std::nullopt, 0.0};
  for (const auto& name : {"Baseline", "Student", "Oracle"}) {
    fs::create_directories(kRoot / "runs" / name);
    write_report_csv(kRoot / "runs" / name / "results.csv", {{name, r}});
  }
  REQUIRE(run("report --runs " + path("runs/Baseline") + " " + path("runs/Student") + " " + path("runs/Oracle") +
              " --out " + path("report")) == 0);
  const auto rows = read_report_csv(kRoot / "report" / "results.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[1].first == "Student");
  const std::string svg = slurp(kRoot / "report" / "overall_ap.svg");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("Oracle") != std::string::npos);
  CHECK(run("report --runs " + path("runs/none") + " --out " + path("report2")) == 2);
}

TEST_CASE("config files fill in flags that the command line leaves out") {
  REQUIRE(fixture().gen_status == 0);
  {
    std::ofstream cfg(kRoot / "gen.cfg");
    cfg << "# comment\nsequences = 3\nframes=2\nseed = 5\nval-fraction = 0.34\n";
  }
  REQUIRE(run("gen-data --config " + path("gen.cfg") + " --out " + path("data3")) == 0);
  CHECK(slurp(kRoot / "data3" / "seq_0001.mf2sf") == slurp(kRoot / "data" / "seq_0001.mf2sf"));
  {
    std::ofstream cfg(kRoot / "gen2.cfg");
    cfg << "seed = 6\n";
  }
  REQUIRE(run("gen-data --config " + path("gen2.cfg") + " --seed 5 --sequences 3 --frames 2 --val-fraction 0.34 --out " +
              path("data4")) == 0);
  CHECK(slurp(kRoot / "data4" / "seq_0001.mf2sf") == slurp(kRoot / "data" / "seq_0001.mf2sf"));
}
