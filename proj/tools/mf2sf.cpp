// Command-line entry point: gen-data, train, eval, report.
//
// Exit codes: 0 success, 1 internal failure, 2 usage error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mf2sf/parallel.hpp"
#include "mf2sf/report.hpp"
#include "mf2sf/training.hpp"

#ifndef MF2SF_GIT_DESCRIBE
#define MF2SF_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace mf2sf;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::map<std::string, ObjectClass> kClasses = {{"vehicle", ObjectClass::kVehicle},
                                                     {"pedestrian", ObjectClass::kPedestrian}};
const std::map<std::string, FeatureLayer> kLayers = {{"pillars", FeatureLayer::kPillarImage},
                                                     {"block1", FeatureLayer::kBlock1},
                                                     {"backbone", FeatureLayer::kBackbone}};

std::string layer_name(FeatureLayer l) {
  for (const auto& [name, v] : kLayers) {
    if (v == l) return name;
  }
  return "?";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Manifest listing everything a run wrote. No timestamps, so reruns are
/// byte-identical.
void write_manifest_json(const fs::path& dir, const std::string& command, json config, json seeds,
                         const std::vector<std::string>& artifacts, json metrics = json::object()) {
  json m;
  m["command"] = command;
  m["git_describe"] = MF2SF_GIT_DESCRIBE;
  m["config"] = std::move(config);
  m["seeds"] = std::move(seeds);
  m["artifacts"] = artifacts;
  m["metrics"] = std::move(metrics);
  write_text(dir / "manifest.json", m.dump(2) + "\n");
}

void require_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("data directory not found: " + dir.string());
  if (!fs::exists(dir / kManifestName)) throw UsageError("no " + std::string(kManifestName) + " in " + dir.string());
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  fs::path out;
  DatasetConfig data;
};

void run_gen_data(const GenDataArgs& a) {
  const auto files = write_dataset(a.data, a.out);
  std::vector<std::string> artifacts = files;
  artifacts.push_back("manifest.json");
  json config = {{"sequences", a.data.sequences},
                 {"frames", a.data.frames},
                 {"class", to_string(a.data.cls)},
                 {"val_fraction", a.data.val_fraction}};
  write_manifest_json(a.out, "gen-data", config, {{"seed", a.data.seed}}, artifacts);
  std::printf("wrote %d sequences (%d validation) to %s\n", a.data.sequences, a.data.validation_count(),
              a.out.string().c_str());
}

struct TrainArgs {
  std::string mode;
  fs::path data;
  fs::path out;
  std::optional<fs::path> teacher;
  std::optional<double> lambda;
  int epochs = 75;
  int batch = 8;
  int frames = 5;
  std::uint64_t seed = 0;
  ObjectClass cls = ObjectClass::kVehicle;
  int channels = 32;
  FeatureLayer layer = FeatureLayer::kBackbone;
  bool standard_alpha = false;
  bool sum_consistency = false;
  bool quiet = false;
};

DetectorConfig detector_config(int channels, FeatureLayer layer) {
  DetectorConfig dc;
  dc.channels = channels;
  dc.distill_layer = layer;
  return dc;
}

Detector<float> load_detector(const fs::path& path, const DetectorConfig& dc) {
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path.string());
  Detector<float> model(dc, GridConfig{}, 0);
  tensor::load_checkpoint(tensor::read_bytes(path), model.params());
  return model;
}

void run_train(const TrainArgs& a) {
  const TrainMode mode = train_mode_from_string(a.mode);
  if (mode == TrainMode::kStudent && !a.teacher) throw UsageError("--mode student requires --teacher CKPT");
  if (mode != TrainMode::kStudent && a.teacher) throw UsageError("--teacher is only used with --mode student");
  require_dataset(a.data);

  TrainConfig cfg;
  cfg.cls = a.cls;
  cfg.loss = LossConfig::for_class(a.cls, !a.sum_consistency);
  if (a.lambda) cfg.loss.lambda = *a.lambda;
  cfg.loss.standard_alpha = a.standard_alpha;
  cfg.stage.epochs = a.epochs;
  cfg.stage.batch_size = a.batch;
  cfg.stage.n_frames_teacher = a.frames;
  cfg.stage.seed = a.seed;
  cfg.detector = detector_config(a.channels, a.layer);
  cfg.out_dir = a.out;
  cfg.verbose = !a.quiet;
  try {
    cfg.stage.validate();
    cfg.loss.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto data = load_split(a.data, Split::kTrain);
  if (data.empty()) throw UsageError("no training sequences in " + a.data.string());

  TrainResult result = [&] {
    switch (mode) {
      case TrainMode::kTeacher: return train_teacher(data, cfg);
      case TrainMode::kStudent: return train_student(data, load_detector(*a.teacher, cfg.detector), cfg);
      case TrainMode::kBaseline: break;
    }
    return train_baseline(data, cfg);
  }();

  std::vector<std::string> artifacts = {"model.ckpt", "train_log.jsonl"};
  for (int e = 1; e <= a.epochs; ++e) {
    char name[48];
    std::snprintf(name, sizeof(name), "checkpoints/epoch_%03d.ckpt", e);
    artifacts.emplace_back(name);
  }
  artifacts.emplace_back("manifest.json");
  json config = {{"mode", to_string(mode)},
                 {"data", a.data.string()},
                 {"teacher", a.teacher ? a.teacher->string() : ""},
                 {"class", to_string(a.cls)},
                 {"lambda", mode == TrainMode::kStudent ? cfg.loss.lambda : 0.0},
                 {"epochs", a.epochs},
                 {"batch", a.batch},
                 {"teacher_frames", a.frames},
                 {"channels", a.channels},
                 {"distill_layer", layer_name(a.layer)},
                 {"standard_alpha", a.standard_alpha},
                 {"mean_consistency", cfg.loss.mean_consistency},
                 {"parameters", result.model.parameter_count()}};
  json metrics = {{"steps", result.log.size()}, {"final_loss", result.log.empty() ? 0.0 : result.log.back().total}};
  write_manifest_json(a.out, "train", config, {{"seed", a.seed}}, artifacts, metrics);
  std::printf("%s training done: %zu steps, final loss %.5f\n", to_string(mode), result.log.size(),
              result.log.empty() ? 0.0 : result.log.back().total);
}

struct EvalArgs {
  std::optional<fs::path> ckpt;
  std::optional<fs::path> predictions;
  fs::path data;
  fs::path out;
  std::string name;
  std::string split = "val";
  ObjectClass cls = ObjectClass::kVehicle;
  std::optional<double> iou;
  int frames = 1;
  int channels = 32;
  double score_threshold = 0.3;
  double nms_iou = 0.5;
  bool dump = false;
};

json report_json(const EvalReport& r) {
  auto cells = [](const auto& arr) {
    json j = json::array();
    for (const auto& v : arr) j.push_back(v ? json(*v) : json(nullptr));
    return j;
  };
  return {{"bev", cells(r.bev)}, {"iou3d", cells(r.iou3d)}, {"gt_count", r.gt_count}, {"pred_count", r.pred_count}};
}

void run_eval(const EvalArgs& a) {
  if (a.ckpt.has_value() == a.predictions.has_value()) throw UsageError("give exactly one of --ckpt or --predictions");
  if (a.split != "val" && a.split != "train") throw UsageError("--split must be val or train");
  require_dataset(a.data);
  const auto data = load_split(a.data, a.split == "val" ? Split::kValidation : Split::kTrain);
  if (data.empty()) throw UsageError("no " + a.split + " sequences in " + a.data.string());

  std::vector<std::pair<std::size_t, std::size_t>> ids;
  for (const auto& s : enumerate_samples(data)) ids.emplace_back(s.sequence, s.frame);

  const GridConfig grid;
  std::vector<FrameDetections> frames;
  if (a.ckpt) {
    const Detector<float> model = load_detector(*a.ckpt, detector_config(a.channels, FeatureLayer::kBackbone));
    InferenceConfig ic;
    ic.n_frames = a.frames;
    ic.cls = a.cls;
    ic.decode.score_threshold = a.score_threshold;
    ic.decode.nms_iou = a.nms_iou;
    frames = run_inference(model, data, ic);
  } else {
    if (!fs::exists(*a.predictions)) throw UsageError("prediction dump not found: " + a.predictions->string());
    frames = ground_truth_frames(data, grid, a.cls);
    auto preds = predictions_from_json(read_text(*a.predictions), ids);
    for (std::size_t i = 0; i < frames.size(); ++i) {
      for (auto& p : preds[i]) {
        if (p.box.class_id == a.cls) frames[i].predictions.push_back(p);
      }
    }
  }

  EvalConfig ec = EvalConfig::for_class(a.cls);
  if (a.iou) ec.iou_threshold = *a.iou;
  try {
    ec.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const EvalReport report = evaluate(frames, ec);

  std::string name = a.name;
  if (name.empty()) name = a.ckpt ? fs::absolute(*a.ckpt).parent_path().filename().string() : "predictions";
  fs::create_directories(a.out);
  write_report_csv(a.out / "results.csv", {{name, report}});
  std::vector<std::string> artifacts = {"results.csv"};
  if (a.dump) {
    write_text(a.out / "predictions.json", predictions_to_json(frames, ids));
    artifacts.emplace_back("predictions.json");
  }
  artifacts.emplace_back("manifest.json");
  json config = {{"source", a.ckpt ? a.ckpt->string() : a.predictions->string()},
                 {"data", a.data.string()},
                 {"split", a.split},
                 {"class", to_string(a.cls)},
                 {"iou", ec.iou_threshold},
                 {"frames", a.frames},
                 {"score_threshold", a.score_threshold},
                 {"nms_iou", a.nms_iou},
                 {"name", name}};
  write_manifest_json(a.out, "eval", config, json::object(), artifacts, report_json(report));
  std::fputs(report_csv({{name, report}}).c_str(), stdout);
}

struct ReportArgs {
  std::vector<fs::path> runs;
  fs::path out;
};

void run_report(const ReportArgs& a) {
  std::vector<fs::path> csvs;
  for (const auto& r : a.runs) {
    const fs::path csv = fs::is_directory(r) ? r / "results.csv" : r;
    if (!fs::exists(csv)) throw UsageError("no results.csv for run " + r.string());
    csvs.push_back(csv);
  }
  const auto rows = combine_reports(csvs, a.out);
  json runs = json::array();
  for (const auto& r : a.runs) runs.push_back(r.string());
  json metrics = json::object();
  for (const auto& [name, r] : rows) metrics[name] = report_json(r);
  write_manifest_json(a.out, "report", {{"runs", runs}}, json::object(),
                      {"results.csv", "overall_ap.svg", "manifest.json"}, metrics);
  std::fputs(report_csv(rows).c_str(), stdout);
}

// ---------------------------------------------------------------------------

/// Appends "--key value" for every key=value line of the --config file whose
/// flag is not already on the command line, so explicit flags win.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (!path) return args;
  std::ifstream in(*path);
  if (!in) throw UsageError("cannot read config file " + *path);
  auto present = [&](const std::string& flag) {
    for (const auto& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  std::vector<std::string> extra;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(*path + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string flag = "--" + key;
    if (key == "config" || present(flag)) continue;
    if (value == "true") {
      extra.push_back(flag);
    } else if (value != "false") {
      extra.push_back(flag);
      extra.push_back(value);
    }
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  retain_heap_memory();
  CLI::App app{"Multi-frame to single-frame distillation for BEV detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("mf2sf ") + MF2SF_GIT_DESCRIBE);
  std::string config_path;

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic sequence dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--sequences", gen.data.sequences, "Number of sequences")->capture_default_str();
  gen_cmd->add_option("--frames", gen.data.frames, "Frames per sequence")->capture_default_str();
  gen_cmd->add_option("--seed", gen.data.seed, "Dataset seed")->capture_default_str();
  gen_cmd->add_option("--class", gen.data.cls, "Class the scenes are populated for")
      ->transform(CLI::CheckedTransformer(kClasses, CLI::ignore_case));
  gen_cmd->add_option("--val-fraction", gen.data.val_fraction, "Share of sequences held out")->capture_default_str();
  gen_cmd->add_option("--config", config_path, "key=value file; flags win");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a teacher, student or baseline model");
  train_cmd->add_option("--mode", tr.mode, "teacher | student | baseline")
      ->required()
      ->check(CLI::IsMember({"teacher", "student", "baseline"}));
  train_cmd->add_option("--data", tr.data, "Dataset directory")->required();
  train_cmd->add_option("--out", tr.out, "Run directory")->required();
  train_cmd->add_option("--teacher", tr.teacher, "Teacher checkpoint (student mode)");
  train_cmd->add_option("--lambda", tr.lambda, "Consistency weight (default depends on class)");
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--batch", tr.batch)->capture_default_str();
  train_cmd->add_option("--frames", tr.frames, "Frames aggregated for the teacher")->capture_default_str();
  train_cmd->add_option("--seed", tr.seed)->capture_default_str();
  train_cmd->add_option("--class", tr.cls)->transform(CLI::CheckedTransformer(kClasses, CLI::ignore_case));
  train_cmd->add_option("--channels", tr.channels)->capture_default_str();
  train_cmd->add_option("--distill-layer", tr.layer, "pillars | block1 | backbone")
      ->transform(CLI::CheckedTransformer(kLayers, CLI::ignore_case));
  train_cmd->add_flag("--standard-alpha", tr.standard_alpha, "Weight negatives by 1 - alpha");
  train_cmd->add_flag("--sum-consistency", tr.sum_consistency, "Sum the squared feature differences instead of averaging");
  train_cmd->add_flag("--quiet", tr.quiet, "No per-epoch progress");
  train_cmd->add_option("--config", config_path, "key=value file; flags win");

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint or a prediction dump");
  auto* ckpt_opt = eval_cmd->add_option("--ckpt", ev.ckpt, "Model checkpoint");
  eval_cmd->add_option("--predictions", ev.predictions, "Prediction dump (JSON)")->excludes(ckpt_opt);
  eval_cmd->add_option("--data", ev.data, "Dataset directory")->required();
  eval_cmd->add_option("--out", ev.out, "Output directory")->required();
  eval_cmd->add_option("--name", ev.name, "Row label in the results table");
  eval_cmd->add_option("--split", ev.split, "val | train")->capture_default_str();
  eval_cmd->add_option("--class", ev.cls)->transform(CLI::CheckedTransformer(kClasses, CLI::ignore_case));
  eval_cmd->add_option("--iou", ev.iou, "Match threshold (default 0.7 vehicle, 0.5 pedestrian)");
  eval_cmd->add_option("--frames", ev.frames, "Input frames (5 for the multi-frame oracle)")->capture_default_str();
  eval_cmd->add_option("--channels", ev.channels)->capture_default_str();
  eval_cmd->add_option("--score-threshold", ev.score_threshold)->capture_default_str();
  eval_cmd->add_option("--nms-iou", ev.nms_iou)->capture_default_str();
  eval_cmd->add_flag("--dump-predictions", ev.dump, "Also write predictions.json");
  eval_cmd->add_option("--config", config_path, "key=value file; flags win");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Combine eval results into one table and plot");
  report_cmd->add_option("--runs", rep.runs, "Eval directories or results CSVs")->required();
  report_cmd->add_option("--out", rep.out, "Output directory")->required();
  report_cmd->add_option("--config", config_path, "key=value file; flags win");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (*gen_cmd) {
      try {
        gen.data.validate();
      } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
      }
      run_gen_data(gen);
    } else if (*train_cmd) {
      run_train(tr);
    } else if (*eval_cmd) {
      run_eval(ev);
    } else if (*report_cmd) {
      run_report(rep);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return 0;
}
