#include "mf2sf/training.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include "mf2sf/parallel.hpp"

namespace mf2sf {

using TensorF = tensor::Tensor<float>;

LossConfig LossConfig::for_class(ObjectClass cls, bool mean_consistency) {
  LossConfig cfg;
  cfg.mean_consistency = mean_consistency;
  if (mean_consistency) {
    cfg.lambda = cls == ObjectClass::kVehicle ? 1.0 : 0.1;
  } else {
    cfg.lambda = cls == ObjectClass::kVehicle ? 0.1 : 0.01;
  }
  return cfg;
}

void LossConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("focal alpha must be in (0, 1)");
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal gamma must be non-negative");
  if (!(sigma > 0.0)) throw std::invalid_argument("huber sigma must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("consistency weight must be finite and >= 0");
}

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kTeacher: return "teacher";
    case TrainMode::kStudent: return "student";
    case TrainMode::kBaseline: return "baseline";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "teacher") return TrainMode::kTeacher;
  if (name == "student") return TrainMode::kStudent;
  if (name == "baseline") return TrainMode::kBaseline;
  throw std::invalid_argument("unknown training mode '" + name + "'");
}

void StageConfig::validate() const {
  if (n_frames_teacher < 1) throw std::invalid_argument("teacher needs at least one frame");
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (!(warmup_fraction >= 0.0 && warmup_fraction <= 1.0)) throw std::invalid_argument("warmup fraction must be in [0, 1]");
}

std::string to_json_line(const LogRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "{\"step\":%" PRId64 ",\"lr\":%.9g,\"l_cls\":%.9g,\"l_loc\":%.9g,\"l_c\":%.9g,\"total\":%.9g}", r.step,
                r.lr, r.l_cls, r.l_loc, r.l_c, r.total);
  return buf;
}

std::vector<SampleRef> enumerate_samples(const std::vector<Sequence>& data) {
  std::vector<SampleRef> out;
  for (std::size_t s = 0; s < data.size(); ++s) {
    for (std::size_t f = 0; f < data[s].frames.size(); ++f) out.push_back({s, f});
  }
  return out;
}

AggregatedCloud model_input(const Sequence& seq, std::size_t frame, int n_frames) {
  if (frame >= seq.frames.size()) throw std::out_of_range("frame index past the sequence end");
  if (n_frames < 1) throw std::invalid_argument("model input needs at least one frame");
  const std::size_t first = frame + 1 >= static_cast<std::size_t>(n_frames) ? frame + 1 - static_cast<std::size_t>(n_frames) : 0;
  if (n_frames == 1) {
    const auto& f = seq.frames[frame];
    AggregatedCloud c;
    c.points = f.points;
    c.features = f.features;
    c.frame_index.assign(static_cast<std::size_t>(f.points.rows()), 0);
    c.point_index.resize(static_cast<std::size_t>(f.points.rows()));
    for (std::size_t i = 0; i < c.point_index.size(); ++i) c.point_index[i] = static_cast<std::uint32_t>(i);
    return c;
  }
  const std::span<const PointCloudFrame> window(seq.frames.data() + first, frame - first + 1);
  return aggregate_tracked(window, frame - first);
}

std::vector<BoundingBox> training_boxes(const PointCloudFrame& frame, ObjectClass cls) {
  std::vector<BoundingBox> out;
  for (const auto& b : frame.boxes) {
    if (b.class_id != cls) continue;
    const Mask m = points_in_box(frame.points, b);
    if (std::find(m.begin(), m.end(), true) != m.end()) out.push_back(b);
  }
  return out;
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t model_seed(std::uint64_t run_seed) { return splitmix(run_seed ^ 0x6D6F64656Cull); }

std::uint64_t shuffle_seed(std::uint64_t run_seed, std::uint64_t epoch) {
  return splitmix(splitmix(run_seed ^ 0x73687566ull) + epoch);
}

struct Batch {
  double l_cls = 0.0, l_loc = 0.0, l_c = 0.0, total = 0.0;
};

class Trainer {
 public:
  Trainer(const std::vector<Sequence>& data, const TrainConfig& cfg, TrainMode mode, const Detector<float>* teacher)
      : data_(data), cfg_(cfg), mode_(mode), teacher_(teacher), model_(cfg.detector, cfg.grid, model_seed(cfg.stage.seed)) {
    retain_heap_memory();
    cfg_.stage.validate();
    cfg_.loss.validate();
    cfg_.grid.validate();
    if (mode_ == TrainMode::kStudent) {
      if (!teacher_) throw std::invalid_argument("student training needs a teacher");
      check_teacher();
    }
    samples_ = enumerate_samples(data_);
    if (samples_.empty()) throw std::invalid_argument("no training samples");
    targets_.reserve(samples_.size());
    for (const auto& s : samples_) {
      targets_.push_back(assign_targets(training_boxes(data_[s.sequence].frames[s.frame], cfg_.cls), cfg_.grid));
    }
  }

  TrainResult run() {
    const auto n = static_cast<std::int64_t>(samples_.size());
    const std::int64_t batch = cfg_.stage.batch_size;
    const std::int64_t steps_per_epoch = (n + batch - 1) / batch;
    const std::int64_t total_steps = steps_per_epoch * cfg_.stage.epochs;
    const auto warmup = static_cast<std::int64_t>(std::llround(static_cast<double>(total_steps) * cfg_.stage.warmup_fraction));

    std::ofstream log_file;
    if (cfg_.out_dir) {
      std::filesystem::create_directories(*cfg_.out_dir / "checkpoints");
      log_file.open(*cfg_.out_dir / "train_log.jsonl", std::ios::trunc);
      if (!log_file) throw std::runtime_error("cannot write training log in " + cfg_.out_dir->string());
    }

    tensor::Adam<float> adam(model_.params());
    std::vector<LogRecord> log;
    std::int64_t step = 0;
    for (int epoch = 0; epoch < cfg_.stage.epochs; ++epoch) {
      std::vector<std::size_t> order(samples_.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::mt19937_64 rng(shuffle_seed(cfg_.stage.seed, static_cast<std::uint64_t>(epoch)));
      std::shuffle(order.begin(), order.end(), rng);

      double epoch_total = 0.0;
      for (std::int64_t b = 0; b < steps_per_epoch; ++b, ++step) {
        const std::int64_t lo = b * batch, hi = std::min(n, lo + batch);
        model_.params().zero_grad();
        Batch sums;
        const float seed = 1.0f / static_cast<float>(hi - lo);
        for (std::int64_t i = lo; i < hi; ++i) {
          const std::size_t idx = order[static_cast<std::size_t>(i)];
          const Batch one = sample_step(idx, sample_seed(cfg_.stage.seed, static_cast<std::uint64_t>(epoch), idx), seed, step);
          sums.l_cls += one.l_cls;
          sums.l_loc += one.l_loc;
          sums.l_c += one.l_c;
          sums.total += one.total;
        }
        const double lr = cfg_.lr(step, total_steps, warmup);
        try {
          adam.step(model_.params(), lr);
        } catch (const std::runtime_error& e) {
          throw TrainingError("step " + std::to_string(step) + ": " + e.what());
        }
        const double k = static_cast<double>(hi - lo);
        LogRecord rec{step, lr, sums.l_cls / k, sums.l_loc / k, sums.l_c / k, sums.total / k};
        if (log_file) log_file << to_json_line(rec) << '\n' << std::flush;
        log.push_back(rec);
        epoch_total += rec.total;
      }
      if (cfg_.out_dir) {
        char name[32];
        std::snprintf(name, sizeof(name), "epoch_%03d.ckpt", epoch + 1);
        tensor::write_bytes(*cfg_.out_dir / "checkpoints" / name, tensor::encode_checkpoint(model_.params()));
      }
      if (cfg_.verbose) {
        std::fprintf(stderr, "[%s] epoch %d/%d  mean loss %.5f\n", to_string(mode_), epoch + 1, cfg_.stage.epochs,
                     epoch_total / static_cast<double>(steps_per_epoch));
      }
    }
    if (cfg_.out_dir) tensor::write_bytes(*cfg_.out_dir / "model.ckpt", tensor::encode_checkpoint(model_.params()));
    return {std::move(model_), std::move(log)};
  }

 private:
  void check_teacher() const {
    const auto& t = teacher_->params().entries;
    const auto& s = model_.params().entries;
    bool same = t.size() == s.size();
    for (std::size_t i = 0; same && i < t.size(); ++i) same = t[i].first == s[i].first && t[i].second.shape() == s[i].second.shape();
    if (!same) throw std::invalid_argument("teacher and student architectures differ");
    if (teacher_->config().distill_layer != model_.config().distill_layer) {
      throw std::invalid_argument("teacher and student distill different layers");
    }
  }

  Batch sample_step(std::size_t idx, std::uint64_t pillar_seed, float backward_seed, std::int64_t step) {
    const SampleRef& s = samples_[idx];
    const Sequence& seq = data_[s.sequence];
    const int frames = mode_ == TrainMode::kTeacher ? cfg_.stage.n_frames_teacher : 1;
    Batch out;
    try {
      const AggregatedCloud cloud = model_input(seq, s.frame, frames);
      const auto pred = model_.forward(pillarize(cloud.points, cloud.features, cfg_.grid, pillar_seed));
      const auto det = detection_loss(pred, targets_[idx], cfg_.loss);
      TensorF total = det.total;
      if (mode_ == TrainMode::kStudent) {
        const TensorF reference = teacher_features(seq, s.frame, pillar_seed);
        const TensorF lc = consistency_loss(pred.distill, reference, cfg_.loss.mean_consistency);
        total = tensor::add(total, tensor::scale(lc, static_cast<float>(cfg_.loss.lambda)));
        out.l_c = lc.item();
      }
      out.l_cls = det.cls.item();
      out.l_loc = det.loc.item();
      out.total = total.item();
      if (!std::isfinite(out.total)) throw std::runtime_error("non-finite loss");
      total.backward(backward_seed);
    } catch (const TrainingError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw TrainingError("step " + std::to_string(step) + ": " + e.what());
    }
    return out;
  }

  TensorF teacher_features(const Sequence& seq, std::size_t frame, std::uint64_t pillar_seed) const {
    tensor::NoGradGuard guard;
    const AggregatedCloud cloud = model_input(seq, frame, cfg_.stage.n_frames_teacher);
    const auto out = teacher_->forward(pillarize(cloud.points, cloud.features, cfg_.grid, pillar_seed));
    return TensorF::constant(out.distill.shape(), out.distill.value());
  }

  const std::vector<Sequence>& data_;
  TrainConfig cfg_;
  TrainMode mode_;
  const Detector<float>* teacher_;
  Detector<float> model_;
  std::vector<SampleRef> samples_;
  std::vector<TargetMap> targets_;
};

}  // namespace

std::uint64_t sample_seed(std::uint64_t run_seed, std::uint64_t epoch, std::size_t sample) {
  return splitmix(splitmix(splitmix(run_seed) + epoch) + sample);
}

TrainResult train_teacher(const std::vector<Sequence>& data, const TrainConfig& cfg) {
  return Trainer(data, cfg, TrainMode::kTeacher, nullptr).run();
}

TrainResult train_student(const std::vector<Sequence>& data, const Detector<float>& teacher, const TrainConfig& cfg) {
  return Trainer(data, cfg, TrainMode::kStudent, &teacher).run();
}

TrainResult train_baseline(const std::vector<Sequence>& data, const TrainConfig& cfg) {
  return Trainer(data, cfg, TrainMode::kBaseline, nullptr).run();
}

StudentLossBreakdown student_loss(const Detector<float>& student, const Detector<float>& teacher, const Sequence& seq,
                                  std::size_t frame, const TrainConfig& cfg, std::uint64_t pillar_seed) {
  tensor::NoGradGuard guard;
  const auto& f = seq.frames.at(frame);
  const auto s_out = student.forward(pillarize(f.points, f.features, cfg.grid, pillar_seed));
  const AggregatedCloud agg = model_input(seq, frame, cfg.stage.n_frames_teacher);
  const auto t_out = teacher.forward(pillarize(agg.points, agg.features, cfg.grid, pillar_seed));
  const auto det = detection_loss(s_out, assign_targets(training_boxes(f, cfg.cls), cfg.grid), cfg.loss);
  const TensorF lc = consistency_loss(s_out.distill, t_out.distill, cfg.loss.mean_consistency);
  StudentLossBreakdown b;
  b.l_cls = det.cls.item();
  b.l_loc = det.loc.item();
  b.l_c = lc.item();
  b.total = tensor::add(det.total, tensor::scale(lc, static_cast<float>(cfg.loss.lambda))).item();
  return b;
}

namespace {

std::vector<GroundTruth> frame_ground_truth(const PointCloudFrame& frame, const GridConfig& grid, ObjectClass cls) {
  std::vector<GroundTruth> out;
  for (const auto& b : frame.boxes) {
    if (b.class_id != cls) continue;
    const double x = b.center.x(), y = b.center.y();
    if (x < grid.x_min || x >= grid.x_max || y < grid.y_min || y >= grid.y_max) continue;
    const Mask m = points_in_box(frame.points, b);
    out.push_back({b, static_cast<int>(std::count(m.begin(), m.end(), true))});
  }
  return out;
}

}  // namespace

std::vector<FrameDetections> ground_truth_frames(const std::vector<Sequence>& data, const GridConfig& grid,
                                                 ObjectClass cls) {
  std::vector<FrameDetections> out;
  for (const auto& s : enumerate_samples(data)) {
    FrameDetections fd;
    fd.ground_truth = frame_ground_truth(data[s.sequence].frames[s.frame], grid, cls);
    out.push_back(std::move(fd));
  }
  return out;
}

std::vector<FrameDetections> run_inference(const Detector<float>& model, const std::vector<Sequence>& data,
                                           const InferenceConfig& cfg) {
  const auto samples = enumerate_samples(data);
  std::vector<FrameDetections> out(samples.size());
  parallel_for(samples.size(), [&](std::size_t i) {
    tensor::NoGradGuard guard;
    const auto& s = samples[i];
    const Sequence& seq = data[s.sequence];
    const AggregatedCloud cloud = model_input(seq, s.frame, cfg.n_frames);
    const auto pred = model.forward(pillarize(cloud.points, cloud.features, model.grid(), sample_seed(0, s.sequence, s.frame)));
    out[i].predictions = decode(pred, model.grid(), cfg.decode, cfg.cls);
    out[i].ground_truth = frame_ground_truth(seq.frames[s.frame], model.grid(), cfg.cls);
  });
  return out;
}

}  // namespace mf2sf
