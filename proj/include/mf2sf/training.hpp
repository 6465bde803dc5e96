#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mf2sf/detector.hpp"
#include "mf2sf/eval.hpp"
#include "mf2sf/simdata.hpp"
#include "mf2sf/tensor.hpp"

namespace mf2sf {

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  double sigma = 3.0;
  /// Consistency weight. The default pairs with the element-mean
  /// consistency; the per-class values 0.1 / 0.01 apply to the plain sum.
  double lambda = 1.0;
  /// Weight negatives by (1 - alpha) instead of alpha.
  bool standard_alpha = false;
  /// Divide classification and localization sums by the positive count.
  bool normalize_by_positives = true;
  /// Mean over elements instead of the plain squared norm.
  bool mean_consistency = true;

  static LossConfig for_class(ObjectClass cls, bool mean_consistency = true);
  void validate() const;
};

// ---------------------------------------------------------------------------
// Loss ops

/// Sum over elements of the two-branch focal loss on probabilities `p`
/// (clamped to [1e-7, 1 - 1e-7]; clamped entries pass no gradient).
template <typename Scalar>
tensor::Tensor<Scalar> focal_loss(const tensor::Tensor<Scalar>& p, const std::vector<double>& labels, double alpha,
                                  double gamma, bool standard_alpha = false) {
  if (static_cast<tensor::Index>(labels.size()) != p.size()) {
    throw tensor::ShapeError("focal_loss: " + std::to_string(labels.size()) + " labels for " + tensor::to_string(p.shape()));
  }
  constexpr double kEps = 1e-7;
  const double neg_alpha = standard_alpha ? 1.0 - alpha : alpha;
  const auto& v = p.value();
  typename tensor::Tensor<Scalar>::Vector dloss(v.size());
  double total = 0.0;
  for (tensor::Index i = 0; i < v.size(); ++i) {
    const double raw = static_cast<double>(v[i]);
    const double q = std::clamp(raw, kEps, 1.0 - kEps);
    const bool clamped = q != raw;
    double loss = 0.0, grad = 0.0;
    if (labels[static_cast<std::size_t>(i)] > 0.5) {
      const double w = std::pow(1.0 - q, gamma);
      loss = -alpha * w * std::log(q);
      grad = alpha * (gamma * std::pow(1.0 - q, gamma - 1.0) * std::log(q) - w / q);
    } else {
      const double w = std::pow(q, gamma);
      loss = -neg_alpha * w * std::log(1.0 - q);
      grad = -neg_alpha * (gamma * std::pow(q, gamma - 1.0) * std::log(1.0 - q) - w / (1.0 - q));
    }
    total += loss;
    dloss[i] = clamped ? Scalar(0) : static_cast<Scalar>(grad);
  }
  using V = typename tensor::Tensor<Scalar>::Vector;
  return tensor::detail::make_op<Scalar>("focal_loss", {}, V::Constant(1, static_cast<Scalar>(total)), {p},
                                         [dloss = std::move(dloss)](tensor::Node<Scalar>& o) {
                                           if (auto* g = tensor::detail::grad_of(o, 0)) *g += o.grad[0] * dloss;
                                         });
}

/// Elementwise Huber of d = pred - target summed over channels at masked
/// pixels. `pred` is (C, H, W); `target` has C*H*W entries; `mask` H*W.
template <typename Scalar>
tensor::Tensor<Scalar> huber_loss(const tensor::Tensor<Scalar>& pred, const std::vector<double>& target,
                                  const std::vector<double>& mask, double sigma) {
  if (pred.rank() != 3 || static_cast<tensor::Index>(target.size()) != pred.size() ||
      static_cast<tensor::Index>(mask.size()) * pred.dim(0) != pred.size()) {
    throw tensor::ShapeError("huber_loss: prediction " + tensor::to_string(pred.shape()) + ", " +
                             std::to_string(target.size()) + " targets, " + std::to_string(mask.size()) + " mask entries");
  }
  const double s2 = sigma * sigma;
  const tensor::Index plane = static_cast<tensor::Index>(mask.size());
  const auto& v = pred.value();
  typename tensor::Tensor<Scalar>::Vector dloss = tensor::Tensor<Scalar>::Vector::Zero(v.size());
  double total = 0.0;
  for (tensor::Index i = 0; i < v.size(); ++i) {
    if (!(mask[static_cast<std::size_t>(i % plane)] > 0.5)) continue;
    const double d = static_cast<double>(v[i]) - target[static_cast<std::size_t>(i)];
    if (std::abs(d) < 1.0 / s2) {
      total += 0.5 * d * d * s2;
      dloss[i] = static_cast<Scalar>(d * s2);
    } else {
      total += std::abs(d) - 0.5 / s2;
      dloss[i] = static_cast<Scalar>(d > 0.0 ? 1.0 : -1.0);
    }
  }
  using V = typename tensor::Tensor<Scalar>::Vector;
  return tensor::detail::make_op<Scalar>("huber_loss", {}, V::Constant(1, static_cast<Scalar>(total)), {pred},
                                         [dloss = std::move(dloss)](tensor::Node<Scalar>& o) {
                                           if (auto* g = tensor::detail::grad_of(o, 0)) *g += o.grad[0] * dloss;
                                         });
}

/// Squared L2 distance between student and teacher features, optionally
/// divided by the element count.
template <typename Scalar>
tensor::Tensor<Scalar> consistency_loss(const tensor::Tensor<Scalar>& student, const tensor::Tensor<Scalar>& teacher,
                                        bool mean = true) {
  const auto sq = tensor::square(tensor::sub(student, teacher));
  return mean ? tensor::mean(sq) : tensor::sum(sq);
}

template <typename Scalar>
struct LossTerms {
  tensor::Tensor<Scalar> cls;
  tensor::Tensor<Scalar> loc;
  tensor::Tensor<Scalar> total;
};

/// L_cls + L_loc for one sample.
template <typename Scalar>
LossTerms<Scalar> detection_loss(const DetectionOutput<Scalar>& out, const TargetMap& targets, const LossConfig& cfg) {
  LossTerms<Scalar> t;
  const double norm = cfg.normalize_by_positives ? 1.0 / std::max(1, targets.num_positive) : 1.0;
  t.cls = tensor::scale(focal_loss(out.existence, targets.existence, cfg.alpha, cfg.gamma, cfg.standard_alpha),
                        static_cast<Scalar>(norm));
  t.loc = tensor::scale(huber_loss(out.localization, targets.regression, targets.existence, cfg.sigma),
                        static_cast<Scalar>(norm));
  t.total = tensor::add(t.cls, t.loc);
  return t;
}

// ---------------------------------------------------------------------------
// Training pipeline

enum class TrainMode { kTeacher, kStudent, kBaseline };

const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct StageConfig {
  int n_frames_teacher = 5;
  int epochs = 75;
  int batch_size = 8;
  double warmup_fraction = 5.0 / 75.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainConfig {
  StageConfig stage;
  LossConfig loss;
  GridConfig grid;
  DetectorConfig detector;
  tensor::LrSchedule lr;
  ObjectClass cls = ObjectClass::kVehicle;
  /// Checkpoints and the training log go here when set.
  std::optional<std::filesystem::path> out_dir;
  bool verbose = false;
};

struct LogRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double l_cls = 0.0;
  double l_loc = 0.0;
  double l_c = 0.0;
  double total = 0.0;
};

std::string to_json_line(const LogRecord& r);

struct TrainResult {
  Detector<float> model;
  std::vector<LogRecord> log;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One training example: frame `frame` of sequence `sequence`.
struct SampleRef {
  std::size_t sequence = 0;
  std::size_t frame = 0;
};

std::vector<SampleRef> enumerate_samples(const std::vector<Sequence>& data);

/// Input cloud for a sample: the single frame, or frames [t - n + 1, t]
/// aggregated with box tracks into frame t (fewer at the sequence start).
AggregatedCloud model_input(const Sequence& seq, std::size_t frame, int n_frames);

/// Labeled boxes of `cls` in frame t that carry at least one point of that frame.
std::vector<BoundingBox> training_boxes(const PointCloudFrame& frame, ObjectClass cls);

/// Per-sample pillarization seed.
std::uint64_t sample_seed(std::uint64_t run_seed, std::uint64_t epoch, std::size_t sample);

/// Stage 1: multi-frame teacher on tracked aggregates.
TrainResult train_teacher(const std::vector<Sequence>& data, const TrainConfig& cfg);
/// Stage 2: single-frame student supervised by the frozen teacher's features.
TrainResult train_student(const std::vector<Sequence>& data, const Detector<float>& teacher, const TrainConfig& cfg);
/// Single-frame model with detection losses only.
TrainResult train_baseline(const std::vector<Sequence>& data, const TrainConfig& cfg);

/// Loss terms of the first batch sample of a student step, for checks.
struct StudentLossBreakdown {
  double l_cls = 0.0;
  double l_loc = 0.0;
  double l_c = 0.0;
  double total = 0.0;
};
StudentLossBreakdown student_loss(const Detector<float>& student, const Detector<float>& teacher, const Sequence& seq,
                                  std::size_t frame, const TrainConfig& cfg, std::uint64_t pillar_seed);

// ---------------------------------------------------------------------------
// Inference and evaluation

struct InferenceConfig {
  int n_frames = 1;  // >1 feeds tracked aggregates (oracle setting)
  DecodeConfig decode;
  ObjectClass cls = ObjectClass::kVehicle;
};

/// Detections plus ground truth for every frame of every sequence. Ground
/// truth is restricted to the grid's BEV range; point counts come from the
/// single-frame cloud.
std::vector<FrameDetections> run_inference(const Detector<float>& model, const std::vector<Sequence>& data,
                                           const InferenceConfig& cfg);

/// Ground truth only, with predictions left empty.
std::vector<FrameDetections> ground_truth_frames(const std::vector<Sequence>& data, const GridConfig& grid, ObjectClass cls);

}  // namespace mf2sf
