#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mf2sf/geometry.hpp"

namespace mf2sf {

/// Intersection area of two convex polygons (Sutherland-Hodgman).
double convex_intersection_area(const std::vector<Eigen::Vector2d>& subject,
                                const std::vector<Eigen::Vector2d>& clip);
double polygon_area(const std::vector<Eigen::Vector2d>& poly);

/// IoU of the rotated BEV footprints. Zero-area boxes give 0.
double bev_iou(const BoundingBox& a, const BoundingBox& b);
/// BEV intersection times vertical overlap, over the union volume.
double iou_3d(const BoundingBox& a, const BoundingBox& b);

struct ScoredBox {
  BoundingBox box;
  double score = 0.0;
};

struct GroundTruth {
  BoundingBox box;
  int num_points = 0;  // points of the evaluated cloud inside the box
};

struct FrameDetections {
  std::vector<ScoredBox> predictions;
  std::vector<GroundTruth> ground_truth;
};

inline constexpr std::size_t kNumBins = 4;  // overall, 0-30m, 30-50m, 50m-inf

struct EvalConfig {
  double iou_threshold = 0.7;
  std::array<double, 4> bin_edges = {0.0, 30.0, 50.0, std::numeric_limits<double>::infinity()};
  int min_points = 5;  // boxes need strictly more points than this

  static EvalConfig for_class(ObjectClass cls);
  void validate() const;
};

enum class IouKind { kBev, k3d };

/// One row of the results table: BEV and 3D AP overall and per distance bin.
/// Empty optionals are bins without ground truth.
struct EvalReport {
  std::array<std::optional<double>, kNumBins> bev{};
  std::array<std::optional<double>, kNumBins> iou3d{};
  std::array<int, kNumBins> gt_count{};
  std::array<int, kNumBins> pred_count{};
};

/// Area under the all-point interpolated precision-recall curve of
/// score-ranked detections.
double all_point_ap(std::vector<std::pair<double, bool>> scored_hits, int num_gt);

/// AP of one metric over one distance bin (0 = overall).
std::optional<double> average_precision(const std::vector<FrameDetections>& frames, const EvalConfig& cfg,
                                        IouKind kind, std::size_t bin);

EvalReport evaluate(const std::vector<FrameDetections>& frames, const EvalConfig& cfg);

/// CSV with one header row and one row per method:
/// Method, BEV Overall, BEV 0-30m, BEV 30-50m, BEV 50m-Inf, 3D Overall, ...
/// Values are percentages with two decimals; "-" marks not-applicable bins.
std::string report_csv(const std::vector<std::pair<std::string, EvalReport>>& rows);
void write_report_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, EvalReport>>& rows);
std::vector<std::pair<std::string, EvalReport>> read_report_csv(const std::filesystem::path& path);

}  // namespace mf2sf
