#include "mf2sf/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace mf2sf {

using tensor::Index;

namespace {

Index cells(double lo, double hi, double pixel) { return static_cast<Index>(std::llround((hi - lo) / pixel)); }

}  // namespace

Index GridConfig::width() const { return cells(x_min, x_max, pixel_size); }
Index GridConfig::height() const { return cells(y_min, y_max, pixel_size); }

bool GridConfig::in_range(const Vec3& p) const {
  return p.x() >= x_min && p.x() < x_max && p.y() >= y_min && p.y() < y_max && p.z() >= z_min && p.z() < z_max;
}

void GridConfig::validate() const {
  if (pixel_size <= 0.0 || x_max <= x_min || y_max <= y_min || z_max <= z_min) {
    throw std::invalid_argument("grid: empty range or non-positive pixel size");
  }
  for (double span : {x_max - x_min, y_max - y_min}) {
    const double n = span / pixel_size;
    if (std::abs(n - std::round(n)) > 1e-6) throw std::invalid_argument("grid: range span is not a whole number of pixels");
  }
  if (feature_stride < 1 || width() % (2 * feature_stride) != 0 || height() % (2 * feature_stride) != 0) {
    throw std::invalid_argument("grid: dimensions must be divisible by twice the feature stride");
  }
  if (max_points_per_pillar < 1 || max_pillars < 1) throw std::invalid_argument("grid: pillar caps must be positive");
}

PillarTensor pillarize(const Points& points, const Features& features, const GridConfig& grid, std::uint64_t seed) {
  grid.validate();
  if (points.rows() != features.rows()) throw std::invalid_argument("pillarize: points/features row mismatch");
  const Index w = grid.width();
  const Index plane = w * grid.height();

  std::vector<std::vector<Index>> members(static_cast<std::size_t>(plane));
  for (Index i = 0; i < points.rows(); ++i) {
    const Vec3 p = points.row(i).transpose();
    if (!p.allFinite()) throw std::invalid_argument("pillarize: non-finite point");
    if (!grid.in_range(p)) continue;
    const auto col = std::min(static_cast<Index>(std::floor((p.x() - grid.x_min) / grid.pixel_size)), w - 1);
    const auto row = std::min(static_cast<Index>(std::floor((p.y() - grid.y_min) / grid.pixel_size)), grid.height() - 1);
    members[static_cast<std::size_t>(row * w + col)].push_back(i);
  }

  std::mt19937_64 rng(seed);
  std::vector<Index> occupied;
  for (Index px = 0; px < plane; ++px) {
    if (!members[static_cast<std::size_t>(px)].empty()) occupied.push_back(px);
  }
  if (static_cast<Index>(occupied.size()) > grid.max_pillars) {
    std::shuffle(occupied.begin(), occupied.end(), rng);
    occupied.resize(static_cast<std::size_t>(grid.max_pillars));
    std::sort(occupied.begin(), occupied.end());
  }

  PillarTensor out;
  out.num_pillars = static_cast<Index>(occupied.size());
  out.max_points = grid.max_points_per_pillar;
  out.inputs = decltype(out.inputs)::Zero(out.num_pillars * out.max_points, kPillarInputDims);
  out.counts.reserve(occupied.size());
  out.pixels = occupied;

  // Absolute coordinates scaled into about [-1, 1]; offsets stay in meters.
  const double sx = 1.0 / std::max(std::abs(grid.x_min), std::abs(grid.x_max));
  const double sy = 1.0 / std::max(std::abs(grid.y_min), std::abs(grid.y_max));
  const double sz = 1.0 / (grid.z_max - grid.z_min);
  for (Index k = 0; k < out.num_pillars; ++k) {
    const Index px = occupied[static_cast<std::size_t>(k)];
    std::vector<Index> ids = members[static_cast<std::size_t>(px)];
    if (static_cast<Index>(ids.size()) > out.max_points) {
      std::shuffle(ids.begin(), ids.end(), rng);
      ids.resize(static_cast<std::size_t>(out.max_points));
      std::sort(ids.begin(), ids.end());
    }
    Vec3 mean = Vec3::Zero();
    for (Index id : ids) mean += points.row(id).transpose();
    mean /= static_cast<double>(ids.size());
    const double cx = grid.x_min + (static_cast<double>(px % w) + 0.5) * grid.pixel_size;
    const double cy = grid.y_min + (static_cast<double>(px / w) + 0.5) * grid.pixel_size;
    for (std::size_t j = 0; j < ids.size(); ++j) {
      const Vec3 p = points.row(ids[j]).transpose();
      auto r = out.inputs.row(k * out.max_points + static_cast<Index>(j));
      r << p.x() * sx, p.y() * sy, (p.z() - grid.z_min) * sz, features.cols() > 0 ? features(ids[j], 0) : 0.0, p.x() - mean.x(), p.y() - mean.y(),
          p.z() - mean.z(), p.x() - cx, p.y() - cy;
    }
    out.counts.push_back(static_cast<Index>(ids.size()));
  }
  return out;
}

Eigen::Vector2d feature_pixel_center(const GridConfig& grid, Index row, Index col) {
  const double d = grid.feature_pixel_size();
  return {grid.x_min + (static_cast<double>(col) + 0.5) * d, grid.y_min + (static_cast<double>(row) + 0.5) * d};
}

std::array<double, 8> encode_box(const BoundingBox& box, const Eigen::Vector2d& pixel_center, double pixel_size) {
  return {(box.center.x() - pixel_center.x()) / pixel_size,
          (box.center.y() - pixel_center.y()) / pixel_size,
          box.center.z(),
          std::log(box.size.x()),
          std::log(box.size.y()),
          std::log(box.size.z()),
          std::sin(box.heading),
          std::cos(box.heading)};
}

BoundingBox decode_box(const std::array<double, 8>& code, const Eigen::Vector2d& pixel_center, double pixel_size) {
  // Clamp log-sizes so an untrained head cannot overflow exp().
  auto size = [](double v) { return std::exp(std::clamp(v, -5.0, 5.0)); };
  BoundingBox b;
  b.center = Vec3(pixel_center.x() + code[0] * pixel_size, pixel_center.y() + code[1] * pixel_size, code[2]);
  b.size = Vec3(size(code[3]), size(code[4]), size(code[5]));
  b.heading = normalize_angle(std::atan2(code[6], code[7]));
  return b;
}

TargetMap assign_targets(const std::vector<BoundingBox>& boxes, const GridConfig& grid) {
  grid.validate();
  TargetMap t;
  t.height = grid.feature_height();
  t.width = grid.feature_width();
  const Index plane = t.height * t.width;
  t.existence.assign(static_cast<std::size_t>(plane), 0.0);
  t.regression.assign(static_cast<std::size_t>(kRegressionDims * plane), 0.0);
  t.owner.assign(static_cast<std::size_t>(plane), -1);
  const double d = grid.feature_pixel_size();

  std::vector<bool> covered(boxes.size(), false);
  for (Index r = 0; r < t.height; ++r) {
    for (Index c = 0; c < t.width; ++c) {
      const Eigen::Vector2d center = feature_pixel_center(grid, r, c);
      int best = -1;
      double best_dist = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < boxes.size(); ++k) {
        const Vec3 local = boxes[k].to_local(Vec3(center.x(), center.y(), boxes[k].center.z()));
        if (std::abs(local.x()) > 0.5 * boxes[k].length() || std::abs(local.y()) > 0.5 * boxes[k].width()) continue;
        const double dist = (boxes[k].center.head<2>() - center).squaredNorm();
        if (dist < best_dist) {
          best_dist = dist;
          best = static_cast<int>(k);
        }
      }
      if (best >= 0) {
        t.owner[static_cast<std::size_t>(r * t.width + c)] = best;
        covered[static_cast<std::size_t>(best)] = true;
      }
    }
  }
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    if (covered[k]) continue;
    const auto col = static_cast<Index>(std::floor((boxes[k].center.x() - grid.x_min) / d));
    const auto row = static_cast<Index>(std::floor((boxes[k].center.y() - grid.y_min) / d));
    if (row < 0 || row >= t.height || col < 0 || col >= t.width) continue;
    auto& owner = t.owner[static_cast<std::size_t>(row * t.width + col)];
    if (owner < 0) owner = static_cast<int>(k);
  }
  for (Index px = 0; px < plane; ++px) {
    const int k = t.owner[static_cast<std::size_t>(px)];
    if (k < 0) continue;
    t.existence[static_cast<std::size_t>(px)] = 1.0;
    ++t.num_positive;
    // A cuboid looks the same turned by pi, so only heading mod pi is
    // observable; regress the representative in [-pi/2, pi/2).
    BoundingBox box = boxes[static_cast<std::size_t>(k)];
    box.heading = normalize_angle(box.heading);
    if (box.heading >= 0.5 * std::numbers::pi) box.heading -= std::numbers::pi;
    if (box.heading < -0.5 * std::numbers::pi) box.heading += std::numbers::pi;
    const auto code = encode_box(box, feature_pixel_center(grid, px / t.width, px % t.width), d);
    for (Index ch = 0; ch < kRegressionDims; ++ch) t.regression[static_cast<std::size_t>(ch * plane + px)] = code[static_cast<std::size_t>(ch)];
  }
  return t;
}

std::vector<ScoredBox> nms_bev(std::vector<ScoredBox> boxes, double iou_threshold) {
  std::stable_sort(boxes.begin(), boxes.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  std::vector<ScoredBox> kept;
  for (const auto& candidate : boxes) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (bev_iou(candidate.box, k.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(candidate);
  }
  return kept;
}

std::vector<ScoredBox> decode(const Eigen::Ref<const Eigen::VectorXd>& existence,
                              const Eigen::Ref<const Eigen::VectorXd>& localization, const GridConfig& grid,
                              const DecodeConfig& cfg, ObjectClass cls) {
  const Index h = grid.feature_height(), w = grid.feature_width(), plane = h * w;
  if (existence.size() != plane || localization.size() != kRegressionDims * plane) {
    throw std::invalid_argument("decode: head sizes do not match the grid");
  }
  std::vector<ScoredBox> candidates;
  for (Index px = 0; px < plane; ++px) {
    if (!(existence[px] > cfg.score_threshold)) continue;
    std::array<double, 8> code{};
    for (Index ch = 0; ch < kRegressionDims; ++ch) code[static_cast<std::size_t>(ch)] = localization[ch * plane + px];
    ScoredBox sb;
    sb.box = decode_box(code, feature_pixel_center(grid, px / w, px % w), grid.feature_pixel_size());
    sb.box.class_id = cls;
    sb.score = existence[px];
    candidates.push_back(sb);
  }
  return nms_bev(std::move(candidates), cfg.nms_iou);
}

}  // namespace mf2sf
