#include "mf2sf/geometry.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>

namespace mf2sf {

double normalize_angle(double angle) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double wrapped = std::fmod(angle + std::numbers::pi, kTwoPi);
  if (wrapped < 0.0) wrapped += kTwoPi;
  wrapped -= std::numbers::pi;
  // fmod can land exactly on +pi after the shift back.
  if (wrapped >= std::numbers::pi) wrapped -= kTwoPi;
  return wrapped;
}

Pose::Pose(const Mat3& rotation, const Vec3& translation)
    : rotation_(rotation), translation_(translation) {}

Pose Pose::from_yaw(double yaw, const Vec3& translation) {
  return {Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix(), translation};
}

Pose Pose::inverse() const {
  Mat3 rt = rotation_.transpose();
  return {rt, -(rt * translation_)};
}

Pose Pose::operator*(const Pose& rhs) const {
  return {rotation_ * rhs.rotation_, rotation_ * rhs.translation_ + translation_};
}

Points Pose::apply(const Points& points) const {
  Points out = points * rotation_.transpose();
  out.rowwise() += translation_.transpose();
  return out;
}

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_;
  m.topRightCorner<3, 1>() = translation_;
  return m;
}

bool Pose::is_valid(double tolerance) const {
  if (!rotation_.allFinite() || !translation_.allFinite()) return false;
  if (((rotation_.transpose() * rotation_) - Mat3::Identity()).cwiseAbs().maxCoeff() > tolerance) {
    return false;
  }
  return std::abs(rotation_.determinant() - 1.0) <= tolerance;
}

const char* to_string(ObjectClass cls) {
  switch (cls) {
    case ObjectClass::kVehicle: return "vehicle";
    case ObjectClass::kPedestrian: return "pedestrian";
  }
  return "unknown";
}

ObjectClass object_class_from_string(const std::string& name) {
  if (name == "vehicle") return ObjectClass::kVehicle;
  if (name == "pedestrian") return ObjectClass::kPedestrian;
  throw std::invalid_argument("unknown object class '" + name + "'");
}

Vec3 BoundingBox::to_local(const Vec3& point) const {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  const Vec3 d = point - center;
  return {c * d.x() + s * d.y(), -s * d.x() + c * d.y(), d.z()};
}

bool BoundingBox::contains(const Vec3& point) const {
  const Vec3 local = to_local(point);
  return std::abs(local.x()) <= 0.5 * length() && std::abs(local.y()) <= 0.5 * width() &&
         std::abs(local.z()) <= 0.5 * height();
}

std::array<Eigen::Vector2d, 4> BoundingBox::bev_corners() const {
  const double c = std::cos(heading);
  const double s = std::sin(heading);
  const double hl = 0.5 * length();
  const double hw = 0.5 * width();
  const Eigen::Vector2d origin(center.x(), center.y());
  const Eigen::Vector2d ax(c * hl, s * hl);
  const Eigen::Vector2d ay(-s * hw, c * hw);
  return {origin + ax + ay, origin - ax + ay, origin - ax - ay, origin + ax - ay};
}

bool BoundingBox::is_valid() const {
  return center.allFinite() && size.allFinite() && (size.array() > 0.0).all() &&
         heading >= -std::numbers::pi && heading < std::numbers::pi;
}

Pose box_to_pose(const BoundingBox& box) { return Pose::from_yaw(box.heading, box.center); }

BoundingBox transform_box(const BoundingBox& box, const Pose& pose) {
  BoundingBox out = box;
  out.center = pose * box.center;
  const Mat3& r = pose.rotation();
  out.heading = normalize_angle(box.heading + std::atan2(r(1, 0), r(0, 0)));
  return out;
}

Mask points_in_box(const Points& points, const BoundingBox& box) {
  Mask mask(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    mask[static_cast<std::size_t>(i)] = box.contains(points.row(i).transpose());
  }
  return mask;
}

void PointCloudFrame::validate() const {
  if (points.rows() != features.rows()) {
    throw std::invalid_argument("frame " + std::to_string(timestamp) + ": " +
                                std::to_string(points.rows()) + " points but " +
                                std::to_string(features.rows()) + " feature rows");
  }
  if (!points.allFinite() || !features.allFinite()) {
    throw std::invalid_argument("frame " + std::to_string(timestamp) + ": non-finite values");
  }
  if (!ego_pose.is_valid(1e-6)) {
    throw std::invalid_argument("frame " + std::to_string(timestamp) + ": invalid ego pose");
  }
}

Points transform_frame(const PointCloudFrame& src, const Pose& target_pose) {
  return (target_pose.inverse() * src.ego_pose).apply(src.points);
}

int owning_box(const std::vector<BoundingBox>& boxes, const Vec3& point) {
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    if (!boxes[k].contains(point)) continue;
    const double d = (boxes[k].center - point).squaredNorm();
    if (d < best_dist) {
      best_dist = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

namespace {

void check_frames(std::span<const PointCloudFrame> frames, std::size_t target_index) {
  if (target_index >= frames.size()) {
    throw std::out_of_range("target index " + std::to_string(target_index) + " out of " +
                            std::to_string(frames.size()) + " frames");
  }
  const Eigen::Index width = frames[target_index].feature_width();
  for (const auto& f : frames) {
    if (f.feature_width() != width) {
      throw std::invalid_argument("feature width mismatch: " + std::to_string(f.feature_width()) +
                                  " vs " + std::to_string(width));
    }
    f.validate();
  }
}

// Collects rows into an AggregatedCloud in frame order.
class CloudBuilder {
 public:
  CloudBuilder(Eigen::Index capacity, Eigen::Index width) : points_(capacity, 3), features_(capacity, width) {
    frame_index_.reserve(static_cast<std::size_t>(capacity));
    point_index_.reserve(static_cast<std::size_t>(capacity));
  }

  void push(const Vec3& p, const PointCloudFrame& frame, std::size_t frame_idx, Eigen::Index row) {
    points_.row(count_) = p.transpose();
    features_.row(count_) = frame.features.row(row);
    frame_index_.push_back(static_cast<std::uint32_t>(frame_idx));
    point_index_.push_back(static_cast<std::uint32_t>(row));
    ++count_;
  }

  AggregatedCloud finish() && {
    AggregatedCloud out;
    out.points = points_.topRows(count_);
    out.features = features_.topRows(count_);
    out.frame_index = std::move(frame_index_);
    out.point_index = std::move(point_index_);
    return out;
  }

 private:
  Points points_;
  Features features_;
  std::vector<std::uint32_t> frame_index_;
  std::vector<std::uint32_t> point_index_;
  Eigen::Index count_ = 0;
};

Eigen::Index total_points(std::span<const PointCloudFrame> frames) {
  Eigen::Index n = 0;
  for (const auto& f : frames) n += f.size();
  return n;
}

}  // namespace

AggregatedCloud aggregate_static(std::span<const PointCloudFrame> frames, std::size_t target_index) {
  check_frames(frames, target_index);
  const Pose& target_pose = frames[target_index].ego_pose;
  CloudBuilder builder(total_points(frames), frames[target_index].feature_width());
  for (std::size_t q = 0; q < frames.size(); ++q) {
    const Points moved = transform_frame(frames[q], target_pose);
    for (Eigen::Index i = 0; i < moved.rows(); ++i) {
      builder.push(moved.row(i).transpose(), frames[q], q, i);
    }
  }
  return std::move(builder).finish();
}

AggregatedCloud aggregate_tracked(std::span<const PointCloudFrame> frames, std::size_t target_index) {
  check_frames(frames, target_index);
  const PointCloudFrame& target = frames[target_index];
  std::unordered_map<std::uint32_t, const BoundingBox*> target_tracks;
  for (const auto& b : target.boxes) target_tracks.emplace(b.track_id, &b);

  CloudBuilder builder(total_points(frames), target.feature_width());
  for (std::size_t q = 0; q < frames.size(); ++q) {
    const PointCloudFrame& src = frames[q];
    const Points moved = transform_frame(src, target.ego_pose);

    // Box-local carry per source box; empty when the track is orphaned.
    std::vector<std::optional<Pose>> carry(src.boxes.size());
    for (std::size_t k = 0; k < src.boxes.size(); ++k) {
      auto it = target_tracks.find(src.boxes[k].track_id);
      if (it != target_tracks.end()) {
        carry[k] = box_to_pose(*it->second) * box_to_pose(src.boxes[k]).inverse();
      }
    }

    for (Eigen::Index i = 0; i < src.size(); ++i) {
      const Vec3 p = src.points.row(i).transpose();
      const int k = owning_box(src.boxes, p);
      if (k < 0) {
        builder.push(moved.row(i).transpose(), src, q, i);
      } else if (carry[static_cast<std::size_t>(k)]) {
        builder.push(*carry[static_cast<std::size_t>(k)] * p, src, q, i);
      }
    }
  }
  return std::move(builder).finish();
}

}  // namespace mf2sf
