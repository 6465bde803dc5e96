#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mf2sf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// N×3 point block, one point per row.
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
/// N×c per-point feature block (reflectance first).
using Features = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mask = std::vector<bool>;

/// Wraps an angle into [-pi, pi).
double normalize_angle(double angle);

/// Rigid SE(3) transform. Maps local coordinates into the parent frame:
/// x_parent = R * x_local + t.
class Pose {
 public:
  Pose() = default;
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return {}; }
  static Pose from_yaw(double yaw, const Vec3& translation);

  const Mat3& rotation() const { return rotation_; }
  const Vec3& translation() const { return translation_; }

  Pose inverse() const;
  Pose operator*(const Pose& rhs) const;
  Vec3 operator*(const Vec3& point) const { return rotation_ * point + translation_; }

  /// Applies the transform to every row of `points`.
  Points apply(const Points& points) const;

  Eigen::Matrix4d matrix() const;

  /// Orthonormal rotation with determinant +1 and finite translation.
  bool is_valid(double tolerance = 1e-9) const;

 private:
  Mat3 rotation_ = Mat3::Identity();
  Vec3 translation_ = Vec3::Zero();
};

enum class ObjectClass : std::uint8_t { kVehicle = 0, kPedestrian = 1 };

const char* to_string(ObjectClass cls);
ObjectClass object_class_from_string(const std::string& name);

/// Labeled cuboid. `size` is (width, length, height); length runs along the
/// heading direction, width along the box-local y axis.
struct BoundingBox {
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Ones();
  double heading = 0.0;
  std::uint32_t track_id = 0;
  ObjectClass class_id = ObjectClass::kVehicle;

  double width() const { return size.x(); }
  double length() const { return size.y(); }
  double height() const { return size.z(); }

  /// Point expressed in box-local axes (box center at the origin, x along heading).
  Vec3 to_local(const Vec3& point) const;
  bool contains(const Vec3& point) const;

  /// BEV footprint corners, counter-clockwise.
  std::array<Eigen::Vector2d, 4> bev_corners() const;

  bool is_valid() const;
};

/// Yaw-only rotation by heading, translation = center.
Pose box_to_pose(const BoundingBox& box);

/// Box re-expressed through a rigid transform (heading follows the yaw of `pose`).
BoundingBox transform_box(const BoundingBox& box, const Pose& pose);

Mask points_in_box(const Points& points, const BoundingBox& box);

struct PointCloudFrame {
  std::int64_t timestamp = 0;
  Points points;
  Features features;
  Pose ego_pose;
  std::vector<BoundingBox> boxes;

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index feature_width() const { return features.cols(); }

  /// Throws std::invalid_argument when points/features disagree or values are non-finite.
  void validate() const;
};

/// Points of `src` expressed in the sensor frame whose pose is `target_pose`.
Points transform_frame(const PointCloudFrame& src, const Pose& target_pose);

/// Dense cloud built from several frames. `frame_index` and `point_index`
/// record where every output row came from.
struct AggregatedCloud {
  Points points;
  Features features;
  std::vector<std::uint32_t> frame_index;
  std::vector<std::uint32_t> point_index;

  Eigen::Index size() const { return points.rows(); }
};

/// Union of all frames under ego-motion only.
AggregatedCloud aggregate_static(std::span<const PointCloudFrame> frames, std::size_t target_index);

/// Union of all frames where points inside a tracked box are additionally
/// carried rigidly onto that track's box in the target frame. Points whose
/// track has no box in the target frame are dropped.
AggregatedCloud aggregate_tracked(std::span<const PointCloudFrame> frames, std::size_t target_index);

/// Index of the box owning `point` (nearest center among containing boxes), or -1.
int owning_box(const std::vector<BoundingBox>& boxes, const Vec3& point);

}  // namespace mf2sf
