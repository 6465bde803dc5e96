#pragma once

// Small hand-built scenes with known motion for geometry checks.

#include <algorithm>
#include <random>
#include <vector>

#include "mf2sf/geometry.hpp"

namespace scenes {

struct MovingBoxScene {
  int frames = 5;
  double dt = 0.1;
  double speed = 10.0;     // object speed along its heading (m/s)
  double yaw_rate = 0.0;   // object yaw rate (rad/s)
  double ego_speed = 5.0;  // ego speed along world x (m/s)
  double ego_yaw_rate = 0.05;
  double noise = 0.02;
  int surface_points = 400;
  int static_points = 200;
  std::uint64_t seed = 7;
};

struct Scene {
  std::vector<mf2sf::PointCloudFrame> frames;
  std::size_t object_count = 0;  // object points come first in every frame

  std::vector<Eigen::Index> object_rows(std::size_t) const {
    std::vector<Eigen::Index> rows(object_count);
    for (std::size_t i = 0; i < object_count; ++i) rows[i] = static_cast<Eigen::Index>(i);
    return rows;
  }

  std::vector<Eigen::Index> object_rows(const mf2sf::AggregatedCloud& cloud) const {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < cloud.point_index.size(); ++i) {
      if (cloud.point_index[i] < object_count) rows.push_back(static_cast<Eigen::Index>(i));
    }
    return rows;
  }
};

/// One 4.5 x 1.8 x 1.6 m vehicle driving past a moving ego sensor, surface
/// samples at fixed box-local positions plus fresh Gaussian noise per frame,
/// and static clutter. Boxes and points are in each frame's sensor coordinates.
inline Scene moving_box_scene(const MovingBoxScene& cfg) {
  using namespace mf2sf;
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  const Vec3 size(1.8, 4.5, 1.6);

  // Surface samples on a cuboid shrunk 0.1 m inside the label box.
  std::vector<Vec3> local;
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::uniform_int_distribution<int> face(0, 5);
  const Vec3 half = 0.5 * size - Vec3::Constant(0.1);
  for (int i = 0; i < cfg.surface_points; ++i) {
    Vec3 p(u(rng) * 2.0 * half.y(), u(rng) * 2.0 * half.x(), u(rng) * 2.0 * half.z());
    const int f = face(rng);
    const double sign = f % 2 == 0 ? 1.0 : -1.0;
    if (f < 2) p.x() = sign * half.y();
    else if (f < 4) p.y() = sign * half.x();
    else p.z() = sign * half.z();
    local.push_back(p);
  }
  std::vector<Vec3> clutter;
  std::uniform_real_distribution<double> cx(-30.0, 30.0);
  while (static_cast<int>(clutter.size()) < cfg.static_points) {
    const Vec3 p(cx(rng), cx(rng), 0.0);
    if (std::abs(p.y() - 6.0) > 4.0) clutter.push_back(p);
  }

  Scene scene;
  scene.object_count = local.size();
  for (int t = 0; t < cfg.frames; ++t) {
    const double time = t * cfg.dt;
    const Pose ego = Pose::from_yaw(cfg.ego_yaw_rate * time, Vec3(cfg.ego_speed * time, 0.0, 0.0));
    BoundingBox world;
    world.heading = cfg.yaw_rate * time;
    const double dist = cfg.speed * time;
    // Constant-turn arc (straight line when the yaw rate is zero).
    const double along = cfg.yaw_rate == 0.0 ? dist : std::sin(world.heading) / cfg.yaw_rate;
    const double side = cfg.yaw_rate == 0.0 ? 0.0 : (1.0 - std::cos(world.heading)) / cfg.yaw_rate;
    world.center = Vec3(8.0 + (cfg.yaw_rate == 0.0 ? dist : cfg.speed * along), 6.0 + cfg.speed * side, 0.8);
    world.size = size;
    world.track_id = 42;

    const Pose to_sensor = ego.inverse();
    PointCloudFrame f;
    f.timestamp = t * 100000;
    f.ego_pose = ego;
    f.boxes.push_back(transform_box(world, to_sensor));
    f.points.resize(static_cast<Eigen::Index>(local.size() + clutter.size()), 3);
    f.features = Features::Constant(f.points.rows(), 1, 0.5);
    Eigen::Index row = 0;
    const Pose object = box_to_pose(world);
    for (const auto& p : local) {
      const Vec3 w = object * p + Vec3(noise(rng), noise(rng), noise(rng));
      f.points.row(row++) = (to_sensor * w).transpose();
    }
    for (const auto& p : clutter) f.points.row(row++) = (to_sensor * p).transpose();
    scene.frames.push_back(std::move(f));
  }
  return scene;
}

/// Spread of the selected rows along the box heading, in box-local x.
inline double extent_along_heading(const mf2sf::Points& points, const std::vector<Eigen::Index>& rows,
                                   const mf2sf::BoundingBox& box) {
  double lo = 1e300, hi = -1e300;
  for (Eigen::Index r : rows) {
    const double x = box.to_local(points.row(r).transpose()).x();
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  return hi - lo;
}

}  // namespace scenes
