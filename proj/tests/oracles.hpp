#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls the library routine it is checking.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "mf2sf/geometry.hpp"
#include "mf2sf/tensor.hpp"

namespace oracle {

/// 4x4 homogeneous matrix [R t; 0 1].
inline Eigen::Matrix4d homogeneous(const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

inline Eigen::Matrix3d yaw_pitch_roll(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

/// x_target = inv(M_target) * M_source * x, with a general 4x4 inverse.
inline Eigen::Vector3d relocate(const Eigen::Matrix4d& source, const Eigen::Matrix4d& target, const Eigen::Vector3d& x) {
  const Eigen::Vector4d h(x.x(), x.y(), x.z(), 1.0);
  const Eigen::Vector4d out = target.inverse() * source * h;
  return out.head<3>() / out.w();
}

/// Point-in-rotated-rectangle by projection onto the box axes.
inline bool inside_footprint(const mf2sf::BoundingBox& b, double x, double y) {
  const double dx = x - b.center.x(), dy = y - b.center.y();
  const double along = dx * std::cos(b.heading) + dy * std::sin(b.heading);
  const double across = -dx * std::sin(b.heading) + dy * std::cos(b.heading);
  return std::abs(along) <= 0.5 * b.size.y() && std::abs(across) <= 0.5 * b.size.x();
}

inline double footprint_radius(const mf2sf::BoundingBox& b) { return 0.5 * std::hypot(b.size.x(), b.size.y()); }

/// Monte-Carlo estimate of the BEV intersection area, sampling the square
/// that bounds both footprints.
inline double monte_carlo_bev_intersection(const mf2sf::BoundingBox& a, const mf2sf::BoundingBox& b, int samples,
                                           std::mt19937_64& rng) {
  const double ra = footprint_radius(a), rb = footprint_radius(b);
  const double x0 = std::min(a.center.x() - ra, b.center.x() - rb), x1 = std::max(a.center.x() + ra, b.center.x() + rb);
  const double y0 = std::min(a.center.y() - ra, b.center.y() - rb), y1 = std::max(a.center.y() + ra, b.center.y() + rb);
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1);
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const double x = ux(rng), y = uy(rng);
    if (inside_footprint(a, x, y) && inside_footprint(b, x, y)) ++hits;
  }
  return (x1 - x0) * (y1 - y0) * hits / samples;
}

inline double monte_carlo_bev_iou(const mf2sf::BoundingBox& a, const mf2sf::BoundingBox& b, int samples,
                                  std::mt19937_64& rng) {
  const double inter = monte_carlo_bev_intersection(a, b, samples, rng);
  return inter / (a.size.x() * a.size.y() + b.size.x() * b.size.y() - inter);
}

/// Monte-Carlo 3D IoU: uniform samples in the joint bounding volume.
inline double monte_carlo_iou_3d(const mf2sf::BoundingBox& a, const mf2sf::BoundingBox& b, int samples,
                                 std::mt19937_64& rng) {
  const double ra = footprint_radius(a), rb = footprint_radius(b);
  const double x0 = std::min(a.center.x() - ra, b.center.x() - rb), x1 = std::max(a.center.x() + ra, b.center.x() + rb);
  const double y0 = std::min(a.center.y() - ra, b.center.y() - rb), y1 = std::max(a.center.y() + ra, b.center.y() + rb);
  const double z0 = std::min(a.center.z() - 0.5 * a.size.z(), b.center.z() - 0.5 * b.size.z());
  const double z1 = std::max(a.center.z() + 0.5 * a.size.z(), b.center.z() + 0.5 * b.size.z());
  std::uniform_real_distribution<double> ux(x0, x1), uy(y0, y1), uz(z0, z1);
  auto in_z = [](const mf2sf::BoundingBox& box, double z) { return std::abs(z - box.center.z()) <= 0.5 * box.size.z(); };
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const double x = ux(rng), y = uy(rng), z = uz(rng);
    if (inside_footprint(a, x, y) && inside_footprint(b, x, y) && in_z(a, z) && in_z(b, z)) ++hits;
  }
  const double inter = (x1 - x0) * (y1 - y0) * (z1 - z0) * hits / samples;
  return inter / (a.size.prod() + b.size.prod() - inter);
}

/// Relative gradient error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-12)
/// for every input, using central differences of step h.
struct GradCheck {
  double worst = 0.0;
  std::vector<double> per_input;
};

inline GradCheck check_gradients(
    std::vector<mf2sf::tensor::TensorD> inputs,
    const std::function<mf2sf::tensor::TensorD(const std::vector<mf2sf::tensor::TensorD>&)>& f, double h = 1e-5) {
  using mf2sf::tensor::TensorD;
  for (auto& t : inputs) t.zero_grad();
  const TensorD out = f(inputs);
  out.backward();
  GradCheck result;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    const Eigen::VectorXd analytic = t.grad();
    Eigen::VectorXd numeric(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double saved = t.value()[i];
      t.mutable_value()[i] = saved + h;
      const double up = f(inputs).item();
      t.mutable_value()[i] = saved - h;
      const double down = f(inputs).item();
      t.mutable_value()[i] = saved;
      numeric[i] = (up - down) / (2.0 * h);
    }
    const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
    const double err = (analytic - numeric).norm() / scale;
    result.per_input.push_back(err);
    result.worst = std::max(result.worst, err);
  }
  return result;
}

/// Random tensor with entries bounded away from zero (keeps ReLU and max
/// kinks outside the finite-difference stencil).
inline mf2sf::tensor::TensorD random_parameter(mf2sf::tensor::Shape shape, std::mt19937_64& rng, double lo = 0.1,
                                              double hi = 1.0) {
  std::uniform_real_distribution<double> mag(lo, hi);
  std::bernoulli_distribution sign(0.5);
  Eigen::VectorXd v(mf2sf::tensor::numel(shape));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = sign(rng) ? mag(rng) : -mag(rng);
  return mf2sf::tensor::TensorD::parameter(std::move(shape), std::move(v));
}

}  // namespace oracle
