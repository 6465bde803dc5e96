#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mf2sf/eval.hpp"
#include "mf2sf/geometry.hpp"
#include "mf2sf/optim.hpp"
#include "mf2sf/tensor.hpp"

namespace mf2sf {

/// BEV grid shared by teacher and student.
struct GridConfig {
  double x_min = -30.72, x_max = 30.72;
  double y_min = -30.72, y_max = 30.72;
  double z_min = -1.0, z_max = 4.0;
  double pixel_size = 0.96;
  int max_points_per_pillar = 32;
  int max_pillars = 4096;
  /// Downsampling between the pillar image and the head feature map.
  int feature_stride = 2;

  tensor::Index width() const;   // pillar-image columns (x)
  tensor::Index height() const;  // pillar-image rows (y)
  tensor::Index feature_width() const { return width() / feature_stride; }
  tensor::Index feature_height() const { return height() / feature_stride; }
  double feature_pixel_size() const { return pixel_size * feature_stride; }
  bool in_range(const Vec3& p) const;

  /// Throws unless spans divide evenly into pixels and into the backbone strides.
  void validate() const;
};

inline constexpr tensor::Index kPillarInputDims = 9;
inline constexpr tensor::Index kRegressionDims = 8;

/// Padded per-pillar point block: row (k * max_points + j) holds point j of
/// pillar k as (x, y, z, reflectance, dx, dy, dz to pillar mean,
/// x - pixel center, y - pixel center). Rows past counts[k] are zero.
struct PillarTensor {
  tensor::Index num_pillars = 0;
  tensor::Index max_points = 0;
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> inputs;
  std::vector<tensor::Index> counts;
  std::vector<tensor::Index> pixels;  // row * width + col
};

PillarTensor pillarize(const Points& points, const Features& features, const GridConfig& grid, std::uint64_t seed);

/// Which activation the consistency loss compares.
enum class FeatureLayer { kPillarImage, kBlock1, kBackbone };

struct DetectorConfig {
  tensor::Index channels = 32;
  FeatureLayer distill_layer = FeatureLayer::kBackbone;
  double prior_probability = 0.01;  // initial existence probability
};

/// Images are (C, H, W). `features` is the shared backbone map feeding both
/// heads; `distill` is the activation selected by DetectorConfig::distill_layer.
template <typename Scalar>
struct DetectionOutput {
  tensor::Tensor<Scalar> features;
  tensor::Tensor<Scalar> distill;
  tensor::Tensor<Scalar> existence;     // (1, H', W'), probabilities
  tensor::Tensor<Scalar> localization;  // (8, H', W')
};

/// Pillar PointNet, three-block BEV backbone and 1x1 existence and
/// localization heads.
template <typename Scalar>
class Detector {
 public:
  using T = tensor::Tensor<Scalar>;
  using Vector = typename T::Vector;

  Detector(const DetectorConfig& cfg, const GridConfig& grid, std::uint64_t seed) : cfg_(cfg), grid_(grid) {
    grid_.validate();
    if (grid_.feature_stride != 2) throw std::invalid_argument("detector backbone has feature stride 2");
    std::mt19937_64 rng(seed);
    const tensor::Index c = cfg_.channels;
    add_linear("pfn", kPillarInputDims, c, rng);
    add_conv("block1", c, c, 3, rng);
    add_conv("block2", c, c, 3, rng);
    add_conv("block3", c, c, 3, rng);
    add_conv("fuse", 2 * c, c, 3, rng);
    add_conv("cls", c, 1, 1, rng);
    add_conv("loc", c, kRegressionDims, 1, rng);
    // Existence logits start at the prior.
    params_.entries[params_.entries.size() - 3].second.mutable_value().setConstant(
        static_cast<Scalar>(-std::log((1.0 - cfg_.prior_probability) / cfg_.prior_probability)));
  }

  DetectionOutput<Scalar> forward(const PillarTensor& pillars) const {
    using namespace tensor;
    const Index c = cfg_.channels;
    const Index k = pillars.num_pillars, p = pillars.max_points;
    if (pillars.inputs.cols() != kPillarInputDims || pillars.inputs.rows() != k * p) {
      throw ShapeError("detector: pillar block is " + std::to_string(pillars.inputs.rows()) + "x" +
                       std::to_string(pillars.inputs.cols()));
    }
    const T points = T::constant({k * p, kPillarInputDims},
                                 Eigen::Map<const Eigen::VectorXd>(pillars.inputs.data(), pillars.inputs.size()).template cast<Scalar>());
    T h = relu(add_bias(matmul(points, param(0)), param(1)));
    h = max_over_axis(reshape(h, {k, p, c}), 1, pillars.counts);
    const T image = scatter_to_grid(h, pillars.pixels, grid_.height(), grid_.width());

    const T b1 = relu(conv2d(image, param(2), param(3), 1));
    const T b2 = relu(conv2d(b1, param(4), param(5), 2));
    const T b3 = relu(conv2d(b2, param(6), param(7), 2));
    const T fused = concat<Scalar>({b2, upsample2x(b3)}, 0);
    const T phi = relu(conv2d(fused, param(8), param(9), 1));

    DetectionOutput<Scalar> out;
    out.features = phi;
    out.existence = sigmoid(conv2d(phi, param(10), param(11), 1));
    out.localization = conv2d(phi, param(12), param(13), 1);
    switch (cfg_.distill_layer) {
      case FeatureLayer::kPillarImage: out.distill = image; break;
      case FeatureLayer::kBlock1: out.distill = b1; break;
      case FeatureLayer::kBackbone: out.distill = phi; break;
    }
    if (!out.existence.value().allFinite() || !out.localization.value().allFinite() || !phi.value().allFinite()) {
      throw std::runtime_error("detector: non-finite activations");
    }
    return out;
  }

  tensor::ParameterSet<Scalar>& params() { return params_; }
  const tensor::ParameterSet<Scalar>& params() const { return params_; }
  tensor::Index parameter_count() const { return params_.count(); }
  const DetectorConfig& config() const { return cfg_; }
  const GridConfig& grid() const { return grid_; }

  /// Same architecture, values copied and cast.
  template <typename Other>
  void copy_values_from(const Detector<Other>& other) {
    const auto& src = other.params().entries;
    if (src.size() != params_.entries.size()) throw std::invalid_argument("detector layout mismatch");
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (src[i].second.shape() != params_.entries[i].second.shape()) throw std::invalid_argument("detector layout mismatch");
      params_.entries[i].second.mutable_value() = src[i].second.value().template cast<Scalar>();
    }
  }

 private:
  const T& param(std::size_t i) const { return params_.entries[i].second; }

  void add_linear(const std::string& name, tensor::Index in, tensor::Index out, std::mt19937_64& rng) {
    params_.add(name + ".weight", T::parameter({in, out}, he_normal(in * out, in, rng)));
    params_.add(name + ".bias", T::parameter({out}, Vector::Zero(out)));
  }

  void add_conv(const std::string& name, tensor::Index in, tensor::Index out, tensor::Index k, std::mt19937_64& rng) {
    params_.add(name + ".weight", T::parameter({out, in, k, k}, he_normal(out * in * k * k, in * k * k, rng)));
    params_.add(name + ".bias", T::parameter({out}, Vector::Zero(out)));
  }

  static Vector he_normal(tensor::Index n, tensor::Index fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Vector v(n);
    for (tensor::Index i = 0; i < n; ++i) v[i] = static_cast<Scalar>(dist(rng));
    return v;
  }

  DetectorConfig cfg_;
  GridConfig grid_;
  tensor::ParameterSet<Scalar> params_;
};

/// Dense training targets on the head feature map.
struct TargetMap {
  tensor::Index height = 0;
  tensor::Index width = 0;
  std::vector<double> existence;   // (H', W') in {0, 1}
  std::vector<double> regression;  // (8, H', W'), zero where existence is 0
  std::vector<int> owner;          // box index per pixel, -1 when negative
  int num_positive = 0;
};

/// Feature-map pixel center in sensor coordinates.
Eigen::Vector2d feature_pixel_center(const GridConfig& grid, tensor::Index row, tensor::Index col);

/// (dx/d, dy/d, dz, log w, log l, log h, sin heading, cos heading) of `box`
/// relative to a pixel center, d = feature pixel size.
std::array<double, 8> encode_box(const BoundingBox& box, const Eigen::Vector2d& pixel_center, double pixel_size);
BoundingBox decode_box(const std::array<double, 8>& code, const Eigen::Vector2d& pixel_center, double pixel_size);

/// Positive where the feature pixel center lies inside a box footprint
/// (nearest center wins on overlap). A box that covers no pixel center claims
/// the free pixel holding its center.
TargetMap assign_targets(const std::vector<BoundingBox>& boxes, const GridConfig& grid);

/// Greedy rotated-BEV NMS: highest score first, drops boxes whose BEV IoU with
/// a kept box exceeds `iou_threshold`.
std::vector<ScoredBox> nms_bev(std::vector<ScoredBox> boxes, double iou_threshold);

struct DecodeConfig {
  double score_threshold = 0.3;
  double nms_iou = 0.5;
};

/// Boxes from raw head values: existence (H'*W') and localization (8*H'*W').
std::vector<ScoredBox> decode(const Eigen::Ref<const Eigen::VectorXd>& existence,
                              const Eigen::Ref<const Eigen::VectorXd>& localization, const GridConfig& grid,
                              const DecodeConfig& cfg, ObjectClass cls);

template <typename Scalar>
std::vector<ScoredBox> decode(const DetectionOutput<Scalar>& out, const GridConfig& grid, const DecodeConfig& cfg,
                              ObjectClass cls) {
  return decode(out.existence.value().template cast<double>(), out.localization.value().template cast<double>(), grid,
                cfg, cls);
}

}  // namespace mf2sf
