#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mf2sf/tensor.hpp"

namespace mf2sf::tensor {

/// Ordered, named parameter list. Order defines the checkpoint layout.
template <typename Scalar>
struct ParameterSet {
  std::vector<std::pair<std::string, Tensor<Scalar>>> entries;

  Tensor<Scalar>& add(std::string name, Tensor<Scalar> t) {
    entries.emplace_back(std::move(name), std::move(t));
    return entries.back().second;
  }

  Index count() const {
    Index n = 0;
    for (const auto& [name, t] : entries) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : entries) t.zero_grad();
  }

  const Tensor<Scalar>& at(const std::string& name) const {
    for (const auto& [n, t] : entries) {
      if (n == name) return t;
    }
    throw std::out_of_range("no parameter named " + name);
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moment buffers follow the parameter order.
template <typename Scalar>
class Adam {
 public:
  using Vector = typename Node<Scalar>::Vector;

  explicit Adam(const ParameterSet<Scalar>& params, AdamConfig cfg = {}) : cfg_(cfg) {
    for (const auto& [name, t] : params.entries) {
      first_.push_back(Vector::Zero(t.size()));
      second_.push_back(Vector::Zero(t.size()));
    }
  }

  /// Applies one update from the accumulated gradients. Throws on a
  /// non-finite gradient before touching any parameter.
  void step(ParameterSet<Scalar>& params, double lr) {
    if (params.entries.size() != first_.size()) throw std::invalid_argument("adam: parameter count changed");
    for (const auto& [name, t] : params.entries) {
      if (!t.grad().allFinite()) throw std::runtime_error("adam: non-finite gradient in " + name);
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    const auto b1 = static_cast<Scalar>(cfg_.beta1);
    const auto b2 = static_cast<Scalar>(cfg_.beta2);
    for (std::size_t i = 0; i < params.entries.size(); ++i) {
      auto& t = params.entries[i].second;
      const Vector& g = t.grad();
      if (first_[i].size() != g.size()) throw std::invalid_argument("adam: moment shape mismatch");
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g;
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g.cwiseAbs2();
      const auto m_hat = first_[i].array() / static_cast<Scalar>(c1);
      const auto v_hat = second_[i].array() / static_cast<Scalar>(c2);
      t.mutable_value().array() -= static_cast<Scalar>(lr) * m_hat / (v_hat.sqrt() + static_cast<Scalar>(cfg_.epsilon));
    }
  }

  std::int64_t steps() const { return steps_; }

 private:
  AdamConfig cfg_;
  std::vector<Vector> first_;
  std::vector<Vector> second_;
  std::int64_t steps_ = 0;
};

/// Warmup-then-cosine learning-rate schedule.
struct LrSchedule {
  double initial = 3e-4;
  double peak = 3e-3;
  double final = 3e-6;

  /// Linear ramp initial -> peak over [0, warmup_steps], then cosine decay
  /// peak -> final reaching `final` at total_steps.
  double operator()(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps) const {
    if (step > total_steps) throw std::out_of_range("lr schedule: step past total_steps");
    if (warmup_steps > 0 && step <= warmup_steps) {
      return initial + (peak - initial) * static_cast<double>(step) / static_cast<double>(warmup_steps);
    }
    const std::int64_t span = total_steps - warmup_steps;
    if (span <= 0) return final;
    const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
    return final + 0.5 * (peak - final) * (1.0 + std::cos(std::numbers::pi * progress));
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: "MF2CK" + u16 version, u32 record count, then per record
// u32 name length, name bytes, u8 rank, u32 dims[rank], f32 data[numel].

inline constexpr char kCheckpointMagic[5] = {'M', 'F', '2', 'C', 'K'};
inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::endian::native == std::endian::little, "big-endian hosts unsupported");
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  if (in.size() - pos < sizeof(T)) throw CheckpointError("truncated checkpoint at byte " + std::to_string(pos));
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

template <typename Scalar>
std::string encode_checkpoint(const ParameterSet<Scalar>& params) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint16_t>(out, kCheckpointVersion);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.entries.size()));
  for (const auto& [name, t] : params.entries) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (Index d : t.shape()) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.size(); ++i) detail::put_le<float>(out, static_cast<float>(t.value()[i]));
  }
  return out;
}

/// Decoded record list: names, shapes and f32 payloads.
struct CheckpointRecord {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

inline std::vector<CheckpointRecord> decode_checkpoint(const std::string& bytes) {
  std::size_t pos = 0;
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      bytes.compare(0, sizeof(kCheckpointMagic), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw CheckpointError("bad checkpoint magic");
  }
  pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint16_t>(bytes, pos);
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = detail::get_le<std::uint32_t>(bytes, pos);
  std::vector<CheckpointRecord> records;
  for (std::uint32_t r = 0; r < count; ++r) {
    CheckpointRecord rec;
    const auto name_len = detail::get_le<std::uint32_t>(bytes, pos);
    if (bytes.size() - pos < name_len) throw CheckpointError("truncated checkpoint name");
    rec.name = bytes.substr(pos, name_len);
    pos += name_len;
    const auto rank = detail::get_le<std::uint8_t>(bytes, pos);
    for (int d = 0; d < rank; ++d) rec.shape.push_back(detail::get_le<std::uint32_t>(bytes, pos));
    const Index n = numel(rec.shape);
    if (static_cast<Index>((bytes.size() - pos) / sizeof(float)) < n) throw CheckpointError("truncated data for " + rec.name);
    rec.data.resize(static_cast<std::size_t>(n));
    std::memcpy(rec.data.data(), bytes.data() + pos, static_cast<std::size_t>(n) * sizeof(float));
    pos += static_cast<std::size_t>(n) * sizeof(float);
    records.push_back(std::move(rec));
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes in checkpoint");
  return records;
}

/// Copies checkpoint values into `params`; names, order and shapes must match.
template <typename Scalar>
void load_checkpoint(const std::string& bytes, ParameterSet<Scalar>& params) {
  const auto records = decode_checkpoint(bytes);
  if (records.size() != params.entries.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(records.size()) + " tensors, model expects " +
                          std::to_string(params.entries.size()));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& [name, t] = params.entries[i];
    if (records[i].name != name || records[i].shape != t.shape()) {
      throw CheckpointError("checkpoint record " + records[i].name + " " + to_string(records[i].shape) +
                            " does not match " + name + " " + to_string(t.shape()));
    }
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& v = params.entries[i].second.mutable_value();
    for (Index j = 0; j < v.size(); ++j) v[j] = static_cast<Scalar>(records[i].data[static_cast<std::size_t>(j)]);
  }
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace mf2sf::tensor
