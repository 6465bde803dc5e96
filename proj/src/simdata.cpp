#include "mf2sf/simdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace mf2sf {

void SceneConfig::validate() const {
  if (n_frames < 0 || n_vehicles < 0 || n_pedestrians < 0 || n_static_clutter < 0 ||
      points_per_frame_target < 0) {
    throw std::invalid_argument("scene counts must be non-negative");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be non-negative");
  if (frame_dt <= 0.0 || area <= 0.0) throw std::invalid_argument("frame_dt and area must be positive");
  if (max_range <= min_range) throw std::invalid_argument("max_range must exceed min_range");
}

bool Sequence::operator==(const Sequence& other) const {
  if (frames.size() != other.frames.size()) return false;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const auto& a = frames[i];
    const auto& b = other.frames[i];
    if (a.timestamp != b.timestamp || a.points != b.points || a.features != b.features ||
        a.ego_pose.rotation() != b.ego_pose.rotation() ||
        a.ego_pose.translation() != b.ego_pose.translation() || a.boxes.size() != b.boxes.size()) {
      return false;
    }
    for (std::size_t k = 0; k < a.boxes.size(); ++k) {
      const auto& x = a.boxes[k];
      const auto& y = b.boxes[k];
      if (x.center != y.center || x.size != y.size || x.heading != y.heading ||
          x.track_id != y.track_id || x.class_id != y.class_id) {
        return false;
      }
    }
  }
  return true;
}

namespace {

// noinline: g++ 11 at -O3 dropped the float round trip on box fields after
// SLP vectorization.
[[gnu::noinline]] double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

// Heading stored as f32 but kept inside [-pi, pi) when read back as f64.
double heading_to_f32(double h) {
  float f = static_cast<float>(normalize_angle(h));
  while (static_cast<double>(f) >= std::numbers::pi) f = std::nextafter(f, 0.0f);
  while (static_cast<double>(f) < -std::numbers::pi) f = std::nextafter(f, 0.0f);
  return f;
}

struct Track {
  ObjectClass cls = ObjectClass::kVehicle;
  bool labeled = true;
  std::uint32_t track_id = 0;
  Vec3 size = Vec3::Ones();  // label size (w, l, h)
  double reflectance = 0.5;
  std::vector<Eigen::Vector3d> states;  // per frame (x, y, heading) in world
};

struct Patch {
  Vec3 origin;   // one corner
  Vec3 edge_u;
  Vec3 edge_v;
  int owner = -1;  // track index, -1 for ground
};

Pose ego_pose_at(double speed, double yaw_rate, double time) {
  const double h = yaw_rate * time;
  double x = speed * time;
  double y = 0.0;
  if (std::abs(yaw_rate) > 1e-12) {
    x = speed / yaw_rate * std::sin(h);
    y = speed / yaw_rate * (1.0 - std::cos(h));
  }
  return Pose::from_yaw(h, Vec3(x, y, 0.0));
}

Eigen::Vector3d advance_constant_turn(const Eigen::Vector3d& s0, double speed, double yaw_rate, double time) {
  const double h0 = s0.z();
  if (std::abs(yaw_rate) < 1e-12) {
    return {s0.x() + speed * time * std::cos(h0), s0.y() + speed * time * std::sin(h0), h0};
  }
  const double h = h0 + yaw_rate * time;
  return {s0.x() + speed / yaw_rate * (std::sin(h) - std::sin(h0)),
          s0.y() - speed / yaw_rate * (std::cos(h) - std::cos(h0)), h};
}

BoundingBox world_box(const Track& track, int frame) {
  const auto& s = track.states[static_cast<std::size_t>(frame)];
  BoundingBox b;
  b.center = Vec3(s.x(), s.y(), 0.5 * track.size.z());
  b.size = track.size;
  b.heading = normalize_angle(s.z());
  b.track_id = track.track_id;
  b.class_id = track.cls;
  return b;
}

// Visible faces of the sampled cuboid (label box shrunk by the margin).
void add_object_patches(const Track& track, int owner, int frame, const Vec3& sensor, double margin,
                        std::vector<Patch>& patches, std::vector<double>& weights) {
  const BoundingBox box = world_box(track, frame);
  const Vec3 half = 0.5 * (box.size - Vec3::Constant(2.0 * margin)).cwiseMax(0.02);
  const Mat3 rot = box_to_pose(box).rotation();
  const Vec3 ex = rot.col(0) * half.y();  // along length
  const Vec3 ey = rot.col(1) * half.x();  // along width
  const Vec3 ez = Vec3::UnitZ() * half.z();
  const Vec3 c = box.center;

  struct Face {
    Vec3 center, normal, u, v;
  };
  const Face faces[5] = {
      {c + ex, ex.normalized(), ey, ez},  {c - ex, -ex.normalized(), ey, ez},
      {c + ey, ey.normalized(), ex, ez},  {c - ey, -ey.normalized(), ex, ez},
      {c + ez, Vec3::UnitZ(), ex, ey},
  };
  for (const auto& f : faces) {
    const Vec3 to_sensor = sensor - f.center;
    const double r = to_sensor.norm();
    const double facing = f.normal.dot(to_sensor);
    if (facing <= 0.0 || r < 1e-6) continue;
    const double area = 4.0 * f.u.norm() * f.v.norm();
    patches.push_back({f.center - f.u - f.v, 2.0 * f.u, 2.0 * f.v, owner});
    weights.push_back(area * (facing / r) / (r * r));
  }
}

bool under_any_object(const std::vector<BoundingBox>& footprints, const Vec3& p) {
  for (const auto& b : footprints) {
    const Vec3 local = b.to_local(p);
    if (std::abs(local.x()) <= 0.5 * b.length() && std::abs(local.y()) <= 0.5 * b.width()) return true;
  }
  return false;
}

}  // namespace

Sequence generate_sequence(const SceneConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.rng_seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double ego_yaw_rate = uniform(-cfg.ego_max_yaw_rate, cfg.ego_max_yaw_rate);
  std::vector<Pose> ego(static_cast<std::size_t>(cfg.n_frames));
  for (int t = 0; t < cfg.n_frames; ++t) {
    ego[static_cast<std::size_t>(t)] = ego_pose_at(cfg.ego_speed, ego_yaw_rate, t * cfg.frame_dt);
  }
  const Pose mid = ego_pose_at(cfg.ego_speed, ego_yaw_rate, 0.5 * (cfg.n_frames - 1) * cfg.frame_dt);

  std::vector<Track> tracks;
  std::uint32_t next_track = 0;

  // Rejects spawns that come near the ego path or another object at any frame.
  auto try_place = [&](Track& track, auto&& kinematics) {
    for (int attempt = 0; attempt < 100; ++attempt) {
      const Vec3 p = mid * Vec3(uniform(-cfg.area, cfg.area), uniform(-cfg.area, cfg.area), 0.0);
      const Eigen::Vector3d s0(p.x(), p.y(), uniform(-std::numbers::pi, std::numbers::pi));
      track.states = kinematics(s0);
      const double radius = 0.5 * track.size.head<2>().norm();
      bool ok = true;
      for (int t = 0; t < cfg.n_frames && ok; ++t) {
        const auto& st = track.states[static_cast<std::size_t>(t)];
        for (const auto& e : ego) {
          if ((e.translation().head<2>() - st.head<2>()).norm() < radius + 3.0) ok = false;
        }
        for (const auto& other : tracks) {
          const auto& so = other.states[static_cast<std::size_t>(t)];
          const double r2 = 0.5 * other.size.head<2>().norm();
          if ((so.head<2>() - st.head<2>()).norm() < radius + r2 + 0.3) ok = false;
        }
      }
      if (ok) return true;
    }
    return false;
  };

  const auto n = static_cast<std::size_t>(cfg.n_frames);
  for (int i = 0; i < cfg.n_vehicles; ++i) {
    Track tr;
    tr.cls = ObjectClass::kVehicle;
    tr.size = Vec3(1.9, 4.5, 1.6).cwiseProduct(Vec3(uniform(0.9, 1.1), uniform(0.9, 1.1), uniform(0.9, 1.1)));
    tr.reflectance = uniform(0.4, 0.9);
    const bool moving = unit(rng) < cfg.moving_vehicle_fraction;
    const double speed = moving ? uniform(cfg.vehicle_speed_min, cfg.vehicle_speed_max) : 0.0;
    const double yaw_rate = (moving && unit(rng) < cfg.turning_vehicle_fraction)
                                ? uniform(-cfg.vehicle_max_yaw_rate, cfg.vehicle_max_yaw_rate)
                                : 0.0;
    auto kin = [&](const Eigen::Vector3d& s0) {
      std::vector<Eigen::Vector3d> states(n);
      for (std::size_t t = 0; t < n; ++t) {
        states[t] = advance_constant_turn(s0, speed, yaw_rate, static_cast<double>(t) * cfg.frame_dt);
      }
      return states;
    };
    if (try_place(tr, kin)) {
      tr.track_id = next_track++;
      tracks.push_back(std::move(tr));
    }
  }
  for (int i = 0; i < cfg.n_pedestrians; ++i) {
    Track tr;
    tr.cls = ObjectClass::kPedestrian;
    tr.size = Vec3(0.6, 0.6, 1.8).cwiseProduct(Vec3(uniform(0.9, 1.1), uniform(0.9, 1.1), uniform(0.9, 1.1)));
    tr.reflectance = uniform(0.2, 0.5);
    const double speed = uniform(0.5, 1.8);
    std::vector<double> turns(n);
    for (auto& d : turns) d = 0.15 * gauss(rng);
    auto kin = [&](const Eigen::Vector3d& s0) {
      std::vector<Eigen::Vector3d> states(n);
      Eigen::Vector3d s = s0;
      for (std::size_t t = 0; t < n; ++t) {
        if (t > 0) {
          s.z() += turns[t];
          s.x() += speed * cfg.frame_dt * std::cos(s.z());
          s.y() += speed * cfg.frame_dt * std::sin(s.z());
        }
        states[t] = s;
      }
      return states;
    };
    if (try_place(tr, kin)) {
      tr.track_id = next_track++;
      tracks.push_back(std::move(tr));
    }
  }
  for (int i = 0; i < cfg.n_static_clutter; ++i) {
    Track tr;
    tr.labeled = false;
    tr.size = Vec3(uniform(0.3, 1.5), uniform(0.3, 3.0), uniform(0.5, 3.0));
    tr.reflectance = uniform(0.1, 0.8);
    auto kin = [&](const Eigen::Vector3d& s0) { return std::vector<Eigen::Vector3d>(n, s0); };
    if (try_place(tr, kin)) tracks.push_back(std::move(tr));
  }

  // Ground cells on a regular 1 m lattice around the sensor, in the sensor frame.
  struct Cell {
    Vec3 corner;
    double weight;
  };
  std::vector<Cell> ground;
  const int reach = static_cast<int>(std::ceil(cfg.max_range));
  for (int gx = -reach; gx < reach; ++gx) {
    for (int gy = -reach; gy < reach; ++gy) {
      const Vec3 c(gx + 0.5, gy + 0.5, 0.0);
      const double r_bev = c.head<2>().norm();
      if (r_bev < cfg.min_range || r_bev > cfg.max_range) continue;
      const double r = std::hypot(r_bev, cfg.sensor_height);
      ground.push_back({Vec3(gx, gy, 0.0), cfg.ground_weight * cfg.sensor_height / (r * r * r)});
    }
  }

  Sequence seq;
  seq.frames.resize(n);
  for (int t = 0; t < cfg.n_frames; ++t) {
    const Pose& pose = ego[static_cast<std::size_t>(t)];
    const Pose world_to_sensor = pose.inverse();
    const Vec3 sensor_world = pose * Vec3(0.0, 0.0, cfg.sensor_height);

    std::vector<Patch> patches;
    std::vector<double> weights;
    std::vector<BoundingBox> footprints;
    for (std::size_t k = 0; k < tracks.size(); ++k) {
      add_object_patches(tracks[k], static_cast<int>(k), t, sensor_world, cfg.label_margin, patches, weights);
      footprints.push_back(world_box(tracks[k], t));
    }
    for (const auto& cell : ground) {
      patches.push_back({pose * cell.corner, pose.rotation() * Vec3::UnitX(), pose.rotation() * Vec3::UnitY(), -1});
      weights.push_back(cell.weight);
    }

    std::vector<Vec3> pts;
    std::vector<double> refl;
    pts.reserve(static_cast<std::size_t>(cfg.points_per_frame_target));
    if (!patches.empty() && cfg.points_per_frame_target > 0) {
      std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
      for (int i = 0; i < cfg.points_per_frame_target; ++i) {
        const Patch& patch = patches[pick(rng)];
        Vec3 p;
        bool accepted = false;
        for (int attempt = 0; attempt < 8 && !accepted; ++attempt) {
          p = patch.origin + unit(rng) * patch.edge_u + unit(rng) * patch.edge_v;
          accepted = patch.owner >= 0 || !under_any_object(footprints, p);
        }
        if (!accepted) continue;
        const double base = patch.owner >= 0 ? tracks[static_cast<std::size_t>(patch.owner)].reflectance : 0.15;
        p += cfg.noise_sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
        pts.push_back(world_to_sensor * p);
        refl.push_back(std::clamp(base + 0.03 * gauss(rng), 0.0, 1.0));
      }
    }

    PointCloudFrame& frame = seq.frames[static_cast<std::size_t>(t)];
    frame.timestamp = t;
    frame.ego_pose = pose;
    frame.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
    frame.features.resize(static_cast<Eigen::Index>(pts.size()), 1);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      for (int d = 0; d < 3; ++d) frame.points(row, d) = to_f32(pts[i][d]);
      frame.features(row, 0) = to_f32(refl[i]);
    }
    for (const auto& tr : tracks) {
      if (!tr.labeled) continue;
      BoundingBox b = transform_box(world_box(tr, t), world_to_sensor);
      for (int d = 0; d < 3; ++d) {
        b.center[d] = to_f32(b.center[d]);
        b.size[d] = to_f32(b.size[d]);
      }
      b.heading = heading_to_f32(b.heading);
      frame.boxes.push_back(b);
    }
  }
  return seq;
}

// ---------------------------------------------------------------------------
// Binary format (little-endian).

namespace {

class Writer {
 public:
  template <typename T>
  void put(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    char raw[sizeof(T)];
    std::memcpy(raw, &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    out_.append(raw, sizeof(T));
  }
  void bytes(const char* data, std::size_t n) { out_.append(data, n); }
  std::string take() && { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& data) : data_(data) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    char raw[sizeof(T)];
    std::memcpy(raw, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw DecodeError(std::string("truncated file while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    std::string_view v(data_.data() + pos_, n);
    pos_ += n;
    return v;
  }

 private:
  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_sequence(const Sequence& seq) {
  Writer w;
  w.bytes(kSequenceMagic, sizeof(kSequenceMagic));
  w.put<std::uint16_t>(kSequenceVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(seq.frames.size()));
  for (const auto& f : seq.frames) {
    if (f.features.cols() > 255) throw std::invalid_argument("feature width exceeds 255");
    w.put<std::uint32_t>(static_cast<std::uint32_t>(f.points.rows()));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(f.features.cols()));
    for (Eigen::Index i = 0; i < f.points.rows(); ++i) {
      for (int d = 0; d < 3; ++d) w.put<float>(static_cast<float>(f.points(i, d)));
    }
    for (Eigen::Index i = 0; i < f.features.rows(); ++i) {
      for (Eigen::Index d = 0; d < f.features.cols(); ++d) w.put<float>(static_cast<float>(f.features(i, d)));
    }
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) w.put<double>(f.ego_pose.rotation()(r, c));
    }
    for (int d = 0; d < 3; ++d) w.put<double>(f.ego_pose.translation()[d]);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(f.boxes.size()));
    for (const auto& b : f.boxes) {
      for (int d = 0; d < 3; ++d) w.put<float>(static_cast<float>(b.center[d]));
      for (int d = 0; d < 3; ++d) w.put<float>(static_cast<float>(b.size[d]));
      w.put<float>(static_cast<float>(b.heading));
      w.put<float>(0.0f);
      w.put<std::uint32_t>(b.track_id);
      w.put<std::uint8_t>(static_cast<std::uint8_t>(b.class_id));
    }
  }
  return std::move(w).take();
}

Sequence decode_sequence(const std::string& bytes) {
  Reader r(bytes);
  const std::string_view magic = r.take(sizeof(kSequenceMagic), "magic");
  if (magic != std::string_view(kSequenceMagic, sizeof(kSequenceMagic))) throw DecodeError("bad magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kSequenceVersion) {
    throw DecodeError("unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kSequenceVersion) + ")");
  }
  const auto n_frames = r.get<std::uint32_t>("frame count");
  Sequence seq;
  for (std::uint32_t fi = 0; fi < n_frames; ++fi) {
    PointCloudFrame f;
    f.timestamp = fi;
    const auto n = r.get<std::uint32_t>("point count");
    const auto c = r.get<std::uint8_t>("feature width");
    r.need(static_cast<std::size_t>(n) * (3 + c) * sizeof(float), "point block");
    f.points.resize(n, 3);
    f.features.resize(n, c);
    for (std::uint32_t i = 0; i < n; ++i) {
      for (int d = 0; d < 3; ++d) f.points(i, d) = r.get<float>("points");
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      for (int d = 0; d < c; ++d) f.features(i, d) = r.get<float>("features");
    }
    Mat3 rot;
    Vec3 trans;
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) rot(row, col) = r.get<double>("ego pose");
    }
    for (int d = 0; d < 3; ++d) trans[d] = r.get<double>("ego pose");
    f.ego_pose = Pose(rot, trans);
    const auto n_boxes = r.get<std::uint32_t>("box count");
    constexpr std::size_t kBoxBytes = 8 * sizeof(float) + sizeof(std::uint32_t) + 1;
    r.need(static_cast<std::size_t>(n_boxes) * kBoxBytes, "box block");
    f.boxes.resize(n_boxes);
    for (auto& b : f.boxes) {
      for (int d = 0; d < 3; ++d) b.center[d] = r.get<float>("box");
      for (int d = 0; d < 3; ++d) b.size[d] = r.get<float>("box");
      b.heading = r.get<float>("box");
      (void)r.get<float>("box");
      b.track_id = r.get<std::uint32_t>("box");
      const auto cls = r.get<std::uint8_t>("box");
      if (cls > 1) throw DecodeError("invalid class id " + std::to_string(cls));
      b.class_id = static_cast<ObjectClass>(cls);
    }
    seq.frames.push_back(std::move(f));
  }
  if (r.remaining() != 0) throw DecodeError(std::to_string(r.remaining()) + " trailing bytes");
  return seq;
}

void write_sequence(const Sequence& seq, const std::filesystem::path& path) {
  const std::string bytes = encode_sequence(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Sequence read_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return decode_sequence(buf.str());
}

void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(dir / kManifestName, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << "# mf2sf dataset manifest v1: <split> <file>\n";
  for (const auto& e : entries) out << (e.split == Split::kTrain ? "train " : "val ") << e.file << '\n';
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / kManifestName);
  if (!in) throw std::runtime_error("no dataset manifest in " + dir.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string split, file;
    if (!(fields >> split >> file) || (split != "train" && split != "val")) {
      throw std::runtime_error("malformed manifest line " + std::to_string(line_no) + ": " + line);
    }
    entries.push_back({file, split == "train" ? Split::kTrain : Split::kValidation});
  }
  return entries;
}

std::vector<Sequence> load_split(const std::filesystem::path& dir, Split split) {
  std::vector<Sequence> out;
  for (const auto& e : read_manifest(dir)) {
    if (e.split == split) out.push_back(read_sequence(dir / e.file));
  }
  return out;
}

void DatasetConfig::validate() const {
  if (sequences < 1) throw std::invalid_argument("dataset needs at least one sequence");
  if (frames < 1) throw std::invalid_argument("sequences need at least one frame");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("validation fraction must be in [0, 1)");
}

int DatasetConfig::validation_count() const {
  return static_cast<int>(std::lround(static_cast<double>(sequences) * val_fraction));
}

SceneConfig scene_config(const DatasetConfig& cfg, int index) {
  SceneConfig scene;
  scene.n_frames = cfg.frames;
  if (cfg.cls == ObjectClass::kPedestrian) {
    scene.n_vehicles = 4;
    scene.n_pedestrians = 12;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(index)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  scene.rng_seed = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return scene;
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  Dataset d;
  const int n_train = cfg.sequences - cfg.validation_count();
  for (int i = 0; i < cfg.sequences; ++i) {
    (i < n_train ? d.train : d.val).push_back(generate_sequence(scene_config(cfg, i)));
  }
  return d;
}

std::vector<std::string> write_dataset(const DatasetConfig& cfg, const std::filesystem::path& dir) {
  cfg.validate();
  std::filesystem::create_directories(dir);
  const int n_train = cfg.sequences - cfg.validation_count();
  std::vector<ManifestEntry> entries;
  std::vector<std::string> files;
  for (int i = 0; i < cfg.sequences; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%04d.mf2sf", i);
    write_sequence(generate_sequence(scene_config(cfg, i)), dir / name);
    entries.push_back({name, i < n_train ? Split::kTrain : Split::kValidation});
    files.emplace_back(name);
  }
  write_manifest(dir, entries);
  files.emplace_back(kManifestName);
  return files;
}

}  // namespace mf2sf
