#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "mf2sf/geometry.hpp"

namespace mf2sf {

/// Scene parameters for the synthetic LiDAR sequence generator.
struct SceneConfig {
  int n_frames = 10;
  double frame_dt = 0.1;            // seconds
  double area = 30.0;               // half-extent of the object spawn square (m)
  int n_vehicles = 8;
  int n_pedestrians = 4;
  int n_static_clutter = 6;
  int points_per_frame_target = 4096;
  double noise_sigma = 0.02;        // isotropic point noise (m)
  double ego_speed = 5.0;           // m/s
  double ego_max_yaw_rate = 0.05;   // rad/s, drawn uniformly in [-max, max]
  double moving_vehicle_fraction = 0.6;
  double vehicle_speed_min = 2.0;   // m/s, moving vehicles only
  double vehicle_speed_max = 10.0;
  double turning_vehicle_fraction = 0.3;  // of moving vehicles
  double vehicle_max_yaw_rate = 0.3;      // rad/s
  double sensor_height = 1.8;       // m above ground
  double min_range = 2.5;           // ground blind radius (m)
  double max_range = 45.0;          // ground sampling radius (m)
  double ground_weight = 1.0;       // relative share of ground returns
  double label_margin = 0.05;       // label box slack around the sampled cuboid (m)
  std::uint64_t rng_seed = 0;

  void validate() const;
};

/// Consecutive frames with consistent track ids.
struct Sequence {
  std::vector<PointCloudFrame> frames;

  bool operator==(const Sequence& other) const;
};

Sequence generate_sequence(const SceneConfig& cfg);

/// Raised for malformed sequence files.
class DecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr char kSequenceMagic[5] = {'M', 'F', '2', 'S', 'F'};
inline constexpr std::uint16_t kSequenceVersion = 1;

std::string encode_sequence(const Sequence& seq);
Sequence decode_sequence(const std::string& bytes);

void write_sequence(const Sequence& seq, const std::filesystem::path& path);
Sequence read_sequence(const std::filesystem::path& path);

enum class Split { kTrain, kValidation };

struct ManifestEntry {
  std::string file;  // relative to the manifest directory
  Split split = Split::kTrain;
};

inline constexpr const char* kManifestName = "dataset.txt";

void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

/// Loads every sequence of one split listed in `dir`'s manifest.
std::vector<Sequence> load_split(const std::filesystem::path& dir, Split split);

/// A set of independently seeded sequences split into train and validation.
struct DatasetConfig {
  int sequences = 50;
  int frames = 10;
  std::uint64_t seed = 0;
  ObjectClass cls = ObjectClass::kVehicle;  // class the scenes are populated for
  double val_fraction = 0.2;                // last round(sequences * fraction) go to validation

  void validate() const;
  int validation_count() const;
};

/// Scene parameters of sequence `index`.
SceneConfig scene_config(const DatasetConfig& cfg, int index);

struct Dataset {
  std::vector<Sequence> train;
  std::vector<Sequence> val;
};

Dataset generate_dataset(const DatasetConfig& cfg);

/// Writes seq_NNNN.mf2sf files plus the manifest; returns the file names.
std::vector<std::string> write_dataset(const DatasetConfig& cfg, const std::filesystem::path& dir);

}  // namespace mf2sf
