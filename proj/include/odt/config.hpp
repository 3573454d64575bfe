#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "odt/backbone.hpp"
#include "odt/costvolume.hpp"
#include "odt/decoder.hpp"
#include "odt/geometry.hpp"
#include "odt/synthdata.hpp"
#include "odt/tracker.hpp"

namespace odt {

// Raised for malformed config files, unknown keys, or invalid values.
// The CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Flat key=value configuration with dotted namespaces. Presets:
//   roi_preset=paper  18x6x30 m ROI, 48x16x80 finest grid
//   roi_preset=desk   6x3x6 m ROI, 16x8x16 finest grid (same voxel sizes)
struct RunConfig {
  std::string roi_preset = "desk";
  VoxelGridSpec grid;

  BackboneConfig backbone;
  DmcConfig dmc;
  DecoderConfig decoder;
  TrackerConfig tracker;

  // training
  double lr = 1e-4, min_lr = 1e-8;
  int epochs = 120;
  int batch = 4;
  std::uint64_t seed = 1;
  double weight_decay = 1e-4;
  double lambda_track = 1.0;
  std::array<double, 4> level_weights{0.30, 0.27, 0.23, 0.20};
  bool augment = true;
  double jitter = 0.2;

  // data
  std::string data_root = "dataset";
  double ground_removal_y = 1.5;

  // generator
  int gen_num_samples = 50;
  std::uint64_t gen_seed = 7;
  int gen_image_width = 160, gen_image_height = 96;
  double gen_fx = 110.0, gen_fy = 110.0;
  double gen_baseline = 0.3;
  int gen_min_objects = 1, gen_max_objects = 3;
  double gen_min_size = 0.5, gen_max_size = 1.0;
  double gen_val_fraction = 0.0;
  double gen_static_fraction = 0.25;
  int gen_max_motion_x = 1, gen_max_motion_y = 1, gen_max_motion_z = 3;
  bool gen_solid = false;
  double gen_ground_plane_y = 1.6;

  // evaluation
  std::vector<double> eval_ranges{15.0, 30.0};

  static RunConfig defaults();
  // Parses path (empty for defaults) then applies key=value overrides.
  // Unknown keys and invalid values raise ConfigError.
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides);
  static RunConfig from_map(const std::map<std::string, std::string>& kv);

  // Canonical dump of every key (sorted); round-trips through load().
  std::string canonical() const;
  // Hash over the architecture-defining subset (grid, backbone, dmc,
  // decoder); detects checkpoint/model shape mismatches.
  std::uint64_t arch_fingerprint() const;

  CameraModel gen_camera() const;
  SceneSamplerConfig scene_sampler() const;
  DatasetGenConfig dataset_gen() const;
};

}  // namespace odt
