#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "odt/geometry.hpp"
#include "odt/io.hpp"
#include "odt/nn.hpp"

namespace odt {

struct ObjectSpec {
  enum class Shape { kBox, kSphere };
  Shape shape = Shape::kBox;
  Vec3 position;   // center in the left-camera frame at t=0
  double yaw = 0;  // rotation about y
  Vec3 size;       // box: full extents; sphere: size.x is the diameter
  Vec3 velocity;   // m/s, constant
  std::uint64_t texture_seed = 0;

  Vec3 center_at(double t) const { return position + velocity * t; }
};

struct SceneSpec {
  std::vector<ObjectSpec> objects;
  CameraModel left_cam;
  double baseline_m = 0.3;
  double frame_dt = 1.0 / 26.0;
  double ground_plane_y = 1.6;  // textured but outside the supervised band
  std::uint64_t background_seed = 1;

  CameraModel right_cam() const { return left_cam.right_of(baseline_m); }
};

// Ray-cast rendering with procedural value-noise textures anchored to each
// object's local frame, so appearance tracks motion between frames.
// object_ids (optional) receives per-pixel ids: object index, -1 background,
// -2 ground plane.
Image render_view(const SceneSpec& scene, const CameraModel& cam, double t,
                  std::vector<int>* object_ids = nullptr);
std::pair<Image, Image> render_stereo(const SceneSpec& scene, double t);

// Exact occupancy: a finest voxel is occupied iff its cube intersects an
// object surface (or the solid interior with solid=true); voxels with
// centroid y > ground_removal_y are forced empty; coarser levels OR-pool.
BinaryPyramid gt_occupancy(const SceneSpec& scene, const VoxelGridSpec& spec, double t,
                           double ground_removal_y = 1.5, bool solid = false);

// Dense finest-grid flow in voxel units: rigid per-object displacement over
// dt averaged over surface samples inside each occupied voxel.
std::vector<double> gt_voxel_flow(const SceneSpec& scene, const VoxelGridSpec& spec, double t,
                                  double dt, const BinaryPyramid& occ_t);

BinaryPyramid voxelize_pointcloud(const std::vector<Vec3>& points, const VoxelGridSpec& spec,
                                  int min_points = 1, double ground_removal_y = 1.5);

struct FramePair {
  Image left_t, right_t, left_t1, right_t1;
  CalibFile calib;
  BinaryPyramid occ_t, occ_t1;
  std::vector<double> flow;  // dense finest grid, voxel units, frame t
};
FramePair make_frame_pair(const SceneSpec& scene, const VoxelGridSpec& spec,
                          double ground_removal_y = 1.5, bool solid = false);

struct SceneSamplerConfig {
  CameraModel camera;  // left
  double baseline_m = 0.3;
  double fps = 26.0;   // frame_dt = 1/fps
  VoxelGridSpec grid;
  int min_objects = 1, max_objects = 3;
  double min_size_m = 0.5, max_size_m = 1.0;
  double static_fraction = 0.25;
  int max_motion_x = 1, max_motion_y = 1, max_motion_z = 3;  // finest voxels per frame
  double ground_plane_y = 1.6;
};

// Objects are placed in separated azimuth sectors of the frustum and their
// per-frame displacements stay inside the tracking bound box.
SceneSpec sample_scene(const SceneSamplerConfig& cfg, Rng& rng);

struct DatasetGenConfig {
  SceneSamplerConfig scene;
  int num_samples = 50;
  std::uint64_t seed = 7;
  double val_fraction = 0.0;
  double ground_removal_y = 1.5;
  bool solid = false;
};

// Layout: root/manifest.tsv plus sample_<k>/ holding the four PNGs,
// calib.txt, occ_{t,t1}.level{1..4}.odtv and flow.odtf. Samples are staged
// in a temp directory and renamed into place.
void generate_dataset(const DatasetGenConfig& cfg, const std::string& root);

struct ManifestEntry {
  int id = 0;
  std::string dir;
  std::uint64_t seed = 0;
  std::string split;  // train | val
};
std::vector<ManifestEntry> read_manifest(const std::string& root);

}  // namespace odt
