#pragma once

#include <memory>
#include <string>
#include <vector>

#include "odt/backbone.hpp"
#include "odt/checkpoint.hpp"
#include "odt/config.hpp"
#include "odt/costvolume.hpp"
#include "odt/decoder.hpp"
#include "odt/io.hpp"
#include "odt/losses.hpp"
#include "odt/synthdata.hpp"
#include "odt/tracker.hpp"

namespace odt {

// Full detection + tracking stack built deterministically from a config.
struct Model {
  RunConfig cfg;
  ParamStore params;
  std::unique_ptr<Backbone> backbone;
  std::unique_ptr<CostVolumeBuilder> cost;
  std::unique_ptr<OccupancyDecoder> decoder;
  std::unique_ptr<Tracker> tracker;

  explicit Model(const RunConfig& cfg);

  StereoRig rig_from(const CalibFile& calib) const;
  // Whole detection pass: features -> queries -> cost volume -> decoding.
  OccupancyPyramid detect(const Image& left, const Image& right, const CalibFile& calib) const;
};

// Edge-replicates the bottom/right borders up to multiples of 32 so the
// original pixel coordinates stay valid for projection.
Tensor image_to_padded_tensor(const Image& img);

// Brightness/contrast/saturation jitter, identical factors for all images
// of a frame pair.
struct JitterFactors {
  double brightness = 1, contrast = 1, saturation = 1;
};
JitterFactors sample_jitter(Rng& rng, double magnitude);
Image apply_jitter(const Image& img, const JitterFactors& f);

struct LoadedSample {
  std::string dir, split;
  Image left_t, right_t, left_t1, right_t1;
  bool has_pair = false;
  CalibFile calib;
  bool has_gt = false;
  BinaryPyramid occ_t, occ_t1;
  bool has_flow = false;
  std::vector<double> flow_vox;  // dense finest grid, voxel units
};

LoadedSample load_sample(const std::string& dir, const VoxelGridSpec& grid);
// split: "train", "val" or "all"
std::vector<LoadedSample> load_dataset(const RunConfig& cfg, const std::string& split);

void run_gen_data(const RunConfig& cfg);

struct TrainResult {
  double final_loss = 0;
  double final_iou4_pct = 0;   // detection phase
  double final_fg_epe_m = 0;   // joint phase
  int epochs_run = 0;
};

// stop_after_epochs > 0 ends the run early (same cosine schedule), which
// together with --resume gives exact continuation of an interrupted run.
TrainResult train_detection(const RunConfig& cfg, const std::string& ckpt_out,
                            const std::string& resume_path = {}, int stop_after_epochs = 0);
TrainResult train_joint(const RunConfig& cfg, const std::string& init_ckpt,
                        const std::string& ckpt_out, bool allow_cold_start = false);

MetricReport evaluate(const RunConfig& cfg, const std::string& ckpt_path, const std::string& split,
                      const std::string& out_dir, bool allow_mismatch = false);

void run_infer(const RunConfig& cfg, const std::string& ckpt_path, const std::string& input_dir,
               const std::string& out_dir, bool allow_mismatch = false);

void run_export_viz(const RunConfig& cfg, const std::string& input_dir, const std::string& out_dir);

}  // namespace odt
