#include "odt/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <stdexcept>

namespace fs = std::filesystem;

namespace odt {

Model::Model(const RunConfig& c) : cfg(c) {
  Rng rng(cfg.seed);
  backbone = std::make_unique<Backbone>(params, rng, cfg.backbone);
  cost = std::make_unique<CostVolumeBuilder>(params, rng, cfg.dmc, cfg.grid);
  decoder = std::make_unique<OccupancyDecoder>(params, rng, cfg.decoder, cfg.grid);
  tracker = std::make_unique<Tracker>(params, cfg.tracker);
}

StereoRig Model::rig_from(const CalibFile& calib) const {
  StereoRig rig;
  rig.left = calib.left;
  rig.right = calib.left.right_of(calib.baseline_m);
  return rig;
}

OccupancyPyramid Model::detect(const Image& left, const Image& right,
                               const CalibFile& calib) const {
  const StereoRig rig = rig_from(calib);
  Tensor lt = image_to_padded_tensor(left);
  Tensor rt = image_to_padded_tensor(right);
  auto [pl, pr] = backbone->extract_stereo(lt, rt);
  VoxelQuerySet q = cost->encode_queries(pl, pr, rig);
  CostVolume cv = cost->build(q, pl, pr, rig);
  return decoder->decode(cv);
}

Tensor image_to_padded_tensor(const Image& img) {
  const int H = (img.height + 31) / 32 * 32;
  const int W = (img.width + 31) / 32 * 32;
  Tensor t = Tensor::zeros({3, H, W});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < H; ++i) {
      const int si = std::min(i, img.height - 1);
      for (int j = 0; j < W; ++j)
        t.data()[(static_cast<std::size_t>(c) * H + i) * W + j] =
            img.at(si, std::min(j, img.width - 1), c);
    }
  return t;
}

JitterFactors sample_jitter(Rng& rng, double magnitude) {
  JitterFactors f;
  f.brightness = rng.uniform(1 - magnitude, 1 + magnitude);
  f.contrast = rng.uniform(1 - magnitude, 1 + magnitude);
  f.saturation = rng.uniform(1 - magnitude, 1 + magnitude);
  return f;
}

Image apply_jitter(const Image& img, const JitterFactors& f) {
  Image out = img;
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      const double r = img.at(i, j, 0), g = img.at(i, j, 1), b = img.at(i, j, 2);
      const double luma = 0.299 * r + 0.587 * g + 0.114 * b;
      double ch[3] = {r, g, b};
      for (int c = 0; c < 3; ++c) {
        double v = luma + (ch[c] - luma) * f.saturation;  // saturation about luma
        v = 0.5 + (v - 0.5) * f.contrast;                 // contrast about mid-gray
        v *= f.brightness;
        out.at(i, j, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  return out;
}

LoadedSample load_sample(const std::string& dir, const VoxelGridSpec& grid) {
  LoadedSample s;
  s.dir = dir;
  s.left_t = load_png((fs::path(dir) / "left_t.png").string());
  s.right_t = load_png((fs::path(dir) / "right_t.png").string());
  s.calib = read_calib((fs::path(dir) / "calib.txt").string());
  if (fs::exists(fs::path(dir) / "left_t1.png")) {
    s.left_t1 = load_png((fs::path(dir) / "left_t1.png").string());
    s.right_t1 = load_png((fs::path(dir) / "right_t1.png").string());
    s.has_pair = true;
  }
  if (fs::exists(fs::path(dir) / "occ_t.level1.odtv")) {
    s.has_gt = true;
    s.occ_t = BinaryPyramid::empty(grid);
    s.occ_t1 = BinaryPyramid::empty(grid);
    for (int lvl = 1; lvl <= grid.num_levels; ++lvl) {
      auto d = read_occupancy_dump((fs::path(dir) / ("occ_t.level" + std::to_string(lvl) + ".odtv")).string());
      if (d.dims != grid.dims(lvl))
        throw std::runtime_error("dataset sample " + dir + " was generated for a different grid (level " +
                                 std::to_string(lvl) + " dims mismatch)");
      s.occ_t.level(lvl) = std::move(d.data);
      if (s.has_pair && fs::exists(fs::path(dir) / ("occ_t1.level" + std::to_string(lvl) + ".odtv"))) {
        auto d1 = read_occupancy_dump((fs::path(dir) / ("occ_t1.level" + std::to_string(lvl) + ".odtv")).string());
        s.occ_t1.level(lvl) = std::move(d1.data);
      }
    }
  }
  if (fs::exists(fs::path(dir) / "flow.odtf")) {
    auto fd = read_flow_dump((fs::path(dir) / "flow.odtf").string());
    if (fd.dims != grid.dims(grid.num_levels))
      throw std::runtime_error("dataset sample " + dir + " flow dims do not match the grid");
    s.flow_vox.assign(grid.voxel_count(grid.num_levels) * 3, 0.0);
    for (const auto& r : fd.records) {
      const std::size_t lin = voxel_linear(fd.dims, static_cast<int>(r[0]), static_cast<int>(r[1]),
                                           static_cast<int>(r[2]));
      s.flow_vox[lin * 3] = r[3];
      s.flow_vox[lin * 3 + 1] = r[4];
      s.flow_vox[lin * 3 + 2] = r[5];
    }
    s.has_flow = true;
  }
  return s;
}

std::vector<LoadedSample> load_dataset(const RunConfig& cfg, const std::string& split) {
  if (!fs::exists(fs::path(cfg.data_root) / "manifest.tsv"))
    throw std::runtime_error("dataset not found under '" + cfg.data_root +
                             "' (run gen-data first or point data.root at a dataset)");
  std::vector<LoadedSample> out;
  for (const auto& e : read_manifest(cfg.data_root)) {
    if (split != "all" && e.split != split) continue;
    LoadedSample s = load_sample((fs::path(cfg.data_root) / e.dir).string(), cfg.grid);
    s.split = e.split;
    out.push_back(std::move(s));
  }
  return out;
}

void run_gen_data(const RunConfig& cfg) {
  generate_dataset(cfg.dataset_gen(), cfg.data_root);
  std::printf("wrote %d samples under %s\n", cfg.gen_num_samples, cfg.data_root.c_str());
}

namespace {

double wall_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::uint64_t mix_epoch_sample(std::uint64_t seed, int epoch, int idx) {
  return seed ^ (0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(epoch) * 1000003ull +
                                          static_cast<std::uint64_t>(idx) + 1));
}

// Tracking term of the joint loss for one frame pair, built on the
// predicted occupancies (zeros where nothing was detected).
Tensor tracking_term(const Model& model, const OccupancyPyramid& out_t,
                     const OccupancyPyramid& out_t1, const std::vector<double>& gt_flow_vox) {
  const auto& grid = model.cfg.grid;
  const int finest = grid.num_levels;
  const auto dims = grid.dims(finest);
  const double l4 = grid.side_length(finest);
  const int v = static_cast<int>(grid.voxel_count(finest));

  std::vector<double> gt_m(gt_flow_vox.size());
  for (std::size_t i = 0; i < gt_flow_vox.size(); ++i) gt_m[i] = gt_flow_vox[i] * l4;

  auto graph = model.tracker->track_graph(out_t.track_features, out_t.binary_level(finest),
                                          out_t1.track_features, out_t1.binary_level(finest),
                                          dims, l4);
  Tensor pred;
  if (graph.pairs.active.empty()) {
    pred = Tensor::zeros({v, 3});
  } else {
    std::vector<int> active_sources;
    for (int r : graph.pairs.active) active_sources.push_back(graph.pairs.sources[r]);
    pred = scale(scatter_rows(graph.motions, active_sources, v), l4);
  }
  return tracking_loss(pred, gt_m);
}

}  // namespace

TrainResult train_detection(const RunConfig& cfg, const std::string& ckpt_out,
                            const std::string& resume_path, int stop_after_epochs) {
  auto data = load_dataset(cfg, "train");
  if (data.empty()) throw std::runtime_error("train-detect: no training samples in " + cfg.data_root);
  for (const auto& s : data)
    if (!s.has_gt) throw std::runtime_error("train-detect: sample " + s.dir + " has no ground truth");
  auto val = load_dataset(cfg, "val");

  Model model(cfg);
  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  opt.init(model.params);
  int start_epoch = 0;
  if (!resume_path.empty()) {
    const auto meta = load_checkpoint(resume_path, model.params, &opt, cfg.arch_fingerprint(), false);
    start_epoch = static_cast<int>(meta.epoch);
    std::printf("resumed %s at epoch %d\n", resume_path.c_str(), start_epoch);
  }
  std::printf("train-detect: %zu samples, %zu parameters, %d epochs\n", data.size(),
              model.params.total_params(), cfg.epochs);

  const int end_epoch = stop_after_epochs > 0 ? std::min(cfg.epochs, stop_after_epochs) : cfg.epochs;
  const double t0 = wall_seconds();
  TrainResult res;
  int epochs_done = start_epoch;
  for (int epoch = start_epoch; epoch < end_epoch; ++epoch) {
    const double lr = cosine_lr(cfg.lr, cfg.min_lr, epoch, cfg.epochs);
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng(cfg.seed).fork(0xE0000000ull + epoch);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0;
    double iou4 = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t bend = std::min(order.size(), b + cfg.batch);
      model.params.zero_grads();
      for (std::size_t k = b; k < bend; ++k) {
        const auto& s = data[order[k]];
        Image left = s.left_t, right = s.right_t;
        if (cfg.augment && cfg.jitter > 0) {
          Rng jr(mix_epoch_sample(cfg.seed, epoch, order[k]));
          const JitterFactors f = sample_jitter(jr, cfg.jitter);
          left = apply_jitter(left, f);
          right = apply_jitter(right, f);
        }
        OccupancyPyramid out = model.detect(left, right, s.calib);
        Tensor loss = detection_loss(out.probs, s.occ_t, cfg.level_weights);
        epoch_loss += loss.item();
        iou4 += metric_iou_pct(out.binary_level(4), s.occ_t.level(4), cfg.grid, 4,
                               cfg.grid.roi_max.z);
        backward(scale(loss, 1.0 / static_cast<double>(bend - b)));
      }
      opt.step(model.params, lr);
    }
    epoch_loss /= static_cast<double>(data.size());
    iou4 /= static_cast<double>(data.size());
    res.final_loss = epoch_loss;
    res.final_iou4_pct = iou4;
    res.epochs_run = epoch + 1;
    epochs_done = epoch + 1;

    if (!val.empty()) {
      NoGrad ng;
      double vloss = 0, viou = 0;
      for (const auto& s : val) {
        OccupancyPyramid out = model.detect(s.left_t, s.right_t, s.calib);
        vloss += detection_loss(out.probs, s.occ_t, cfg.level_weights).item();
        viou += metric_iou_pct(out.binary_level(4), s.occ_t.level(4), cfg.grid, 4,
                               cfg.grid.roi_max.z);
      }
      std::printf("epoch %3d lr %.3e loss %.5f iou4 %5.1f | val loss %.5f iou4 %5.1f (%.1fs)\n",
                  epoch, lr, epoch_loss, iou4, vloss / val.size(), viou / val.size(),
                  wall_seconds() - t0);
    } else {
      std::printf("epoch %3d lr %.3e loss %.5f iou4 %5.1f (%.1fs)\n", epoch, lr, epoch_loss, iou4,
                  wall_seconds() - t0);
    }
    std::fflush(stdout);
  }

  CheckpointMeta meta;
  meta.phase = TrainPhase::kDetect;
  meta.epoch = static_cast<std::uint32_t>(epochs_done);
  meta.arch_fingerprint = cfg.arch_fingerprint();
  save_checkpoint(ckpt_out, model.params, &opt, meta);
  std::printf("saved %s\n", ckpt_out.c_str());
  return res;
}

TrainResult train_joint(const RunConfig& cfg, const std::string& init_ckpt,
                        const std::string& ckpt_out, bool allow_cold_start) {
  auto data = load_dataset(cfg, "train");
  if (data.empty()) throw std::runtime_error("train-joint: no training samples in " + cfg.data_root);
  for (const auto& s : data)
    if (!s.has_gt || !s.has_pair || !s.has_flow)
      throw std::runtime_error("train-joint: sample " + s.dir + " lacks pair or flow ground truth");

  Model model(cfg);
  if (init_ckpt.empty()) {
    if (!allow_cold_start)
      throw std::runtime_error(
          "train-joint: refusing a cold start; pass a detection checkpoint via --init or "
          "--allow-cold-start to proceed anyway");
    std::printf("train-joint: cold start (randomly initialized detection stack)\n");
  } else {
    load_checkpoint(init_ckpt, model.params, nullptr, cfg.arch_fingerprint(), false);
  }
  AdamW opt;
  opt.weight_decay = cfg.weight_decay;
  opt.init(model.params);

  const auto dims = cfg.grid.dims(cfg.grid.num_levels);
  const double l4 = cfg.grid.side_length(cfg.grid.num_levels);
  std::printf("train-joint: %zu pairs, %d epochs, lambda %.2f\n", data.size(), cfg.epochs,
              cfg.lambda_track);

  const double t0 = wall_seconds();
  TrainResult res;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(cfg.lr, cfg.min_lr, epoch, cfg.epochs);
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng(cfg.seed).fork(0x10000000ull + epoch);
    shuffle_rng.shuffle(order);

    double epoch_loss = 0, fg_epe = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch) {
      const std::size_t bend = std::min(order.size(), b + cfg.batch);
      model.params.zero_grads();
      for (std::size_t k = b; k < bend; ++k) {
        const auto& s = data[order[k]];
        Image lt = s.left_t, rt = s.right_t, lt1 = s.left_t1, rt1 = s.right_t1;
        if (cfg.augment && cfg.jitter > 0) {
          Rng jr(mix_epoch_sample(cfg.seed, epoch, order[k]));
          const JitterFactors f = sample_jitter(jr, cfg.jitter);
          lt = apply_jitter(lt, f);
          rt = apply_jitter(rt, f);
          lt1 = apply_jitter(lt1, f);
          rt1 = apply_jitter(rt1, f);
        }
        OccupancyPyramid out_t = model.detect(lt, rt, s.calib);
        OccupancyPyramid out_t1 = model.detect(lt1, rt1, s.calib);
        Tensor ld = scale(add(detection_loss(out_t.probs, s.occ_t, cfg.level_weights),
                              detection_loss(out_t1.probs, s.occ_t1, cfg.level_weights)),
                          0.5);
        Tensor lt_track = tracking_term(model, out_t, out_t1, s.flow_vox);
        Tensor loss = add(ld, scale(lt_track, cfg.lambda_track));
        epoch_loss += loss.item();

        // foreground EPE on the fly, from the same forward
        VoxelFlowField f;
        f.dims = dims;
        f.voxel_size = l4;
        {
          NoGrad ng;
          f = model.tracker->track(out_t, out_t1);
        }
        fg_epe += epe_metrics(f.dense_voxel_units(), s.flow_vox, s.occ_t.level(4), l4).second;
        backward(scale(loss, 1.0 / static_cast<double>(bend - b)));
      }
      opt.step(model.params, lr);
    }
    epoch_loss /= static_cast<double>(data.size());
    fg_epe /= static_cast<double>(data.size());
    res.final_loss = epoch_loss;
    res.final_fg_epe_m = fg_epe;
    res.epochs_run = epoch + 1;
    std::printf("epoch %3d lr %.3e loss %.5f fg_epe %.4f tau %.3f (%.1fs)\n", epoch, lr,
                epoch_loss, fg_epe, model.tracker->tau(), wall_seconds() - t0);
    std::fflush(stdout);
  }

  CheckpointMeta meta;
  meta.phase = TrainPhase::kJoint;
  meta.epoch = static_cast<std::uint32_t>(cfg.epochs);
  meta.arch_fingerprint = cfg.arch_fingerprint();
  save_checkpoint(ckpt_out, model.params, &opt, meta);
  std::printf("saved %s\n", ckpt_out.c_str());
  return res;
}

MetricReport evaluate(const RunConfig& cfg, const std::string& ckpt_path, const std::string& split,
                      const std::string& out_dir, bool allow_mismatch) {
  auto data = load_dataset(cfg, split);
  if (data.empty()) throw std::runtime_error("eval: no samples for split '" + split + "'");
  Model model(cfg);
  load_checkpoint(ckpt_path, model.params, nullptr, cfg.arch_fingerprint(), allow_mismatch);

  const int levels = cfg.grid.num_levels;
  const double l4 = cfg.grid.side_length(levels);
  std::vector<std::vector<double>> iou(levels), cd(levels);
  for (int l = 0; l < levels; ++l) {
    iou[l].assign(cfg.eval_ranges.size(), 0.0);
    cd[l].assign(cfg.eval_ranges.size(), 0.0);
  }
  double epe = 0, fg_epe = 0;
  int flow_samples = 0;

  NoGrad ng;
  for (const auto& s : data) {
    if (!s.has_gt) throw std::runtime_error("eval: sample " + s.dir + " has no ground truth");
    OccupancyPyramid out = model.detect(s.left_t, s.right_t, s.calib);
    for (int l = 1; l <= levels; ++l)
      for (std::size_t r = 0; r < cfg.eval_ranges.size(); ++r) {
        const double range = cfg.eval_ranges[r];
        iou[l - 1][r] += metric_iou_pct(out.binary_level(l), s.occ_t.level(l), cfg.grid, l, range);
        cd[l - 1][r] += chamfer_m(occupied_centroids(out.binary_level(l), cfg.grid, l, range),
                                  occupied_centroids(s.occ_t.level(l), cfg.grid, l, range),
                                  range);
      }
    if (s.has_pair && s.has_flow) {
      OccupancyPyramid out1 = model.detect(s.left_t1, s.right_t1, s.calib);
      VoxelFlowField f = model.tracker->track(out, out1);
      auto [e, fe] = epe_metrics(f.dense_voxel_units(), s.flow_vox, s.occ_t.level(4), l4);
      epe += e;
      fg_epe += fe;
      ++flow_samples;
    }
  }

  MetricReport rep;
  const double n = static_cast<double>(data.size());
  rep.epe_m = flow_samples ? epe / flow_samples : 0.0;
  rep.fg_epe_m = flow_samples ? fg_epe / flow_samples : 0.0;
  for (int l = 1; l <= levels; ++l)
    for (std::size_t r = 0; r < cfg.eval_ranges.size(); ++r) {
      MetricRow row;
      row.split = split;
      row.level = l;
      row.range_m = cfg.eval_ranges[r];
      row.iou_pct = iou[l - 1][r] / n;
      row.cd_m = cd[l - 1][r] / n;
      row.epe_m = rep.epe_m;
      row.fg_epe_m = rep.fg_epe_m;
      rep.rows.push_back(row);
    }

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "metrics.csv").string(), rep.to_csv());
    write_text_file((fs::path(out_dir) / "metrics.txt").string(), rep.to_text());
  }
  std::fputs(rep.to_text().c_str(), stdout);
  return rep;
}

void run_infer(const RunConfig& cfg, const std::string& ckpt_path, const std::string& input_dir,
               const std::string& out_dir, bool allow_mismatch) {
  Model model(cfg);
  load_checkpoint(ckpt_path, model.params, nullptr, cfg.arch_fingerprint(), allow_mismatch);
  LoadedSample s = load_sample(input_dir, cfg.grid);
  fs::create_directories(out_dir);

  NoGrad ng;
  OccupancyPyramid out = model.detect(s.left_t, s.right_t, s.calib);
  auto dump_pyramid = [&](const OccupancyPyramid& p, const std::string& prefix) {
    for (int lvl = 1; lvl <= cfg.grid.num_levels; ++lvl) {
      OccupancyDump d;
      d.level = static_cast<std::uint32_t>(lvl);
      d.dims = cfg.grid.dims(lvl);
      d.voxel_size = static_cast<float>(cfg.grid.side_length(lvl));
      d.data = p.binary_level(lvl);
      write_occupancy_dump((fs::path(out_dir) / (prefix + ".level" + std::to_string(lvl) + ".odtv")).string(), d);
    }
  };
  dump_pyramid(out, "occ_t");

  if (s.has_pair) {
    OccupancyPyramid out1 = model.detect(s.left_t1, s.right_t1, s.calib);
    dump_pyramid(out1, "occ_t1");
    VoxelFlowField f = model.tracker->track(out, out1);
    FlowDump fd;
    fd.dims = f.dims;
    fd.voxel_size = static_cast<float>(f.voxel_size);
    for (std::size_t i = 0; i < f.source_indices.size(); ++i) {
      const int lin = f.source_indices[i];
      fd.records.push_back({static_cast<float>(lin / (f.dims[1] * f.dims[2])),
                            static_cast<float>((lin / f.dims[2]) % f.dims[1]),
                            static_cast<float>(lin % f.dims[2]),
                            static_cast<float>(f.motions[i].x), static_cast<float>(f.motions[i].y),
                            static_cast<float>(f.motions[i].z)});
    }
    write_flow_dump((fs::path(out_dir) / "flow.odtf").string(), fd);
  }
  std::printf("wrote dumps under %s\n", out_dir.c_str());
}

void run_export_viz(const RunConfig& cfg, const std::string& input_dir, const std::string& out_dir) {
  fs::create_directories(out_dir);
  bool any = false;
  for (const auto& entry : fs::directory_iterator(input_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.size() > 5 && name.substr(name.size() - 5) == ".odtv") {
      const OccupancyDump d = read_occupancy_dump(entry.path().string());
      std::vector<Vec3> pts;
      for (int ix = 0; ix < d.dims[0]; ++ix)
        for (int iy = 0; iy < d.dims[1]; ++iy)
          for (int iz = 0; iz < d.dims[2]; ++iz)
            if (d.data[voxel_linear(d.dims, ix, iy, iz)])
              pts.push_back({cfg.grid.roi_min.x + (ix + 0.5) * d.voxel_size,
                             cfg.grid.roi_min.y + (iy + 0.5) * d.voxel_size,
                             cfg.grid.roi_min.z + (iz + 0.5) * d.voxel_size});
      write_pointcloud_text((fs::path(out_dir) / (name + ".xyz.txt")).string(), pts);
      any = true;
    } else if (name.size() > 5 && name.substr(name.size() - 5) == ".odtf") {
      const FlowDump d = read_flow_dump(entry.path().string());
      std::vector<Vec3> origins, deltas;
      for (const auto& r : d.records) {
        origins.push_back({cfg.grid.roi_min.x + (r[0] + 0.5) * d.voxel_size,
                           cfg.grid.roi_min.y + (r[1] + 0.5) * d.voxel_size,
                           cfg.grid.roi_min.z + (r[2] + 0.5) * d.voxel_size});
        deltas.push_back({r[3] * d.voxel_size, r[4] * d.voxel_size, r[5] * d.voxel_size});
      }
      write_flow_text((fs::path(out_dir) / (name + ".arrows.txt")).string(), origins, deltas);
      any = true;
    }
  }
  if (!any) throw std::runtime_error("export-viz: no .odtv/.odtf dumps found in " + input_dir);
  std::printf("wrote text exports under %s\n", out_dir.c_str());
}

}  // namespace odt
