#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "odt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace odt;

namespace {

// tiny but complete configuration for fast end-to-end runs
RunConfig tiny_cfg(const std::string& root) {
  RunConfig c = RunConfig::load("", {"backbone.channels=8",
                                     "backbone.fpn_smooth=false",
                                     "dmc.num_samples=2",
                                     "dmc.blocks=1",
                                     "gen.image_width=96",
                                     "gen.image_height=64",
                                     "gen.num_samples=2",
                                     "train.epochs=1",
                                     "train.batch=2",
                                     "data.root=" + root});
  return c;
}

struct TempDir {
  std::string path;
  explicit TempDir(const std::string& p) : path(p) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config: presets, validation, canonical round trip") {
  RunConfig desk = RunConfig::load("", {});
  CHECK(desk.grid.dims(4) == std::array<int, 3>{16, 8, 16});
  CHECK(desk.grid.side_length(4) == doctest::Approx(0.375));
  CHECK(desk.backbone.channels == 64);

  RunConfig paper = RunConfig::load("", {"roi_preset=paper"});
  CHECK(paper.grid.dims(1) == std::array<int, 3>{6, 2, 10});
  CHECK(paper.grid.dims(4) == std::array<int, 3>{48, 16, 80});
  CHECK(paper.grid.side_length(1) == doctest::Approx(3.0));

  CHECK_THROWS_AS(RunConfig::load("", {"nonsense.key=1"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"train.epochs=zero"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"train.epochs=0"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"train.level_weights=0.5,0.5,0.5,0.5"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"dmc.offset_mode=sideways"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"roi_preset=warehouse"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"gen.image_width=100"}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"roi_preset=custom"}), ConfigError);
  CHECK_NOTHROW(RunConfig::load("", {"roi_preset=custom", "grid.roi_min=-2,-1,0",
                                     "grid.roi_max=2,1,4", "grid.base_dims=2,1,2"}));
  // a y displacement of more than one voxel violates the tracking bound
  CHECK_THROWS_AS(RunConfig::load("", {"gen.max_motion_y=2"}), ConfigError);

  // canonical dump parses back to the identical canonical dump
  RunConfig c = RunConfig::load("", {"backbone.channels=16", "tracker.match_all=false"});
  const std::string canon = c.canonical();
  const std::string tmp = "/tmp/odt_canon_cfg.txt";
  write_text_file(tmp, canon);
  RunConfig c2 = RunConfig::load(tmp, {});
  CHECK(c2.canonical() == canon);
  CHECK(c2.arch_fingerprint() == c.arch_fingerprint());
  fs::remove(tmp);

  // fingerprint tracks architecture keys, not training keys
  RunConfig c3 = RunConfig::load("", {"backbone.channels=16", "tracker.match_all=false",
                                      "train.epochs=77"});
  CHECK(c3.arch_fingerprint() == c.arch_fingerprint());
  RunConfig c4 = RunConfig::load("", {"backbone.channels=24"});
  CHECK(c4.arch_fingerprint() != c.arch_fingerprint());
}

TEST_CASE("config file parsing: comments, whitespace, malformed lines") {
  const std::string tmp = "/tmp/odt_cfg_parse.txt";
  write_text_file(tmp, "# comment\n\n  backbone.channels = 12  \ntrain.epochs=3\n");
  RunConfig c = RunConfig::load(tmp, {});
  CHECK(c.backbone.channels == 12);
  CHECK(c.epochs == 3);
  write_text_file(tmp, "backbone.channels\n");
  CHECK_THROWS_AS(RunConfig::load(tmp, {}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("/nonexistent/path.cfg", {}), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"no-equals-sign"}), ConfigError);
  fs::remove(tmp);
}

TEST_CASE("calibration rescaling is anisotropic and keeps the baseline") {
  CalibFile c;
  c.left.fx = 720;
  c.left.fy = 720;
  c.left.cx = 610;
  c.left.cy = 180;
  c.left.image_width = 1224;
  c.left.image_height = 370;
  c.baseline_m = 0.54;
  CalibFile r = c.scaled_to(880, 400);
  CHECK(r.left.fx == doctest::Approx(720.0 * 880 / 1224));
  CHECK(r.left.cx == doctest::Approx(610.0 * 880 / 1224));
  CHECK(r.left.fy == doctest::Approx(720.0 * 400 / 370));
  CHECK(r.left.cy == doctest::Approx(180.0 * 400 / 370));
  CHECK(r.left.image_width == 880);
  CHECK(r.left.image_height == 400);
  CHECK(r.baseline_m == 0.54);
  // a point projects to the proportionally scaled pixel
  const Vec3 p{2.0, -0.5, 12.0};
  auto a = project(p, c.left);
  auto b = project(p, r.left);
  CHECK(b.u == doctest::Approx(a.u * 880 / 1224));
  CHECK(b.v == doctest::Approx(a.v * 400 / 370));
}

TEST_CASE("jitter: deterministic, identity at zero magnitude, clamped") {
  Image img = Image::create(4, 4);
  Rng rng(3);
  for (auto& v : img.rgb) v = rng.uniform();
  Rng j1(42), j2(42);
  JitterFactors f1 = sample_jitter(j1, 0.2), f2 = sample_jitter(j2, 0.2);
  CHECK(f1.brightness == f2.brightness);
  CHECK(f1.contrast == f2.contrast);
  CHECK(f1.saturation == f2.saturation);
  Image a = apply_jitter(img, f1), b = apply_jitter(img, f2);
  CHECK(a.rgb == b.rgb);

  JitterFactors id;
  Image same = apply_jitter(img, id);
  for (std::size_t i = 0; i < img.rgb.size(); ++i)
    CHECK(same.rgb[i] == doctest::Approx(img.rgb[i]).epsilon(1e-12));
  for (double v : a.rgb) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("image padding replicates the border up to multiples of 32") {
  Image img = Image::create(40, 88);
  Rng rng(4);
  for (auto& v : img.rgb) v = rng.uniform();
  Tensor t = image_to_padded_tensor(img);
  CHECK(t.shape() == std::vector<int>{3, 64, 96});
  // original pixels intact
  CHECK(t.data()[(0 * 64 + 10) * 96 + 20] == img.at(10, 20, 0));
  // replicated beyond the borders
  CHECK(t.data()[(1 * 64 + 63) * 96 + 95] == img.at(39, 87, 1));
  CHECK(t.data()[(2 * 64 + 5) * 96 + 90] == img.at(5, 87, 2));
}

TEST_CASE("checkpoint save/load round trip and fingerprint gate") {
  TempDir tmp("/tmp/odt_ckpt_test");
  ParamStore ps;
  Rng rng(5);
  Tensor a = ps.add("a", {3, 2}, kaiming_uniform(rng, 6, 3));
  Tensor b = ps.add("b", {4}, kaiming_uniform(rng, 4, 4));
  AdamW opt;
  opt.init(ps);
  // run a step so the optimizer state is nontrivial
  backward(sum(mul(a, a)));
  backward(sum(mul(b, b)));
  opt.step(ps, 1e-3);

  CheckpointMeta meta;
  meta.phase = TrainPhase::kDetect;
  meta.epoch = 7;
  meta.arch_fingerprint = 0x1234;
  const std::string path = tmp.path + "/test.ckpt";
  save_checkpoint(path, ps, &opt, meta);

  CheckpointMeta peeked = peek_checkpoint(path);
  CHECK(peeked.epoch == 7);
  CHECK(peeked.phase == TrainPhase::kDetect);
  CHECK(peeked.arch_fingerprint == 0x1234);

  ParamStore ps2;
  ps2.add("a", {3, 2}, std::vector<double>(6, 0.0));
  ps2.add("b", {4}, std::vector<double>(4, 0.0));
  AdamW opt2;
  CheckpointMeta loaded = load_checkpoint(path, ps2, &opt2, 0x1234, false);
  CHECK(loaded.has_optimizer);
  for (int i = 0; i < 6; ++i) CHECK(ps2.items[0].second.data()[i] == a.data()[i]);
  for (int i = 0; i < 4; ++i) CHECK(ps2.items[1].second.data()[i] == b.data()[i]);
  CHECK(opt2.step_count == opt.step_count);
  CHECK(opt2.m[0] == opt.m[0]);
  CHECK(opt2.v[1] == opt.v[1]);

  // fingerprint mismatch: refused without the override
  CHECK_THROWS(load_checkpoint(path, ps2, nullptr, 0x9999, false));
  CHECK_NOTHROW(load_checkpoint(path, ps2, nullptr, 0x9999, true));

  // shape mismatch is always fatal
  ParamStore ps3;
  ps3.add("a", {2, 3}, std::vector<double>(6, 0.0));
  ps3.add("b", {4}, std::vector<double>(4, 0.0));
  CHECK_THROWS(load_checkpoint(path, ps3, nullptr, 0x1234, false));
}

TEST_CASE("model construction is deterministic and detection runs end to end") {
  TempDir tmp("/tmp/odt_model_test");
  RunConfig cfg = tiny_cfg(tmp.path + "/ds");
  Model m1(cfg), m2(cfg);
  REQUIRE(m1.params.items.size() == m2.params.items.size());
  for (std::size_t i = 0; i < m1.params.items.size(); ++i) {
    CHECK(m1.params.items[i].first == m2.params.items[i].first);
    const auto& t1 = m1.params.items[i].second;
    const auto& t2 = m2.params.items[i].second;
    for (std::size_t j = 0; j < t1.numel(); ++j) CHECK(t1.data()[j] == t2.data()[j]);
  }

  // render one pair and push it through detection twice: bitwise equal
  Rng rng(6);
  SceneSamplerConfig sc = cfg.scene_sampler();
  SceneSpec scene = sample_scene(sc, rng);
  FramePair fp = make_frame_pair(scene, cfg.grid);
  NoGrad ng;
  OccupancyPyramid a = m1.detect(fp.left_t, fp.right_t, fp.calib);
  OccupancyPyramid b = m2.detect(fp.left_t, fp.right_t, fp.calib);
  for (int l = 0; l < 4; ++l)
    for (std::size_t i = 0; i < a.probs[l].numel(); ++i)
      CHECK(a.probs[l].data()[i] == b.probs[l].data()[i]);
  CHECK(a.probs[3].shape() == std::vector<int>{1, 16, 8, 16});
}

TEST_CASE("train-detect smoke: one epoch, finite loss, checkpoint written") {
  TempDir tmp("/tmp/odt_train_smoke");
  RunConfig cfg = tiny_cfg(tmp.path + "/ds");
  run_gen_data(cfg);
  TrainResult res = train_detection(cfg, tmp.path + "/d.ckpt");
  CHECK(res.epochs_run == 1);
  CHECK(std::isfinite(res.final_loss));
  CHECK(fs::exists(tmp.path + "/d.ckpt"));

  // evaluation produces a full report with finite fields
  MetricReport rep = evaluate(cfg, tmp.path + "/d.ckpt", "train", tmp.path + "/eval");
  CHECK(rep.rows.size() == 8);  // 4 levels x 2 ranges
  for (const auto& r : rep.rows) {
    CHECK(std::isfinite(r.iou_pct));
    CHECK(std::isfinite(r.cd_m));
    CHECK(r.iou_pct >= 0.0);
    CHECK(r.iou_pct <= 100.0);
  }
  CHECK(fs::exists(tmp.path + "/eval/metrics.csv"));
  CHECK(fs::exists(tmp.path + "/eval/metrics.txt"));
}

TEST_CASE("resume reproduces an uninterrupted run exactly") {
  TempDir tmp("/tmp/odt_resume_test");
  RunConfig cfg = tiny_cfg(tmp.path + "/ds");
  run_gen_data(cfg);

  RunConfig three = cfg;
  three.epochs = 3;
  train_detection(three, tmp.path + "/full.ckpt");

  // interrupt after 2 epochs of the same 3-epoch schedule, then resume
  train_detection(three, tmp.path + "/half.ckpt", "", 2);
  CHECK(peek_checkpoint(tmp.path + "/half.ckpt").epoch == 2);
  train_detection(three, tmp.path + "/resumed.ckpt", tmp.path + "/half.ckpt");

  Model mf(three), mr(three);
  load_checkpoint(tmp.path + "/full.ckpt", mf.params, nullptr, three.arch_fingerprint(), false);
  load_checkpoint(tmp.path + "/resumed.ckpt", mr.params, nullptr, three.arch_fingerprint(), false);
  for (std::size_t i = 0; i < mf.params.items.size(); ++i) {
    const auto& tf = mf.params.items[i].second;
    const auto& tr = mr.params.items[i].second;
    for (std::size_t j = 0; j < tf.numel(); ++j) CHECK(tf.data()[j] == tr.data()[j]);
  }
}

TEST_CASE("joint training requires a detection checkpoint unless overridden") {
  TempDir tmp("/tmp/odt_joint_gate");
  RunConfig cfg = tiny_cfg(tmp.path + "/ds");
  run_gen_data(cfg);
  CHECK_THROWS_WITH_AS(train_joint(cfg, "", tmp.path + "/j.ckpt", false),
                       doctest::Contains("cold start"), std::runtime_error);
  // cold start allowed explicitly; must still produce finite losses
  TrainResult res = train_joint(cfg, "", tmp.path + "/j.ckpt", true);
  CHECK(std::isfinite(res.final_loss));
  CHECK(fs::exists(tmp.path + "/j.ckpt"));
}

TEST_CASE("joint training from a detection checkpoint improves nothing silently") {
  TempDir tmp("/tmp/odt_joint_smoke");
  RunConfig cfg = tiny_cfg(tmp.path + "/ds");
  run_gen_data(cfg);
  train_detection(cfg, tmp.path + "/d.ckpt");
  TrainResult res = train_joint(cfg, tmp.path + "/d.ckpt", tmp.path + "/j.ckpt");
  CHECK(std::isfinite(res.final_loss));
  CHECK(std::isfinite(res.final_fg_epe_m));
  CHECK(peek_checkpoint(tmp.path + "/j.ckpt").phase == TrainPhase::kJoint);

  // evaluation on pairs reports flow metrics
  MetricReport rep = evaluate(cfg, tmp.path + "/j.ckpt", "train", tmp.path + "/eval");
  CHECK(std::isfinite(rep.epe_m));
  CHECK(std::isfinite(rep.fg_epe_m));
}

TEST_CASE("infer writes dumps that reload exactly; export-viz emits text") {
  TempDir tmp("/tmp/odt_infer_test");
  RunConfig cfg = tiny_cfg(tmp.path + "/ds");
  run_gen_data(cfg);
  train_detection(cfg, tmp.path + "/d.ckpt");
  const std::string sample = cfg.data_root + "/sample_0";
  run_infer(cfg, tmp.path + "/d.ckpt", sample, tmp.path + "/out");
  for (int l = 1; l <= 4; ++l) {
    CHECK(fs::exists(tmp.path + "/out/occ_t.level" + std::to_string(l) + ".odtv"));
    CHECK(fs::exists(tmp.path + "/out/occ_t1.level" + std::to_string(l) + ".odtv"));
  }
  CHECK(fs::exists(tmp.path + "/out/flow.odtf"));

  // bit-identical across reruns
  run_infer(cfg, tmp.path + "/d.ckpt", sample, tmp.path + "/out2");
  CHECK(read_text_file(tmp.path + "/out/occ_t.level4.odtv") ==
        read_text_file(tmp.path + "/out2/occ_t.level4.odtv"));
  CHECK(read_text_file(tmp.path + "/out/flow.odtf") == read_text_file(tmp.path + "/out2/flow.odtf"));

  // round trip: reload matches the in-memory prediction
  Model model(cfg);
  load_checkpoint(tmp.path + "/d.ckpt", model.params, nullptr, cfg.arch_fingerprint(), false);
  LoadedSample s = load_sample(sample, cfg.grid);
  NoGrad ng;
  OccupancyPyramid out = model.detect(s.left_t, s.right_t, s.calib);
  auto dump = read_occupancy_dump(tmp.path + "/out/occ_t.level4.odtv");
  CHECK(dump.data == out.binary_level(4));

  run_export_viz(cfg, tmp.path + "/out", tmp.path + "/viz");
  CHECK(fs::exists(tmp.path + "/viz/occ_t.level4.odtv.xyz.txt"));
  CHECK(fs::exists(tmp.path + "/viz/flow.odtf.arrows.txt"));
}

TEST_CASE("perfect-oracle predictions give IoU 100, CD 0, EPE 0") {
  // inject ground truth as the prediction: metrics must be exact
  TempDir tmp("/tmp/odt_oracle_test");
  RunConfig cfg = tiny_cfg(tmp.path + "/ds");
  run_gen_data(cfg);
  auto data = load_dataset(cfg, "train");
  REQUIRE(!data.empty());
  const double l4 = cfg.grid.side_length(4);
  for (const auto& s : data) {
    for (int l = 1; l <= 4; ++l)
      for (double range : cfg.eval_ranges) {
        CHECK(metric_iou_pct(s.occ_t.level(l), s.occ_t.level(l), cfg.grid, l, range) == 100.0);
        auto pts = occupied_centroids(s.occ_t.level(l), cfg.grid, l, range);
        CHECK(chamfer_m(pts, pts, range) == 0.0);
      }
    auto [epe, fg] = epe_metrics(s.flow_vox, s.flow_vox, s.occ_t.level(4), l4);
    CHECK(epe == 0.0);
    CHECK(fg == 0.0);
  }
}
