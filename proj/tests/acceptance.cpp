// Acceptance suite: one pass/fail line per criterion. Criteria that train
// models do so at desk scale with pinned seeds and thresholds. Run via
// ctest (the CLI binary path arrives as argv[1]) or standalone.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "odt/pipeline.hpp"
#include "oracle_helpers.hpp"

namespace fs = std::filesystem;
using namespace odt;

namespace {

int g_failures = 0;
std::string g_cli_path;

double now_s() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void criterion(int id, const std::string& name, const std::function<void()>& body) {
  const double t0 = now_s();
  try {
    body();
    std::printf("[PASS] criterion %2d: %s (%.1fs)\n", id, name.c_str(), now_s() - t0);
  } catch (const std::exception& e) {
    ++g_failures;
    std::printf("[FAIL] criterion %2d: %s (%.1fs)\n       %s\n", id, name.c_str(), now_s() - t0,
                e.what());
  }
  std::fflush(stdout);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::runtime_error(msg);
}

template <class T>
std::string str(const T& v) {
  std::ostringstream os;
  os.precision(12);
  os << v;
  return os.str();
}

const std::string kWork = "/tmp/odt_acceptance";

// small random feature pyramid for toy rigs
FeaturePyramid random_pyramid(Rng& rng, int channels, int h0, int w0) {
  FeaturePyramid p;
  int h = h0, w = w0;
  for (int l = 0; l < 4; ++l) {
    p.levels[l] = Tensor::zeros({channels, h, w});
    for (std::size_t i = 0; i < p.levels[l].numel(); ++i) p.levels[l].data()[i] = rng.uniform(-1, 1);
    h = std::max(1, h / 2);
    w = std::max(1, w / 2);
  }
  return p;
}

StereoRig toy_rig() {
  StereoRig rig;
  rig.left.fx = 47.0;
  rig.left.fy = 53.0;
  rig.left.cx = 30.7;
  rig.left.cy = 29.3;
  rig.left.image_width = 64;
  rig.left.image_height = 64;
  rig.right = rig.left.right_of(0.23);
  return rig;
}

// ---------------------------------------------------------------- criteria

void c1_bound_formula() {
  const double t0 = now_s();
  auto b = bound_dims(33.3, 26.0, 0.375);
  require(b == std::array<int, 3>{9, 3, 9},
          "bound_dims(33.3, 26, 0.375) = (" + str(b[0]) + "," + str(b[1]) + "," + str(b[2]) +
              "), expected (9,3,9)");
  for (int i = 0; i < 1000; ++i) {
    auto bb = bound_dims(33.3, 26.0, 0.375);
    require(bb[0] == 9 && bb[1] == 3 && bb[2] == 9, "bound_dims unstable");
  }
  const double per_call = (now_s() - t0) / 1001.0;
  require(per_call < 1e-3, "bound_dims took " + str(per_call) + " s per call");
}

void c2_grid_contract() {
  RunConfig cfg = RunConfig::load("", {"roi_preset=paper"});
  const std::array<std::array<int, 3>, 4> want{{{6, 2, 10}, {12, 4, 20}, {24, 8, 40}, {48, 16, 80}}};
  const std::array<double, 4> sides{3.0, 1.5, 0.75, 0.375};
  for (int l = 1; l <= 4; ++l) {
    require(cfg.grid.dims(l) == want[l - 1], "level " + str(l) + " dims wrong");
    require(cfg.grid.side_length(l) == sides[l - 1],
            "level " + str(l) + " side = " + str(cfg.grid.side_length(l)));
  }
}

void c3_equation_oracles() {
  const double t0 = now_s();
  double worst = 0;
  for (int seed : {101, 202, 303}) {
    for (int d : {4, 8}) {
      for (int ns : {2, 4}) {
        VoxelGridSpec spec = (seed % 2) ? VoxelGridSpec::create({-0.5, -0.25, 0.5}, {0.5, 0.25, 1.5}, {2, 1, 2}, 4)
                                        : VoxelGridSpec::create({-1, -0.5, 0.4}, {1, 0.5, 2.4}, {4, 2, 4}, 4);
        DmcConfig cfg;
        cfg.channels = d;
        cfg.num_samples = ns;
        cfg.num_blocks = 1;
        cfg.fourier_bands = 2;
        ParamStore ps;
        Rng rng(seed);
        CostVolumeBuilder builder(ps, rng, cfg, spec);
        StereoRig rig = toy_rig();
        Rng frng(seed + 7);
        FeaturePyramid left = random_pyramid(frng, d, 16, 16);
        FeaturePyramid right = random_pyramid(frng, d, 16, 16);

        // Eq. (2): positional MLP plus averaged pixel-aligned features
        VoxelQuerySet q = builder.encode_queries(left, right, rig);
        const auto centroids = spec.centroids(1);
        for (std::size_t i = 0; i < centroids.size(); ++i) {
          const Vec3 n = spec.normalize_centroid(centroids[i]);
          const double xyz[3] = {n.x, n.y, n.z};
          std::vector<double> four(12);
          fourier_encode(xyz, 3, 2, four.data());
          auto enc = oracle::mlp(ps, "dmc.query_mlp", four, 12, d, d);
          auto fl = oracle::sample(left.levels[3], 32, rig.left, centroids[i]);
          auto fr = oracle::sample(right.levels[3], 32, rig.right, centroids[i]);
          for (int c = 0; c < d; ++c)
            worst = std::max(worst, std::fabs(q.encodings.data()[i * d + c] -
                                              (enc[c] + 0.5 * (fl[c] + fr[c]))));
        }

        // Eq. (3) per-scale cost and Eq. (4) fusion on random points
        Rng prng(seed + 11);
        std::vector<double> pts_v;
        const int np = 3;
        for (int i = 0; i < np; ++i) {
          pts_v.push_back(prng.uniform(spec.roi_min.x, spec.roi_max.x));
          pts_v.push_back(prng.uniform(spec.roi_min.y, spec.roi_max.y));
          pts_v.push_back(prng.uniform(spec.roi_min.z, spec.roi_max.z));
        }
        Tensor pts = Tensor::from({np, 3}, std::vector<double>(pts_v));
        std::array<Tensor, 4> costs;
        for (int sc = 0; sc < 4; ++sc) {
          costs[sc] = builder.per_scale_cost(0, sc, pts, left, right, rig);
          for (int i = 0; i < np; ++i) {
            const Vec3 p{pts_v[i * 3], pts_v[i * 3 + 1], pts_v[i * 3 + 2]};
            auto expect = oracle::per_scale_cost(ps, cfg, 0, sc, left, right, rig, p);
            for (int c = 0; c < d; ++c)
              worst = std::max(worst, std::fabs(costs[sc].data()[i * d + c] - expect[c]));
          }
        }
        Tensor fused = builder.fuse_scales(0, costs);
        for (int i = 0; i < np; ++i) {
          std::array<std::vector<double>, 4> oc;
          for (int sc = 0; sc < 4; ++sc) {
            const Vec3 p{pts_v[i * 3], pts_v[i * 3 + 1], pts_v[i * 3 + 2]};
            oc[sc] = oracle::per_scale_cost(ps, cfg, 0, sc, left, right, rig, p);
          }
          auto expect = oracle::fuse(ps, cfg, 0, oc);
          for (int c = 0; c < d; ++c)
            worst = std::max(worst, std::fabs(fused.data()[i * d + c] - expect[c]));
        }

        // Eq. (5) aggregation over learned offsets
        Rng qrng(seed + 13);
        const int nq = static_cast<int>(centroids.size());
        std::vector<double> qv(static_cast<std::size_t>(nq) * d);
        for (auto& x : qv) x = qrng.uniform(-1, 1);
        Tensor qrows = Tensor::from({nq, d}, std::vector<double>(qv));
        std::vector<double> cpts;
        for (const auto& c : centroids) {
          cpts.push_back(c.x);
          cpts.push_back(c.y);
          cpts.push_back(c.z);
        }
        Tensor agg = builder.aggregate(0, qrows, Tensor::from({nq, 3}, std::move(cpts)), left,
                                       right, rig);
        for (int i = 0; i < nq; ++i) {
          std::vector<double> row(qv.begin() + i * d, qv.begin() + (i + 1) * d);
          auto expect = oracle::aggregate(ps, cfg, 0, row, centroids[i], builder.offset_scale(),
                                          left, right, rig);
          for (int c = 0; c < d; ++c)
            worst = std::max(worst, std::fabs(agg.data()[i * d + c] - expect[c]));
        }
      }
    }
  }

  // softmax matching and M_t = P_t G_{t+1} - G_t on random small grids
  for (int seed : {5, 6}) {
    const std::array<int, 3> dims{4, 3, 4};
    Rng rng(seed);
    Tensor ft = Tensor::zeros({6, 4, 3, 4});
    Tensor ft1 = Tensor::zeros({6, 4, 3, 4});
    for (std::size_t i = 0; i < ft.numel(); ++i) {
      ft.data()[i] = rng.uniform(-1, 1);
      ft1.data()[i] = rng.uniform(-1, 1);
    }
    std::vector<std::uint8_t> occ_t(48), occ_t1(48);
    for (auto& v : occ_t) v = rng.uniform() < 0.5 ? 1 : 0;
    for (auto& v : occ_t1) v = rng.uniform() < 0.5 ? 1 : 0;
    ParamStore ps;
    TrackerConfig tc;
    tc.speed_mps = 0.375 * 26.0;
    Tracker tr(ps, tc);
    auto g = tr.track_graph(ft, occ_t, ft1, occ_t1, dims, 0.375);
    const double tau = tr.tau();
    for (std::size_t a = 0; a + 1 < g.pairs.segments.size(); ++a) {
      const int b = g.pairs.segments[a], e = g.pairs.segments[a + 1];
      double z = 0;
      for (int j = b; j < e; ++j) z += std::exp(tau * g.similarities.data()[j]);
      double m[3] = {0, 0, 0};
      for (int j = b; j < e; ++j) {
        const double pj = std::exp(tau * g.similarities.data()[j]) / z;
        worst = std::max(worst, std::fabs(g.distribution.data()[j] - pj));
        const int tgt = g.pairs.tgt_of_pair[j];
        m[0] += pj * (tgt / 12);
        m[1] += pj * ((tgt / 4) % 3);
        m[2] += pj * (tgt % 4);
      }
      const int src = g.pairs.sources[g.pairs.active[a]];
      m[0] -= src / 12;
      m[1] -= (src / 4) % 3;
      m[2] -= src % 4;
      for (int ax = 0; ax < 3; ++ax)
        worst = std::max(worst, std::fabs(g.motions.data()[a * 3 + ax] - m[ax]));
    }
  }

  require(worst < 1e-9, "worst oracle deviation " + str(worst));
  require(now_s() - t0 < 10.0, "equation oracles took " + str(now_s() - t0) + " s (budget 10)");
}

// shared finite-difference driver
double fd_check(Tensor leaf, const std::function<Tensor()>& forward, double h,
                const std::vector<std::size_t>& idxs) {
  if (leaf.has_grad()) leaf.node()->zero_grad();
  backward(forward());
  std::vector<double> an(leaf.node()->grad);
  double gmax = 0;
  for (double g : an) gmax = std::max(gmax, std::fabs(g));
  double worst = 0;
  for (std::size_t i : idxs) {
    const double keep = leaf.data()[i];
    leaf.data()[i] = keep + h;
    const double fp = forward().item();
    leaf.data()[i] = keep - h;
    const double fm = forward().item();
    leaf.data()[i] = keep;
    const double fd = (fp - fm) / (2 * h);
    const double scale = std::max({std::fabs(fd), std::fabs(an[i]), 1e-2 * gmax, 1e-9});
    worst = std::max(worst, std::fabs(fd - an[i]) / scale);
  }
  return worst;
}

void c4_gradient_suite() {
  const double t0 = now_s();
  double worst = 0;

  {  // soft-IoU detection loss wrt probabilities
    VoxelGridSpec spec = VoxelGridSpec::create({0, 0, 0}, {2, 1, 2}, {2, 1, 2}, 2);
    Rng rng(31);
    BinaryPyramid gt = BinaryPyramid::empty(spec);
    auto fin = gt.level(2);
    for (auto& v : fin) v = rng.uniform() < 0.4 ? 1 : 0;
    gt = or_pool_pyramid(spec, std::move(fin));
    std::vector<double> pv(spec.voxel_count(2));
    for (auto& v : pv) v = rng.uniform(0.05, 0.95);
    const int np = static_cast<int>(pv.size());
    Tensor probs = Tensor::from({np}, std::move(pv), true);
    std::vector<std::size_t> all(np);
    for (int i = 0; i < np; ++i) all[i] = i;
    worst = std::max(worst, fd_check(probs,
                                     [&] { return sub(Tensor::scalar(1.0), soft_iou(probs, gt.level(2))); },
                                     1e-6, all));
  }

  {  // DMC block through bilinear sampling and offsets
    VoxelGridSpec spec = VoxelGridSpec::create({-0.5, -0.25, 0.5}, {0.5, 0.25, 1.5}, {2, 1, 2}, 4);
    DmcConfig cfg;
    cfg.channels = 4;
    cfg.num_samples = 2;
    cfg.num_blocks = 1;
    cfg.fourier_bands = 2;
    ParamStore ps;
    Rng rng(33);
    CostVolumeBuilder builder(ps, rng, cfg, spec);
    StereoRig rig = toy_rig();
    Rng frng(34);
    FeaturePyramid left = random_pyramid(frng, 4, 16, 16);
    FeaturePyramid right = random_pyramid(frng, 4, 16, 16);
    left.levels[0].node()->needs_grad = true;
    auto loss = [&] {
      VoxelQuerySet q = builder.encode_queries(left, right, rig);
      CostVolume cv = builder.build(q, left, right, rig);
      return sum(mul(cv.costs, cv.costs));
    };
    for (const char* pn : {"dmc.block0.offset.fc2.w", "dmc.block0.scale1.fc1.w", "dmc.block0.attn.w"}) {
      Tensor* p = ps.find(pn);
      worst = std::max(worst, fd_check(*p, loss, 1e-6, {0, p->numel() / 2, p->numel() - 1}));
    }
    worst = std::max(worst, fd_check(left.levels[0], loss, 1e-6, {0, 33, 400}));
  }

  {  // decoder: L_D wrt the cost volume
    VoxelGridSpec spec = VoxelGridSpec::create({-3, -1.5, 0}, {3, 1.5, 6}, {2, 1, 2}, 4);
    ParamStore ps;
    Rng rng(35);
    DecoderConfig dcfg;
    dcfg.channels = 4;
    OccupancyDecoder dec(ps, rng, dcfg, spec);
    Rng crng(36);
    std::vector<double> cvv(4ul * 4);
    for (auto& v : cvv) v = crng.uniform(-1, 1);
    CostVolume cv;
    cv.grid_dims = spec.dims(1);
    cv.channels = 4;
    cv.costs = Tensor::from({4, 4}, std::move(cvv), true);
    BinaryPyramid gt = BinaryPyramid::empty(spec);
    auto fin = gt.level(4);
    for (auto& v : fin) v = crng.uniform() < 0.1 ? 1 : 0;
    gt = or_pool_pyramid(spec, std::move(fin));
    std::vector<std::size_t> all(16);
    for (int i = 0; i < 16; ++i) all[i] = i;
    worst = std::max(worst, fd_check(cv.costs,
                                     [&] {
                                       return detection_loss(dec.decode(cv).probs, gt,
                                                             {0.30, 0.27, 0.23, 0.20});
                                     },
                                     1e-6, all));
  }

  {  // tracking loss wrt features and the logit scale
    const std::array<int, 3> dims{3, 3, 3};
    Rng rng(37);
    Tensor ft = Tensor::zeros({4, 3, 3, 3});
    Tensor ft1 = Tensor::zeros({4, 3, 3, 3});
    for (std::size_t i = 0; i < ft.numel(); ++i) {
      ft.data()[i] = rng.uniform(-1, 1);
      ft1.data()[i] = rng.uniform(-1, 1);
    }
    ft.node()->needs_grad = true;
    std::vector<std::uint8_t> occ(27, 0);
    occ[4] = occ[13] = occ[22] = 1;
    std::vector<std::uint8_t> all1(27, 1);
    ParamStore ps;
    TrackerConfig tc;
    tc.speed_mps = 0.375 * 26.0;
    Tracker tr(ps, tc);
    std::vector<double> gt(27 * 3, 0.0);
    gt[13 * 3 + 2] = 0.375;
    auto loss = [&] {
      auto g = tr.track_graph(ft, occ, ft1, all1, dims, 0.375);
      std::vector<int> act;
      for (int r : g.pairs.active) act.push_back(g.pairs.sources[r]);
      return tracking_loss(scale(scatter_rows(g.motions, act, 27), 0.375), gt);
    };
    worst = std::max(worst, fd_check(ft, loss, 1e-6, {13, 40, 70, 100}));
    Tensor* lt = ps.find("tracker.log_tau");
    worst = std::max(worst, fd_check(*lt, loss, 1e-6, {0}));
  }

  require(worst < 1e-4, "worst gradient relative error " + str(worst));
  require(now_s() - t0 < 120.0, "gradient suite took " + str(now_s() - t0) + " s (budget 120)");
}

void c5_bounded_equivalence() {
  // full-grid bound vs dense path: bitwise equality
  {
    const std::array<int, 3> dims{6, 1, 6};
    Rng rng(41);
    Tensor ft = Tensor::zeros({4, 6, 1, 6});
    Tensor ft1 = Tensor::zeros({4, 6, 1, 6});
    for (std::size_t i = 0; i < ft.numel(); ++i) {
      ft.data()[i] = rng.uniform(-1, 1);
      ft1.data()[i] = rng.uniform(-1, 1);
    }
    std::vector<std::uint8_t> occ(36), all1(36, 1);
    for (auto& v : occ) v = rng.uniform() < 0.5 ? 1 : 0;
    TrackerConfig wide;
    wide.speed_mps = 6 * 0.375 * 26.0;
    TrackerConfig dense = wide;
    dense.bounded = false;
    ParamStore p1, p2;
    Tracker tw(p1, wide), td(p2, dense);
    auto gw = tw.track_graph(ft, occ, ft1, all1, dims, 0.375);
    auto gd = td.track_graph(ft, occ, ft1, all1, dims, 0.375);
    require(gw.pairs.tgt_of_pair == gd.pairs.tgt_of_pair, "pair lists differ");
    for (std::size_t i = 0; i < gw.similarities.numel(); ++i)
      require(gw.similarities.data()[i] == gd.similarities.data()[i], "similarities not bitwise equal");
    for (std::size_t i = 0; i < gw.motions.numel(); ++i)
      require(gw.motions.data()[i] == gd.motions.data()[i], "motions not bitwise equal");
  }
  // restrictive bound equals the dense matrix with -inf masks
  {
    const std::array<int, 3> dims{5, 3, 5};
    const int v = 75;
    Rng rng(42);
    Tensor ft = Tensor::zeros({6, 5, 3, 5});
    Tensor ft1 = Tensor::zeros({6, 5, 3, 5});
    for (std::size_t i = 0; i < ft.numel(); ++i) {
      ft.data()[i] = rng.uniform(-1, 1);
      ft1.data()[i] = rng.uniform(-1, 1);
    }
    std::vector<std::uint8_t> occ_t(v), occ_t1(v);
    for (auto& x : occ_t) x = rng.uniform() < 0.4 ? 1 : 0;
    for (auto& x : occ_t1) x = rng.uniform() < 0.4 ? 1 : 0;
    ParamStore ps;
    TrackerConfig tc;
    tc.speed_mps = 0.375 * 26.0;  // 3x3x3 box
    tc.match_all = false;
    Tracker tr(ps, tc);
    auto g = tr.track_graph(ft, occ_t, ft1, occ_t1, dims, 0.375);

    auto row_of = [&](int lin) {
      std::vector<double> r(6);
      for (int c = 0; c < 6; ++c) r[c] = ft.data()[c * v + lin];
      return r;
    };
    auto row1_of = [&](int lin) {
      std::vector<double> r(6);
      for (int c = 0; c < 6; ++c) r[c] = ft1.data()[c * v + lin];
      return r;
    };
    // dense matrix with -inf outside the box / at unoccupied targets
    std::size_t pair_idx = 0, active_idx = 0;
    for (std::size_t r = 0; r < g.pairs.sources.size(); ++r) {
      const int src = g.pairs.sources[r];
      const int sx = src / 15, sy = (src / 5) % 3, sz = src % 5;
      std::vector<int> expect_tgts;
      for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dz = -1; dz <= 1; ++dz) {
            const int tx = sx + dx, ty = sy + dy, tz = sz + dz;
            if (tx < 0 || tx >= 5 || ty < 0 || ty >= 3 || tz < 0 || tz >= 5) continue;
            const int tgt = (tx * 3 + ty) * 5 + tz;
            if (!occ_t1[tgt]) continue;  // -inf: excluded from storage
            expect_tgts.push_back(tgt);
          }
      if (expect_tgts.empty()) {
        require(g.pairs.isolated[r] == 1, "missing isolated flag");
        continue;
      }
      require(static_cast<std::size_t>(g.pairs.segments[active_idx + 1] -
                                       g.pairs.segments[active_idx]) == expect_tgts.size(),
              "segment size mismatch");
      for (int tgt : expect_tgts) {
        require(g.pairs.tgt_of_pair[pair_idx] == tgt, "pair target mismatch");
        const auto a = row_of(src), b = row1_of(tgt);
        double aa = 0, bb = 0, ab = 0;
        for (int c = 0; c < 6; ++c) {
          aa += a[c] * a[c];
          bb += b[c] * b[c];
          ab += a[c] * b[c];
        }
        const double expectation = ab / (std::sqrt(aa) * std::sqrt(bb));
        require(std::fabs(g.similarities.data()[pair_idx] - expectation) < 1e-12,
                "similarity deviates from the dense matrix");
        ++pair_idx;
      }
      ++active_idx;
    }
    // storage accounting: O(N_t * bx*by*bz), never O(N_t * N_t1)
    std::size_t n_src = 0;
    for (auto x : occ_t) n_src += x;
    require(g.pairs.storage_entries() <= n_src * 27, "bounded storage exceeds N_t*b^3");
  }
}

void c6_overfit_detection(RunConfig& out_cfg, std::string& out_ckpt) {
  const std::string root = kWork + "/c6";
  fs::remove_all(root);
  RunConfig cfg = RunConfig::load(
      "", {"data.root=" + root + "/ds", "backbone.channels=32", "gen.num_samples=50",
           "gen.seed=7", "train.epochs=100", "train.seed=1", "train.weight_decay=0"});
  const double t0 = now_s();
  run_gen_data(cfg);
  TrainResult res = train_detection(cfg, root + "/detect.ckpt");
  const double elapsed = now_s() - t0;
  require(elapsed < 1800.0, "training took " + str(elapsed) + " s (budget 1800)");
  require(res.epochs_run <= 200, "epoch budget exceeded");

  MetricReport rep = evaluate(cfg, root + "/detect.ckpt", "train", root + "/eval");
  double iou1 = -1, iou4 = -1;
  for (const auto& r : rep.rows) {
    if (r.level == 1 && r.range_m == 30.0) iou1 = r.iou_pct;
    if (r.level == 4 && r.range_m == 30.0) iou4 = r.iou_pct;
  }
  require(iou1 >= 90.0, "level-1 IoU " + str(iou1) + " < 90");
  require(iou4 >= 40.0, "level-4 IoU " + str(iou4) + " < 40");
  out_cfg = cfg;
  out_ckpt = root + "/detect.ckpt";
}

// After the overfit, features sampled at the two projections of the same
// surface point should correlate more than features at unrelated locations.
void stereo_correspondence_check(const RunConfig& cfg, const std::string& ckpt) {
  Model model(cfg);
  load_checkpoint(ckpt, model.params, nullptr, cfg.arch_fingerprint(), false);
  auto data = load_dataset(cfg, "train");
  require(!data.empty(), "no samples");
  NoGrad ng;
  double corr = 0, rand_corr = 0;
  int n = 0;
  Rng rng(77);
  for (int si = 0; si < 5; ++si) {
    const auto& s = data[si % data.size()];
    const StereoRig rig = model.rig_from(s.calib);
    auto [pl, pr] = model.backbone->extract_stereo(image_to_padded_tensor(s.left_t),
                                                   image_to_padded_tensor(s.right_t));
    const auto d4 = cfg.grid.dims(4);
    const int D = cfg.backbone.channels;
    const auto& lvl = pl.levels[0];
    const auto& rvl = pr.levels[0];
    std::vector<double> fl(D), fr(D), fr_rand(D);
    for (int ix = 0; ix < d4[0]; ++ix)
      for (int iy = 0; iy < d4[1]; ++iy)
        for (int iz = 0; iz < d4[2]; ++iz) {
          if (!s.occ_t.level(4)[voxel_linear(d4, ix, iy, iz)]) continue;
          const Vec3 c = cfg.grid.centroid(4, ix, iy, iz);
          auto a = project(c, rig.left);
          auto b = project(c, rig.right);
          if (!a.valid || !b.valid) continue;
          bilinear_sample_map(lvl.data(), D, lvl.dim(1), lvl.dim(2), a.u, a.v, 4, fl.data());
          bilinear_sample_map(rvl.data(), D, rvl.dim(1), rvl.dim(2), b.u, b.v, 4, fr.data());
          bilinear_sample_map(rvl.data(), D, rvl.dim(1), rvl.dim(2),
                              rng.uniform(0, s.calib.left.image_width),
                              rng.uniform(0, s.calib.left.image_height), 4, fr_rand.data());
          auto cos = [&](const std::vector<double>& x, const std::vector<double>& y) {
            double xx = 0, yy = 0, xy = 0;
            for (int k = 0; k < D; ++k) {
              xx += x[k] * x[k];
              yy += y[k] * y[k];
              xy += x[k] * y[k];
            }
            return (xx > 0 && yy > 0) ? xy / std::sqrt(xx * yy) : 0.0;
          };
          corr += cos(fl, fr);
          rand_corr += cos(fl, fr_rand);
          ++n;
        }
  }
  require(n > 50, "too few correspondences checked");
  require(corr / n > rand_corr / n,
          "epipolar correspondence similarity " + str(corr / n) +
              " does not exceed random-location similarity " + str(rand_corr / n));
}

void c7_planted_motion(RunConfig& out_cfg, std::string& out_ckpt) {
  const std::string root = kWork + "/c7";
  fs::remove_all(root);
  RunConfig cfg = RunConfig::load(
      "", {"data.root=" + root + "/ds", "backbone.channels=32", "gen.num_samples=20",
           "gen.seed=11", "gen.static_fraction=0", "train.seed=3", "train.weight_decay=0"});
  run_gen_data(cfg);
  RunConfig dcfg = cfg;
  dcfg.epochs = 160;
  train_detection(dcfg, root + "/detect.ckpt");
  RunConfig jcfg = cfg;
  jcfg.epochs = 200;
  jcfg.lambda_track = 2.0;
  TrainResult res = train_joint(jcfg, root + "/detect.ckpt", root + "/joint.ckpt");
  require(std::isfinite(res.final_loss), "joint loss not finite");

  // training-set foreground EPE at or below one finest voxel
  MetricReport rep = evaluate(jcfg, root + "/joint.ckpt", "train", root + "/eval");
  require(rep.fg_epe_m <= cfg.grid.side_length(4),
          "foreground EPE " + str(rep.fg_epe_m) + " m > l4 = " + str(cfg.grid.side_length(4)));

  // hard invariant: every predicted motion stays inside the bound box
  Model model(jcfg);
  load_checkpoint(root + "/joint.ckpt", model.params, nullptr, jcfg.arch_fingerprint(), false);
  auto data = load_dataset(jcfg, "train");
  const auto bound = bound_dims(jcfg.tracker.speed_mps, jcfg.tracker.fps, jcfg.grid.side_length(4));
  NoGrad ng;
  std::size_t violations = 0, motions = 0;
  for (const auto& s : data) {
    OccupancyPyramid a = model.detect(s.left_t, s.right_t, s.calib);
    OccupancyPyramid b = model.detect(s.left_t1, s.right_t1, s.calib);
    VoxelFlowField f = model.tracker->track(a, b);
    for (const auto& m : f.motions) {
      ++motions;
      if (std::fabs(m.x) > (bound[0] - 1) / 2.0 + 1e-12 || std::fabs(m.y) > 1.0 + 1e-12 ||
          std::fabs(m.z) > (bound[2] - 1) / 2.0 + 1e-12)
        ++violations;
    }
  }
  require(motions > 0, "no motions predicted");
  require(violations == 0, str(violations) + " motions escaped the bound box");
  out_cfg = jcfg;
  out_ckpt = root + "/joint.ckpt";
}

void c8_ablation_directions(const RunConfig& joint_cfg, const std::string& joint_ckpt) {
  // (a) concat vs cross-view averaging on level-4 IoU, shared seeds
  const std::string root = kWork + "/c8";
  fs::remove_all(root);
  const std::vector<std::string> base{"data.root=" + root + "/ds",  "backbone.channels=24",
                                      "gen.num_samples=16",         "gen.seed=21",
                                      "train.epochs=60",            "train.seed=5",
                                      "train.weight_decay=0"};
  RunConfig concat_cfg = RunConfig::load("", base);
  run_gen_data(concat_cfg);
  train_detection(concat_cfg, root + "/concat.ckpt");
  auto avg_over = base;
  avg_over.push_back("dmc.cross_view=average");
  RunConfig avg_cfg = RunConfig::load("", avg_over);
  train_detection(avg_cfg, root + "/average.ckpt");

  auto iou4_of = [&](const RunConfig& cfg, const std::string& ckpt) {
    MetricReport rep = evaluate(cfg, ckpt, "train", "");
    for (const auto& r : rep.rows)
      if (r.level == 4 && r.range_m == 30.0) return r.iou_pct;
    return -1.0;
  };
  const double iou_concat = iou4_of(concat_cfg, root + "/concat.ckpt");
  const double iou_avg = iou4_of(avg_cfg, root + "/average.ckpt");
  require(iou_concat >= iou_avg, "concat IoU4 " + str(iou_concat) + " < average IoU4 " + str(iou_avg));

  // (b) bounded tracking completes at paper-grid scale; the dense path is
  // refused by the memory guard (61440^2 pair space)
  {
    const std::array<int, 3> dims{48, 16, 80};
    const int v = 48 * 16 * 80;
    Rng rng(61);
    Tensor ft = Tensor::zeros({8, 48, 16, 80});
    Tensor ft1 = Tensor::zeros({8, 48, 16, 80});
    for (std::size_t i = 0; i < ft.numel(); ++i) {
      ft.data()[i] = rng.uniform(-1, 1);
      ft1.data()[i] = rng.uniform(-1, 1);
    }
    std::vector<std::uint8_t> all1(v, 1);
    TrackerConfig tc;  // paper bound (9,3,9)
    ParamStore p1;
    Tracker bounded(p1, tc);
    NoGrad ng;
    auto g = bounded.track_graph(ft, all1, ft1, all1, dims, 0.375);
    require(g.pairs.storage_entries() <= static_cast<std::size_t>(v) * 9 * 3 * 9,
            "bounded storage exceeded the box budget");
    require(g.motions.dim(0) == v, "bounded path did not produce motions for every voxel");

    TrackerConfig dense = tc;
    dense.bounded = false;
    ParamStore p2;
    Tracker dense_tr(p2, dense);
    bool refused = false;
    try {
      dense_tr.build_pairs(dims, all1, all1, 0.375);
    } catch (const std::exception& e) {
      refused = std::string(e.what()).find("memory guard") != std::string::npos;
    }
    require(refused, "dense pair space was not refused by the memory guard");
  }

  // (c) match-all at least as good as occupied-only on foreground EPE,
  // evaluated with the identical jointly trained checkpoint
  RunConfig all_cfg = joint_cfg;
  all_cfg.tracker.match_all = true;
  RunConfig occ_cfg = joint_cfg;
  occ_cfg.tracker.match_all = false;
  MetricReport rep_all = evaluate(all_cfg, joint_ckpt, "train", "");
  MetricReport rep_occ = evaluate(occ_cfg, joint_ckpt, "train", "");
  require(rep_all.fg_epe_m <= rep_occ.fg_epe_m + 1e-12,
          "match-all fg EPE " + str(rep_all.fg_epe_m) + " worse than occupied-only " +
              str(rep_occ.fg_epe_m));
}

void c9_metric_self_consistency() {
  const std::string root = kWork + "/c9";
  fs::remove_all(root);
  RunConfig cfg = RunConfig::load("", {"data.root=" + root + "/ds", "gen.num_samples=4",
                                       "gen.seed=31", "gen.static_fraction=0.5"});
  run_gen_data(cfg);
  auto data = load_dataset(cfg, "train");
  require(!data.empty(), "no samples");
  const double l4 = cfg.grid.side_length(4);
  for (const auto& s : data) {
    for (int l = 1; l <= 4; ++l)
      for (double range : cfg.eval_ranges) {
        require(metric_iou_pct(s.occ_t.level(l), s.occ_t.level(l), cfg.grid, l, range) == 100.0,
                "oracle IoU not exactly 100");
        auto pts = occupied_centroids(s.occ_t.level(l), cfg.grid, l, range);
        require(chamfer_m(pts, pts, range) == 0.0, "oracle CD not exactly 0");
      }
    auto [epe, fg] = epe_metrics(s.flow_vox, s.flow_vox, s.occ_t.level(4), l4);
    require(epe == 0.0 && fg == 0.0, "oracle EPE not exactly 0");
  }
}

void c10_determinism() {
  auto one_run = [&](const std::string& root) {
    fs::remove_all(root);
    RunConfig cfg = RunConfig::load(
        "", {"data.root=" + root + "/ds", "backbone.channels=8", "backbone.fpn_smooth=false",
             "dmc.num_samples=2", "dmc.blocks=1", "gen.image_width=96", "gen.image_height=64",
             "gen.num_samples=3", "gen.seed=13", "train.epochs=1", "train.seed=2"});
    run_gen_data(cfg);
    train_detection(cfg, root + "/d.ckpt");
    evaluate(cfg, root + "/d.ckpt", "train", root + "/eval");
    run_infer(cfg, root + "/d.ckpt", root + "/ds/sample_0", root + "/dumps");
    return cfg;
  };
  one_run(kWork + "/c10a");
  one_run(kWork + "/c10b");

  // CSV rows agree to 1e-6
  auto parse_csv = [](const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::vector<std::vector<double>> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      std::vector<double> row;
      std::stringstream ls(line);
      std::string cell;
      std::getline(ls, cell, ',');  // split name
      while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
      rows.push_back(row);
    }
    return rows;
  };
  auto a = parse_csv(kWork + "/c10a/eval/metrics.csv");
  auto b = parse_csv(kWork + "/c10b/eval/metrics.csv");
  require(a.size() == b.size() && !a.empty(), "metric row count differs");
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j)
      require(std::fabs(a[i][j] - b[i][j]) <= 1e-6,
              "metric row " + str(i) + " differs: " + str(a[i][j]) + " vs " + str(b[i][j]));

  // grid dumps bit-identical
  for (const std::string name : {"occ_t.level1.odtv", "occ_t.level4.odtv", "flow.odtf"}) {
    require(read_text_file(kWork + "/c10a/dumps/" + name) ==
                read_text_file(kWork + "/c10b/dumps/" + name),
            "dump " + name + " not bit-identical");
  }
}

void cli_contract() {
  if (g_cli_path.empty()) throw std::runtime_error("CLI path not provided");
  auto run = [&](const std::string& args) {
    const std::string cmd = g_cli_path + " " + args + " >/dev/null 2>" + kWork + "/cli_err.txt";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
  };
  require(run("") == 2, "no arguments should exit 2");
  require(run("bogus-subcommand") == 2, "unknown subcommand should exit 2");
  require(run("gen-data no.such.key=1") == 2, "unknown config key should exit 2");
  require(run("eval --ckpt " + kWork + "/missing.ckpt data.root=" + kWork + "/c10a/ds") == 1,
          "missing checkpoint should exit 1");
  const std::string err = read_text_file(kWork + "/cli_err.txt");
  require(err.find("missing.ckpt") != std::string::npos,
          "error message must name the missing checkpoint path");
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) g_cli_path = argv[1];
  fs::create_directories(kWork);

  criterion(1, "bound formula (9,3,9), < 1 ms", c1_bound_formula);
  criterion(2, "paper ROI grid shapes and voxel sides", c2_grid_contract);
  criterion(3, "equation oracles at 1e-9", c3_equation_oracles);
  criterion(4, "finite-difference gradient suite at 1e-4", c4_gradient_suite);
  criterion(5, "bounded matching equals dense with -inf masks", c5_bounded_equivalence);

  RunConfig c6_cfg;
  std::string c6_ckpt;
  criterion(6, "overfit detection: IoU1 >= 90, IoU4 >= 40 in budget",
            [&] { c6_overfit_detection(c6_cfg, c6_ckpt); });

  RunConfig c7_cfg;
  std::string c7_ckpt;
  criterion(7, "planted-motion tracking: fg EPE <= l4, motions in bound",
            [&] { c7_planted_motion(c7_cfg, c7_ckpt); });

  criterion(8, "ablation directions: concat>=average, bounded vs dense, match-all",
            [&] {
              if (c7_ckpt.empty()) throw std::runtime_error("criterion 7 artifacts unavailable");
              c8_ablation_directions(c7_cfg, c7_ckpt);
            });

  criterion(9, "oracle-injected predictions: IoU 100, CD 0, EPE 0", c9_metric_self_consistency);
  criterion(10, "determinism: identical CSV rows and bit-identical dumps", c10_determinism);

  if (!g_cli_path.empty()) criterion(11, "CLI exit-code contract (supplementary)", cli_contract);
  criterion(12, "trained stereo features correlate at epipolar correspondences (supplementary)",
            [&] {
              if (c6_ckpt.empty()) throw std::runtime_error("criterion 6 artifacts unavailable");
              stereo_correspondence_check(c6_cfg, c6_ckpt);
            });

  if (g_failures) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
