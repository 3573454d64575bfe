#include "odt/tracker.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace odt {

std::vector<double> VoxelFlowField::dense_voxel_units() const {
  const std::size_t v = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  std::vector<double> out(v * 3, 0.0);
  for (std::size_t i = 0; i < source_indices.size(); ++i) {
    out[source_indices[i] * 3 + 0] = motions[i].x;
    out[source_indices[i] * 3 + 1] = motions[i].y;
    out[source_indices[i] * 3 + 2] = motions[i].z;
  }
  return out;
}

Tracker::Tracker(ParamStore& ps, const TrackerConfig& cfg) : cfg_(cfg) {
  if (!(cfg.tau_init > 1e-2)) throw std::invalid_argument("TrackerConfig: tau_init must exceed the 1e-2 floor");
  log_tau_ = ps.add("tracker.log_tau", {1}, {std::log(cfg.tau_init - 1e-2)});
}

double Tracker::tau() const { return 1e-2 + std::exp(log_tau_.data()[0]); }

Tensor Tracker::tau_tensor() const { return add_const(exp_t(log_tau_), 1e-2); }

MatchPairs Tracker::build_pairs(const std::array<int, 3>& dims,
                                const std::vector<std::uint8_t>& occ_t,
                                const std::vector<std::uint8_t>& occ_t1, double l4) const {
  const std::size_t v = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
  if (occ_t.size() != v || occ_t1.size() != v)
    throw std::invalid_argument("Tracker: occupancy size does not match grid dims");

  MatchPairs mp;
  mp.dims = dims;
  mp.bound = cfg_.bounded ? bound_dims(cfg_.speed_mps, cfg_.fps, l4)
                          : std::array<int, 3>{2 * dims[0] + 1, 2 * dims[1] + 1, 2 * dims[2] + 1};

  for (int ix = 0; ix < dims[0]; ++ix)
    for (int iy = 0; iy < dims[1]; ++iy)
      for (int iz = 0; iz < dims[2]; ++iz)
        if (occ_t[voxel_linear(dims, ix, iy, iz)])
          mp.sources.push_back(static_cast<int>(voxel_linear(dims, ix, iy, iz)));

  const int hx = (mp.bound[0] - 1) / 2, hy = (mp.bound[1] - 1) / 2, hz = (mp.bound[2] - 1) / 2;
  const std::size_t per_source =
      static_cast<std::size_t>(mp.bound[0]) * mp.bound[1] * mp.bound[2];
  std::size_t budget = mp.sources.size() * per_source;
  if (!cfg_.bounded) {
    // dense global matching: every source against every candidate target
    std::size_t targets = 0;
    if (cfg_.match_all) {
      targets = v;
    } else {
      for (auto o : occ_t1) targets += o;
    }
    budget = mp.sources.size() * targets;
  }
  if (budget > cfg_.memory_guard_entries)
    throw std::runtime_error(
        "Tracker memory guard: similarity storage of " + std::to_string(budget) +
        " entries exceeds the limit of " + std::to_string(cfg_.memory_guard_entries) +
        " (grid " + std::to_string(dims[0]) + "x" + std::to_string(dims[1]) + "x" +
        std::to_string(dims[2]) + ", " + std::to_string(mp.sources.size()) + " sources)");

  mp.isolated.assign(mp.sources.size(), 0);
  mp.segments.push_back(0);
  for (std::size_t r = 0; r < mp.sources.size(); ++r) {
    const int lin = mp.sources[r];
    const int ix = lin / (dims[1] * dims[2]);
    const int iy = (lin / dims[2]) % dims[1];
    const int iz = lin % dims[2];
    const std::size_t before = mp.tgt_of_pair.size();
    for (int dx = -hx; dx <= hx; ++dx) {
      const int jx = ix + dx;
      if (jx < 0 || jx >= dims[0]) continue;
      for (int dy = -hy; dy <= hy; ++dy) {
        const int jy = iy + dy;
        if (jy < 0 || jy >= dims[1]) continue;
        for (int dz = -hz; dz <= hz; ++dz) {
          const int jz = iz + dz;
          if (jz < 0 || jz >= dims[2]) continue;
          const int tgt = static_cast<int>(voxel_linear(dims, jx, jy, jz));
          if (!cfg_.match_all && !occ_t1[tgt]) continue;
          mp.src_of_pair.push_back(lin);
          mp.tgt_of_pair.push_back(tgt);
        }
      }
    }
    if (mp.tgt_of_pair.size() == before) {
      mp.isolated[r] = 1;  // occupied-only mode with an empty bound box
    } else {
      mp.active.push_back(static_cast<int>(r));
      mp.segments.push_back(static_cast<int>(mp.tgt_of_pair.size()));
    }
  }
  return mp;
}

Tracker::TrackGraph Tracker::track_graph(const Tensor& feat_t,
                                         const std::vector<std::uint8_t>& occ_t,
                                         const Tensor& feat_t1,
                                         const std::vector<std::uint8_t>& occ_t1,
                                         const std::array<int, 3>& dims, double l4) const {
  TrackGraph g;
  g.pairs = build_pairs(dims, occ_t, occ_t1, l4);
  const int C = feat_t.dim(0);
  const int v = static_cast<int>(occ_t.size());

  if (g.pairs.active.empty()) return g;  // motions left undefined; callers check

  // [C, V] -> [V, C] rows
  Tensor rows_t = transpose2d(reshape(feat_t, {C, v}));
  Tensor rows_t1 = transpose2d(reshape(feat_t1, {C, v}));
  Tensor a = gather_rows(rows_t, g.pairs.src_of_pair);
  Tensor b = gather_rows(rows_t1, g.pairs.tgt_of_pair);
  g.similarities = rowwise_cosine(a, b);
  g.distribution = segmented_softmax(g.similarities, g.pairs.segments, tau_tensor());

  auto coords_of = [&](const std::vector<int>& lin) {
    std::vector<double> c(lin.size() * 3);
    for (std::size_t i = 0; i < lin.size(); ++i) {
      c[i * 3 + 0] = lin[i] / (dims[1] * dims[2]);
      c[i * 3 + 1] = (lin[i] / dims[2]) % dims[1];
      c[i * 3 + 2] = lin[i] % dims[2];
    }
    return c;
  };
  std::vector<int> active_sources;
  for (int r : g.pairs.active) active_sources.push_back(g.pairs.sources[r]);
  g.motions = segment_expect(g.distribution, coords_of(g.pairs.tgt_of_pair),
                             coords_of(active_sources), g.pairs.segments);
  return g;
}

VoxelFlowField Tracker::track(const OccupancyPyramid& out_t,
                              const OccupancyPyramid& out_t1) const {
  const int finest = out_t.spec.num_levels;
  if (out_t1.spec.dims(finest) != out_t.spec.dims(finest))
    throw std::invalid_argument("Tracker: frame grids do not match");
  NoGrad ng;
  const auto dims = out_t.spec.dims(finest);
  const double l4 = out_t.spec.side_length(finest);
  auto graph = track_graph(out_t.track_features, out_t.binary_level(finest),
                           out_t1.track_features, out_t1.binary_level(finest), dims, l4);

  VoxelFlowField f;
  f.dims = dims;
  f.voxel_size = l4;
  f.occupancy = out_t.binary_level(finest);
  f.source_indices = graph.pairs.sources;
  f.motions.assign(f.source_indices.size(), Vec3{0, 0, 0});
  f.isolated = graph.pairs.isolated;
  for (std::size_t k = 0; k < graph.pairs.active.size(); ++k) {
    const int r = graph.pairs.active[k];
    f.motions[r] = {graph.motions.data()[k * 3], graph.motions.data()[k * 3 + 1],
                    graph.motions.data()[k * 3 + 2]};
  }
  return f;
}

}  // namespace odt
