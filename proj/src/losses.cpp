#include "odt/losses.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace odt {

Tensor soft_iou(const Tensor& probs, const std::vector<std::uint8_t>& gt) {
  if (probs.numel() != gt.size()) throw std::invalid_argument("soft_iou: dim mismatch");
  std::vector<double> g(gt.begin(), gt.end());
  Tensor gc = Tensor::from({static_cast<int>(gt.size())}, std::move(g));
  Tensor p = reshape(probs, {static_cast<int>(gt.size())});
  Tensor inter = sum(mul(p, gc));
  Tensor uni = sum(sub(add(p, gc), mul(p, gc)));
  if (uni.item() == 0.0) return Tensor::scalar(1.0);  // empty vs empty
  return divide(inter, uni);
}

Tensor detection_loss(const std::vector<Tensor>& probs, const BinaryPyramid& gt,
                      const std::array<double, 4>& weights) {
  if (probs.size() != gt.levels.size() || probs.size() != 4)
    throw std::invalid_argument("detection_loss: expected 4 levels");
  double wsum = 0;
  for (double w : weights) wsum += w;
  if (std::fabs(wsum - 1.0) > 1e-9)
    throw std::invalid_argument("detection_loss: level weights must sum to 1");
  Tensor loss = Tensor::scalar(0.0);
  for (int j = 0; j < 4; ++j) {
    Tensor iou = soft_iou(probs[j], gt.levels[j]);
    loss = add(loss, scale(sub(Tensor::scalar(1.0), iou), weights[j]));
  }
  return loss;
}

Tensor tracking_loss(const Tensor& pred_dense_m, const std::vector<double>& gt_dense_m) {
  if (pred_dense_m.numel() != gt_dense_m.size())
    throw std::invalid_argument("tracking_loss: dim mismatch");
  const int v = pred_dense_m.dim(0);
  Tensor gt = Tensor::from({v, 3}, std::vector<double>(gt_dense_m));
  return rows_l2_mean(sub(pred_dense_m, gt));
}

namespace {

// number of z slices with centroid z <= range
int z_slice_limit(const VoxelGridSpec& spec, int level, double z_range_m) {
  const double l = spec.side_length(level);
  const int nz = spec.dims(level)[2];
  int n = 0;
  while (n < nz && spec.roi_min.z + (n + 0.5) * l <= z_range_m) ++n;
  return n;
}

}  // namespace

double metric_iou_pct(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                      const VoxelGridSpec& spec, int level, double z_range_m) {
  const auto d = spec.dims(level);
  if (pred.size() != spec.voxel_count(level) || gt.size() != pred.size())
    throw std::invalid_argument("metric_iou_pct: grid size mismatch");
  const int zlim = z_slice_limit(spec, level, z_range_m);
  std::size_t inter = 0, uni = 0;
  for (int ix = 0; ix < d[0]; ++ix)
    for (int iy = 0; iy < d[1]; ++iy)
      for (int iz = 0; iz < zlim; ++iz) {
        const std::size_t i = voxel_linear(d, ix, iy, iz);
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += (p && g) ? 1 : 0;
        uni += (p || g) ? 1 : 0;
      }
  if (uni == 0) return 100.0;
  return 100.0 * static_cast<double>(inter) / static_cast<double>(uni);
}

std::vector<Vec3> occupied_centroids(const std::vector<std::uint8_t>& grid,
                                     const VoxelGridSpec& spec, int level, double z_range_m) {
  const auto d = spec.dims(level);
  const double l = spec.side_length(level);
  const int zlim = z_slice_limit(spec, level, z_range_m);
  std::vector<Vec3> pts;
  for (int ix = 0; ix < d[0]; ++ix)
    for (int iy = 0; iy < d[1]; ++iy)
      for (int iz = 0; iz < zlim; ++iz)
        if (grid[voxel_linear(d, ix, iy, iz)])
          pts.push_back({spec.roi_min.x + (ix + 0.5) * l, spec.roi_min.y + (iy + 0.5) * l,
                         spec.roi_min.z + (iz + 0.5) * l});
  return pts;
}

double chamfer_m(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double empty_penalty_m) {
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return empty_penalty_m;
  auto directed = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double acc = 0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).norm());
      acc += best;
    }
    return acc / static_cast<double>(from.size());
  };
  return directed(a, b) + directed(b, a);
}

std::pair<double, double> epe_metrics(const std::vector<double>& pred_dense_vox,
                                      const std::vector<double>& gt_dense_vox,
                                      const std::vector<std::uint8_t>& gt_occ, double l4_m) {
  if (pred_dense_vox.size() != gt_dense_vox.size() || pred_dense_vox.size() != gt_occ.size() * 3)
    throw std::invalid_argument("epe_metrics: dim mismatch");
  const std::size_t v = gt_occ.size();
  double total = 0, fg = 0;
  std::size_t nfg = 0;
  for (std::size_t i = 0; i < v; ++i) {
    double q = 0;
    for (int a = 0; a < 3; ++a) {
      const double d = pred_dense_vox[i * 3 + a] - gt_dense_vox[i * 3 + a];
      q += d * d;
    }
    const double e = std::sqrt(q) * l4_m;
    total += e;
    if (gt_occ[i]) {
      fg += e;
      ++nfg;
    }
  }
  return {total / static_cast<double>(v), nfg ? fg / static_cast<double>(nfg) : 0.0};
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << "split,level,range_m,iou_pct,cd_m,epe_m,fg_epe_m\n";
  os.precision(9);
  for (const auto& r : rows)
    os << r.split << ',' << r.level << ',' << r.range_m << ',' << r.iou_pct << ',' << r.cd_m
       << ',' << r.epe_m << ',' << r.fg_epe_m << '\n';
  return os.str();
}

std::string MetricReport::to_text() const {
  std::ostringstream os;
  os << "# cd = sum of the two directed mean nearest-neighbor terms (meters)\n";
  os.precision(9);
  for (const auto& r : rows) {
    os << "iou.l" << r.level << ".r" << r.range_m << " = " << r.iou_pct << "\n";
    os << "cd.l" << r.level << ".r" << r.range_m << " = " << r.cd_m << "\n";
  }
  os << "epe = " << epe_m << "\n";
  os << "fg_epe = " << fg_epe_m << "\n";
  return os.str();
}

}  // namespace odt
