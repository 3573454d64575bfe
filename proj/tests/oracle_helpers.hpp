#pragma once

// Test-only scalar oracles: plain-loop reimplementations of the math under
// test, reading parameter values by name. Kept independent of the tensor
// graph on purpose.

#include <cmath>
#include <string>
#include <vector>

#include "odt/backbone.hpp"
#include "odt/costvolume.hpp"
#include "odt/nn.hpp"

namespace oracle {

inline const double* param(const odt::ParamStore& ps, const std::string& name) {
  auto* t = const_cast<odt::ParamStore&>(ps).find(name);
  if (!t) throw std::runtime_error("oracle: missing parameter " + name);
  return t->data();
}

inline std::vector<double> linear(const odt::ParamStore& ps, const std::string& name,
                                  const std::vector<double>& x, int in, int out) {
  const double* w = param(ps, name + ".w");
  const double* b = param(ps, name + ".b");
  std::vector<double> y(out);
  for (int j = 0; j < out; ++j) {
    double s = b[j];
    for (int i = 0; i < in; ++i) s += x[i] * w[i * out + j];
    y[j] = s;
  }
  return y;
}

inline std::vector<double> layer_norm(const odt::ParamStore& ps, const std::string& name,
                                      const std::vector<double>& x) {
  const int c = static_cast<int>(x.size());
  const double* g = param(ps, name + ".gamma");
  const double* b = param(ps, name + ".beta");
  double mu = 0;
  for (double v : x) mu += v;
  mu /= c;
  double var = 0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= c;
  std::vector<double> y(c);
  for (int i = 0; i < c; ++i) y[i] = g[i] * (x[i] - mu) / std::sqrt(var + 1e-5) + b[i];
  return y;
}

inline std::vector<double> mlp(const odt::ParamStore& ps, const std::string& name,
                               const std::vector<double>& x, int in, int hidden, int out) {
  auto h = linear(ps, name + ".fc1", x, in, hidden);
  h = layer_norm(ps, name + ".norm", h);
  for (auto& v : h) v = std::max(v, 0.0);
  return linear(ps, name + ".fc2", h, hidden, out);
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// pinhole projection (identity rotation) + clamped 4-tap sampling with the
// invalid-to-zero rule
inline std::vector<double> sample(const odt::Tensor& fmap, int stride,
                                  const odt::CameraModel& cam, const odt::Vec3& p) {
  const int C = fmap.dim(0), H = fmap.dim(1), W = fmap.dim(2);
  std::vector<double> out(C, 0.0);
  const odt::Vec3 pc = p + cam.translation;
  if (pc.z <= 0.1) return out;
  const double u = cam.fx * pc.x / pc.z + cam.cx;
  const double v = cam.fy * pc.y / pc.z + cam.cy;
  if (!(u >= -1 && u <= cam.image_width && v >= -1 && v <= cam.image_height)) return out;
  const double gx = u / stride - 0.5, gy = v / stride - 0.5;
  const int j0 = static_cast<int>(std::floor(gx)), i0 = static_cast<int>(std::floor(gy));
  const double wj = gx - j0, wi = gy - i0;
  auto cl = [](int a, int n) { return std::min(std::max(a, 0), n - 1); };
  const int ja = cl(j0, W), jb = cl(j0 + 1, W), ia = cl(i0, H), ib = cl(i0 + 1, H);
  for (int c = 0; c < C; ++c) {
    const double* f = fmap.data() + static_cast<std::size_t>(c) * H * W;
    const double top = f[ia * W + ja] * (1 - wj) + f[ia * W + jb] * wj;
    const double bot = f[ib * W + ja] * (1 - wj) + f[ib * W + jb] * wj;
    out[c] = top * (1 - wi) + bot * wi;
  }
  return out;
}

// per-scale matching cost of one point, for one DMC block
inline std::vector<double> per_scale_cost(const odt::ParamStore& ps, const odt::DmcConfig& cfg,
                                          int block, int scale, const odt::FeaturePyramid& left,
                                          const odt::FeaturePyramid& right,
                                          const odt::StereoRig& rig, const odt::Vec3& p) {
  const int d = cfg.channels;
  auto fl = sample(left.levels[scale], odt::FeaturePyramid::strides[scale], rig.left, p);
  auto fr = sample(right.levels[scale], odt::FeaturePyramid::strides[scale], rig.right, p);
  std::vector<double> in;
  int pin;
  if (cfg.cross_view == odt::CrossViewMode::kConcat) {
    in = fl;
    in.insert(in.end(), fr.begin(), fr.end());
    pin = 2 * d;
  } else {
    in.resize(d);
    for (int i = 0; i < d; ++i) in[i] = 0.5 * (fl[i] + fr[i]);
    pin = d;
  }
  const std::string base = "dmc.block" + std::to_string(block) + ".scale" + std::to_string(scale + 1);
  return mlp(ps, base, in, pin, d, d);
}

inline std::vector<double> fuse(const odt::ParamStore& ps, const odt::DmcConfig& cfg, int block,
                                const std::array<std::vector<double>, 4>& c) {
  const int d = cfg.channels;
  const std::string base = "dmc.block" + std::to_string(block) + ".fuse";
  if (cfg.fusion == odt::FusionMode::kNone || cfg.cross_view == odt::CrossViewMode::kAverage) {
    std::vector<double> m(d, 0.0);
    for (int s = 0; s < 4; ++s)
      for (int i = 0; i < d; ++i) m[i] += 0.25 * c[s][i];
    if (cfg.fusion == odt::FusionMode::kNone) return m;
    return mlp(ps, base, m, d, d, d);
  }
  std::vector<double> cat;
  for (const auto& ci : c) cat.insert(cat.end(), ci.begin(), ci.end());
  return mlp(ps, base, cat, 4 * d, d, d);
}

// full Eq.(5) aggregation for one query row
inline std::vector<double> aggregate(const odt::ParamStore& ps, const odt::DmcConfig& cfg,
                                     int block, const std::vector<double>& qrow,
                                     const odt::Vec3& centroid, double l1,
                                     const odt::FeaturePyramid& left,
                                     const odt::FeaturePyramid& right, const odt::StereoRig& rig) {
  const int d = cfg.channels;
  const std::string base = "dmc.block" + std::to_string(block);
  auto logits = mlp(ps, base + ".offset", qrow, d, d, 3 * cfg.num_samples);
  auto aw = linear(ps, base + ".attn", qrow, d, cfg.num_samples);
  std::vector<double> out(d, 0.0);
  for (int s = 0; s < cfg.num_samples; ++s) {
    odt::Vec3 delta;
    if (cfg.offset_mode == odt::OffsetMode::kCentered) {
      delta = {(sigmoid(logits[3 * s]) - 0.5) * l1, (sigmoid(logits[3 * s + 1]) - 0.5) * l1,
               (sigmoid(logits[3 * s + 2]) - 0.5) * l1};
    } else {
      delta = {sigmoid(logits[3 * s]) * l1, sigmoid(logits[3 * s + 1]) * l1,
               sigmoid(logits[3 * s + 2]) * l1};
    }
    const odt::Vec3 p = centroid + delta;
    std::array<std::vector<double>, 4> cs;
    for (int sc = 0; sc < 4; ++sc) cs[sc] = per_scale_cost(ps, cfg, block, sc, left, right, rig, p);
    auto fused = fuse(ps, cfg, block, cs);
    const double* mix = param(ps, base + ".mix" + std::to_string(s));
    const double a = sigmoid(aw[s]);
    for (int j = 0; j < d; ++j) {
      double m = 0;
      for (int k = 0; k < d; ++k) m += fused[k] * mix[k * d + j];
      out[j] += a * m;
    }
  }
  return out;
}

}  // namespace oracle
