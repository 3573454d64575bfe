#include "odt/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace odt {

namespace {

// ---- procedural texture -----------------------------------------------

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice01(int x, int y, int z, std::uint64_t seed) {
  std::uint64_t h = seed;
  h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(x)));
  h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
  h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(z)));
  return (h >> 11) * 0x1.0p-53;
}

double value_noise(const Vec3& p, std::uint64_t seed) {
  const int x0 = static_cast<int>(std::floor(p.x)), y0 = static_cast<int>(std::floor(p.y)),
            z0 = static_cast<int>(std::floor(p.z));
  const double fx = p.x - x0, fy = p.y - y0, fz = p.z - z0;
  double v = 0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz) {
        const double w = (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) * (dz ? fz : 1 - fz);
        v += w * lattice01(x0 + dx, y0 + dy, z0 + dz, seed);
      }
  return v;
}

double fractal_noise(const Vec3& p, std::uint64_t seed) {
  return 0.62 * value_noise(p, seed) + 0.38 * value_noise(p * 2.6 + Vec3{17.3, 9.1, 4.7}, seed ^ 0xabcdef);
}

Vec3 base_color(std::uint64_t seed) {
  return {0.35 + 0.6 * lattice01(1, 2, 3, seed), 0.35 + 0.6 * lattice01(4, 5, 6, seed),
          0.35 + 0.6 * lattice01(7, 8, 9, seed)};
}

// ---- ray intersections --------------------------------------------------

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  int id = -1;  // object index, -2 ground
  Vec3 point;
};

Mat3 yaw_rot(double yaw) { return Mat3::rot_y(yaw); }

// ray in object frame against centered box/sphere; returns entry parameter
bool ray_box(const Vec3& o, const Vec3& d, const Vec3& half, double& t_hit) {
  double t0 = 1e-6, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double da = d[a], oa = o[a], h = half[a];
    if (std::fabs(da) < 1e-12) {
      if (oa < -h || oa > h) return false;
      continue;
    }
    double ta = (-h - oa) / da, tb = (h - oa) / da;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  t_hit = t0;
  return true;
}

bool ray_sphere(const Vec3& o, const Vec3& d, double r, double& t_hit) {
  const double a = d.dot(d), b = 2.0 * o.dot(d), c = o.dot(o) - r * r;
  const double disc = b * b - 4 * a * c;
  if (disc < 0) return false;
  const double s = std::sqrt(disc);
  double t = (-b - s) / (2 * a);
  if (t < 1e-6) t = (-b + s) / (2 * a);
  if (t < 1e-6) return false;
  t_hit = t;
  return true;
}

// ---- cube vs object surface tests ---------------------------------------

bool interval_overlap(double amin, double amax, double bmin, double bmax) {
  return amin <= bmax && bmin <= amax;
}

// 2D separating-axis test: yaw-rotated rectangle vs axis-aligned square.
bool rect_square_intersect(double rcx, double rcz, double hx, double hz, double yaw,
                           double scx, double scz, double sh) {
  const double c = std::cos(yaw), s = std::sin(yaw);
  const double dx = scx - rcx, dz = scz - rcz;
  // rectangle axes
  const double ux[2] = {c, s}, uz[2] = {-s, c};
  // square onto rectangle axes
  {
    const double centers = std::fabs(dx * ux[0] + dz * ux[1]);
    const double ext = sh * (std::fabs(ux[0]) + std::fabs(ux[1]));
    if (centers > hx + ext) return false;
  }
  {
    const double centers = std::fabs(dx * uz[0] + dz * uz[1]);
    const double ext = sh * (std::fabs(uz[0]) + std::fabs(uz[1]));
    if (centers > hz + ext) return false;
  }
  // rectangle onto world axes
  {
    const double ext = hx * std::fabs(ux[0]) + hz * std::fabs(uz[0]);
    if (std::fabs(dx) > sh + ext) return false;
  }
  {
    const double ext = hx * std::fabs(ux[1]) + hz * std::fabs(uz[1]);
    if (std::fabs(dz) > sh + ext) return false;
  }
  return true;
}

bool cube_intersects_solid(const ObjectSpec& obj, double t, const Vec3& c, double half) {
  const Vec3 ctr = obj.center_at(t);
  if (obj.shape == ObjectSpec::Shape::kSphere) {
    const double r = obj.size.x * 0.5;
    double dmin2 = 0;
    for (int a = 0; a < 3; ++a) {
      const double d = std::max(0.0, std::fabs(c[a] - ctr[a]) - half);
      dmin2 += d * d;
    }
    return dmin2 <= r * r;
  }
  if (!interval_overlap(c.y - half, c.y + half, ctr.y - obj.size.y * 0.5, ctr.y + obj.size.y * 0.5))
    return false;
  return rect_square_intersect(ctr.x, ctr.z, obj.size.x * 0.5, obj.size.z * 0.5, obj.yaw, c.x,
                               c.z, half);
}

bool cube_inside_solid(const ObjectSpec& obj, double t, const Vec3& c, double half) {
  const Vec3 ctr = obj.center_at(t);
  if (obj.shape == ObjectSpec::Shape::kSphere) {
    const double r = obj.size.x * 0.5;
    double dmax2 = 0;
    for (int a = 0; a < 3; ++a) {
      const double d = std::fabs(c[a] - ctr[a]) + half;
      dmax2 += d * d;
    }
    return dmax2 < r * r;
  }
  const Mat3 r = yaw_rot(obj.yaw);
  for (int k = 0; k < 8; ++k) {
    const Vec3 corner{c.x + (k & 1 ? half : -half), c.y + (k & 2 ? half : -half),
                      c.z + (k & 4 ? half : -half)};
    const Vec3 local = r.apply_transposed(corner - ctr);
    if (!(std::fabs(local.x) < obj.size.x * 0.5 && std::fabs(local.y) < obj.size.y * 0.5 &&
          std::fabs(local.z) < obj.size.z * 0.5))
      return false;
  }
  return true;
}

bool cube_hits_surface(const ObjectSpec& obj, double t, const Vec3& c, double half, bool solid) {
  if (!cube_intersects_solid(obj, t, c, half)) return false;
  return solid || !cube_inside_solid(obj, t, c, half);
}

// ---- surface sampling ----------------------------------------------------

std::vector<Vec3> surface_points_local(const ObjectSpec& obj, double spacing) {
  std::vector<Vec3> pts;
  if (obj.shape == ObjectSpec::Shape::kSphere) {
    const double r = obj.size.x * 0.5;
    const int n = std::max(64, static_cast<int>(4.0 * M_PI * r * r / (spacing * spacing)));
    // Fibonacci sphere
    const double ga = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
      const double y = 1.0 - 2.0 * (i + 0.5) / n;
      const double rad = std::sqrt(std::max(0.0, 1.0 - y * y));
      const double th = ga * i;
      pts.push_back({r * rad * std::cos(th), r * y, r * rad * std::sin(th)});
    }
    return pts;
  }
  const Vec3 h = obj.size * 0.5;
  auto face = [&](int axis, double sign) {
    const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
    const double h1 = h[a1], h2 = h[a2];
    const int n1 = std::max(2, static_cast<int>(std::ceil(2 * h1 / spacing)) + 1);
    const int n2 = std::max(2, static_cast<int>(std::ceil(2 * h2 / spacing)) + 1);
    for (int i = 0; i < n1; ++i)
      for (int j = 0; j < n2; ++j) {
        double p[3];
        p[axis] = sign * h[axis];
        p[a1] = -h1 + 2 * h1 * i / (n1 - 1);
        p[a2] = -h2 + 2 * h2 * j / (n2 - 1);
        pts.push_back({p[0], p[1], p[2]});
      }
  };
  for (int axis = 0; axis < 3; ++axis) {
    face(axis, 1.0);
    face(axis, -1.0);
  }
  return pts;
}

}  // namespace

Image render_view(const SceneSpec& scene, const CameraModel& cam, double t,
                  std::vector<int>* object_ids) {
  Image img = Image::create(cam.image_height, cam.image_width);
  if (object_ids) object_ids->assign(static_cast<std::size_t>(cam.image_height) * cam.image_width, -1);

  // camera center and rotation in the scene frame
  const Vec3 center = cam.rotation.apply_transposed(cam.translation * -1.0);

  std::vector<Mat3> rots;
  std::vector<Vec3> centers;
  for (const auto& o : scene.objects) {
    rots.push_back(yaw_rot(o.yaw));
    centers.push_back(o.center_at(t));
  }

  for (int i = 0; i < cam.image_height; ++i)
    for (int j = 0; j < cam.image_width; ++j) {
      const Vec3 dir_cam{(j + 0.5 - cam.cx) / cam.fx, (i + 0.5 - cam.cy) / cam.fy, 1.0};
      const Vec3 d = cam.rotation.apply_transposed(dir_cam);

      Hit hit;
      for (std::size_t k = 0; k < scene.objects.size(); ++k) {
        const auto& obj = scene.objects[k];
        const Vec3 ol = rots[k].apply_transposed(center - centers[k]);
        const Vec3 dl = rots[k].apply_transposed(d);
        double th;
        bool ok = obj.shape == ObjectSpec::Shape::kSphere
                      ? ray_sphere(ol, dl, obj.size.x * 0.5, th)
                      : ray_box(ol, dl, obj.size * 0.5, th);
        if (ok && th < hit.t) {
          hit.t = th;
          hit.id = static_cast<int>(k);
          hit.point = center + d * th;
        }
      }
      // ground plane y = g (y points down)
      if (d.y > 1e-9) {
        const double tg = (scene.ground_plane_y - center.y) / d.y;
        if (tg > 1e-6 && tg < hit.t) {
          hit.t = tg;
          hit.id = -2;
          hit.point = center + d * tg;
        }
      }

      Vec3 color;
      if (hit.id >= 0) {
        const auto& obj = scene.objects[hit.id];
        const Vec3 local = rots[hit.id].apply_transposed(hit.point - centers[hit.id]);
        const double n = fractal_noise(local * 7.0, obj.texture_seed);
        color = base_color(obj.texture_seed) * (0.4 + 0.6 * n);
      } else if (hit.id == -2) {
        const double n = fractal_noise(Vec3{hit.point.x, 0.0, hit.point.z} * 2.0,
                                       scene.background_seed ^ 0x67);
        color = Vec3{0.45, 0.42, 0.38} * (0.5 + 0.5 * n);
      } else {
        const double len = d.norm();
        const Vec3 nd = d * (1.0 / len);
        const double n = fractal_noise(nd * 9.0, scene.background_seed);
        color = Vec3{0.55, 0.62, 0.72} * (0.55 + 0.45 * n);
      }
      for (int c = 0; c < 3; ++c) img.at(i, j, c) = std::clamp(color[c], 0.0, 1.0);
      if (object_ids) (*object_ids)[static_cast<std::size_t>(i) * cam.image_width + j] = hit.id;
    }
  return img;
}

std::pair<Image, Image> render_stereo(const SceneSpec& scene, double t) {
  return {render_view(scene, scene.left_cam, t), render_view(scene, scene.right_cam(), t)};
}

BinaryPyramid gt_occupancy(const SceneSpec& scene, const VoxelGridSpec& spec, double t,
                           double ground_removal_y, bool solid) {
  const int finest = spec.num_levels;
  const auto d = spec.dims(finest);
  const double l = spec.side_length(finest);
  std::vector<std::uint8_t> grid(spec.voxel_count(finest), 0);
  for (int ix = 0; ix < d[0]; ++ix)
    for (int iy = 0; iy < d[1]; ++iy) {
      const double cy = spec.roi_min.y + (iy + 0.5) * l;
      if (cy > ground_removal_y) continue;  // below the supervised band
      for (int iz = 0; iz < d[2]; ++iz) {
        const Vec3 c = spec.centroid(finest, ix, iy, iz);
        for (const auto& obj : scene.objects)
          if (cube_hits_surface(obj, t, c, l * 0.5, solid)) {
            grid[voxel_linear(d, ix, iy, iz)] = 1;
            break;
          }
      }
    }
  return or_pool_pyramid(spec, std::move(grid));
}

std::vector<double> gt_voxel_flow(const SceneSpec& scene, const VoxelGridSpec& spec, double t,
                                  double dt, const BinaryPyramid& occ_t) {
  if (!(dt > 0)) throw std::invalid_argument("gt_voxel_flow: dt must be positive");
  const int finest = spec.num_levels;
  const auto d = spec.dims(finest);
  const double l = spec.side_length(finest);
  const auto& occ = occ_t.level(finest);

  std::vector<double> sum(spec.voxel_count(finest) * 3, 0.0);
  std::vector<int> cnt(spec.voxel_count(finest), 0);

  for (const auto& obj : scene.objects) {
    const Mat3 r = yaw_rot(obj.yaw);
    const Vec3 ctr = obj.center_at(t);
    const Vec3 disp = obj.velocity * dt;
    for (const auto& lp : surface_points_local(obj, l / 4.0)) {
      const Vec3 p = r.apply(lp) + ctr;
      if (!spec.contains(p)) continue;
      const int ix = static_cast<int>((p.x - spec.roi_min.x) / l);
      const int iy = static_cast<int>((p.y - spec.roi_min.y) / l);
      const int iz = static_cast<int>((p.z - spec.roi_min.z) / l);
      if (ix < 0 || ix >= d[0] || iy < 0 || iy >= d[1] || iz < 0 || iz >= d[2]) continue;
      const std::size_t lin = voxel_linear(d, ix, iy, iz);
      if (!occ[lin]) continue;
      sum[lin * 3] += disp.x;
      sum[lin * 3 + 1] += disp.y;
      sum[lin * 3 + 2] += disp.z;
      ++cnt[lin];
    }
  }

  std::vector<double> flow(spec.voxel_count(finest) * 3, 0.0);
  for (int ix = 0; ix < d[0]; ++ix)
    for (int iy = 0; iy < d[1]; ++iy)
      for (int iz = 0; iz < d[2]; ++iz) {
        const std::size_t lin = voxel_linear(d, ix, iy, iz);
        if (!occ[lin]) continue;
        if (cnt[lin] > 0) {
          for (int a = 0; a < 3; ++a) flow[lin * 3 + a] = sum[lin * 3 + a] / (cnt[lin] * l);
        } else {
          // occupied cube clipped by no sample point: average the objects
          // whose surface actually crosses it
          const Vec3 c = spec.centroid(finest, ix, iy, iz);
          Vec3 acc{};
          int n = 0;
          for (const auto& obj : scene.objects)
            if (cube_hits_surface(obj, t, c, l * 0.5, false)) {
              acc = acc + obj.velocity * dt;
              ++n;
            }
          if (n > 0)
            for (int a = 0; a < 3; ++a) flow[lin * 3 + a] = acc[a] / (n * l);
        }
      }
  return flow;
}

BinaryPyramid voxelize_pointcloud(const std::vector<Vec3>& points, const VoxelGridSpec& spec,
                                  int min_points, double ground_removal_y) {
  const int finest = spec.num_levels;
  const auto d = spec.dims(finest);
  const double l = spec.side_length(finest);
  std::vector<int> cnt(spec.voxel_count(finest), 0);
  for (const auto& p : points) {
    const int ix = static_cast<int>(std::floor((p.x - spec.roi_min.x) / l));
    const int iy = static_cast<int>(std::floor((p.y - spec.roi_min.y) / l));
    const int iz = static_cast<int>(std::floor((p.z - spec.roi_min.z) / l));
    if (ix < 0 || ix >= d[0] || iy < 0 || iy >= d[1] || iz < 0 || iz >= d[2]) continue;
    ++cnt[voxel_linear(d, ix, iy, iz)];
  }
  std::vector<std::uint8_t> grid(cnt.size(), 0);
  for (int ix = 0; ix < d[0]; ++ix)
    for (int iy = 0; iy < d[1]; ++iy) {
      const double cy = spec.roi_min.y + (iy + 0.5) * l;
      if (cy > ground_removal_y) continue;
      for (int iz = 0; iz < d[2]; ++iz) {
        const std::size_t lin = voxel_linear(d, ix, iy, iz);
        grid[lin] = cnt[lin] >= min_points ? 1 : 0;
      }
    }
  return or_pool_pyramid(spec, std::move(grid));
}

FramePair make_frame_pair(const SceneSpec& scene, const VoxelGridSpec& spec,
                          double ground_removal_y, bool solid) {
  FramePair fp;
  std::tie(fp.left_t, fp.right_t) = render_stereo(scene, 0.0);
  std::tie(fp.left_t1, fp.right_t1) = render_stereo(scene, scene.frame_dt);
  fp.calib.left = scene.left_cam;
  fp.calib.baseline_m = scene.baseline_m;
  fp.occ_t = gt_occupancy(scene, spec, 0.0, ground_removal_y, solid);
  fp.occ_t1 = gt_occupancy(scene, spec, scene.frame_dt, ground_removal_y, solid);
  fp.flow = gt_voxel_flow(scene, spec, 0.0, scene.frame_dt, fp.occ_t);
  return fp;
}

SceneSpec sample_scene(const SceneSamplerConfig& cfg, Rng& rng) {
  SceneSpec scene;
  scene.left_cam = cfg.camera;
  scene.baseline_m = cfg.baseline_m;
  scene.frame_dt = 1.0 / cfg.fps;
  scene.ground_plane_y = cfg.ground_plane_y;
  scene.background_seed = rng.next_u64();

  const double l4 = cfg.grid.side_length(cfg.grid.num_levels);
  const int n = cfg.min_objects + rng.uniform_int(cfg.max_objects - cfg.min_objects + 1);

  // one azimuth sector per object keeps silhouettes separated
  const double sector_centers[3] = {-0.4, 0.0, 0.4};
  std::vector<int> sectors{0, 1, 2};
  rng.shuffle(sectors);

  const double zlo_roi = cfg.grid.roi_min.z, zhi_roi = cfg.grid.roi_max.z;
  for (int k = 0; k < n; ++k) {
    ObjectSpec obj;
    obj.shape = rng.uniform() < 0.5 ? ObjectSpec::Shape::kBox : ObjectSpec::Shape::kSphere;
    const double s = rng.uniform(cfg.min_size_m, cfg.max_size_m);
    if (obj.shape == ObjectSpec::Shape::kBox) {
      obj.size = {s, rng.uniform(cfg.min_size_m, cfg.max_size_m),
                  rng.uniform(cfg.min_size_m, cfg.max_size_m)};
      obj.yaw = rng.uniform(0, 2 * M_PI);
    } else {
      obj.size = {s, s, s};
    }
    const double half = 0.5 * std::max({obj.size.x, obj.size.y, obj.size.z});

    // displacement in finest voxels, then velocity
    Vec3 disp{0, 0, 0};
    if (rng.uniform() >= cfg.static_fraction) {
      int dx = 0, dy = 0, dz = 0;
      do {
        dx = rng.uniform_int(2 * cfg.max_motion_x + 1) - cfg.max_motion_x;
        dy = rng.uniform_int(2 * cfg.max_motion_y + 1) - cfg.max_motion_y;
        dz = rng.uniform_int(2 * cfg.max_motion_z + 1) - cfg.max_motion_z;
      } while (dx == 0 && dy == 0 && dz == 0);
      disp = Vec3{static_cast<double>(dx), static_cast<double>(dy), static_cast<double>(dz)} * l4;
    }
    obj.velocity = disp * (1.0 / scene.frame_dt);

    // depth placement inside the ROI with room for the displacement
    const double zlo = std::max(zlo_roi * 0.2 + 2.2, zlo_roi + half - std::min(disp.z, 0.0) + 0.2);
    const double zhi = std::min(zhi_roi - 0.6, zhi_roi - half - std::max(disp.z, 0.0) - 0.1);
    const double z = rng.uniform(std::min(zlo, zhi), std::max(zlo, zhi));

    const double ratio = sector_centers[sectors[k % 3]] + rng.uniform(-0.06, 0.06);
    double x = ratio * z;
    const double xlim = std::min(cfg.grid.roi_max.x, -cfg.grid.roi_min.x) - half - std::fabs(disp.x) - 0.05;
    x = std::clamp(x, -xlim, xlim);
    const double ylim = std::max(0.05, std::min(-cfg.grid.roi_min.y, cfg.grid.roi_max.y) - half -
                                           std::fabs(disp.y) - 0.05);
    const double y = rng.uniform(-ylim * 0.8, ylim * 0.8);

    obj.position = {x, y, z};
    obj.texture_seed = rng.next_u64();
    scene.objects.push_back(obj);
  }
  return scene;
}

namespace {

void write_sample(const fs::path& dir, const FramePair& fp, const VoxelGridSpec& spec) {
  fs::create_directories(dir);
  save_png(fp.left_t, (dir / "left_t.png").string());
  save_png(fp.right_t, (dir / "right_t.png").string());
  save_png(fp.left_t1, (dir / "left_t1.png").string());
  save_png(fp.right_t1, (dir / "right_t1.png").string());
  write_calib((dir / "calib.txt").string(), fp.calib);
  for (int lvl = 1; lvl <= spec.num_levels; ++lvl) {
    OccupancyDump d;
    d.level = static_cast<std::uint32_t>(lvl);
    d.dims = spec.dims(lvl);
    d.voxel_size = static_cast<float>(spec.side_length(lvl));
    d.data = fp.occ_t.level(lvl);
    write_occupancy_dump((dir / ("occ_t.level" + std::to_string(lvl) + ".odtv")).string(), d);
    d.data = fp.occ_t1.level(lvl);
    write_occupancy_dump((dir / ("occ_t1.level" + std::to_string(lvl) + ".odtv")).string(), d);
  }
  FlowDump fd;
  fd.dims = spec.dims(spec.num_levels);
  fd.voxel_size = static_cast<float>(spec.side_length(spec.num_levels));
  const auto& occ = fp.occ_t.level(spec.num_levels);
  for (int ix = 0; ix < fd.dims[0]; ++ix)
    for (int iy = 0; iy < fd.dims[1]; ++iy)
      for (int iz = 0; iz < fd.dims[2]; ++iz) {
        const std::size_t lin = voxel_linear(fd.dims, ix, iy, iz);
        if (!occ[lin]) continue;
        fd.records.push_back({static_cast<float>(ix), static_cast<float>(iy),
                              static_cast<float>(iz), static_cast<float>(fp.flow[lin * 3]),
                              static_cast<float>(fp.flow[lin * 3 + 1]),
                              static_cast<float>(fp.flow[lin * 3 + 2])});
      }
  write_flow_dump((dir / "flow.odtf").string(), fd);
}

}  // namespace

void generate_dataset(const DatasetGenConfig& cfg, const std::string& root) {
  fs::create_directories(root);
  std::ostringstream manifest;
  manifest << "# id\tdir\tseed\tsplit\n";
  Rng base(cfg.seed);
  const int n_val = static_cast<int>(std::lround(cfg.val_fraction * cfg.num_samples));
  for (int k = 0; k < cfg.num_samples; ++k) {
    Rng srng = base.fork(static_cast<std::uint64_t>(k));
    const std::uint64_t sample_seed = srng.next_u64();
    Rng scene_rng(sample_seed);
    SceneSpec scene = sample_scene(cfg.scene, scene_rng);
    FramePair fp = make_frame_pair(scene, cfg.scene.grid, cfg.ground_removal_y, cfg.solid);

    const std::string name = "sample_" + std::to_string(k);
    const fs::path tmp = fs::path(root) / (name + ".tmp");
    const fs::path fin = fs::path(root) / name;
    fs::remove_all(tmp);
    fs::remove_all(fin);
    write_sample(tmp, fp, cfg.scene.grid);
    fs::rename(tmp, fin);
    manifest << k << '\t' << name << '\t' << sample_seed << '\t'
             << (k >= cfg.num_samples - n_val ? "val" : "train") << '\n';
  }
  write_text_file((fs::path(root) / "manifest.tsv").string(), manifest.str());
}

std::vector<ManifestEntry> read_manifest(const std::string& root) {
  std::ifstream in(fs::path(root) / "manifest.tsv");
  if (!in) throw std::runtime_error("read_manifest: cannot open manifest.tsv under " + root);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ManifestEntry e;
    ls >> e.id >> e.dir >> e.seed >> e.split;
    if (ls.fail()) throw std::runtime_error("read_manifest: malformed line: " + line);
    out.push_back(e);
  }
  return out;
}

}  // namespace odt
