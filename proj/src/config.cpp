#include "odt/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace odt {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return d;
  } catch (...) {
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw ConfigError("config: " + key + " expects an integer, got '" + v + "'");
  return static_cast<int>(d);
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t u = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return u;
  } catch (...) {
    throw ConfigError("config: " + key + " expects an unsigned integer, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: " + key + " expects true/false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v, std::size_t n = 0) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
  if (n && out.size() != n)
    throw ConfigError("config: " + key + " expects " + std::to_string(n) + " comma-separated values");
  return out;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.grid = VoxelGridSpec::create({-3, -1.5, 0}, {3, 1.5, 6}, {2, 1, 2}, 4);
  c.decoder.channels = c.backbone.channels;
  c.dmc.channels = c.backbone.channels;
  return c;
}

RunConfig RunConfig::from_map(const std::map<std::string, std::string>& kv) {
  RunConfig c = defaults();
  // grid geometry first: the preset, then any custom overrides
  auto get = [&](const char* k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (const auto* v = get("roi_preset")) c.roi_preset = *v;
  Vec3 roi_min, roi_max;
  std::array<int, 3> base{};
  int levels = 4;
  if (c.roi_preset == "desk") {
    roi_min = {-3, -1.5, 0};
    roi_max = {3, 1.5, 6};
    base = {2, 1, 2};
  } else if (c.roi_preset == "paper") {
    roi_min = {-8, -3, 0};
    roi_max = {10, 3, 30};
    base = {6, 2, 10};
  } else if (c.roi_preset == "custom") {
    const auto* mn = get("grid.roi_min");
    const auto* mx = get("grid.roi_max");
    const auto* bd = get("grid.base_dims");
    if (!mn || !mx || !bd)
      throw ConfigError("config: roi_preset=custom requires grid.roi_min, grid.roi_max, grid.base_dims");
    auto mnv = to_list("grid.roi_min", *mn, 3);
    auto mxv = to_list("grid.roi_max", *mx, 3);
    auto bdv = to_list("grid.base_dims", *bd, 3);
    roi_min = {mnv[0], mnv[1], mnv[2]};
    roi_max = {mxv[0], mxv[1], mxv[2]};
    for (int i = 0; i < 3; ++i) {
      if (bdv[i] != std::floor(bdv[i]) || bdv[i] < 1)
        throw ConfigError("config: grid.base_dims must be positive integers");
      base[i] = static_cast<int>(bdv[i]);
    }
  } else {
    throw ConfigError("config: roi_preset must be desk, paper or custom, got '" + c.roi_preset + "'");
  }
  if (const auto* v = get("grid.levels")) levels = to_int("grid.levels", *v);
  if (levels != 4)
    throw ConfigError("config: grid.levels must be 4 (the decoder and loss run four levels)");
  try {
    c.grid = VoxelGridSpec::create(roi_min, roi_max, base, levels);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid grid: ") + e.what());
  }

  for (const auto& [key, raw] : kv) {
    const std::string v = trim(raw);
    if (key == "roi_preset" || key == "grid.roi_min" || key == "grid.roi_max" ||
        key == "grid.base_dims" || key == "grid.levels") {
      continue;  // handled above
    } else if (key == "backbone.channels") {
      c.backbone.channels = to_int(key, v);
    } else if (key == "backbone.stage_depth") {
      c.backbone.stage_depth = to_int(key, v);
    } else if (key == "backbone.fpn_smooth") {
      c.backbone.fpn_smooth = to_bool(key, v);
    } else if (key == "dmc.num_samples") {
      c.dmc.num_samples = to_int(key, v);
    } else if (key == "dmc.blocks") {
      c.dmc.num_blocks = to_int(key, v);
    } else if (key == "dmc.fourier_bands") {
      c.dmc.fourier_bands = to_int(key, v);
    } else if (key == "dmc.offset_mode") {
      if (v == "centered") c.dmc.offset_mode = OffsetMode::kCentered;
      else if (v == "literal") c.dmc.offset_mode = OffsetMode::kLiteral;
      else throw ConfigError("config: dmc.offset_mode must be centered or literal");
    } else if (key == "dmc.cross_view") {
      if (v == "concat") c.dmc.cross_view = CrossViewMode::kConcat;
      else if (v == "average") c.dmc.cross_view = CrossViewMode::kAverage;
      else throw ConfigError("config: dmc.cross_view must be concat or average");
    } else if (key == "dmc.fusion") {
      if (v == "fused") c.dmc.fusion = FusionMode::kFused;
      else if (v == "none") c.dmc.fusion = FusionMode::kNone;
      else throw ConfigError("config: dmc.fusion must be fused or none");
    } else if (key == "decoder.threshold") {
      c.decoder.occupancy_threshold = to_double(key, v);
    } else if (key == "decoder.upsample") {
      if (v == "trilinear") c.decoder.upsample = UpsampleMode::kTrilinear;
      else if (v == "transposed") c.decoder.upsample = UpsampleMode::kTransposed;
      else throw ConfigError("config: decoder.upsample must be trilinear or transposed");
    } else if (key == "tracker.speed_mps") {
      c.tracker.speed_mps = to_double(key, v);
    } else if (key == "tracker.fps") {
      c.tracker.fps = to_double(key, v);
    } else if (key == "tracker.match_all") {
      c.tracker.match_all = to_bool(key, v);
    } else if (key == "tracker.bounded") {
      c.tracker.bounded = to_bool(key, v);
    } else if (key == "tracker.memory_guard_mb") {
      const int mb = to_int(key, v);
      if (mb < 1) throw ConfigError("config: tracker.memory_guard_mb must be >= 1");
      c.tracker.memory_guard_entries = static_cast<std::size_t>(mb) * (1u << 20) / sizeof(double);
    } else if (key == "train.lr") {
      c.lr = to_double(key, v);
    } else if (key == "train.min_lr") {
      c.min_lr = to_double(key, v);
    } else if (key == "train.epochs") {
      c.epochs = to_int(key, v);
    } else if (key == "train.batch") {
      c.batch = to_int(key, v);
    } else if (key == "train.seed") {
      c.seed = to_u64(key, v);
    } else if (key == "train.weight_decay") {
      c.weight_decay = to_double(key, v);
    } else if (key == "train.lambda_track") {
      c.lambda_track = to_double(key, v);
    } else if (key == "train.level_weights") {
      auto w = to_list(key, v, 4);
      std::copy(w.begin(), w.end(), c.level_weights.begin());
    } else if (key == "train.augment") {
      c.augment = to_bool(key, v);
    } else if (key == "train.jitter") {
      c.jitter = to_double(key, v);
    } else if (key == "data.root") {
      c.data_root = v;
    } else if (key == "data.ground_removal_y") {
      c.ground_removal_y = to_double(key, v);
    } else if (key == "gen.num_samples") {
      c.gen_num_samples = to_int(key, v);
    } else if (key == "gen.seed") {
      c.gen_seed = to_u64(key, v);
    } else if (key == "gen.image_width") {
      c.gen_image_width = to_int(key, v);
    } else if (key == "gen.image_height") {
      c.gen_image_height = to_int(key, v);
    } else if (key == "gen.fx") {
      c.gen_fx = to_double(key, v);
    } else if (key == "gen.fy") {
      c.gen_fy = to_double(key, v);
    } else if (key == "gen.baseline") {
      c.gen_baseline = to_double(key, v);
    } else if (key == "gen.min_objects") {
      c.gen_min_objects = to_int(key, v);
    } else if (key == "gen.max_objects") {
      c.gen_max_objects = to_int(key, v);
    } else if (key == "gen.min_size") {
      c.gen_min_size = to_double(key, v);
    } else if (key == "gen.max_size") {
      c.gen_max_size = to_double(key, v);
    } else if (key == "gen.val_fraction") {
      c.gen_val_fraction = to_double(key, v);
    } else if (key == "gen.static_fraction") {
      c.gen_static_fraction = to_double(key, v);
    } else if (key == "gen.max_motion_x") {
      c.gen_max_motion_x = to_int(key, v);
    } else if (key == "gen.max_motion_y") {
      c.gen_max_motion_y = to_int(key, v);
    } else if (key == "gen.max_motion_z") {
      c.gen_max_motion_z = to_int(key, v);
    } else if (key == "gen.solid") {
      c.gen_solid = to_bool(key, v);
    } else if (key == "gen.ground_plane_y") {
      c.gen_ground_plane_y = to_double(key, v);
    } else if (key == "eval.ranges") {
      c.eval_ranges = to_list(key, v);
    } else {
      throw ConfigError("config: unknown key '" + key + "'");
    }
  }

  // cross-field validation, before any work starts
  if (c.backbone.channels < 4) throw ConfigError("config: backbone.channels must be >= 4");
  if (c.backbone.stage_depth < 0 || c.backbone.stage_depth > 4)
    throw ConfigError("config: backbone.stage_depth must be in [0,4]");
  if (c.dmc.num_samples < 1) throw ConfigError("config: dmc.num_samples must be >= 1");
  if (c.dmc.num_blocks < 1) throw ConfigError("config: dmc.blocks must be >= 1");
  if (c.dmc.fourier_bands < 1) throw ConfigError("config: dmc.fourier_bands must be >= 1");
  if (!(c.decoder.occupancy_threshold > 0 && c.decoder.occupancy_threshold < 1))
    throw ConfigError("config: decoder.threshold must be in (0,1)");
  if (!(c.tracker.speed_mps > 0)) throw ConfigError("config: tracker.speed_mps must be positive");
  if (!(c.tracker.fps > 0)) throw ConfigError("config: tracker.fps must be positive");
  if (!(c.lr > 0) || !(c.min_lr > 0) || c.min_lr > c.lr)
    throw ConfigError("config: train.lr and train.min_lr must be positive with min_lr <= lr");
  if (c.epochs < 1) throw ConfigError("config: train.epochs must be >= 1");
  if (c.batch < 1) throw ConfigError("config: train.batch must be >= 1");
  double wsum = 0;
  for (double w : c.level_weights) {
    if (w < 0) throw ConfigError("config: train.level_weights must be non-negative");
    wsum += w;
  }
  if (std::fabs(wsum - 1.0) > 1e-9)
    throw ConfigError("config: train.level_weights must sum to 1");
  if (c.lambda_track < 0) throw ConfigError("config: train.lambda_track must be >= 0");
  if (!(c.jitter >= 0 && c.jitter < 1)) throw ConfigError("config: train.jitter must be in [0,1)");
  if (c.gen_num_samples < 0) throw ConfigError("config: gen.num_samples must be >= 0");
  if (c.gen_image_width % 32 || c.gen_image_height % 32)
    throw ConfigError("config: gen.image_width/height must be multiples of 32");
  if (!(c.gen_baseline > 0)) throw ConfigError("config: gen.baseline must be positive");
  if (c.gen_min_objects < 0 || c.gen_max_objects < c.gen_min_objects || c.gen_max_objects > 3)
    throw ConfigError("config: gen.min_objects/max_objects must satisfy 0 <= min <= max <= 3");
  if (!(c.gen_min_size > 0) || c.gen_max_size < c.gen_min_size)
    throw ConfigError("config: gen.min_size/max_size must be positive and ordered");
  if (!(c.gen_val_fraction >= 0 && c.gen_val_fraction <= 0.9))
    throw ConfigError("config: gen.val_fraction must be in [0, 0.9]");
  if (!(c.gen_static_fraction >= 0 && c.gen_static_fraction <= 1))
    throw ConfigError("config: gen.static_fraction must be in [0,1]");
  if (c.eval_ranges.empty()) throw ConfigError("config: eval.ranges must not be empty");
  for (double r : c.eval_ranges)
    if (!(r > 0)) throw ConfigError("config: eval.ranges must be positive");

  // the sampler's y bound must fit the grid: planted y motion <= 1 voxel
  const auto bound = bound_dims(c.tracker.speed_mps, c.tracker.fps,
                                c.grid.side_length(c.grid.num_levels));
  if (c.gen_max_motion_x > (bound[0] - 1) / 2 || c.gen_max_motion_y > 1 ||
      c.gen_max_motion_z > (bound[2] - 1) / 2)
    throw ConfigError("config: gen.max_motion_* exceeds the tracking bound box");

  c.dmc.channels = c.backbone.channels;
  c.decoder.channels = c.backbone.channels;
  return c;
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> kv;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open file '" + path + "'");
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string t = trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": expected key=value");
      kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: override '" + o + "' is not of the form key=value");
    kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
  }
  return from_map(kv);
}

std::string RunConfig::canonical() const {
  std::ostringstream os;
  os.precision(17);
  os << "backbone.channels = " << backbone.channels << "\n";
  os << "backbone.fpn_smooth = " << (backbone.fpn_smooth ? "true" : "false") << "\n";
  os << "backbone.stage_depth = " << backbone.stage_depth << "\n";
  os << "data.ground_removal_y = " << ground_removal_y << "\n";
  os << "data.root = " << data_root << "\n";
  os << "decoder.threshold = " << decoder.occupancy_threshold << "\n";
  os << "decoder.upsample = " << (decoder.upsample == UpsampleMode::kTrilinear ? "trilinear" : "transposed") << "\n";
  os << "dmc.blocks = " << dmc.num_blocks << "\n";
  os << "dmc.cross_view = " << (dmc.cross_view == CrossViewMode::kConcat ? "concat" : "average") << "\n";
  os << "dmc.fourier_bands = " << dmc.fourier_bands << "\n";
  os << "dmc.fusion = " << (dmc.fusion == FusionMode::kFused ? "fused" : "none") << "\n";
  os << "dmc.num_samples = " << dmc.num_samples << "\n";
  os << "dmc.offset_mode = " << (dmc.offset_mode == OffsetMode::kCentered ? "centered" : "literal") << "\n";
  os << "eval.ranges = ";
  for (std::size_t i = 0; i < eval_ranges.size(); ++i) os << (i ? "," : "") << eval_ranges[i];
  os << "\n";
  os << "gen.baseline = " << gen_baseline << "\n";
  os << "gen.fx = " << gen_fx << "\n";
  os << "gen.fy = " << gen_fy << "\n";
  os << "gen.ground_plane_y = " << gen_ground_plane_y << "\n";
  os << "gen.image_height = " << gen_image_height << "\n";
  os << "gen.image_width = " << gen_image_width << "\n";
  os << "gen.max_motion_x = " << gen_max_motion_x << "\n";
  os << "gen.max_motion_y = " << gen_max_motion_y << "\n";
  os << "gen.max_motion_z = " << gen_max_motion_z << "\n";
  os << "gen.max_objects = " << gen_max_objects << "\n";
  os << "gen.max_size = " << gen_max_size << "\n";
  os << "gen.min_objects = " << gen_min_objects << "\n";
  os << "gen.min_size = " << gen_min_size << "\n";
  os << "gen.num_samples = " << gen_num_samples << "\n";
  os << "gen.seed = " << gen_seed << "\n";
  os << "gen.solid = " << (gen_solid ? "true" : "false") << "\n";
  os << "gen.static_fraction = " << gen_static_fraction << "\n";
  os << "gen.val_fraction = " << gen_val_fraction << "\n";
  os << "grid.base_dims = " << grid.base_dims[0] << "," << grid.base_dims[1] << "," << grid.base_dims[2] << "\n";
  os << "grid.levels = " << grid.num_levels << "\n";
  os << "grid.roi_max = " << grid.roi_max.x << "," << grid.roi_max.y << "," << grid.roi_max.z << "\n";
  os << "grid.roi_min = " << grid.roi_min.x << "," << grid.roi_min.y << "," << grid.roi_min.z << "\n";
  os << "roi_preset = custom\n";
  os << "tracker.bounded = " << (tracker.bounded ? "true" : "false") << "\n";
  os << "tracker.fps = " << tracker.fps << "\n";
  os << "tracker.match_all = " << (tracker.match_all ? "true" : "false") << "\n";
  os << "tracker.memory_guard_mb = " << tracker.memory_guard_entries * sizeof(double) / (1u << 20) << "\n";
  os << "tracker.speed_mps = " << tracker.speed_mps << "\n";
  os << "train.augment = " << (augment ? "true" : "false") << "\n";
  os << "train.batch = " << batch << "\n";
  os << "train.epochs = " << epochs << "\n";
  os << "train.jitter = " << jitter << "\n";
  os << "train.lambda_track = " << lambda_track << "\n";
  os << "train.level_weights = " << level_weights[0] << "," << level_weights[1] << ","
     << level_weights[2] << "," << level_weights[3] << "\n";
  os << "train.lr = " << lr << "\n";
  os << "train.min_lr = " << min_lr << "\n";
  os << "train.seed = " << seed << "\n";
  os << "train.weight_decay = " << weight_decay << "\n";
  return os.str();
}

std::uint64_t RunConfig::arch_fingerprint() const {
  std::ostringstream os;
  os.precision(17);
  os << grid.roi_min.x << ' ' << grid.roi_min.y << ' ' << grid.roi_min.z << ' ' << grid.roi_max.x
     << ' ' << grid.roi_max.y << ' ' << grid.roi_max.z << ' ' << grid.base_dims[0] << ' '
     << grid.base_dims[1] << ' ' << grid.base_dims[2] << ' ' << grid.num_levels << ' '
     << backbone.channels << ' ' << backbone.stage_depth << ' ' << backbone.fpn_smooth << ' '
     << dmc.num_samples << ' ' << dmc.num_blocks << ' ' << dmc.fourier_bands << ' '
     << static_cast<int>(dmc.offset_mode) << ' ' << static_cast<int>(dmc.cross_view) << ' '
     << static_cast<int>(dmc.fusion) << ' ' << static_cast<int>(decoder.upsample);
  const std::string s = os.str();
  std::uint64_t h = 14695981039346656037ull;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

CameraModel RunConfig::gen_camera() const {
  CameraModel cam;
  cam.fx = gen_fx;
  cam.fy = gen_fy;
  cam.image_width = gen_image_width;
  cam.image_height = gen_image_height;
  cam.cx = gen_image_width / 2.0;
  cam.cy = gen_image_height / 2.0;
  return cam;
}

SceneSamplerConfig RunConfig::scene_sampler() const {
  SceneSamplerConfig s;
  s.camera = gen_camera();
  s.baseline_m = gen_baseline;
  s.fps = tracker.fps;
  s.grid = grid;
  s.min_objects = gen_min_objects;
  s.max_objects = gen_max_objects;
  s.min_size_m = gen_min_size;
  s.max_size_m = gen_max_size;
  s.static_fraction = gen_static_fraction;
  s.max_motion_x = gen_max_motion_x;
  s.max_motion_y = gen_max_motion_y;
  s.max_motion_z = gen_max_motion_z;
  s.ground_plane_y = gen_ground_plane_y;
  return s;
}

DatasetGenConfig RunConfig::dataset_gen() const {
  DatasetGenConfig g;
  g.scene = scene_sampler();
  g.num_samples = gen_num_samples;
  g.seed = gen_seed;
  g.val_fraction = gen_val_fraction;
  g.ground_removal_y = ground_removal_y;
  g.solid = gen_solid;
  return g;
}

}  // namespace odt
