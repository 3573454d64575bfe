#include "odt/io.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace odt {

namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& s, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(s, bits);
}

std::uint32_t get_u32(const std::string& s, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[off + i])) << (8 * i);
  return v;
}

float get_f32(const std::string& s, std::size_t off) {
  const std::uint32_t bits = get_u32(s, off);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_png(const Image& img, const std::string& path) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j) {
      auto& px = m.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(i, j, c), 0.0, 1.0);
        px[2 - c] = static_cast<unsigned char>(std::lround(v * 255.0));  // BGR
      }
    }
  if (!cv::imwrite(path, m)) throw std::runtime_error("save_png: cannot write " + path);
}

Image load_png(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
  if (m.empty()) throw std::runtime_error("load_png: cannot read " + path);
  Image img = Image::create(m.rows, m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) {
      const auto& px = m.at<cv::Vec3b>(i, j);
      for (int c = 0; c < 3; ++c) img.at(i, j, c) = px[2 - c] / 255.0;
    }
  return img;
}

Tensor image_to_tensor(const Image& img) {
  Tensor t = Tensor::zeros({3, img.height, img.width});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < img.height; ++i)
      for (int j = 0; j < img.width; ++j)
        t.data()[(static_cast<std::size_t>(c) * img.height + i) * img.width + j] = img.at(i, j, c);
  return t;
}

CalibFile CalibFile::scaled_to(int new_width, int new_height) const {
  CalibFile out = *this;
  const double wr = static_cast<double>(new_width) / left.image_width;
  const double hr = static_cast<double>(new_height) / left.image_height;
  out.left.fx = left.fx * wr;
  out.left.cx = left.cx * wr;
  out.left.fy = left.fy * hr;
  out.left.cy = left.cy * hr;
  out.left.image_width = new_width;
  out.left.image_height = new_height;
  return out;
}

CalibFile read_calib(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_calib: cannot open " + path);
  CalibFile cf;
  bool have[7] = {};
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.empty() || line[0] == '#') continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "fx") cf.left.fx = std::stod(val), have[0] = true;
    else if (key == "fy") cf.left.fy = std::stod(val), have[1] = true;
    else if (key == "cx") cf.left.cx = std::stod(val), have[2] = true;
    else if (key == "cy") cf.left.cy = std::stod(val), have[3] = true;
    else if (key == "baseline_m") cf.baseline_m = std::stod(val), have[4] = true;
    else if (key == "image_width") cf.left.image_width = std::stoi(val), have[5] = true;
    else if (key == "image_height") cf.left.image_height = std::stoi(val), have[6] = true;
    else throw std::runtime_error("read_calib: unknown key '" + key + "' in " + path);
  }
  for (bool h : have)
    if (!h) throw std::runtime_error("read_calib: missing keys in " + path);
  cf.left.validate();
  if (!(cf.baseline_m > 0)) throw std::runtime_error("read_calib: baseline_m must be positive");
  return cf;
}

void write_calib(const std::string& path, const CalibFile& calib) {
  std::ostringstream os;
  os.precision(12);
  os << "fx = " << calib.left.fx << "\nfy = " << calib.left.fy << "\ncx = " << calib.left.cx
     << "\ncy = " << calib.left.cy << "\nbaseline_m = " << calib.baseline_m
     << "\nimage_width = " << calib.left.image_width
     << "\nimage_height = " << calib.left.image_height << "\n";
  write_text_file(path, os.str());
}

void write_occupancy_dump(const std::string& path, const OccupancyDump& dump) {
  const std::size_t n = static_cast<std::size_t>(dump.dims[0]) * dump.dims[1] * dump.dims[2];
  if (dump.data.size() != n) throw std::invalid_argument("write_occupancy_dump: size mismatch");
  std::string h = "ODTV";
  put_u32(h, 1);
  put_u32(h, dump.level);
  for (int d : dump.dims) put_u32(h, static_cast<std::uint32_t>(d));
  put_f32(h, dump.voxel_size);
  put_u32(h, 0);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_occupancy_dump: cannot write " + path);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(reinterpret_cast<const char*>(dump.data.data()), static_cast<std::streamsize>(n));
}

OccupancyDump read_occupancy_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_occupancy_dump: cannot open " + path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (all.size() < 32 || all.substr(0, 4) != "ODTV")
    throw std::runtime_error("read_occupancy_dump: bad header in " + path);
  OccupancyDump d;
  if (get_u32(all, 4) != 1) throw std::runtime_error("read_occupancy_dump: unsupported version");
  d.level = get_u32(all, 8);
  for (int i = 0; i < 3; ++i) d.dims[i] = static_cast<int>(get_u32(all, 12 + 4 * i));
  d.voxel_size = get_f32(all, 24);
  const std::size_t n = static_cast<std::size_t>(d.dims[0]) * d.dims[1] * d.dims[2];
  if (all.size() != 32 + n) throw std::runtime_error("read_occupancy_dump: truncated " + path);
  d.data.assign(all.begin() + 32, all.end());
  return d;
}

void write_flow_dump(const std::string& path, const FlowDump& dump) {
  std::string h = "ODTF";
  put_u32(h, 1);
  for (int d : dump.dims) put_u32(h, static_cast<std::uint32_t>(d));
  put_f32(h, dump.voxel_size);
  put_u32(h, static_cast<std::uint32_t>(dump.records.size()));
  put_u32(h, 0);
  for (const auto& r : dump.records)
    for (float v : r) put_f32(h, v);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_flow_dump: cannot write " + path);
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
}

FlowDump read_flow_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_flow_dump: cannot open " + path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (all.size() < 32 || all.substr(0, 4) != "ODTF")
    throw std::runtime_error("read_flow_dump: bad header in " + path);
  FlowDump d;
  if (get_u32(all, 4) != 1) throw std::runtime_error("read_flow_dump: unsupported version");
  for (int i = 0; i < 3; ++i) d.dims[i] = static_cast<int>(get_u32(all, 8 + 4 * i));
  d.voxel_size = get_f32(all, 20);
  const std::uint32_t count = get_u32(all, 24);
  if (all.size() != 32 + static_cast<std::size_t>(count) * 24)
    throw std::runtime_error("read_flow_dump: truncated " + path);
  d.records.resize(count);
  for (std::uint32_t i = 0; i < count; ++i)
    for (int j = 0; j < 6; ++j) d.records[i][j] = get_f32(all, 32 + i * 24 + j * 4);
  return d;
}

void write_pointcloud_text(const std::string& path, const std::vector<Vec3>& pts) {
  std::ostringstream os;
  os.precision(9);
  for (const auto& p : pts) os << p.x << ' ' << p.y << ' ' << p.z << '\n';
  write_text_file(path, os.str());
}

void write_flow_text(const std::string& path, const std::vector<Vec3>& origins,
                     const std::vector<Vec3>& deltas) {
  if (origins.size() != deltas.size()) throw std::invalid_argument("write_flow_text: size mismatch");
  std::ostringstream os;
  os.precision(9);
  for (std::size_t i = 0; i < origins.size(); ++i)
    os << origins[i].x << ' ' << origins[i].y << ' ' << origins[i].z << ' ' << deltas[i].x << ' '
       << deltas[i].y << ' ' << deltas[i].z << '\n';
  write_text_file(path, os.str());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

}  // namespace odt
