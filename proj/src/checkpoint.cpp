#include "odt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace odt {

namespace {

template <class T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}

void put_string(std::ofstream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& params, const AdamW* opt,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write("ODTC", 4);
  put<std::uint32_t>(out, 1);  // version
  put<std::uint64_t>(out, meta.arch_fingerprint);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.phase));
  put<std::uint32_t>(out, meta.epoch);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.items.size()));
  for (const auto& [name, t] : params.items) {
    put_string(out, name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  put<std::uint8_t>(out, opt ? 1 : 0);
  if (opt) {
    put<std::int64_t>(out, opt->step_count);
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      out.write(reinterpret_cast<const char*>(opt->m[i].data()),
                static_cast<std::streamsize>(opt->m[i].size() * sizeof(double)));
      out.write(reinterpret_cast<const char*>(opt->v[i].data()),
                static_cast<std::streamsize>(opt->v[i].size() * sizeof(double)));
    }
  }
}

namespace {

CheckpointMeta read_header(std::ifstream& in, const std::string& path) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "ODTC", 4) != 0)
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  if (get<std::uint32_t>(in) != 1) throw std::runtime_error("checkpoint: unsupported version in " + path);
  CheckpointMeta meta;
  meta.arch_fingerprint = get<std::uint64_t>(in);
  meta.phase = static_cast<TrainPhase>(get<std::uint32_t>(in));
  meta.epoch = get<std::uint32_t>(in);
  return meta;
}

}  // namespace

CheckpointMeta peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_header(in, path);
}

CheckpointMeta load_checkpoint(const std::string& path, ParamStore& params, AdamW* opt,
                               std::uint64_t expected_fingerprint, bool allow_mismatch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  CheckpointMeta meta = read_header(in, path);
  if (meta.arch_fingerprint != expected_fingerprint) {
    const std::string msg =
        "checkpoint: architecture fingerprint mismatch for " + path +
        " (checkpoint was written under a different model configuration)";
    if (!allow_mismatch) throw std::runtime_error(msg + "; pass --allow-config-mismatch to force");
    fprintf(stderr, "warning: %s; loading anyway\n", msg.c_str());
  }
  const auto count = get<std::uint32_t>(in);
  if (count != params.items.size())
    throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
  for (auto& [name, t] : params.items) {
    const std::string got = get_string(in);
    if (got != name)
      throw std::runtime_error("checkpoint: parameter order mismatch, expected " + name + " got " + got);
    const auto nd = get<std::uint32_t>(in);
    std::vector<int> shape(nd);
    for (auto& d : shape) d = static_cast<int>(get<std::uint32_t>(in));
    if (shape != t.shape()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor data for " + name);
  }
  meta.has_optimizer = get<std::uint8_t>(in) != 0;
  if (meta.has_optimizer && opt) {
    opt->init(params);
    opt->step_count = get<std::int64_t>(in);
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      in.read(reinterpret_cast<char*>(opt->m[i].data()),
              static_cast<std::streamsize>(opt->m[i].size() * sizeof(double)));
      in.read(reinterpret_cast<char*>(opt->v[i].data()),
              static_cast<std::streamsize>(opt->v[i].size() * sizeof(double)));
      if (!in) throw std::runtime_error("checkpoint: truncated optimizer state");
    }
  }
  return meta;
}

}  // namespace odt
