#include "odt/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace odt {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& s : s_) s = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double Rng::normal() {
  // Box-Muller; u1 bounded away from 0.
  const double u1 = std::max(uniform(), 1e-300);
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int Rng::uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

Rng Rng::fork(std::uint64_t stream) const {
  std::uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ull + stream * 0xc2b2ae3d27d4eb4full);
  return Rng(splitmix64(x));
}

Tensor ParamStore::add(const std::string& name, std::vector<int> shape,
                       std::vector<double> init) {
  for (auto& [n, t] : items)
    if (n == name) throw std::logic_error("ParamStore: duplicate parameter " + name);
  Tensor t = Tensor::from(std::move(shape), std::move(init), /*needs_grad=*/true);
  items.emplace_back(name, t);
  return t;
}

Tensor* ParamStore::find(const std::string& name) {
  for (auto& [n, t] : items)
    if (n == name) return &t;
  return nullptr;
}

std::size_t ParamStore::total_params() const {
  std::size_t n = 0;
  for (const auto& [_, t] : items) n += t.numel();
  return n;
}

void ParamStore::zero_grads() {
  for (auto& [_, t] : items) t.node()->zero_grad();
}

std::vector<double> kaiming_uniform(Rng& rng, std::size_t n, int fan_in) {
  const double bound = std::sqrt(6.0 / std::max(fan_in, 1));
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}

Linear make_linear(ParamStore& ps, Rng& rng, const std::string& name, int in, int out,
                   bool zero_init) {
  std::vector<double> w = zero_init ? std::vector<double>(static_cast<std::size_t>(in) * out, 0.0)
                                    : kaiming_uniform(rng, static_cast<std::size_t>(in) * out, in);
  Linear l;
  l.w = ps.add(name + ".w", {in, out}, std::move(w));
  l.b = ps.add(name + ".b", {out}, std::vector<double>(out, 0.0));
  return l;
}

LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim) {
  LayerNorm n;
  n.gamma = ps.add(name + ".gamma", {dim}, std::vector<double>(dim, 1.0));
  n.beta = ps.add(name + ".beta", {dim}, std::vector<double>(dim, 0.0));
  return n;
}

Mlp make_mlp(ParamStore& ps, Rng& rng, const std::string& name, int in, int hidden, int out,
             bool zero_init_out) {
  Mlp m;
  m.fc1 = make_linear(ps, rng, name + ".fc1", in, hidden);
  m.norm = make_layer_norm(ps, name + ".norm", hidden);
  m.fc2 = make_linear(ps, rng, name + ".fc2", hidden, out, zero_init_out);
  return m;
}

Conv2dLayer make_conv2d(ParamStore& ps, Rng& rng, const std::string& name, int in, int out,
                        int k, int stride) {
  Conv2dLayer c;
  c.stride = stride;
  c.pad = k / 2;
  c.w = ps.add(name + ".w", {out, in, k, k},
               kaiming_uniform(rng, static_cast<std::size_t>(out) * in * k * k, in * k * k));
  c.b = ps.add(name + ".b", {out}, std::vector<double>(out, 0.0));
  return c;
}

Conv3dLayer make_conv3d(ParamStore& ps, Rng& rng, const std::string& name, int in, int out,
                        int k, double bias_init) {
  Conv3dLayer c;
  c.pad = k / 2;
  c.w = ps.add(name + ".w", {out, in, k, k, k},
               kaiming_uniform(rng, static_cast<std::size_t>(out) * in * k * k * k, in * k * k * k));
  c.b = ps.add(name + ".b", {out}, std::vector<double>(out, bias_init));
  return c;
}

GroupNormLayer make_group_norm(ParamStore& ps, const std::string& name, int channels) {
  GroupNormLayer g;
  g.groups = norm_groups(channels);
  g.gamma = ps.add(name + ".gamma", {channels}, std::vector<double>(channels, 1.0));
  g.beta = ps.add(name + ".beta", {channels}, std::vector<double>(channels, 0.0));
  return g;
}

int norm_groups(int channels) {
  for (int g = std::min(8, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

void AdamW::init(const ParamStore& ps) {
  m.assign(ps.items.size(), {});
  v.assign(ps.items.size(), {});
  for (std::size_t i = 0; i < ps.items.size(); ++i) {
    m[i].assign(ps.items[i].second.numel(), 0.0);
    v[i].assign(ps.items[i].second.numel(), 0.0);
  }
  step_count = 0;
}

void AdamW::step(ParamStore& ps, double lr) {
  if (m.size() != ps.items.size()) throw std::logic_error("AdamW: not initialized");
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < ps.items.size(); ++i) {
    Tensor& p = ps.items[i].second;
    if (!p.has_grad()) continue;
    double* w = p.data();
    const double* g = p.node()->grad.data();
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[i][j] = beta1 * m[i][j] + (1 - beta1) * g[j];
      v[i][j] = beta2 * v[i][j] + (1 - beta2) * g[j] * g[j];
      const double mhat = m[i][j] / bc1;
      const double vhat = v[i][j] / bc2;
      w[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[j]);
    }
  }
}

double cosine_lr(double lr_max, double lr_min, int epoch, int total_epochs) {
  if (total_epochs <= 1) return lr_max;
  const double t = static_cast<double>(epoch) / (total_epochs - 1);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * t));
}

}  // namespace odt
