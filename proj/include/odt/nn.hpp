#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "odt/tensor.hpp"

namespace odt {

// xoshiro256** seeded through splitmix64. Self-contained so streams are
// reproducible across standard libraries and platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);
  std::uint64_t next_u64();
  double uniform();  // [0, 1)
  double uniform(double a, double b);
  double normal();
  int uniform_int(int n);  // [0, n)
  Rng fork(std::uint64_t stream) const;

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
      std::swap(v[i], v[uniform_int(i + 1)]);
  }

 private:
  std::array<std::uint64_t, 4> s_{};
  std::uint64_t seed_;
};

// Named parameter registry. Registration order is the checkpoint order, so
// model construction must be deterministic.
struct ParamStore {
  std::vector<std::pair<std::string, Tensor>> items;

  Tensor add(const std::string& name, std::vector<int> shape, std::vector<double> init);
  Tensor* find(const std::string& name);
  std::size_t total_params() const;
  void zero_grads();
};

std::vector<double> kaiming_uniform(Rng& rng, std::size_t n, int fan_in);

struct Linear {
  Tensor w, b;
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};
Linear make_linear(ParamStore& ps, Rng& rng, const std::string& name, int in, int out,
                   bool zero_init = false);

struct LayerNorm {
  Tensor gamma, beta;
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};
LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim);

// linear -> norm -> ReLU -> linear
struct Mlp {
  Linear fc1;
  LayerNorm norm;
  Linear fc2;
  Tensor operator()(const Tensor& x) const { return fc2(relu(norm(fc1(x)))); }
};
Mlp make_mlp(ParamStore& ps, Rng& rng, const std::string& name, int in, int hidden, int out,
             bool zero_init_out = false);

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1, pad = 0;
  Tensor operator()(const Tensor& x, PadMode mode = PadMode::kZero) const {
    return conv2d(x, w, b, stride, pad, mode);
  }
};
Conv2dLayer make_conv2d(ParamStore& ps, Rng& rng, const std::string& name, int in, int out,
                        int k, int stride);

struct Conv3dLayer {
  Tensor w, b;
  int pad = 0;
  Tensor operator()(const Tensor& x) const { return conv3d(x, w, b, pad); }
};
Conv3dLayer make_conv3d(ParamStore& ps, Rng& rng, const std::string& name, int in, int out,
                        int k, double bias_init = 0.0);

struct GroupNormLayer {
  Tensor gamma, beta;
  int groups = 1;
  Tensor operator()(const Tensor& x) const { return group_norm(x, groups, gamma, beta); }
};
GroupNormLayer make_group_norm(ParamStore& ps, const std::string& name, int channels);

// Largest divisor of channels that is <= 8.
int norm_groups(int channels);

// Decoupled weight decay Adam. Moment buffers are keyed by parameter index
// in the store, in registration order.
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.0;
  std::int64_t step_count = 0;
  std::vector<std::vector<double>> m, v;

  void init(const ParamStore& ps);
  void step(ParamStore& ps, double lr);
};

// Cosine annealing over epochs: lr(0) = lr_max, lr(total-1) = lr_min.
double cosine_lr(double lr_max, double lr_min, int epoch, int total_epochs);

}  // namespace odt
