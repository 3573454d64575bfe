#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "odt/geometry.hpp"

// Reverse-mode autodiff over dense double tensors. Graphs are built
// dynamically by the op functions below and freed when the handles go out
// of scope; parameters are leaf nodes that outlive the per-step graphs.
// Everything runs in double so the same code path serves training and the
// finite-difference checks.

namespace odt {

bool grad_enabled();

// RAII switch: ops called inside the scope record no graph (inference).
struct NoGrad {
  bool prev;
  NoGrad();
  ~NoGrad();
};

struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void()> backward;
  bool needs_grad = false;

  std::size_t numel() const { return value.size(); }
  double* grad_data();  // allocates + zeroes on demand
  void zero_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(std::vector<int> shape, bool needs_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool needs_grad = false);
  static Tensor from(std::vector<int> shape, std::vector<double> data, bool needs_grad = false);
  static Tensor scalar(double v, bool needs_grad = false);

  bool defined() const { return static_cast<bool>(n_); }
  const std::vector<int>& shape() const { return n_->shape; }
  int dim(int i) const { return n_->shape[i]; }
  std::size_t numel() const { return n_->numel(); }
  double* data() { return n_->value.data(); }
  const double* data() const { return n_->value.data(); }
  double* grad_data() { return n_->grad_data(); }
  bool has_grad() const { return !n_->grad.empty(); }
  double item() const;
  bool needs_grad() const { return n_->needs_grad; }
  const std::shared_ptr<Node>& node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

// Runs reverse-mode accumulation from a scalar loss. Grads of reachable
// nodes with needs_grad are accumulated (not reset) so per-sample losses
// in a batch can share parameter gradients.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_t(const Tensor& a);

// ---- reductions / shape ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor transpose2d(const Tensor& a);                       // [A,B] -> [B,A]
Tensor concat_cols(const std::vector<Tensor>& xs);         // [N,Ci] -> [N,sum Ci]

// ---- dense layers ----
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // [N,K]x[K,M]+[M]
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);                              // rows of [N,C]

// ---- convolutions (channel-major maps) ----
enum class PadMode { kZero, kCircular };
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad, PadMode mode = PadMode::kZero);  // x [Ci,H,W], w [Co,Ci,kh,kw]
Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b,
              int pad);                                 // x [Ci,X,Y,Z], w [Co,Ci,k,k,k]
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);                   // x [C, spatial...]
Tensor upsample2x_nearest2d(const Tensor& x, int out_h, int out_w);   // [C,H,W]
Tensor upsample2x_trilinear3d(const Tensor& x);                       // [C,X,Y,Z] -> 2x
// Learned 2x upsampling (transposed convolution, kernel 2 stride 2):
// w is [Ci, Co, 2, 2, 2], b is [Co].
Tensor conv_transpose3d_2x(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor crop2d(const Tensor& x, int out_h, int out_w);                 // keep top-left
// Per-row scaling: x [N,C] * s [N] -> [N,C].
Tensor scale_rows(const Tensor& x, const Tensor& s);
Tensor slice_cols(const Tensor& x, int begin, int len);               // [N,C] -> [N,len]

// ---- geometry-coupled ----
// Projects camera-frame points [N,3]; returns pixel coords [N,2] and writes
// per-row validity to valid_out. Invalid rows give (0,0) and no gradient.
Tensor project_points(const Tensor& pts, const CameraModel& cam, double z_near,
                      std::vector<std::uint8_t>* valid_out);
// Bilinear feature gather: fmap [C,H,W] at stride s, coords [N,2] in
// full-image pixels. Invalid rows produce zero features and no gradient.
Tensor bilinear_gather(const Tensor& fmap, const Tensor& coords,
                       const std::vector<std::uint8_t>& valid, int stride);

// ---- tracker primitives ----
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);          // [V,C] -> [P,C]
Tensor scatter_rows(const Tensor& x, const std::vector<int>& idx, int v);  // [P,C] -> [V,C]
Tensor rowwise_cosine(const Tensor& a, const Tensor& b);                   // [P,C]x[P,C] -> [P]
// Row-stochastic softmax over contiguous segments of a flat score vector.
// segments holds S+1 offsets into [0,P]. tau is a positive scalar tensor.
Tensor segmented_softmax(const Tensor& scores, const std::vector<int>& segments,
                         const Tensor& tau);
// Expected target coordinate minus source coordinate per segment:
// out[r] = sum_{j in seg r} probs[j] * tgt[j] - src[r].
Tensor segment_expect(const Tensor& probs, const std::vector<double>& tgt,
                      const std::vector<double>& src, const std::vector<int>& segments);
// Mean Euclidean row norm of [V,3]; rows at exactly zero contribute zero
// with zero gradient.
Tensor rows_l2_mean(const Tensor& x);

}  // namespace odt
