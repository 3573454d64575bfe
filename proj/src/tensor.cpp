#include "odt/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace odt {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

namespace {

thread_local bool g_grad_enabled = true;

std::size_t shape_numel(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

std::shared_ptr<Node> make_node(std::vector<int> shape) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value.resize(shape_numel(n->shape));
  return n;
}

// Wires inputs + backward only when the graph is being recorded.
Tensor finish(std::shared_ptr<Node> n, std::initializer_list<Tensor> ins,
              std::function<void()> bwd) {
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& t : ins)
      if (t.defined() && t.needs_grad()) any = true;
    if (any) {
      n->needs_grad = true;
      for (const auto& t : ins)
        if (t.defined()) n->inputs.push_back(t.node());
      n->backward = std::move(bwd);
    }
  }
  return Tensor(std::move(n));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }
NoGrad::NoGrad() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGrad::~NoGrad() { g_grad_enabled = prev; }

double* Node::grad_data() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad.data();
}

void Node::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

Tensor Tensor::zeros(std::vector<int> shape, bool needs_grad) {
  auto n = make_node(std::move(shape));
  n->needs_grad = needs_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(std::vector<int> shape, double v, bool needs_grad) {
  Tensor t = zeros(std::move(shape), needs_grad);
  std::fill_n(t.data(), t.numel(), v);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool needs_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  if (data.size() != shape_numel(n->shape)) throw std::invalid_argument("Tensor::from: size mismatch");
  n->value = std::move(data);
  n->needs_grad = needs_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool needs_grad) { return from({1}, {v}, needs_grad); }

double Tensor::item() const {
  if (numel() != 1) throw std::logic_error("Tensor::item: not a scalar");
  return data()[0];
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::logic_error("backward: loss must be scalar");
  Node* root = loss.node().get();
  if (!root->needs_grad) return;

  // Iterative post-order topological sort over the needs_grad subgraph.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, i] = stack.back();
    if (i < node->inputs.size()) {
      Node* in = node->inputs[i++].get();
      if (in->needs_grad && !visited.count(in)) {
        visited.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad_data()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward();
}

// ---------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.data()[i] + b.data()[i];
  Node* self = n.get();
  auto an = a.node(), bn = b.node();
  return finish(std::move(n), {a, b}, [self, an, bn] {
    if (an->needs_grad) {
      double* g = an->grad_data();
      for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i];
    }
    if (bn->needs_grad) {
      double* g = bn->grad_data();
      for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.data()[i] - b.data()[i];
  Node* self = n.get();
  auto an = a.node(), bn = b.node();
  return finish(std::move(n), {a, b}, [self, an, bn] {
    if (an->needs_grad) {
      double* g = an->grad_data();
      for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i];
    }
    if (bn->needs_grad) {
      double* g = bn->grad_data();
      for (std::size_t i = 0; i < self->numel(); ++i) g[i] -= self->grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.data()[i] * b.data()[i];
  Node* self = n.get();
  auto an = a.node(), bn = b.node();
  return finish(std::move(n), {a, b}, [self, an, bn] {
    if (an->needs_grad) {
      double* g = an->grad_data();
      for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i] * bn->value[i];
    }
    if (bn->needs_grad) {
      double* g = bn->grad_data();
      for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i] * an->value[i];
    }
  });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "divide");
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.data()[i] / b.data()[i];
  Node* self = n.get();
  auto an = a.node(), bn = b.node();
  return finish(std::move(n), {a, b}, [self, an, bn] {
    if (an->needs_grad) {
      double* g = an->grad_data();
      for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i] / bn->value[i];
    }
    if (bn->needs_grad) {
      double* g = bn->grad_data();
      for (std::size_t i = 0; i < self->numel(); ++i)
        g[i] -= self->grad[i] * an->value[i] / (bn->value[i] * bn->value[i]);
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.data()[i] * c;
  Node* self = n.get();
  auto an = a.node();
  return finish(std::move(n), {a}, [self, an, c] {
    double* g = an->grad_data();
    for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i] * c;
  });
}

Tensor add_const(const Tensor& a, double c) {
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.data()[i] + c;
  Node* self = n.get();
  auto an = a.node();
  return finish(std::move(n), {a}, [self, an] {
    double* g = an->grad_data();
    for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i];
  });
}

Tensor relu(const Tensor& a) {
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = a.data()[i] > 0 ? a.data()[i] : 0.0;
  Node* self = n.get();
  auto an = a.node();
  return finish(std::move(n), {a}, [self, an] {
    double* g = an->grad_data();
    for (std::size_t i = 0; i < self->numel(); ++i)
      if (an->value[i] > 0) g[i] += self->grad[i];
  });
}

Tensor sigmoid(const Tensor& a) {
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) {
    const double x = a.data()[i];
    n->value[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  Node* self = n.get();
  auto an = a.node();
  return finish(std::move(n), {a}, [self, an] {
    double* g = an->grad_data();
    for (std::size_t i = 0; i < self->numel(); ++i) {
      const double y = self->value[i];
      g[i] += self->grad[i] * y * (1.0 - y);
    }
  });
}

Tensor exp_t(const Tensor& a) {
  auto n = make_node(a.shape());
  for (std::size_t i = 0; i < n->numel(); ++i) n->value[i] = std::exp(a.data()[i]);
  Node* self = n.get();
  auto an = a.node();
  return finish(std::move(n), {a}, [self, an] {
    double* g = an->grad_data();
    for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i] * self->value[i];
  });
}

// ------------------------------------------------------------------- reshape

Tensor sum(const Tensor& a) {
  auto n = make_node({1});
  double s = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a.data()[i];
  n->value[0] = s;
  Node* self = n.get();
  auto an = a.node();
  return finish(std::move(n), {a}, [self, an] {
    double* g = an->grad_data();
    const double gy = self->grad[0];
    for (std::size_t i = 0; i < an->numel(); ++i) g[i] += gy;
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel()) throw std::invalid_argument("reshape: numel mismatch");
  auto n = make_node(std::move(shape));
  std::copy_n(a.data(), a.numel(), n->value.data());
  Node* self = n.get();
  auto an = a.node();
  return finish(std::move(n), {a}, [self, an] {
    double* g = an->grad_data();
    for (std::size_t i = 0; i < self->numel(); ++i) g[i] += self->grad[i];
  });
}

Tensor transpose2d(const Tensor& a) {
  const int r = a.dim(0), c = a.dim(1);
  auto n = make_node({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->value[static_cast<std::size_t>(j) * r + i] = a.data()[static_cast<std::size_t>(i) * c + j];
  Node* self = n.get();
  auto an = a.node();
  return finish(std::move(n), {a}, [self, an, r, c] {
    double* g = an->grad_data();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g[static_cast<std::size_t>(i) * c + j] += self->grad[static_cast<std::size_t>(j) * r + i];
  });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_cols: empty input");
  const int rows = xs[0].dim(0);
  int cols = 0;
  for (const auto& x : xs) {
    if (x.dim(0) != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += x.dim(1);
  }
  auto n = make_node({rows, cols});
  int off = 0;
  for (const auto& x : xs) {
    const int c = x.dim(1);
    for (int i = 0; i < rows; ++i)
      std::copy_n(x.data() + static_cast<std::size_t>(i) * c, c,
                  n->value.data() + static_cast<std::size_t>(i) * cols + off);
    off += c;
  }
  Node* self = n.get();
  std::vector<std::shared_ptr<Node>> in_nodes;
  for (const auto& x : xs) in_nodes.push_back(x.node());
  bool any = false;
  for (const auto& x : xs) any = any || x.needs_grad();
  if (g_grad_enabled && any) {
    n->needs_grad = true;
    n->inputs = in_nodes;
    n->backward = [self, in_nodes, rows, cols] {
      int off2 = 0;
      for (const auto& xn : in_nodes) {
        const int c = xn->shape[1];
        if (xn->needs_grad) {
          double* g = xn->grad_data();
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < c; ++j)
              g[static_cast<std::size_t>(i) * c + j] += self->grad[static_cast<std::size_t>(i) * cols + off2 + j];
        }
        off2 += c;
      }
    };
  }
  return Tensor(std::move(n));
}

// -------------------------------------------------------------- dense layers

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int N = x.dim(0), K = x.dim(1), M = w.dim(1);
  if (w.dim(0) != K) throw std::invalid_argument("linear: weight shape mismatch");
  auto n = make_node({N, M});
  {
    MapC xm(x.data(), N, K), wm(w.data(), K, M);
    MapM ym(n->value.data(), N, M);
    ym.noalias() = xm * wm;
    if (b.defined()) ym.rowwise() += MapC(b.data(), 1, M).row(0);
  }
  Node* self = n.get();
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  return finish(std::move(n), b.defined() ? std::initializer_list<Tensor>{x, w, b}
                                          : std::initializer_list<Tensor>{x, w},
                [self, xn, wn, bn, N, K, M] {
                  MapC gy(self->grad.data(), N, M);
                  if (xn->needs_grad) {
                    MapM gx(xn->grad_data(), N, K);
                    gx.noalias() += gy * MapC(wn->value.data(), K, M).transpose();
                  }
                  if (wn->needs_grad) {
                    MapM gw(wn->grad_data(), K, M);
                    gw.noalias() += MapC(xn->value.data(), N, K).transpose() * gy;
                  }
                  if (bn && bn->needs_grad) {
                    double* gb = bn->grad_data();
                    for (int i = 0; i < N; ++i)
                      for (int j = 0; j < M; ++j) gb[j] += self->grad[static_cast<std::size_t>(i) * M + j];
                  }
                });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const int N = x.dim(0), C = x.dim(1);
  auto n = make_node({N, C});
  std::vector<double> inv_sigma(N), xhat(static_cast<std::size_t>(N) * C);
  for (int i = 0; i < N; ++i) {
    const double* row = x.data() + static_cast<std::size_t>(i) * C;
    double mu = 0;
    for (int j = 0; j < C; ++j) mu += row[j];
    mu /= C;
    double var = 0;
    for (int j = 0; j < C; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (int j = 0; j < C; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat[static_cast<std::size_t>(i) * C + j] = xh;
      n->value[static_cast<std::size_t>(i) * C + j] = gamma.data()[j] * xh + beta.data()[j];
    }
  }
  Node* self = n.get();
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return finish(std::move(n), {x, gamma, beta},
                [self, xn, gn, bn, N, C, inv_sigma = std::move(inv_sigma), xhat = std::move(xhat)] {
                  for (int i = 0; i < N; ++i) {
                    const double* gy = self->grad.data() + static_cast<std::size_t>(i) * C;
                    const double* xh = xhat.data() + static_cast<std::size_t>(i) * C;
                    if (gn->needs_grad) {
                      double* gg = gn->grad_data();
                      for (int j = 0; j < C; ++j) gg[j] += gy[j] * xh[j];
                    }
                    if (bn->needs_grad) {
                      double* gb = bn->grad_data();
                      for (int j = 0; j < C; ++j) gb[j] += gy[j];
                    }
                    if (xn->needs_grad) {
                      double m1 = 0, m2 = 0;
                      for (int j = 0; j < C; ++j) {
                        const double dxh = gy[j] * gn->value[j];
                        m1 += dxh;
                        m2 += dxh * xh[j];
                      }
                      m1 /= C;
                      m2 /= C;
                      double* gx = xn->grad_data() + static_cast<std::size_t>(i) * C;
                      for (int j = 0; j < C; ++j) {
                        const double dxh = gy[j] * gn->value[j];
                        gx[j] += inv_sigma[i] * (dxh - m1 - xh[j] * m2);
                      }
                    }
                  }
                });
}

// ------------------------------------------------------------------- conv2d

namespace {

inline int wrap_index(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

// col is [K, OHW] with K = Ci*kh*kw.
void im2col2d(const double* x, int Ci, int H, int W, int kh, int kw, int stride, int pad,
              PadMode mode, int OH, int OW, double* col) {
  const std::size_t ohw = static_cast<std::size_t>(OH) * OW;
  std::size_t k = 0;
  for (int c = 0; c < Ci; ++c) {
    const double* plane = x + static_cast<std::size_t>(c) * H * W;
    for (int di = 0; di < kh; ++di)
      for (int dj = 0; dj < kw; ++dj, ++k) {
        double* dst = col + k * ohw;
        for (int oi = 0; oi < OH; ++oi) {
          int i = oi * stride + di - pad;
          for (int oj = 0; oj < OW; ++oj, ++dst) {
            int j = oj * stride + dj - pad;
            int ii = i, jj = j;
            if (mode == PadMode::kCircular) {
              ii = wrap_index(ii, H);
              jj = wrap_index(jj, W);
            } else if (ii < 0 || ii >= H || jj < 0 || jj >= W) {
              *dst = 0.0;
              continue;
            }
            *dst = plane[static_cast<std::size_t>(ii) * W + jj];
          }
        }
      }
  }
}

void col2im2d(const double* col, int Ci, int H, int W, int kh, int kw, int stride, int pad,
              PadMode mode, int OH, int OW, double* gx) {
  const std::size_t ohw = static_cast<std::size_t>(OH) * OW;
  std::size_t k = 0;
  for (int c = 0; c < Ci; ++c) {
    double* plane = gx + static_cast<std::size_t>(c) * H * W;
    for (int di = 0; di < kh; ++di)
      for (int dj = 0; dj < kw; ++dj, ++k) {
        const double* src = col + k * ohw;
        for (int oi = 0; oi < OH; ++oi) {
          int i = oi * stride + di - pad;
          for (int oj = 0; oj < OW; ++oj) {
            int j = oj * stride + dj - pad;
            int ii = i, jj = j;
            if (mode == PadMode::kCircular) {
              ii = wrap_index(ii, H);
              jj = wrap_index(jj, W);
            } else if (ii < 0 || ii >= H || jj < 0 || jj >= W) {
              continue;
            }
            plane[static_cast<std::size_t>(ii) * W + jj] += src[oi * OW + oj];
          }
        }
      }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad,
              PadMode mode) {
  const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Ci) throw std::invalid_argument("conv2d: channel mismatch");
  const int OH = (H + 2 * pad - kh) / stride + 1;
  const int OW = (W + 2 * pad - kw) / stride + 1;
  const int K = Ci * kh * kw;
  const std::size_t ohw = static_cast<std::size_t>(OH) * OW;

  auto n = make_node({Co, OH, OW});
  std::vector<double> col(static_cast<std::size_t>(K) * ohw);
  im2col2d(x.data(), Ci, H, W, kh, kw, stride, pad, mode, OH, OW, col.data());
  {
    MapC wm(w.data(), Co, K), cm(col.data(), K, static_cast<int>(ohw));
    MapM ym(n->value.data(), Co, static_cast<int>(ohw));
    ym.noalias() = wm * cm;
    if (b.defined())
      for (int c = 0; c < Co; ++c) ym.row(c).array() += b.data()[c];
  }
  Node* self = n.get();
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  const bool keep_col = g_grad_enabled && w.needs_grad();
  if (!keep_col) col.clear();
  return finish(std::move(n), b.defined() ? std::initializer_list<Tensor>{x, w, b}
                                          : std::initializer_list<Tensor>{x, w},
                [self, xn, wn, bn, Ci, H, W, kh, kw, stride, pad, mode, OH, OW, K, ohw,
                 col = std::move(col)] {
                  const int Co = wn->shape[0];
                  MapC gy(self->grad.data(), Co, static_cast<int>(ohw));
                  if (wn->needs_grad) {
                    MapM gw(wn->grad_data(), Co, K);
                    gw.noalias() += gy * MapC(col.data(), K, static_cast<int>(ohw)).transpose();
                  }
                  if (bn && bn->needs_grad) {
                    double* gb = bn->grad_data();
                    for (int c = 0; c < Co; ++c)
                      for (std::size_t i = 0; i < ohw; ++i) gb[c] += self->grad[c * ohw + i];
                  }
                  if (xn->needs_grad) {
                    std::vector<double> gcol(static_cast<std::size_t>(K) * ohw);
                    MapM gc(gcol.data(), K, static_cast<int>(ohw));
                    gc.noalias() = MapC(wn->value.data(), Co, K).transpose() * gy;
                    col2im2d(gcol.data(), Ci, H, W, kh, kw, stride, pad, mode, OH, OW,
                             xn->grad_data());
                  }
                });
}

// ------------------------------------------------------------------- conv3d

namespace {

void im2col3d(const double* x, int Ci, int X, int Y, int Z, int k, int pad, int OX, int OY,
              int OZ, double* col) {
  const std::size_t ovol = static_cast<std::size_t>(OX) * OY * OZ;
  std::size_t kk = 0;
  for (int c = 0; c < Ci; ++c) {
    const double* vol = x + static_cast<std::size_t>(c) * X * Y * Z;
    for (int dx = 0; dx < k; ++dx)
      for (int dy = 0; dy < k; ++dy)
        for (int dz = 0; dz < k; ++dz, ++kk) {
          double* dst = col + kk * ovol;
          for (int ox = 0; ox < OX; ++ox) {
            const int ix = ox + dx - pad;
            for (int oy = 0; oy < OY; ++oy) {
              const int iy = oy + dy - pad;
              for (int oz = 0; oz < OZ; ++oz, ++dst) {
                const int iz = oz + dz - pad;
                if (ix < 0 || ix >= X || iy < 0 || iy >= Y || iz < 0 || iz >= Z) {
                  *dst = 0.0;
                } else {
                  *dst = vol[(static_cast<std::size_t>(ix) * Y + iy) * Z + iz];
                }
              }
            }
          }
        }
  }
}

void col2im3d(const double* col, int Ci, int X, int Y, int Z, int k, int pad, int OX, int OY,
              int OZ, double* gx) {
  const std::size_t ovol = static_cast<std::size_t>(OX) * OY * OZ;
  std::size_t kk = 0;
  for (int c = 0; c < Ci; ++c) {
    double* vol = gx + static_cast<std::size_t>(c) * X * Y * Z;
    for (int dx = 0; dx < k; ++dx)
      for (int dy = 0; dy < k; ++dy)
        for (int dz = 0; dz < k; ++dz, ++kk) {
          const double* src = col + kk * ovol;
          for (int ox = 0; ox < OX; ++ox) {
            const int ix = ox + dx - pad;
            if (ix < 0 || ix >= X) continue;
            for (int oy = 0; oy < OY; ++oy) {
              const int iy = oy + dy - pad;
              if (iy < 0 || iy >= Y) continue;
              for (int oz = 0; oz < OZ; ++oz) {
                const int iz = oz + dz - pad;
                if (iz < 0 || iz >= Z) continue;
                vol[(static_cast<std::size_t>(ix) * Y + iy) * Z + iz] +=
                    src[(static_cast<std::size_t>(ox) * OY + oy) * OZ + oz];
              }
            }
          }
        }
  }
}

}  // namespace

Tensor conv3d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
  const int Ci = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const int Co = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Ci) throw std::invalid_argument("conv3d: channel mismatch");
  const int OX = X + 2 * pad - k + 1, OY = Y + 2 * pad - k + 1, OZ = Z + 2 * pad - k + 1;
  const int K = Ci * k * k * k;
  const std::size_t ovol = static_cast<std::size_t>(OX) * OY * OZ;

  auto n = make_node({Co, OX, OY, OZ});
  std::vector<double> col(static_cast<std::size_t>(K) * ovol);
  im2col3d(x.data(), Ci, X, Y, Z, k, pad, OX, OY, OZ, col.data());
  {
    MapC wm(w.data(), Co, K), cm(col.data(), K, static_cast<int>(ovol));
    MapM ym(n->value.data(), Co, static_cast<int>(ovol));
    ym.noalias() = wm * cm;
    if (b.defined())
      for (int c = 0; c < Co; ++c) ym.row(c).array() += b.data()[c];
  }
  Node* self = n.get();
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  const bool keep_col = g_grad_enabled && w.needs_grad();
  if (!keep_col) col.clear();
  return finish(std::move(n), b.defined() ? std::initializer_list<Tensor>{x, w, b}
                                          : std::initializer_list<Tensor>{x, w},
                [self, xn, wn, bn, Ci, X, Y, Z, k, pad, OX, OY, OZ, K, ovol,
                 col = std::move(col)] {
                  const int Co = wn->shape[0];
                  MapC gy(self->grad.data(), Co, static_cast<int>(ovol));
                  if (wn->needs_grad) {
                    MapM gw(wn->grad_data(), Co, K);
                    gw.noalias() += gy * MapC(col.data(), K, static_cast<int>(ovol)).transpose();
                  }
                  if (bn && bn->needs_grad) {
                    double* gb = bn->grad_data();
                    for (int c = 0; c < Co; ++c)
                      for (std::size_t i = 0; i < ovol; ++i) gb[c] += self->grad[c * ovol + i];
                  }
                  if (xn->needs_grad) {
                    std::vector<double> gcol(static_cast<std::size_t>(K) * ovol);
                    MapM gc(gcol.data(), K, static_cast<int>(ovol));
                    gc.noalias() = MapC(wn->value.data(), Co, K).transpose() * gy;
                    col2im3d(gcol.data(), Ci, X, Y, Z, k, pad, OX, OY, OZ, xn->grad_data());
                  }
                });
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const int C = x.dim(0);
  if (C % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  const std::size_t spatial = x.numel() / C;
  const int cg = C / groups;
  const std::size_t gsize = cg * spatial;

  auto n = make_node(x.shape());
  std::vector<double> inv_sigma(groups), xhat(x.numel());
  for (int g = 0; g < groups; ++g) {
    const double* xs = x.data() + static_cast<std::size_t>(g) * gsize;
    double mu = 0;
    for (std::size_t i = 0; i < gsize; ++i) mu += xs[i];
    mu /= static_cast<double>(gsize);
    double var = 0;
    for (std::size_t i = 0; i < gsize; ++i) var += (xs[i] - mu) * (xs[i] - mu);
    var /= static_cast<double>(gsize);
    inv_sigma[g] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < cg; ++c) {
      const int ch = g * cg + c;
      const double gam = gamma.data()[ch], bet = beta.data()[ch];
      for (std::size_t s = 0; s < spatial; ++s) {
        const std::size_t i = static_cast<std::size_t>(ch) * spatial + s;
        const double xh = (x.data()[i] - mu) * inv_sigma[g];
        xhat[i] = xh;
        n->value[i] = gam * xh + bet;
      }
    }
  }
  Node* self = n.get();
  auto xn = x.node(), gn = gamma.node(), bn = beta.node();
  return finish(std::move(n), {x, gamma, beta},
                [self, xn, gn, bn, groups, cg, spatial, gsize, inv_sigma = std::move(inv_sigma),
                 xhat = std::move(xhat)] {
                  for (int g = 0; g < groups; ++g) {
                    if (gn->needs_grad || bn->needs_grad) {
                      for (int c = 0; c < cg; ++c) {
                        const int ch = g * cg + c;
                        double sg = 0, sb = 0;
                        for (std::size_t s = 0; s < spatial; ++s) {
                          const std::size_t i = static_cast<std::size_t>(ch) * spatial + s;
                          sg += self->grad[i] * xhat[i];
                          sb += self->grad[i];
                        }
                        if (gn->needs_grad) gn->grad_data()[ch] += sg;
                        if (bn->needs_grad) bn->grad_data()[ch] += sb;
                      }
                    }
                    if (xn->needs_grad) {
                      double m1 = 0, m2 = 0;
                      for (int c = 0; c < cg; ++c) {
                        const int ch = g * cg + c;
                        const double gam = gn->value[ch];
                        for (std::size_t s = 0; s < spatial; ++s) {
                          const std::size_t i = static_cast<std::size_t>(ch) * spatial + s;
                          const double dxh = self->grad[i] * gam;
                          m1 += dxh;
                          m2 += dxh * xhat[i];
                        }
                      }
                      m1 /= static_cast<double>(gsize);
                      m2 /= static_cast<double>(gsize);
                      double* gx = xn->grad_data();
                      for (int c = 0; c < cg; ++c) {
                        const int ch = g * cg + c;
                        const double gam = gn->value[ch];
                        for (std::size_t s = 0; s < spatial; ++s) {
                          const std::size_t i = static_cast<std::size_t>(ch) * spatial + s;
                          const double dxh = self->grad[i] * gam;
                          gx[i] += inv_sigma[g] * (dxh - m1 - xhat[i] * m2);
                        }
                      }
                    }
                  }
                });
}

Tensor upsample2x_nearest2d(const Tensor& x, int out_h, int out_w) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto n = make_node({C, out_h, out_w});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < out_h; ++i) {
      const int si = std::min(i / 2, H - 1);
      for (int j = 0; j < out_w; ++j) {
        const int sj = std::min(j / 2, W - 1);
        n->value[(static_cast<std::size_t>(c) * out_h + i) * out_w + j] =
            x.data()[(static_cast<std::size_t>(c) * H + si) * W + sj];
      }
    }
  Node* self = n.get();
  auto xn = x.node();
  return finish(std::move(n), {x}, [self, xn, C, H, W, out_h, out_w] {
    double* g = xn->grad_data();
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < out_h; ++i) {
        const int si = std::min(i / 2, H - 1);
        for (int j = 0; j < out_w; ++j) {
          const int sj = std::min(j / 2, W - 1);
          g[(static_cast<std::size_t>(c) * H + si) * W + sj] +=
              self->grad[(static_cast<std::size_t>(c) * out_h + i) * out_w + j];
        }
      }
  });
}

namespace {

struct LinTap {
  int i0, i1;
  double w;  // weight toward i1
};

inline LinTap lin_tap(int out_i, int n_in) {
  const double s = (out_i + 0.5) * 0.5 - 0.5;
  const double f = std::floor(s);
  LinTap t;
  t.w = s - f;
  t.i0 = std::clamp(static_cast<int>(f), 0, n_in - 1);
  t.i1 = std::clamp(static_cast<int>(f) + 1, 0, n_in - 1);
  return t;
}

}  // namespace

Tensor upsample2x_trilinear3d(const Tensor& x) {
  const int C = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const int OX = 2 * X, OY = 2 * Y, OZ = 2 * Z;
  auto n = make_node({C, OX, OY, OZ});
  std::vector<LinTap> tx(OX), ty(OY), tz(OZ);
  for (int i = 0; i < OX; ++i) tx[i] = lin_tap(i, X);
  for (int i = 0; i < OY; ++i) ty[i] = lin_tap(i, Y);
  for (int i = 0; i < OZ; ++i) tz[i] = lin_tap(i, Z);
  auto at = [&](const double* v, int c, int ix, int iy, int iz) {
    return v[((static_cast<std::size_t>(c) * X + ix) * Y + iy) * Z + iz];
  };
  for (int c = 0; c < C; ++c)
    for (int ox = 0; ox < OX; ++ox)
      for (int oy = 0; oy < OY; ++oy)
        for (int oz = 0; oz < OZ; ++oz) {
          const auto &ax = tx[ox], &ay = ty[oy], &az = tz[oz];
          double v = 0;
          for (int bx = 0; bx < 2; ++bx)
            for (int by = 0; by < 2; ++by)
              for (int bz = 0; bz < 2; ++bz) {
                const double wt = (bx ? ax.w : 1 - ax.w) * (by ? ay.w : 1 - ay.w) *
                                  (bz ? az.w : 1 - az.w);
                v += wt * at(x.data(), c, bx ? ax.i1 : ax.i0, by ? ay.i1 : ay.i0,
                             bz ? az.i1 : az.i0);
              }
          n->value[((static_cast<std::size_t>(c) * OX + ox) * OY + oy) * OZ + oz] = v;
        }
  Node* self = n.get();
  auto xn = x.node();
  return finish(std::move(n), {x},
                [self, xn, C, X, Y, Z, OX, OY, OZ, tx = std::move(tx), ty = std::move(ty),
                 tz = std::move(tz)] {
                  double* g = xn->grad_data();
                  for (int c = 0; c < C; ++c)
                    for (int ox = 0; ox < OX; ++ox)
                      for (int oy = 0; oy < OY; ++oy)
                        for (int oz = 0; oz < OZ; ++oz) {
                          const double gy =
                              self->grad[((static_cast<std::size_t>(c) * OX + ox) * OY + oy) * OZ + oz];
                          if (gy == 0) continue;
                          const auto &ax = tx[ox], &ay = ty[oy], &az = tz[oz];
                          for (int bx = 0; bx < 2; ++bx)
                            for (int by = 0; by < 2; ++by)
                              for (int bz = 0; bz < 2; ++bz) {
                                const double wt = (bx ? ax.w : 1 - ax.w) *
                                                  (by ? ay.w : 1 - ay.w) * (bz ? az.w : 1 - az.w);
                                g[((static_cast<std::size_t>(c) * X + (bx ? ax.i1 : ax.i0)) * Y +
                                   (by ? ay.i1 : ay.i0)) * Z +
                                  (bz ? az.i1 : az.i0)] += wt * gy;
                              }
                        }
                });
}

Tensor conv_transpose3d_2x(const Tensor& x, const Tensor& w, const Tensor& b) {
  const int Ci = x.dim(0), X = x.dim(1), Y = x.dim(2), Z = x.dim(3);
  const int Co = w.dim(1);
  if (w.dim(0) != Ci) throw std::invalid_argument("conv_transpose3d_2x: channel mismatch");
  const int OX = 2 * X, OY = 2 * Y, OZ = 2 * Z;
  auto n = make_node({Co, OX, OY, OZ});
  if (b.defined())
    for (int co = 0; co < Co; ++co)
      std::fill_n(n->value.data() + static_cast<std::size_t>(co) * OX * OY * OZ,
                  static_cast<std::size_t>(OX) * OY * OZ, b.data()[co]);
  auto widx = [&](int ci, int co, int dx, int dy, int dz) {
    return ((((static_cast<std::size_t>(ci) * Co + co) * 2 + dx) * 2 + dy) * 2 + dz);
  };
  for (int ci = 0; ci < Ci; ++ci)
    for (int ix = 0; ix < X; ++ix)
      for (int iy = 0; iy < Y; ++iy)
        for (int iz = 0; iz < Z; ++iz) {
          const double xv = x.data()[((static_cast<std::size_t>(ci) * X + ix) * Y + iy) * Z + iz];
          if (xv == 0) continue;
          for (int co = 0; co < Co; ++co)
            for (int dx = 0; dx < 2; ++dx)
              for (int dy = 0; dy < 2; ++dy)
                for (int dz = 0; dz < 2; ++dz)
                  n->value[((static_cast<std::size_t>(co) * OX + 2 * ix + dx) * OY + 2 * iy + dy) * OZ +
                           2 * iz + dz] += xv * w.data()[widx(ci, co, dx, dy, dz)];
        }
  Node* self = n.get();
  auto xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr;
  return finish(std::move(n), b.defined() ? std::initializer_list<Tensor>{x, w, b}
                                          : std::initializer_list<Tensor>{x, w},
                [self, xn, wn, bn, Ci, X, Y, Z, OX, OY, OZ] {
                  const int Co = wn->shape[1];
                  auto widx = [&](int ci, int co, int dx, int dy, int dz) {
                    return ((((static_cast<std::size_t>(ci) * Co + co) * 2 + dx) * 2 + dy) * 2 + dz);
                  };
                  double* gx = xn->needs_grad ? xn->grad_data() : nullptr;
                  double* gw = wn->needs_grad ? wn->grad_data() : nullptr;
                  for (int ci = 0; ci < Ci; ++ci)
                    for (int ix = 0; ix < X; ++ix)
                      for (int iy = 0; iy < Y; ++iy)
                        for (int iz = 0; iz < Z; ++iz) {
                          const std::size_t xi = ((static_cast<std::size_t>(ci) * X + ix) * Y + iy) * Z + iz;
                          const double xv = xn->value[xi];
                          double acc = 0;
                          for (int co = 0; co < Co; ++co)
                            for (int dx = 0; dx < 2; ++dx)
                              for (int dy = 0; dy < 2; ++dy)
                                for (int dz = 0; dz < 2; ++dz) {
                                  const double gy =
                                      self->grad[((static_cast<std::size_t>(co) * OX + 2 * ix + dx) * OY +
                                                  2 * iy + dy) * OZ + 2 * iz + dz];
                                  if (gx) acc += gy * wn->value[widx(ci, co, dx, dy, dz)];
                                  if (gw) gw[widx(ci, co, dx, dy, dz)] += gy * xv;
                                }
                          if (gx) gx[xi] += acc;
                        }
                  if (bn && bn->needs_grad) {
                    double* gb = bn->grad_data();
                    const std::size_t plane = static_cast<std::size_t>(OX) * OY * OZ;
                    for (int co = 0; co < Co; ++co)
                      for (std::size_t i = 0; i < plane; ++i) gb[co] += self->grad[co * plane + i];
                  }
                });
}

Tensor crop2d(const Tensor& x, int out_h, int out_w) {
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (out_h > H || out_w > W) throw std::invalid_argument("crop2d: target larger than input");
  if (out_h == H && out_w == W) return x;
  auto n = make_node({C, out_h, out_w});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < out_h; ++i)
      std::copy_n(x.data() + (static_cast<std::size_t>(c) * H + i) * W, out_w,
                  n->value.data() + (static_cast<std::size_t>(c) * out_h + i) * out_w);
  Node* self = n.get();
  auto xn = x.node();
  return finish(std::move(n), {x}, [self, xn, C, H, W, out_h, out_w] {
    double* g = xn->grad_data();
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < out_h; ++i)
        for (int j = 0; j < out_w; ++j)
          g[(static_cast<std::size_t>(c) * H + i) * W + j] +=
              self->grad[(static_cast<std::size_t>(c) * out_h + i) * out_w + j];
  });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  const int N = x.dim(0), C = x.dim(1);
  if (s.dim(0) != N) throw std::invalid_argument("scale_rows: row count mismatch");
  auto n = make_node({N, C});
  for (int i = 0; i < N; ++i)
    for (int c = 0; c < C; ++c)
      n->value[static_cast<std::size_t>(i) * C + c] = x.data()[static_cast<std::size_t>(i) * C + c] * s.data()[i];
  Node* self = n.get();
  auto xn = x.node(), sn = s.node();
  return finish(std::move(n), {x, s}, [self, xn, sn, N, C] {
    for (int i = 0; i < N; ++i) {
      if (xn->needs_grad) {
        double* g = xn->grad_data();
        for (int c = 0; c < C; ++c)
          g[static_cast<std::size_t>(i) * C + c] += self->grad[static_cast<std::size_t>(i) * C + c] * sn->value[i];
      }
      if (sn->needs_grad) {
        double acc = 0;
        for (int c = 0; c < C; ++c)
          acc += self->grad[static_cast<std::size_t>(i) * C + c] * xn->value[static_cast<std::size_t>(i) * C + c];
        sn->grad_data()[i] += acc;
      }
    }
  });
}

Tensor slice_cols(const Tensor& x, int begin, int len) {
  const int N = x.dim(0), C = x.dim(1);
  if (begin < 0 || begin + len > C) throw std::invalid_argument("slice_cols: out of range");
  auto n = make_node({N, len});
  for (int i = 0; i < N; ++i)
    std::copy_n(x.data() + static_cast<std::size_t>(i) * C + begin, len,
                n->value.data() + static_cast<std::size_t>(i) * len);
  Node* self = n.get();
  auto xn = x.node();
  return finish(std::move(n), {x}, [self, xn, N, C, begin, len] {
    double* g = xn->grad_data();
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < len; ++j)
        g[static_cast<std::size_t>(i) * C + begin + j] += self->grad[static_cast<std::size_t>(i) * len + j];
  });
}

// ---------------------------------------------------------- geometry-coupled

Tensor project_points(const Tensor& pts, const CameraModel& cam, double z_near,
                      std::vector<std::uint8_t>* valid_out) {
  const int N = pts.dim(0);
  auto n = make_node({N, 2});
  std::vector<std::uint8_t> valid(N, 0);
  std::vector<double> pc_store(static_cast<std::size_t>(N) * 3);
  for (int i = 0; i < N; ++i) {
    const Vec3 p{pts.data()[i * 3], pts.data()[i * 3 + 1], pts.data()[i * 3 + 2]};
    const Vec3 pc = cam.rotation.apply(p) + cam.translation;
    pc_store[i * 3] = pc.x;
    pc_store[i * 3 + 1] = pc.y;
    pc_store[i * 3 + 2] = pc.z;
    if (pc.z <= z_near) continue;
    const double u = cam.fx * pc.x / pc.z + cam.cx;
    const double v = cam.fy * pc.y / pc.z + cam.cy;
    if (u >= -1.0 && u <= cam.image_width && v >= -1.0 && v <= cam.image_height) {
      valid[i] = 1;
      n->value[i * 2] = u;
      n->value[i * 2 + 1] = v;
    }
  }
  if (valid_out) *valid_out = valid;
  Node* self = n.get();
  auto pn = pts.node();
  return finish(std::move(n), {pts},
                [self, pn, cam, valid = std::move(valid), pc_store = std::move(pc_store)] {
                  const int N = pn->shape[0];
                  double* g = pn->grad_data();
                  for (int i = 0; i < N; ++i) {
                    if (!valid[i]) continue;
                    const double x = pc_store[i * 3], y = pc_store[i * 3 + 1],
                                 z = pc_store[i * 3 + 2];
                    const double gu = self->grad[i * 2], gv = self->grad[i * 2 + 1];
                    // d(u,v)/d(camera-frame point), then back through R.
                    const Vec3 dpc{gu * cam.fx / z, gv * cam.fy / z,
                                   -(gu * cam.fx * x + gv * cam.fy * y) / (z * z)};
                    const Vec3 dp = cam.rotation.apply_transposed(dpc);
                    g[i * 3] += dp.x;
                    g[i * 3 + 1] += dp.y;
                    g[i * 3 + 2] += dp.z;
                  }
                });
}

Tensor bilinear_gather(const Tensor& fmap, const Tensor& coords,
                       const std::vector<std::uint8_t>& valid, int stride) {
  const int C = fmap.dim(0), H = fmap.dim(1), W = fmap.dim(2);
  const int N = coords.dim(0);
  auto n = make_node({N, C});
  std::vector<BilinearTaps> taps(N);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int i = 0; i < N; ++i) {
    if (!valid[i]) continue;
    taps[i] = bilinear_taps(H, W, coords.data()[i * 2], coords.data()[i * 2 + 1], stride);
    const auto& t = taps[i];
    for (int c = 0; c < C; ++c) {
      const double* f = fmap.data() + c * plane;
      const double a = f[t.i0 * W + t.j0] * (1 - t.wj) + f[t.i0 * W + t.j1] * t.wj;
      const double b2 = f[t.i1 * W + t.j0] * (1 - t.wj) + f[t.i1 * W + t.j1] * t.wj;
      n->value[static_cast<std::size_t>(i) * C + c] = a * (1 - t.wi) + b2 * t.wi;
    }
  }
  Node* self = n.get();
  auto fn = fmap.node(), cn = coords.node();
  return finish(std::move(n), {fmap, coords},
                [self, fn, cn, C, H, W, N, plane, valid, taps = std::move(taps)] {
                  double* gf = fn->needs_grad ? fn->grad_data() : nullptr;
                  double* gc = cn->needs_grad ? cn->grad_data() : nullptr;
                  for (int i = 0; i < N; ++i) {
                    if (!valid[i]) continue;
                    const auto& t = taps[i];
                    double du = 0, dv = 0;
                    for (int c = 0; c < C; ++c) {
                      const double gy = self->grad[static_cast<std::size_t>(i) * C + c];
                      if (gy == 0) continue;
                      const double* f = fn->value.data() + c * plane;
                      if (gf) {
                        double* gp = gf + c * plane;
                        gp[t.i0 * W + t.j0] += gy * (1 - t.wi) * (1 - t.wj);
                        gp[t.i0 * W + t.j1] += gy * (1 - t.wi) * t.wj;
                        gp[t.i1 * W + t.j0] += gy * t.wi * (1 - t.wj);
                        gp[t.i1 * W + t.j1] += gy * t.wi * t.wj;
                      }
                      if (gc) {
                        const double d_dgx = (f[t.i0 * W + t.j1] - f[t.i0 * W + t.j0]) * (1 - t.wi) +
                                             (f[t.i1 * W + t.j1] - f[t.i1 * W + t.j0]) * t.wi;
                        const double d_dgy = (f[t.i1 * W + t.j0] - f[t.i0 * W + t.j0]) * (1 - t.wj) +
                                             (f[t.i1 * W + t.j1] - f[t.i0 * W + t.j1]) * t.wj;
                        du += gy * d_dgx * t.dgu;
                        dv += gy * d_dgy * t.dgv;
                      }
                    }
                    if (gc) {
                      gc[i * 2] += du;
                      gc[i * 2 + 1] += dv;
                    }
                  }
                });
}

// --------------------------------------------------------- tracker primitives

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  const int C = x.dim(1);
  const int P = static_cast<int>(idx.size());
  auto n = make_node({P, C});
  for (int i = 0; i < P; ++i)
    std::copy_n(x.data() + static_cast<std::size_t>(idx[i]) * C, C,
                n->value.data() + static_cast<std::size_t>(i) * C);
  Node* self = n.get();
  auto xn = x.node();
  return finish(std::move(n), {x}, [self, xn, idx, C, P] {
    double* g = xn->grad_data();
    for (int i = 0; i < P; ++i)
      for (int c = 0; c < C; ++c)
        g[static_cast<std::size_t>(idx[i]) * C + c] += self->grad[static_cast<std::size_t>(i) * C + c];
  });
}

Tensor scatter_rows(const Tensor& x, const std::vector<int>& idx, int v) {
  const int C = x.dim(1);
  const int P = static_cast<int>(idx.size());
  auto n = make_node({v, C});
  for (int i = 0; i < P; ++i)
    std::copy_n(x.data() + static_cast<std::size_t>(i) * C, C,
                n->value.data() + static_cast<std::size_t>(idx[i]) * C);
  Node* self = n.get();
  auto xn = x.node();
  return finish(std::move(n), {x}, [self, xn, idx, C, P] {
    double* g = xn->grad_data();
    for (int i = 0; i < P; ++i)
      for (int c = 0; c < C; ++c)
        g[static_cast<std::size_t>(i) * C + c] += self->grad[static_cast<std::size_t>(idx[i]) * C + c];
  });
}

Tensor rowwise_cosine(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "rowwise_cosine");
  const int P = a.dim(0), C = a.dim(1);
  auto n = make_node({P});
  std::vector<double> na(P), nb(P);
  for (int i = 0; i < P; ++i) {
    const double* ar = a.data() + static_cast<std::size_t>(i) * C;
    const double* br = b.data() + static_cast<std::size_t>(i) * C;
    double saa = 0, sbb = 0, sab = 0;
    for (int c = 0; c < C; ++c) {
      saa += ar[c] * ar[c];
      sbb += br[c] * br[c];
      sab += ar[c] * br[c];
    }
    na[i] = std::sqrt(saa);
    nb[i] = std::sqrt(sbb);
    // Zero-norm features define similarity 0.
    n->value[i] = (na[i] > 0 && nb[i] > 0) ? sab / (na[i] * nb[i]) : 0.0;
  }
  Node* self = n.get();
  auto an = a.node(), bn = b.node();
  return finish(std::move(n), {a, b},
                [self, an, bn, P, C, na = std::move(na), nb = std::move(nb)] {
                  for (int i = 0; i < P; ++i) {
                    const double gy = self->grad[i];
                    if (gy == 0 || na[i] == 0 || nb[i] == 0) continue;
                    const double s = self->value[i];
                    const double* ar = an->value.data() + static_cast<std::size_t>(i) * C;
                    const double* br = bn->value.data() + static_cast<std::size_t>(i) * C;
                    if (an->needs_grad) {
                      double* g = an->grad_data() + static_cast<std::size_t>(i) * C;
                      for (int c = 0; c < C; ++c)
                        g[c] += gy * (br[c] / (na[i] * nb[i]) - s * ar[c] / (na[i] * na[i]));
                    }
                    if (bn->needs_grad) {
                      double* g = bn->grad_data() + static_cast<std::size_t>(i) * C;
                      for (int c = 0; c < C; ++c)
                        g[c] += gy * (ar[c] / (na[i] * nb[i]) - s * br[c] / (nb[i] * nb[i]));
                    }
                  }
                });
}

Tensor segmented_softmax(const Tensor& scores, const std::vector<int>& segments,
                         const Tensor& tau) {
  const int P = scores.dim(0);
  const int S = static_cast<int>(segments.size()) - 1;
  if (segments.front() != 0 || segments.back() != P)
    throw std::invalid_argument("segmented_softmax: bad segment offsets");
  const double tv = tau.item();
  auto n = make_node({P});
  for (int r = 0; r < S; ++r) {
    const int b = segments[r], e = segments[r + 1];
    if (b == e) throw std::invalid_argument("segmented_softmax: empty segment");
    double mx = -1e300;
    for (int j = b; j < e; ++j) mx = std::max(mx, tv * scores.data()[j]);
    double z = 0;
    for (int j = b; j < e; ++j) {
      n->value[j] = std::exp(tv * scores.data()[j] - mx);
      z += n->value[j];
    }
    for (int j = b; j < e; ++j) n->value[j] /= z;
  }
  Node* self = n.get();
  auto sn = scores.node(), tn = tau.node();
  return finish(std::move(n), {scores, tau}, [self, sn, tn, segments, S, tv] {
    for (int r = 0; r < S; ++r) {
      const int b = segments[r], e = segments[r + 1];
      double dot = 0;
      for (int j = b; j < e; ++j) dot += self->grad[j] * self->value[j];
      for (int j = b; j < e; ++j) {
        const double dz = self->value[j] * (self->grad[j] - dot);
        if (sn->needs_grad) sn->grad_data()[j] += tv * dz;
        if (tn->needs_grad) tn->grad_data()[0] += sn->value[j] * dz;
      }
    }
  });
}

Tensor segment_expect(const Tensor& probs, const std::vector<double>& tgt,
                      const std::vector<double>& src, const std::vector<int>& segments) {
  const int P = probs.dim(0);
  const int S = static_cast<int>(segments.size()) - 1;
  if (static_cast<int>(tgt.size()) != P * 3 || static_cast<int>(src.size()) != S * 3)
    throw std::invalid_argument("segment_expect: coordinate size mismatch");
  auto n = make_node({S, 3});
  for (int r = 0; r < S; ++r) {
    double e[3] = {0, 0, 0};
    for (int j = segments[r]; j < segments[r + 1]; ++j)
      for (int a = 0; a < 3; ++a) e[a] += probs.data()[j] * tgt[static_cast<std::size_t>(j) * 3 + a];
    for (int a = 0; a < 3; ++a) n->value[static_cast<std::size_t>(r) * 3 + a] = e[a] - src[static_cast<std::size_t>(r) * 3 + a];
  }
  Node* self = n.get();
  auto pn = probs.node();
  return finish(std::move(n), {probs}, [self, pn, tgt, segments, S] {
    double* g = pn->grad_data();
    for (int r = 0; r < S; ++r)
      for (int j = segments[r]; j < segments[r + 1]; ++j)
        for (int a = 0; a < 3; ++a)
          g[j] += self->grad[static_cast<std::size_t>(r) * 3 + a] * tgt[static_cast<std::size_t>(j) * 3 + a];
  });
}

Tensor rows_l2_mean(const Tensor& x) {
  const int V = x.dim(0), C = x.dim(1);
  auto n = make_node({1});
  std::vector<double> norms(V);
  double s = 0;
  for (int i = 0; i < V; ++i) {
    double q = 0;
    for (int c = 0; c < C; ++c) {
      const double v = x.data()[static_cast<std::size_t>(i) * C + c];
      q += v * v;
    }
    norms[i] = std::sqrt(q);
    s += norms[i];
  }
  n->value[0] = s / V;
  Node* self = n.get();
  auto xn = x.node();
  return finish(std::move(n), {x}, [self, xn, V, C, norms = std::move(norms)] {
    const double gy = self->grad[0] / V;
    double* g = xn->grad_data();
    for (int i = 0; i < V; ++i) {
      if (norms[i] == 0) continue;  // subgradient at exactly zero rows
      for (int c = 0; c < C; ++c)
        g[static_cast<std::size_t>(i) * C + c] +=
            gy * xn->value[static_cast<std::size_t>(i) * C + c] / norms[i];
    }
  });
}

}  // namespace odt
