#include "msfr/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace msfr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                                shape_str(t.shape()));
  }
}

struct ConvGeometry {
  int n, c, h, w;
  int out_c, kh, kw;
  int out_h, out_w;
  int stride, pad;

  int patch() const { return c * kh * kw; }
  int pixels() const { return out_h * out_w; }
  bool is_pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, int stride, int padding) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  if (input.dim(1) != weight.dim(1)) {
    throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) + " has " +
                                std::to_string(input.dim(1)) + " channels but weight " +
                                shape_str(weight.shape()) + " expects " + std::to_string(weight.dim(1)));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0), weight.dim(2),
                 weight.dim(3), 0, 0, stride, padding};
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
    throw std::invalid_argument("conv2d: input " + shape_str(input.shape()) + " smaller than kernel " +
                                shape_str(weight.shape()) + " after padding " + std::to_string(padding));
  }
  g.out_h = conv_out_extent(g.h, g.kh, stride, padding);
  g.out_w = conv_out_extent(g.w, g.kw, stride, padding);
  return g;
}

// cols is (C*kh*kw) x (outH*outW), row-major.
void im2col(const double* img, const ConvGeometry& g, double* cols) {
  const int pixels = g.pixels();
  for (int c = 0; c < g.c; ++c) {
    const double* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        double* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * pixels;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + i;
          double* dst = row + static_cast<std::size_t>(oy) * g.out_w;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + j;
            dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const ConvGeometry& g, double* img) {
  const int pixels = g.pixels();
  for (int c = 0; c < g.c; ++c) {
    double* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
    for (int i = 0; i < g.kh; ++i) {
      for (int j = 0; j < g.kw; ++j) {
        const double* row = cols + static_cast<std::size_t>((c * g.kh + i) * g.kw + j) * pixels;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + i;
          if (iy < 0 || iy >= g.h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * g.out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + j;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

ConvLayerParams::ConvLayerParams(const std::string& name, int in_channels, int out_channels, int kernel,
                                 int stride_, int padding_)
    : weight(name + ".weight", Tensor({out_channels, in_channels, kernel, kernel})),
      bias(name + ".bias", Tensor({out_channels})),
      stride(stride_),
      padding(padding_) {}

FcLayerParams::FcLayerParams(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", Tensor({in_features, out_features})), bias(name + ".bias", Tensor({out_features})) {}

void glorot_uniform(Tensor& t, int fan_in, int fan_out, Rng& rng) {
  const double half = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data()) v = rng.uniform(-half, half);
}

void init_conv(ConvLayerParams& p, Rng& rng) {
  const int k = p.kernel_h() * p.kernel_w();
  glorot_uniform(p.weight.value, p.in_channels() * k, p.out_channels() * k, rng);
  p.bias.value.fill(0.0);
}

void init_fc(FcLayerParams& p, Rng& rng) {
  glorot_uniform(p.weight.value, p.in_features(), p.out_features(), rng);
  p.bias.value.fill(0.0);
}

int conv_out_extent(int in, int kernel, int stride, int padding) { return (in + 2 * padding - kernel) / stride + 1; }

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  if (bias.size() != static_cast<std::size_t>(g.out_c)) {
    throw std::invalid_argument("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                                shape_str(weight.shape()));
  }
  Tensor out({g.n, g.out_c, g.out_h, g.out_w});
  CMapMat wmat(weight.ptr(), g.out_c, g.patch());
  std::vector<double> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.patch()) * g.pixels());
  const std::size_t in_stride = static_cast<std::size_t>(g.c) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_c) * g.pixels();
  for (int n = 0; n < g.n; ++n) {
    const double* src = input.ptr() + n * in_stride;
    if (!g.is_pointwise()) {
      im2col(src, g, cols.data());
      src = cols.data();
    }
    MapMat omat(out.ptr() + n * out_stride, g.out_c, g.pixels());
    omat.noalias() = wmat * CMapMat(src, g.patch(), g.pixels());
    for (int o = 0; o < g.out_c; ++o) omat.row(o).array() += bias[o];
  }
  return out;
}

Tensor conv2d(const Tensor& input, const ConvLayerParams& p) {
  return conv2d(input, p.weight.value, p.bias.value, p.stride, p.padding);
}

ConvGrads conv2d_backward(const Tensor& input, const Tensor& weight, int stride, int padding,
                          const Tensor& grad_out) {
  const ConvGeometry g = conv_geometry(input, weight, stride, padding);
  const Shape expected{g.n, g.out_c, g.out_h, g.out_w};
  if (grad_out.shape() != expected) {
    throw std::invalid_argument("conv2d_backward: grad " + shape_str(grad_out.shape()) + " vs output " +
                                shape_str(expected));
  }
  ConvGrads grads{Tensor(input.shape()), Tensor(weight.shape()), Tensor({g.out_c})};
  CMapMat wmat(weight.ptr(), g.out_c, g.patch());
  MapMat dw(grads.weight.ptr(), g.out_c, g.patch());
  std::vector<double> cols(g.is_pointwise() ? 0 : static_cast<std::size_t>(g.patch()) * g.pixels());
  std::vector<double> dcols(cols.size());
  const std::size_t in_stride = static_cast<std::size_t>(g.c) * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(g.out_c) * g.pixels();
  for (int n = 0; n < g.n; ++n) {
    CMapMat dy(grad_out.ptr() + n * out_stride, g.out_c, g.pixels());
    const double* src = input.ptr() + n * in_stride;
    if (!g.is_pointwise()) {
      im2col(src, g, cols.data());
      src = cols.data();
    }
    dw.noalias() += dy * CMapMat(src, g.patch(), g.pixels()).transpose();
    for (int o = 0; o < g.out_c; ++o) grads.bias[o] += dy.row(o).sum();
    double* dx = grads.input.ptr() + n * in_stride;
    if (g.is_pointwise()) {
      MapMat(dx, g.c, g.pixels()).noalias() = wmat.transpose() * dy;
    } else {
      MapMat(dcols.data(), g.patch(), g.pixels()).noalias() = wmat.transpose() * dy;
      col2im(dcols.data(), g, dx);
    }
  }
  return grads;
}

Tensor conv2d_backward(const Tensor& input, ConvLayerParams& p, const Tensor& grad_out) {
  ConvGrads g = conv2d_backward(input, p.weight.value, p.stride, p.padding, grad_out);
  p.weight.grad += g.weight;
  p.bias.grad += g.bias;
  return std::move(g.input);
}

PoolResult maxpool2d(const Tensor& input, int window, int stride) {
  require_rank(input, 4, "maxpool2d input");
  if (window < 1 || stride < 1) throw std::invalid_argument("maxpool2d: window and stride must be positive");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (window > h || window > w) {
    throw std::invalid_argument("maxpool2d: window " + std::to_string(window) + " larger than input " +
                                shape_str(input.shape()));
  }
  const int oh = (h - window) / stride + 1;
  const int ow = (w - window) / stride + 1;
  PoolResult r{Tensor({n, c, oh, ow}), std::vector<std::size_t>(static_cast<std::size_t>(n) * c * oh * ow)};
  std::size_t o = 0;
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x, ++o) {
          std::size_t best = input.offset(b, ch, y * stride, x * stride);
          double best_v = input[best];
          for (int i = 0; i < window; ++i) {
            for (int j = 0; j < window; ++j) {
              const std::size_t idx = input.offset(b, ch, y * stride + i, x * stride + j);
              if (input[idx] > best_v) {
                best_v = input[idx];
                best = idx;
              }
            }
          }
          r.output[o] = best_v;
          r.argmax[o] = best;
        }
      }
    }
  }
  return r;
}

Tensor maxpool2d_backward(const Shape& input_shape, std::span<const std::size_t> argmax, const Tensor& grad_out) {
  if (argmax.size() != grad_out.size()) throw std::invalid_argument("maxpool2d_backward: argmax/grad size mismatch");
  Tensor dx(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) dx[argmax[i]] += grad_out[i];
  return dx;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require_same_shape(input, grad_out, "relu_backward");
  Tensor dx = grad_out;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(input[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

void relu_backward_inplace(const Tensor& output, Tensor& grad) {
  require_same_shape(output, grad, "relu_backward");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > 0.0)) grad[i] = 0.0;
  }
}

Tensor fully_connected(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "fully_connected input");
  require_rank(weight, 2, "fully_connected weight");
  if (input.dim(1) != weight.dim(0) || bias.size() != static_cast<std::size_t>(weight.dim(1))) {
    throw std::invalid_argument("fully_connected: input " + shape_str(input.shape()) + " incompatible with weight " +
                                shape_str(weight.shape()) + " / bias " + shape_str(bias.shape()));
  }
  const int n = input.dim(0), d = input.dim(1), m = weight.dim(1);
  Tensor out({n, m});
  if (n == 0) return out;
  MapMat y(out.ptr(), n, m);
  y.noalias() = CMapMat(input.ptr(), n, d) * CMapMat(weight.ptr(), d, m);
  y.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.ptr(), m);
  return out;
}

Tensor fully_connected(const Tensor& input, const FcLayerParams& p) {
  return fully_connected(input, p.weight.value, p.bias.value);
}

FcGrads fully_connected_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out) {
  const int n = input.dim(0), d = input.dim(1), m = weight.dim(1);
  if (grad_out.shape() != Shape{n, m}) {
    throw std::invalid_argument("fully_connected_backward: grad " + shape_str(grad_out.shape()) +
                                " does not match output [" + std::to_string(n) + "x" + std::to_string(m) + "]");
  }
  FcGrads g{Tensor(input.shape()), Tensor(weight.shape()), Tensor({m})};
  if (n == 0) return g;
  CMapMat dy(grad_out.ptr(), n, m);
  CMapMat x(input.ptr(), n, d);
  CMapMat w(weight.ptr(), d, m);
  MapMat(g.input.ptr(), n, d).noalias() = dy * w.transpose();
  MapMat(g.weight.ptr(), d, m).noalias() = x.transpose() * dy;
  Eigen::Map<Eigen::RowVectorXd>(g.bias.ptr(), m) = dy.colwise().sum();
  return g;
}

Tensor fully_connected_backward(const Tensor& input, FcLayerParams& p, const Tensor& grad_out) {
  FcGrads g = fully_connected_backward(input, p.weight.value, grad_out);
  p.weight.grad += g.weight;
  p.bias.grad += g.bias;
  return std::move(g.input);
}

Tensor softmax_rows(const Tensor& logits) {
  require_rank(logits, 2, "softmax logits");
  const int n = logits.dim(0), k = logits.dim(1);
  Tensor probs(logits.shape());
  for (int i = 0; i < n; ++i) {
    const double* row = logits.ptr() + static_cast<std::size_t>(i) * k;
    double* p = probs.ptr() + static_cast<std::size_t>(i) * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      p[j] = std::exp(row[j] - mx);
      sum += p[j];
    }
    for (int j = 0; j < k; ++j) p[j] /= sum;
  }
  return probs;
}

SoftmaxXent softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy logits");
  const int n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                                shape_str(logits.shape()));
  }
  SoftmaxXent r{0.0, softmax_rows(logits)};
  if (n == 0) return r;
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) + " at row " +
                                  std::to_string(i) + " outside [0," + std::to_string(k) + ")");
    }
    // log-sum-exp form keeps saturated logits exact
    const double* row = logits.ptr() + static_cast<std::size_t>(i) * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    total += mx + std::log(sum) - row[y];
  }
  r.loss = total / n;
  return r;
}

Tensor softmax_cross_entropy_backward(const SoftmaxXent& fwd, std::span<const int> labels, double scale) {
  Tensor d = fwd.probs;
  const int n = d.rank() == 2 ? d.dim(0) : 0;
  if (n == 0) return d;
  const int k = d.dim(1);
  for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i) * k + labels[static_cast<std::size_t>(i)]] -= 1.0;
  d *= scale / n;
  return d;
}

double smooth_l1(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  require_same_shape(pred, target, "smooth_l1 pred/target");
  require_same_shape(pred, mask, "smooth_l1 pred/mask");
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double d = pred[i] - target[i];
    const double a = std::abs(d);
    total += mask[i] * (a < 1.0 ? 0.5 * d * d : a - 0.5);
  }
  return total;
}

Tensor smooth_l1_backward(const Tensor& pred, const Tensor& target, const Tensor& mask, double scale) {
  require_same_shape(pred, target, "smooth_l1 pred/target");
  require_same_shape(pred, mask, "smooth_l1 pred/mask");
  Tensor g(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double d = pred[i] - target[i];
    const double slope = std::abs(d) < 1.0 ? d : (d > 0.0 ? 1.0 : -1.0);
    g[i] = scale * mask[i] * slope;
  }
  return g;
}

}  // namespace msfr
