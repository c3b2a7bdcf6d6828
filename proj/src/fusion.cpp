#include "msfr/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace msfr {

L2NormScaleLayer::L2NormScaleLayer(const std::string& name, int channels, double gamma_init, double eps)
    : gamma(name + ".gamma", Tensor({channels}, gamma_init)), epsilon(eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("L2NormScaleLayer: epsilon must be positive");
}

namespace {

// sqrt(sum x^2 + eps^2), scaled by the largest magnitude so that a single
// nonzero channel normalizes to exactly +-1.
double channel_norm(const double* x, int c, std::size_t hw, std::size_t p, double epsilon) {
  double m = epsilon;
  for (int ch = 0; ch < c; ++ch) m = std::max(m, std::abs(x[ch * hw + p]));
  if (m == 0.0) return 0.0;
  const double e = epsilon / m;
  double sq = e * e;
  for (int ch = 0; ch < c; ++ch) {
    const double v = x[ch * hw + p] / m;
    sq += v * v;
  }
  return m * std::sqrt(sq);
}

}  // namespace

Tensor l2norm_scale(const Tensor& map, const Tensor& gamma, double epsilon) {
  if (map.rank() != 4) throw std::invalid_argument("l2norm_scale: expected N x C x H x W, got " + shape_str(map.shape()));
  const int n = map.dim(0), c = map.dim(1);
  const std::size_t hw = static_cast<std::size_t>(map.dim(2)) * map.dim(3);
  if (gamma.size() != static_cast<std::size_t>(c)) {
    throw std::invalid_argument("l2norm_scale: gamma " + shape_str(gamma.shape()) + " does not match map " +
                                shape_str(map.shape()));
  }
  Tensor out(map.shape());
  for (int b = 0; b < n; ++b) {
    const double* x = map.ptr() + static_cast<std::size_t>(b) * c * hw;
    double* y = out.ptr() + static_cast<std::size_t>(b) * c * hw;
    for (std::size_t p = 0; p < hw; ++p) {
      const double s = channel_norm(x, c, hw, p, epsilon);
      for (int ch = 0; ch < c; ++ch) y[ch * hw + p] = gamma[ch] * (x[ch * hw + p] / s);
    }
  }
  return out;
}

Tensor l2norm_scale(const Tensor& map, const L2NormScaleLayer& layer) {
  return l2norm_scale(map, layer.gamma.value, layer.epsilon);
}

L2NormGrads l2norm_scale_backward(const Tensor& map, const Tensor& gamma, double epsilon, const Tensor& grad_out) {
  require_same_shape(map, grad_out, "l2norm_scale_backward");
  const int n = map.dim(0), c = map.dim(1);
  const std::size_t hw = static_cast<std::size_t>(map.dim(2)) * map.dim(3);
  L2NormGrads g{Tensor(map.shape()), Tensor(gamma.shape())};
  for (int b = 0; b < n; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * c * hw;
    const double* x = map.ptr() + base;
    const double* dy = grad_out.ptr() + base;
    double* dx = g.input.ptr() + base;
    for (std::size_t p = 0; p < hw; ++p) {
      const double s = channel_norm(x, c, hw, p, epsilon);
      // dn = dy * gamma; dx = dn / s - x (dn . x) / s^3
      double dot = 0.0;
      for (int ch = 0; ch < c; ++ch) {
        const double xn = x[ch * hw + p] / s;
        g.gamma[ch] += dy[ch * hw + p] * xn;
        dot += dy[ch * hw + p] * gamma[ch] * x[ch * hw + p];
      }
      const double s3 = s * s * s;
      for (int ch = 0; ch < c; ++ch) {
        dx[ch * hw + p] = dy[ch * hw + p] * gamma[ch] / s - x[ch * hw + p] * dot / s3;
      }
    }
  }
  return g;
}

Tensor l2norm_scale_backward(const Tensor& map, L2NormScaleLayer& layer, const Tensor& grad_out) {
  L2NormGrads g = l2norm_scale_backward(map, layer.gamma.value, layer.epsilon, grad_out);
  layer.gamma.grad += g.gamma;
  return std::move(g.input);
}

PoolResult sync_downsample(const FeatureTap& tap, int target_stride) {
  if (target_stride < tap.cumulative_stride || target_stride % tap.cumulative_stride != 0) {
    throw std::invalid_argument("sync_downsample: target stride " + std::to_string(target_stride) +
                                " is not a multiple of " + tap.name + " stride " +
                                std::to_string(tap.cumulative_stride));
  }
  const int ratio = target_stride / tap.cumulative_stride;
  if (ratio == 1) {
    PoolResult r{tap.map, std::vector<std::size_t>(tap.map.size())};
    std::iota(r.argmax.begin(), r.argmax.end(), std::size_t{0});
    return r;
  }
  return maxpool2d(tap.map, ratio, ratio);
}

Tensor concat_channels(std::span<const Tensor> maps, std::span<const std::string> names) {
  if (maps.empty()) throw std::invalid_argument("concat_channels: no inputs");
  auto label = [&](std::size_t i) { return i < names.size() ? names[i] : "input " + std::to_string(i); };
  const Tensor& first = maps.front();
  int total_c = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const Tensor& m = maps[i];
    if (m.rank() != 4 || m.dim(0) != first.dim(0) || m.dim(2) != first.dim(2) || m.dim(3) != first.dim(3)) {
      throw std::invalid_argument("concat_channels: " + label(i) + " " + shape_str(m.shape()) +
                                  " does not match " + label(0) + " " + shape_str(first.shape()) +
                                  " in batch/spatial extent");
    }
    total_c += m.dim(1);
  }
  const int n = first.dim(0);
  const std::size_t hw = static_cast<std::size_t>(first.dim(2)) * first.dim(3);
  Tensor out({n, total_c, first.dim(2), first.dim(3)});
  for (int b = 0; b < n; ++b) {
    double* dst = out.ptr() + static_cast<std::size_t>(b) * total_c * hw;
    for (const Tensor& m : maps) {
      const std::size_t chunk = static_cast<std::size_t>(m.dim(1)) * hw;
      std::copy_n(m.ptr() + b * chunk, chunk, dst);
      dst += chunk;
    }
  }
  return out;
}

std::vector<Tensor> split_channels(const Tensor& grad, std::span<const Tensor> like) {
  std::vector<Tensor> out;
  out.reserve(like.size());
  for (const Tensor& m : like) out.emplace_back(m.shape());
  const int n = grad.dim(0);
  const std::size_t hw = static_cast<std::size_t>(grad.dim(2)) * grad.dim(3);
  const std::size_t total = static_cast<std::size_t>(grad.dim(1)) * hw;
  for (int b = 0; b < n; ++b) {
    const double* src = grad.ptr() + b * total;
    for (Tensor& t : out) {
      const std::size_t chunk = static_cast<std::size_t>(t.dim(1)) * hw;
      std::copy_n(src, chunk, t.ptr() + b * chunk);
      src += chunk;
    }
  }
  return out;
}

Tensor concat_shrink(std::span<const Tensor> maps, const ConvLayerParams& shrink, std::span<const std::string> names) {
  return conv2d(concat_channels(maps, names), shrink);
}

std::vector<Tensor> concat_shrink_backward(std::span<const Tensor> maps, ConvLayerParams& shrink,
                                           const Tensor& grad_out) {
  const Tensor concat = concat_channels(maps);
  return split_channels(conv2d_backward(concat, shrink, grad_out), maps);
}

std::vector<std::pair<int, int>> roi_bins(int start, int length, int bins) {
  if (length < 1 || bins < 1) throw std::invalid_argument("roi_bins: length and bins must be positive");
  std::vector<std::pair<int, int>> r(static_cast<std::size_t>(bins));
  // boundary i = round(i * length / bins), halves rounded up
  auto boundary = [&](int i) { return start + (2 * i * length + bins) / (2 * bins); };
  for (int i = 0; i < bins; ++i) r[i] = {boundary(i), boundary(i + 1)};
  std::vector<std::pair<int, int>> filled = r;
  for (int i = 0; i < bins; ++i) {
    if (r[i].second > r[i].first) continue;
    for (int d = 1; d < bins; ++d) {
      if (i - d >= 0 && r[i - d].second > r[i - d].first) {
        filled[i] = r[i - d];
        break;
      }
      if (i + d < bins && r[i + d].second > r[i + d].first) {
        filled[i] = r[i + d];
        break;
      }
    }
  }
  return filled;
}

GridRect roi_window(const BBox& roi, int stride, int map_h, int map_w) {
  GridRect g = project_roi(roi, stride);
  g.x1 = std::clamp(g.x1, 0, map_w - 1);
  g.y1 = std::clamp(g.y1, 0, map_h - 1);
  g.x2 = std::clamp(g.x2, g.x1 + 1, map_w);
  g.y2 = std::clamp(g.y2, g.y1 + 1, map_h);
  return g;
}

namespace {

// Pools one ROI from batch item 0 of `map` into `out` (C x P x P, contiguous).
void roi_pool_into(const Tensor& map, const BBox& roi, int stride, int pool, double* out, std::size_t* argmax) {
  const int c = map.dim(1), h = map.dim(2), w = map.dim(3);
  const GridRect g = roi_window(roi, stride, h, w);
  const auto ybins = roi_bins(g.y1, g.height(), pool);
  const auto xbins = roi_bins(g.x1, g.width(), pool);
  std::size_t o = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int py = 0; py < pool; ++py) {
      for (int px = 0; px < pool; ++px, ++o) {
        std::size_t best = map.offset(0, ch, ybins[py].first, xbins[px].first);
        double best_v = map[best];
        for (int y = ybins[py].first; y < ybins[py].second; ++y) {
          for (int x = xbins[px].first; x < xbins[px].second; ++x) {
            const std::size_t idx = map.offset(0, ch, y, x);
            if (map[idx] > best_v) {
              best_v = map[idx];
              best = idx;
            }
          }
        }
        out[o] = best_v;
        argmax[o] = best;
      }
    }
  }
}

}  // namespace

RoiPoolResult roi_pool(const Tensor& map, const BBox& roi, int stride, int pool_size) {
  if (map.rank() != 4 || map.dim(0) < 1) throw std::invalid_argument("roi_pool: expected 1 x C x H x W map");
  if (pool_size < 1) throw std::invalid_argument("roi_pool: pool size must be positive");
  const int c = map.dim(1);
  RoiPoolResult r{Tensor({c, pool_size, pool_size}),
                  std::vector<std::size_t>(static_cast<std::size_t>(c) * pool_size * pool_size)};
  roi_pool_into(map, roi, stride, pool_size, r.output.ptr(), r.argmax.data());
  return r;
}

void roi_pool_backward(std::span<const std::size_t> argmax, const Tensor& grad_out, Tensor& grad_map,
                       std::size_t out_offset) {
  for (std::size_t i = 0; i < argmax.size(); ++i) grad_map[argmax[i]] += grad_out[out_offset + i];
}

Tensor ms_roi_pool(const FeatureTapSet& taps, std::span<const BBox> rois, std::span<const L2NormScaleLayer> norms,
                   const ConvLayerParams& shrink, const FusionConfig& cfg, MsRoiPoolCache* cache) {
  if (norms.size() != cfg.taps.size()) throw std::invalid_argument("ms_roi_pool: one norm layer per tap required");
  const int pool = cfg.roi_pool_size;
  const int r = static_cast<int>(rois.size());
  MsRoiPoolCache local;
  MsRoiPoolCache& c = cache ? *cache : local;
  c = MsRoiPoolCache{};
  c.taps = cfg.taps;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < cfg.taps.size(); ++k) {
    const FeatureTap& tap = taps.at(static_cast<std::size_t>(cfg.taps[k]));
    names.push_back(tap.name);
    const int ch = tap.map.dim(1);
    Tensor pooled({r, ch, pool, pool});
    std::vector<std::size_t> argmax(pooled.size());
    const std::size_t per_roi = static_cast<std::size_t>(ch) * pool * pool;
    for (int i = 0; i < r; ++i) {
      roi_pool_into(tap.map, rois[i], tap.cumulative_stride, pool, pooled.ptr() + i * per_roi,
                    argmax.data() + i * per_roi);
    }
    c.normalized.push_back(l2norm_scale(pooled, norms[k]));
    c.pooled.push_back(std::move(pooled));
    c.argmax.push_back(std::move(argmax));
  }
  c.concat = concat_channels(c.normalized, names);
  return conv2d(c.concat, shrink);
}

void ms_roi_pool_backward(const FeatureTapSet& taps, const MsRoiPoolCache& cache, std::span<L2NormScaleLayer> norms,
                          ConvLayerParams& shrink, const Tensor& grad_out, std::vector<Tensor>& tap_grads) {
  const Tensor dconcat = conv2d_backward(cache.concat, shrink, grad_out);
  const std::vector<Tensor> dnorm = split_channels(dconcat, cache.normalized);
  for (std::size_t k = 0; k < cache.taps.size(); ++k) {
    const Tensor dpooled = l2norm_scale_backward(cache.pooled[k], norms[k], dnorm[k]);
    const auto t = static_cast<std::size_t>(cache.taps[k]);
    Tensor& g = tap_grads.at(t);
    if (g.shape() != taps[t].map.shape()) g = Tensor(taps[t].map.shape());
    roi_pool_backward(cache.argmax[k], dpooled, g);
  }
}

Tensor fuse_feature_maps(const FeatureTapSet& taps, std::span<const L2NormScaleLayer> norms,
                         const ConvLayerParams& shrink, const FusionConfig& cfg, int target_stride,
                         FusedMapCache* cache) {
  if (norms.size() != cfg.taps.size()) throw std::invalid_argument("fuse_feature_maps: one norm layer per tap required");
  FusedMapCache local;
  FusedMapCache& c = cache ? *cache : local;
  c = FusedMapCache{};
  c.taps = cfg.taps;
  std::vector<std::string> names;
  for (std::size_t k = 0; k < cfg.taps.size(); ++k) {
    const FeatureTap& tap = taps.at(static_cast<std::size_t>(cfg.taps[k]));
    names.push_back(tap.name);
    c.synced.push_back(sync_downsample(tap, target_stride));
    c.normalized.push_back(l2norm_scale(c.synced.back().output, norms[k]));
  }
  c.concat = concat_channels(c.normalized, names);
  return conv2d(c.concat, shrink);
}

void fuse_feature_maps_backward(const FeatureTapSet& taps, const FusedMapCache& cache,
                                std::span<L2NormScaleLayer> norms, ConvLayerParams& shrink, const Tensor& grad_out,
                                std::vector<Tensor>& tap_grads) {
  const Tensor dconcat = conv2d_backward(cache.concat, shrink, grad_out);
  const std::vector<Tensor> dnorm = split_channels(dconcat, cache.normalized);
  for (std::size_t k = 0; k < cache.taps.size(); ++k) {
    const Tensor dsync = l2norm_scale_backward(cache.synced[k].output, norms[k], dnorm[k]);
    const auto t = static_cast<std::size_t>(cache.taps[k]);
    Tensor& g = tap_grads.at(t);
    if (g.shape() != taps[t].map.shape()) g = Tensor(taps[t].map.shape());
    for (std::size_t i = 0; i < cache.synced[k].argmax.size(); ++i) g[cache.synced[k].argmax[i]] += dsync[i];
  }
}

}  // namespace msfr
