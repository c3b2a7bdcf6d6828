#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "msfr/box.hpp"
#include "msfr/layers.hpp"
#include "msfr/tensor.hpp"

namespace msfr {

/// A backbone stage output exported for fusion.
struct FeatureTap {
  std::string name;  // "tap3", "tap4", "tap5"
  Tensor map;        // 1 x C x H x W
  int cumulative_stride = 1;
};

/// Always ordered tap3, tap4, tap5.
using FeatureTapSet = std::vector<FeatureTap>;

/// Per-channel learnable re-weighting after channel-wise L2 normalization.
struct L2NormScaleLayer {
  Param gamma;  // C
  double epsilon = 1e-10;

  L2NormScaleLayer() = default;
  L2NormScaleLayer(const std::string& name, int channels, double gamma_init, double eps = 1e-10);
};

struct FusionConfig {
  std::vector<int> taps{0, 1, 2};  // indices into the tap set, in concatenation order
  int shrink_channels = 64;
  int roi_pool_size = 7;
  double gamma_init = 10.0;
  double epsilon = 1e-10;
};

// ---- L2 normalization ------------------------------------------------------

/// y = gamma * x / sqrt(|x|^2 + eps^2) at every (n, h, w) over the channel axis.
Tensor l2norm_scale(const Tensor& map, const Tensor& gamma, double epsilon);
Tensor l2norm_scale(const Tensor& map, const L2NormScaleLayer& layer);

struct L2NormGrads {
  Tensor input;
  Tensor gamma;
};
L2NormGrads l2norm_scale_backward(const Tensor& map, const Tensor& gamma, double epsilon, const Tensor& grad_out);
Tensor l2norm_scale_backward(const Tensor& map, L2NormScaleLayer& layer, const Tensor& grad_out);

// ---- spatial synchronization ----------------------------------------------

/// Max-pool with window = stride = target_stride / tap stride; identity at ratio 1.
PoolResult sync_downsample(const FeatureTap& tap, int target_stride);

// ---- channel concatenation + 1x1 shrink ------------------------------------

Tensor concat_channels(std::span<const Tensor> maps, std::span<const std::string> names = {});
std::vector<Tensor> split_channels(const Tensor& grad, std::span<const Tensor> like);

Tensor concat_shrink(std::span<const Tensor> maps, const ConvLayerParams& shrink,
                     std::span<const std::string> names = {});
/// Accumulates shrink gradients and returns one gradient per input map.
std::vector<Tensor> concat_shrink_backward(std::span<const Tensor> maps, ConvLayerParams& shrink,
                                           const Tensor& grad_out);

// ---- ROI pooling -----------------------------------------------------------

/// Per-axis cell ranges [start, end) for P bins over `length` cells starting at
/// `start`. Empty bins borrow the nearest nonempty bin (lower index on ties).
std::vector<std::pair<int, int>> roi_bins(int start, int length, int bins);

/// Projected ROI clamped into a map of the given extent (at least one cell).
GridRect roi_window(const BBox& roi, int stride, int map_h, int map_w);

struct RoiPoolResult {
  Tensor output;                      // C x P x P
  std::vector<std::size_t> argmax;    // flat index into the map per output element
};

RoiPoolResult roi_pool(const Tensor& map, const BBox& roi, int stride, int pool_size);
/// Scatters grad_out (C x P x P) into grad_map at the argmax positions.
void roi_pool_backward(std::span<const std::size_t> argmax, const Tensor& grad_out, Tensor& grad_map,
                       std::size_t out_offset = 0);

// ---- multi-scale ROI pooling -----------------------------------------------

struct MsRoiPoolCache {
  std::vector<int> taps;
  std::vector<Tensor> pooled;                   // per tap: R x C x P x P
  std::vector<std::vector<std::size_t>> argmax; // per tap
  std::vector<Tensor> normalized;               // per tap
  Tensor concat;                                // R x sum(C) x P x P
};

/// ROI-pool each selected tap at its own stride, L2-normalize and re-weight,
/// concatenate in tap order, apply the shared 1x1 shrink. Output R x S x P x P.
Tensor ms_roi_pool(const FeatureTapSet& taps, std::span<const BBox> rois, std::span<const L2NormScaleLayer> norms,
                   const ConvLayerParams& shrink, const FusionConfig& cfg, MsRoiPoolCache* cache = nullptr);

/// Accumulates gamma/shrink gradients; adds tap gradients into tap_grads.
void ms_roi_pool_backward(const FeatureTapSet& taps, const MsRoiPoolCache& cache, std::span<L2NormScaleLayer> norms,
                          ConvLayerParams& shrink, const Tensor& grad_out, std::vector<Tensor>& tap_grads);

// ---- fused full map (proposal branch) --------------------------------------

struct FusedMapCache {
  std::vector<int> taps;
  std::vector<PoolResult> synced;
  std::vector<Tensor> normalized;
  Tensor concat;
};

/// Downsample each selected tap to target_stride, normalize, concat, shrink.
Tensor fuse_feature_maps(const FeatureTapSet& taps, std::span<const L2NormScaleLayer> norms,
                         const ConvLayerParams& shrink, const FusionConfig& cfg, int target_stride,
                         FusedMapCache* cache = nullptr);

void fuse_feature_maps_backward(const FeatureTapSet& taps, const FusedMapCache& cache,
                                std::span<L2NormScaleLayer> norms, ConvLayerParams& shrink, const Tensor& grad_out,
                                std::vector<Tensor>& tap_grads);

}  // namespace msfr
