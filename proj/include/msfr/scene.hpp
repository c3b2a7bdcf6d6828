#pragma once

#include <string>
#include <vector>

#include "msfr/box.hpp"
#include "msfr/tensor.hpp"

namespace msfr {

/// One image with its face annotations. `image` may be padded beyond
/// width x height; boxes and clipping use the original extent.
struct Scene {
  std::string id;
  Tensor image;  // 1 x C x H x W
  std::vector<BBox> gt_boxes;
  int width = 0;
  int height = 0;
};

}  // namespace msfr
