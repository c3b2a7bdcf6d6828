#pragma once

#include <cstdint>
#include <vector>

#include "msfr/scene.hpp"

namespace msfr {

struct FaceScaleRange {
  double min = 16.0;  // face height in pixels
  double max = 64.0;
};

struct ToyDataset {
  std::vector<Scene> scenes;
  std::vector<int> requested_faces;  // per scene; > gt_boxes.size() when placement ran out of room
};

/// Synthetic face scenes: gray noisy background, 1-4 bright ellipses carrying
/// two dark eye dots and a dark mouth bar, and 0-3 plain rectangles/circles as
/// distractors. Shapes never intersect. Pixels are quantized to 8 bits so the
/// in-memory images equal their PGM round trip. Ids are "toy_%05d".
ToyDataset generate_toy_dataset(int n_images, int image_size, FaceScaleRange scale, std::uint64_t seed);

}  // namespace msfr
