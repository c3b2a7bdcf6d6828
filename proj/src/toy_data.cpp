#include "msfr/toy_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <stdexcept>

#include "msfr/rng.hpp"

namespace msfr {

namespace {

constexpr int kPlacementAttempts = 100;

struct Rect {
  int x, y, w, h;
  bool intersects(const Rect& o, int gap) const {
    return x < o.x + o.w + gap && o.x < x + w + gap && y < o.y + o.h + gap && o.y < y + h + gap;
  }
};

class Canvas {
 public:
  explicit Canvas(int size) : size_(size), px_(static_cast<std::size_t>(size) * size) {}

  void set(int x, int y, double v) {
    if (x >= 0 && y >= 0 && x < size_ && y < size_) px_[static_cast<std::size_t>(y) * size_ + x] = v;
  }
  void fill(double v) { std::fill(px_.begin(), px_.end(), v); }

  void ellipse(const Rect& r, double v) {
    const double cx = r.x + 0.5 * r.w, cy = r.y + 0.5 * r.h;
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) {
        const double u = (x + 0.5 - cx) / (0.5 * r.w);
        const double t = (y + 0.5 - cy) / (0.5 * r.h);
        if (u * u + t * t <= 1.0) set(x, y, v);
      }
    }
  }

  void rect(const Rect& r, double v) {
    for (int y = r.y; y < r.y + r.h; ++y) {
      for (int x = r.x; x < r.x + r.w; ++x) set(x, y, v);
    }
  }

  // Disc plus the pixel containing the center, so tiny dots stay visible.
  void dot(double cx, double cy, double radius, double v) {
    set(static_cast<int>(std::floor(cx)), static_cast<int>(std::floor(cy)), v);
    for (int y = static_cast<int>(std::floor(cy - radius)); y <= static_cast<int>(std::ceil(cy + radius)); ++y) {
      for (int x = static_cast<int>(std::floor(cx - radius)); x <= static_cast<int>(std::ceil(cx + radius)); ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        if (dx * dx + dy * dy <= radius * radius) set(x, y, v);
      }
    }
  }

  // Pixels with centers inside [x1,x2]x[y1,y2]; at least the center row.
  void bar(double x1, double y1, double x2, double y2, double v) {
    const int mid_row = static_cast<int>(std::floor(0.5 * (y1 + y2)));
    for (int y = static_cast<int>(std::floor(y1)); y <= static_cast<int>(std::ceil(y2)); ++y) {
      const bool row_in = (y + 0.5 >= y1 && y + 0.5 <= y2) || y == mid_row;
      if (!row_in) continue;
      for (int x = static_cast<int>(std::floor(x1)); x <= static_cast<int>(std::ceil(x2)); ++x) {
        if (x + 0.5 >= x1 && x + 0.5 <= x2) set(x, y, v);
      }
    }
  }

  const std::vector<double>& pixels() const { return px_; }
  std::vector<double>& pixels() { return px_; }

 private:
  int size_;
  std::vector<double> px_;
};

void draw_face(Canvas& c, const Rect& r, double skin, double feature) {
  c.ellipse(r, skin);
  const double eye_r = std::max(0.1 * r.w, 0.5);
  c.dot(r.x + 0.3 * r.w, r.y + 0.4 * r.h, eye_r, feature);
  c.dot(r.x + 0.7 * r.w, r.y + 0.4 * r.h, eye_r, feature);
  c.bar(r.x + 0.3 * r.w, r.y + 0.68 * r.h, r.x + 0.7 * r.w, r.y + 0.78 * r.h, feature);
}

}  // namespace

ToyDataset generate_toy_dataset(int n_images, int image_size, FaceScaleRange scale, std::uint64_t seed) {
  if (n_images < 0) throw std::invalid_argument("generate_toy_dataset: negative image count");
  if (image_size < 16 || image_size % 16 != 0) {
    throw std::invalid_argument("generate_toy_dataset: image size must be a positive multiple of 16");
  }
  if (!(scale.min > 4.0 && scale.max <= image_size / 2.0 && scale.min <= scale.max)) {
    throw std::invalid_argument("generate_toy_dataset: face scale range must lie within (4, image_size/2]");
  }
  ToyDataset ds;
  Rng rng(seed);
  for (int n = 0; n < n_images; ++n) {
    Canvas canvas(image_size);
    canvas.fill(rng.uniform(0.25, 0.5));
    std::vector<Rect> placed;
    auto place = [&](int w, int h) -> std::optional<Rect> {
      for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
        const Rect r{rng.range(0, image_size - w), rng.range(0, image_size - h), w, h};
        if (std::none_of(placed.begin(), placed.end(), [&](const Rect& o) { return r.intersects(o, 1); })) {
          placed.push_back(r);
          return r;
        }
      }
      return std::nullopt;
    };

    Scene scene;
    char id[32];
    std::snprintf(id, sizeof id, "toy_%05d", n);
    scene.id = id;
    scene.width = scene.height = image_size;

    const int faces = rng.range(1, 4);
    ds.requested_faces.push_back(faces);
    for (int f = 0; f < faces; ++f) {
      const int h = static_cast<int>(std::lround(rng.uniform(scale.min, scale.max)));
      const int w = std::max(3, static_cast<int>(std::lround(h / rng.uniform(1.0, 1.3))));
      const double skin = rng.uniform(0.7, 0.95);
      const double feature = rng.uniform(0.05, 0.25);
      if (auto r = place(w, h)) {
        draw_face(canvas, *r, skin, feature);
        scene.gt_boxes.push_back({static_cast<double>(r->x), static_cast<double>(r->y),
                                  static_cast<double>(r->x + r->w), static_cast<double>(r->y + r->h)});
      }
    }
    const int distractors = rng.range(0, 3);
    for (int d = 0; d < distractors; ++d) {
      const bool circle = rng.uniform() < 0.5;
      const int h = static_cast<int>(std::lround(rng.uniform(scale.min, scale.max)));
      const int w = circle ? h : std::max(3, static_cast<int>(std::lround(h * rng.uniform(0.6, 1.4))));
      const double v = rng.uniform(0.65, 0.95);
      if (auto r = place(std::min(w, image_size), h)) {
        if (circle) {
          canvas.ellipse(*r, v);
        } else {
          canvas.rect(*r, v);
        }
      }
    }
    std::vector<double>& px = canvas.pixels();
    for (double& v : px) {
      v = std::clamp(v + 0.05 * rng.normal(), 0.0, 1.0);
      v = std::round(v * 255.0) / 255.0;
    }
    scene.image = Tensor({1, 1, image_size, image_size}, px);
    ds.scenes.push_back(std::move(scene));
  }
  return ds;
}

}  // namespace msfr
