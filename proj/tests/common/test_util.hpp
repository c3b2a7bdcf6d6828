#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "msfr/box.hpp"
#include "msfr/rng.hpp"
#include "msfr/tensor.hpp"

namespace msfr::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Integer-cornered box inside [0, extent)^2 with sides in [1, max_side].
inline BBox random_int_box(Rng& rng, int extent, int max_side) {
  const int w = rng.range(1, max_side), h = rng.range(1, max_side);
  const int x = rng.range(0, extent - w), y = rng.range(0, extent - h);
  return {double(x), double(y), double(x + w), double(y + h)};
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("msfr_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  static int& counter() {
    static int n = 0;
    return n;
  }
  std::filesystem::path path_;
};

}  // namespace msfr::test
