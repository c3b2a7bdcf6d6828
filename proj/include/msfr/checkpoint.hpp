#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "msfr/tensor.hpp"

namespace msfr {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Layout: "MSFR1", then per tensor: u32 name length, name bytes, u32 rank,
// u32 dims, f64 values. All integers and floats little-endian.
std::string serialize_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into `params`, matching by name. Every param must
/// be present with an identical shape.
void restore_params(const std::vector<NamedTensor>& tensors, const std::vector<Param*>& params);
std::vector<NamedTensor> snapshot_params(const std::vector<Param*>& params);

}  // namespace msfr
