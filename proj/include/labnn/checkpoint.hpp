#pragma once

#include <string>
#include <variant>
#include <vector>

#include "labnn/tensor.hpp"

namespace labnn {

// Checkpoint container format. Layout, little-endian throughout:
//   magic "LABC" | u32 version=1 | u32 tensor count
//   per tensor: u16 name length | name bytes | u8 dtype (0 real-32,
//   1 bit-packed) | u8 rank=4 | 4x u32 dims | payload
// Real payload is IEEE-754 binary32; bit payload is packed u64 words with
// LSB-first bit order.
struct NamedTensor {
  std::string name;
  std::variant<Tensor<float>, BitTensor> value;
};

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace labnn
