#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gml/network.hpp"
#include "gml/tensor.hpp"

// GMLC checkpoint files: "GMLC" | version u8=1 | u32 param count | per param
// (u16 name length, name bytes, u8 ndim, u32 dims..., f32 payload) |
// u64 step | u64 rng state | u8 momentum flag | momentum payloads in param
// order when the flag is set. Round trips are bit-exact.

namespace gml {

struct Checkpoint {
  std::vector<std::pair<std::string, Tensor<float>>> params;
  std::uint64_t step = 0;
  std::uint64_t rng_state = 0;
  std::vector<Tensor<float>> momentum;  // empty or one buffer per param
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot(const Model<float>& m, std::uint64_t step, std::uint64_t rng_state,
                    const std::vector<Tensor<float>>& momentum);

// Rebuilds the architecture from parameter names and shapes, then installs
// the stored values. The anomaly tap is taken as the last stage whose width
// matches the anomaly head.
Model<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace gml
