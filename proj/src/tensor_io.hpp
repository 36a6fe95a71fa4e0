#pragma once

#include <string>

#include "gml/tensor.hpp"

// GMLT tensor files: "GMLT" | version u8=1 | dtype u8=1 (f32) | ndim u8=5 |
// five u32 little-endian dims (B,C,T,H,W) | f32 little-endian payload,
// row-major with W fastest. Round trips are bit-exact.

namespace gml {

void write_tensor(const std::string& path, const Tensor<float>& t);
Tensor<float> read_tensor(const std::string& path);

}  // namespace gml
