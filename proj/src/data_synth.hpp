#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gml/common.hpp"
#include "gml/tensor.hpp"

// Synthetic sequences for the motion-consistency task. Real sequences show
// Gaussian blobs translating with a constant per-sequence velocity; fake
// sequences take the real render and re-sample a fixed sub-region with an
// independent random shift per frame, which breaks temporal consistency
// while leaving single-frame appearance plausible.

namespace gml {

struct GenParams {
  std::int64_t t = 8;
  std::int64_t h = 32;
  std::int64_t w = 32;
  int blob_count = 3;
  double velocity_lo = 0.25;   // pixels per frame
  double velocity_hi = 1.25;
  double jitter_amp = 1.5;     // max per-frame displacement inside the region
  double region_fraction = 0.25;
};

void validate(const GenParams& p);

struct SequenceSample {
  Tensor<float> tensor;  // (1,3,T,H,W), values in [0,1]
  int label = 0;         // 1 = fake
  std::uint64_t seed = 0;
};

struct Box {
  std::int64_t x0 = 0;
  std::int64_t y0 = 0;
  std::int64_t side = 0;
};

// Square crop of side round(2*sqrt(w*h)) centered on (cx,cy), not clamped.
Box crop_box(std::int64_t face_w, std::int64_t face_h, std::int64_t cx, std::int64_t cy);

// Keep every stride-th frame, then group into non-overlapping windows of
// seq_len kept frames; a trailing partial window is dropped.
std::vector<std::vector<std::int64_t>> sample_frames(std::int64_t video_len,
                                                     std::int64_t stride = 2,
                                                     std::int64_t seq_len = 8);

// The manipulated sub-region a fake sequence uses for a given seed.
Box manipulation_box(const GenParams& p, std::uint64_t seed);

SequenceSample gen_sequence(const GenParams& p, int label, std::uint64_t seed);

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  int label = 0;
  std::uint64_t seed = 0;
};

// One `relative_path,label,seed` line per sample, no header.
void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::string& path);

}  // namespace gml
