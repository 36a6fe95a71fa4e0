#include "data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace gml {

namespace {

constexpr std::uint64_t kBlobStream = 0x626c6f62;    // blob geometry draws
constexpr std::uint64_t kJitterStream = 0x6a697474;  // region + per-frame offsets

constexpr double kSigmaLo = 2.0;
constexpr double kSigmaHi = 4.0;
constexpr double kAmpLo = 0.3;
constexpr double kAmpHi = 1.0;

struct Blob {
  double cx, cy, vx, vy, sigma;
  double amp[3];
};

std::vector<Blob> draw_blobs(const GenParams& p, SplitMix64& rng) {
  std::vector<Blob> blobs(static_cast<std::size_t>(p.blob_count));
  for (auto& b : blobs) {
    b.cx = rng.uniform(0.0, static_cast<double>(p.w));
    b.cy = rng.uniform(0.0, static_cast<double>(p.h));
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double speed = rng.uniform(p.velocity_lo, p.velocity_hi);
    b.vx = speed * std::cos(angle);
    b.vy = speed * std::sin(angle);
    b.sigma = rng.uniform(kSigmaLo, kSigmaHi);
    for (double& a : b.amp) a = rng.uniform(kAmpLo, kAmpHi);
  }
  return blobs;
}

Box draw_box(const GenParams& p, SplitMix64& rng) {
  Box box;
  const double area = p.region_fraction * static_cast<double>(p.h) * static_cast<double>(p.w);
  box.side = std::llround(std::sqrt(area));
  box.side = std::clamp<std::int64_t>(box.side, 1, std::min(p.h, p.w));
  box.x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(p.w - box.side + 1)));
  box.y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(p.h - box.side + 1)));
  return box;
}

double bilinear(const float* plane, std::int64_t h, std::int64_t w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
  sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
  const std::int64_t y0 = static_cast<std::int64_t>(sy);
  const std::int64_t x0 = static_cast<std::int64_t>(sx);
  const std::int64_t y1 = std::min(y0 + 1, h - 1);
  const std::int64_t x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - static_cast<double>(y0);
  const double fx = sx - static_cast<double>(x0);
  const double v00 = plane[y0 * w + x0], v01 = plane[y0 * w + x1];
  const double v10 = plane[y1 * w + x0], v11 = plane[y1 * w + x1];
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
}

}  // namespace

void validate(const GenParams& p) {
  if (p.t < 1 || p.h < 2 || p.w < 2) throw ConfigError("sequence dims must satisfy T>=1, H,W>=2");
  if (p.blob_count < 1) throw ConfigError("blob_count must be >= 1");
  if (p.velocity_lo < 0 || p.velocity_hi < p.velocity_lo)
    throw ConfigError("velocity range must satisfy 0 <= lo <= hi");
  if (p.jitter_amp < 0) throw ConfigError("jitter_amp must be >= 0");
  if (p.region_fraction <= 0 || p.region_fraction > 1)
    throw ConfigError("region_fraction must be in (0, 1]");
}

Box crop_box(std::int64_t face_w, std::int64_t face_h, std::int64_t cx, std::int64_t cy) {
  if (face_w <= 0 || face_h <= 0) throw ConfigError("face box dims must be positive");
  const double side_f = 2.0 * std::sqrt(static_cast<double>(face_w) * static_cast<double>(face_h));
  Box box;
  box.side = static_cast<std::int64_t>(std::floor(side_f + 0.5));  // round half up
  box.x0 = cx - box.side / 2;
  box.y0 = cy - box.side / 2;
  return box;
}

std::vector<std::vector<std::int64_t>> sample_frames(std::int64_t video_len, std::int64_t stride,
                                                     std::int64_t seq_len) {
  if (stride < 1 || seq_len < 1) throw ConfigError("stride and seq_len must be >= 1");
  if (video_len < 0) throw ConfigError("video_len must be >= 0");
  std::vector<std::vector<std::int64_t>> windows;
  std::vector<std::int64_t> cur;
  for (std::int64_t f = 0; f < video_len; f += stride) {
    cur.push_back(f);
    if (static_cast<std::int64_t>(cur.size()) == seq_len) {
      windows.push_back(cur);
      cur.clear();
    }
  }
  return windows;
}

Box manipulation_box(const GenParams& p, std::uint64_t seed) {
  validate(p);
  SplitMix64 jrng = seed_stream(seed, kJitterStream);
  return draw_box(p, jrng);
}

SequenceSample gen_sequence(const GenParams& p, int label, std::uint64_t seed) {
  validate(p);
  if (label != 0 && label != 1) throw ConfigError("label must be 0 (real) or 1 (fake)");

  SplitMix64 brng = seed_stream(seed, kBlobStream);
  const std::vector<Blob> blobs = draw_blobs(p, brng);

  SequenceSample s;
  s.label = label;
  s.seed = seed;
  s.tensor = Tensor<float>({1, 3, p.t, p.h, p.w});
  const std::int64_t hw = p.h * p.w;
  auto plane = [&](std::int64_t c, std::int64_t t) {
    return s.tensor.data.data() + (c * p.t + t) * hw;
  };

  for (std::int64_t t = 0; t < p.t; ++t) {
    for (const Blob& b : blobs) {
      const double cx = b.cx + b.vx * static_cast<double>(t);
      const double cy = b.cy + b.vy * static_cast<double>(t);
      const double inv2s2 = 1.0 / (2.0 * b.sigma * b.sigma);
      for (std::int64_t y = 0; y < p.h; ++y) {
        const double dy = static_cast<double>(y) - cy;
        for (std::int64_t x = 0; x < p.w; ++x) {
          const double dx = static_cast<double>(x) - cx;
          const double g = std::exp(-(dx * dx + dy * dy) * inv2s2);
          for (int c = 0; c < 3; ++c)
            plane(c, t)[y * p.w + x] += static_cast<float>(b.amp[c] * g);
        }
      }
    }
    for (int c = 0; c < 3; ++c) {
      float* pl = plane(c, t);
      for (std::int64_t i = 0; i < hw; ++i) pl[i] = std::clamp(pl[i], 0.0f, 1.0f);
    }
  }
  if (label == 0) return s;

  // Fake: re-sample a fixed region of each frame at an independent offset.
  SplitMix64 jrng = seed_stream(seed, kJitterStream);
  const Box box = draw_box(p, jrng);
  std::vector<float> patch(static_cast<std::size_t>(box.side * box.side));
  for (std::int64_t t = 0; t < p.t; ++t) {
    const double ox = jrng.uniform(-p.jitter_amp, p.jitter_amp);
    const double oy = jrng.uniform(-p.jitter_amp, p.jitter_amp);
    for (int c = 0; c < 3; ++c) {
      float* pl = plane(c, t);
      for (std::int64_t y = 0; y < box.side; ++y)
        for (std::int64_t x = 0; x < box.side; ++x)
          patch[static_cast<std::size_t>(y * box.side + x)] = static_cast<float>(bilinear(
              pl, p.h, p.w, static_cast<double>(box.y0 + y) + oy, static_cast<double>(box.x0 + x) + ox));
      for (std::int64_t y = 0; y < box.side; ++y)
        for (std::int64_t x = 0; x < box.side; ++x)
          pl[(box.y0 + y) * p.w + box.x0 + x] = patch[static_cast<std::size_t>(y * box.side + x)];
    }
  }
  return s;
}

void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.label != 0 && e.label != 1)
      throw ConfigError("manifest label must be 0 or 1: " + e.path);
    if (!seen.insert(e.path).second) throw ConfigError("duplicate manifest path: " + e.path);
    if (e.path.find(',') != std::string::npos)
      throw ConfigError("manifest path may not contain ',': " + e.path);
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (const auto& e : entries)
    os << e.path << ',' << e.label << ',' << e.seed << '\n';
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto where = "manifest line " + std::to_string(lineno);
    std::istringstream ls(line);
    ManifestEntry e;
    std::string label_s, seed_s;
    if (!std::getline(ls, e.path, ',') || !std::getline(ls, label_s, ',') ||
        !std::getline(ls, seed_s))
      throw FormatError(FormatError::Kind::kBadRecord, where + ": expected path,label,seed");
    try {
      e.label = std::stoi(label_s);
      e.seed = std::stoull(seed_s);
    } catch (const std::exception&) {
      throw FormatError(FormatError::Kind::kBadRecord, where + ": bad number");
    }
    if (e.label != 0 && e.label != 1)
      throw FormatError(FormatError::Kind::kBadRecord, where + ": label must be 0 or 1");
    if (!seen.insert(e.path).second)
      throw FormatError(FormatError::Kind::kBadRecord, where + ": duplicate path " + e.path);
    entries.push_back(std::move(e));
  }
  return entries;
}

}  // namespace gml
