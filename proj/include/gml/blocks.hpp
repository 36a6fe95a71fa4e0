#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "gml/common.hpp"
#include "gml/tape.hpp"
#include "gml/tensor.hpp"

// Motion building blocks. CSTM fuses adjacent frames and embeds them
// spatially. CMM subtracts a pixel-motion estimate of the previous frame from
// the current one; MCM applies the same construction once more to get a
// second-order motion difference. MCB sums the spatial and motion signals.
// The anomaly-detection branch stacks nine channel-preserving residual units.

namespace gml {

enum class McbMode { kCstmOnly, kStm, kMcb };

inline std::string to_string(McbMode m) {
  switch (m) {
    case McbMode::kCstmOnly: return "cstm_only";
    case McbMode::kStm: return "stm";
    case McbMode::kMcb: return "mcb";
  }
  throw ConfigError("unknown mcb mode");
}

inline McbMode parse_mcb_mode(const std::string& s) {
  if (s == "cstm_only") return McbMode::kCstmOnly;
  if (s == "stm") return McbMode::kStm;
  if (s == "mcb") return McbMode::kMcb;
  throw ConfigError("unknown mode '" + s + "' (expected cstm_only, stm or mcb)");
}

inline std::int64_t reduced_channels(std::int64_t c, std::int64_t ratio) {
  if (ratio < 1) throw ConfigError("reduction_ratio must be >= 1");
  if (c >= ratio && c % ratio != 0)
    throw ConfigError("channel count " + std::to_string(c) + " not divisible by reduction ratio " +
                      std::to_string(ratio));
  return std::max<std::int64_t>(c / ratio, 1);
}

// Uniform init at +-sqrt(6 / fan_in), drawn in flat element order.
template <typename R>
Tensor<R> uniform_init(const Shape& shape, std::int64_t fan_in, SplitMix64& rng) {
  Tensor<R> t(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.data[static_cast<std::size_t>(i)] = static_cast<R>(rng.uniform(-bound, bound));
  return t;
}

template <typename R>
Tensor<R> identity_temporal_kernel(std::int64_t c) {
  Tensor<R> k({c, 3}, R(0));
  for (std::int64_t i = 0; i < c; ++i) k.at2(i, 1) = R(1);
  return k;
}

template <typename R>
Tensor<R> identity_spatial_kernel(std::int64_t c) {
  Tensor<R> k({c, 3, 3}, R(0));
  for (std::int64_t i = 0; i < c; ++i) k.at3(i, 1, 1) = R(1);
  return k;
}

// ---------------------------------------------------------------------------
// Parameter bundles (plain tensors, used directly by tests and oracles; the
// model keeps the same tensors in a ParamStore and mirrors them as tape ids).
// ---------------------------------------------------------------------------

template <typename R>
struct McbParams {
  McbMode mode = McbMode::kMcb;
  Tensor<R> temporal_k;        // (C,3)
  Tensor<R> spatial_k;         // (C,3,3)
  Tensor<R> down_w, down_b;    // (C_r,C), (C_r)
  Tensor<R> kpm;               // (C_r,3,3), shared by CMM and MCM
  Tensor<R> up_m_w, up_m_b;    // (C,C_r), (C)
  Tensor<R> up_mm_w, up_mm_b;  // (C,C_r), (C)

  std::int64_t channels() const { return temporal_k.dim(0); }
  std::int64_t reduced() const { return mode == McbMode::kCstmOnly ? 0 : down_w.dim(0); }
};

template <typename R>
void check_mcb_params(const McbParams<R>& p) {
  require_rank(p.temporal_k, 2, "temporal_k");
  require_rank(p.spatial_k, 3, "spatial_k");
  const std::int64_t c = p.temporal_k.dim(0);
  if (p.temporal_k.dim(1) != 3) throw DimError("temporal_k must be (C,3)");
  if (p.spatial_k.dim(0) != c || p.spatial_k.dim(1) != 3 || p.spatial_k.dim(2) != 3)
    throw DimError("spatial_k must be (C,3,3) with matching C");
  if (p.mode == McbMode::kCstmOnly) return;
  require_rank(p.down_w, 2, "down_w");
  const std::int64_t cr = p.down_w.dim(0);
  if (p.down_w.dim(1) != c) throw DimError("down_w must map C to C_r");
  if (p.down_b.shape != Shape{cr}) throw DimError("down_b must be (C_r)");
  if (p.kpm.shape != Shape{cr, 3, 3}) throw DimError("kpm must be (C_r,3,3)");
  if (p.up_m_w.shape != Shape{c, cr} || p.up_m_b.shape != Shape{c})
    throw DimError("up_m must map C_r back to C");
  if (p.mode == McbMode::kMcb) {
    if (p.up_mm_w.shape != Shape{c, cr} || p.up_mm_b.shape != Shape{c})
      throw DimError("up_mm must map C_r back to C");
  }
}

template <typename R>
McbParams<R> make_mcb_params(std::int64_t c, std::int64_t ratio, McbMode mode, SplitMix64& rng) {
  McbParams<R> p;
  p.mode = mode;
  p.temporal_k = uniform_init<R>({c, 3}, 3, rng);
  p.spatial_k = uniform_init<R>({c, 3, 3}, 9, rng);
  if (mode != McbMode::kCstmOnly) {
    const std::int64_t cr = reduced_channels(c, ratio);
    p.down_w = uniform_init<R>({cr, c}, c, rng);
    p.down_b = Tensor<R>({cr}, R(0));
    p.kpm = uniform_init<R>({cr, 3, 3}, 9, rng);
    p.up_m_w = uniform_init<R>({c, cr}, cr, rng);
    p.up_m_b = Tensor<R>({c}, R(0));
    if (mode == McbMode::kMcb) {
      p.up_mm_w = uniform_init<R>({c, cr}, cr, rng);
      p.up_mm_b = Tensor<R>({c}, R(0));
    }
  }
  return p;
}

template <typename R>
struct AdParams {
  struct Unit {
    Tensor<R> cw_k;        // (C,3,3)
    Tensor<R> pw_w, pw_b;  // (C,C), (C)
  };
  std::vector<Unit> units;

  std::int64_t channels() const { return units.empty() ? 0 : units.front().cw_k.dim(0); }
};

inline constexpr int kAdUnits = 9;

template <typename R>
void check_ad_params(const AdParams<R>& p, int expected_units = kAdUnits) {
  if (static_cast<int>(p.units.size()) != expected_units)
    throw DimError("anomaly branch expects " + std::to_string(expected_units) + " units, got " +
                   std::to_string(p.units.size()));
  const std::int64_t c = p.channels();
  for (const auto& u : p.units) {
    if (u.cw_k.shape != Shape{c, 3, 3}) throw DimError("ad unit cw_k must be (C,3,3)");
    if (u.pw_w.shape != Shape{c, c} || u.pw_b.shape != Shape{c})
      throw DimError("ad unit pointwise conv must preserve C");
  }
}

// Each unit's closing pointwise conv starts at zero, so the branch begins as
// the identity map. Nine stacked residual units with fan-in-scaled closing
// convs would otherwise multiply activation variance ~2.4x per unit, blowing
// the zero-map L1 term (a plain sum over the feature map) up by orders of
// magnitude at step 0.
template <typename R>
AdParams<R> make_ad_params(std::int64_t c, SplitMix64& rng, int units = kAdUnits) {
  AdParams<R> p;
  p.units.reserve(static_cast<std::size_t>(units));
  for (int i = 0; i < units; ++i) {
    typename AdParams<R>::Unit u;
    u.cw_k = uniform_init<R>({c, 3, 3}, 9, rng);
    u.pw_w = Tensor<R>({c, c}, R(0));
    u.pw_b = Tensor<R>({c}, R(0));
    p.units.push_back(std::move(u));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Tape-id mirrors and graph builders.
// ---------------------------------------------------------------------------

struct McbIds {
  McbMode mode = McbMode::kMcb;
  int temporal_k = -1, spatial_k = -1;
  int down_w = -1, down_b = -1, kpm = -1;
  int up_m_w = -1, up_m_b = -1, up_mm_w = -1, up_mm_b = -1;
};

struct AdIds {
  struct Unit {
    int cw_k = -1, pw_w = -1, pw_b = -1;
  };
  std::vector<Unit> units;
};

template <typename R>
McbIds load_mcb(Tape<R>& tp, const McbParams<R>& p, bool want_grad = false) {
  check_mcb_params(p);
  McbIds ids;
  ids.mode = p.mode;
  ids.temporal_k = tp.input(p.temporal_k, want_grad);
  ids.spatial_k = tp.input(p.spatial_k, want_grad);
  if (p.mode != McbMode::kCstmOnly) {
    ids.down_w = tp.input(p.down_w, want_grad);
    ids.down_b = tp.input(p.down_b, want_grad);
    ids.kpm = tp.input(p.kpm, want_grad);
    ids.up_m_w = tp.input(p.up_m_w, want_grad);
    ids.up_m_b = tp.input(p.up_m_b, want_grad);
    if (p.mode == McbMode::kMcb) {
      ids.up_mm_w = tp.input(p.up_mm_w, want_grad);
      ids.up_mm_b = tp.input(p.up_mm_b, want_grad);
    }
  }
  return ids;
}

template <typename R>
AdIds load_ad(Tape<R>& tp, const AdParams<R>& p, bool want_grad = false) {
  AdIds ids;
  for (const auto& u : p.units) {
    AdIds::Unit iu;
    iu.cw_k = tp.input(u.cw_k, want_grad);
    iu.pw_w = tp.input(u.pw_w, want_grad);
    iu.pw_b = tp.input(u.pw_b, want_grad);
    ids.units.push_back(iu);
  }
  return ids;
}

// Temporal fusion of adjacent frames followed by spatial embedding.
template <typename R>
int cstm_forward(Tape<R>& tp, int f, const McbIds& p) {
  return tp.conv_cw_spatial(tp.conv_cw_temporal(f, p.temporal_k), p.spatial_k);
}

struct CmmOutIds {
  int f_m_raw;  // C_r channels
  int f_m_up;   // restored to C channels
};

// First-order motion: current reduced frame minus the pixel-motion model of
// the previous frame. Frame 0 has no predecessor and stays zero.
template <typename R>
CmmOutIds cmm_forward(Tape<R>& tp, int f, const McbIds& p) {
  if (p.mode == McbMode::kCstmOnly) throw ConfigError("cmm_forward needs stm or mcb parameters");
  const int f_d = tp.conv_pointwise(f, p.down_w, p.down_b);
  const int f_pm = tp.conv_cw_spatial(f_d, p.kpm);
  const int f_m_raw = tp.shifted_subtract(f_d, f_pm);
  const int f_m_up = tp.conv_pointwise(f_m_raw, p.up_m_w, p.up_m_b);
  return {f_m_raw, f_m_up};
}

struct McmOutIds {
  int f_m_up;
  int f_mm_raw;  // C_r channels
  int f_mm_up;
};

// Second-order motion: the same pixel-motion kernel applied to the first
// difference, subtracted again frame by frame.
template <typename R>
McmOutIds mcm_forward(Tape<R>& tp, int f, const McbIds& p) {
  if (p.mode != McbMode::kMcb) throw ConfigError("mcm_forward needs mcb parameters");
  const CmmOutIds cmm = cmm_forward(tp, f, p);
  const int f_pmm = tp.conv_cw_spatial(cmm.f_m_raw, p.kpm);
  const int f_mm_raw = tp.shifted_subtract(cmm.f_m_raw, f_pmm);
  const int f_mm_up = tp.conv_pointwise(f_mm_raw, p.up_mm_w, p.up_mm_b);
  return {cmm.f_m_up, f_mm_raw, f_mm_up};
}

// F_S (+ F_M) (+ F_MM), summed left to right.
template <typename R>
int mcb_forward(Tape<R>& tp, int f, const McbIds& p) {
  const int f_s = cstm_forward(tp, f, p);
  switch (p.mode) {
    case McbMode::kCstmOnly:
      return f_s;
    case McbMode::kStm:
      return tp.add(f_s, cmm_forward(tp, f, p).f_m_up);
    case McbMode::kMcb: {
      const McmOutIds m = mcm_forward(tp, f, p);
      return tp.add(tp.add(f_s, m.f_m_up), m.f_mm_up);
    }
  }
  throw ConfigError("unknown mcb mode");
}

// Nine residual units; with all weights zero this is the identity map.
template <typename R>
int ad_forward(Tape<R>& tp, int f, const AdIds& p) {
  int x = f;
  for (const auto& u : p.units)
    x = tp.add(x, tp.conv_pointwise(tp.relu(tp.conv_cw_spatial(x, u.cw_k)), u.pw_w, u.pw_b));
  return x;
}

// ---------------------------------------------------------------------------
// Functional forms (tensor in, tensor out) used by unit tests and tools.
// ---------------------------------------------------------------------------

template <typename R>
Tensor<R> cstm_forward(const Tensor<R>& f, const McbParams<R>& p) {
  Tape<R> tp;
  const int x = tp.input(f);
  return tp.val(cstm_forward(tp, x, load_mcb(tp, p)));
}

template <typename R>
struct CmmOut {
  Tensor<R> f_m_raw;
  Tensor<R> f_m_up;
};

template <typename R>
CmmOut<R> cmm_forward(const Tensor<R>& f, const McbParams<R>& p) {
  Tape<R> tp;
  const int x = tp.input(f);
  const CmmOutIds ids = cmm_forward(tp, x, load_mcb(tp, p));
  return {tp.val(ids.f_m_raw), tp.val(ids.f_m_up)};
}

template <typename R>
struct McmOut {
  Tensor<R> f_m_up;
  Tensor<R> f_mm_raw;
  Tensor<R> f_mm_up;
};

template <typename R>
McmOut<R> mcm_forward(const Tensor<R>& f, const McbParams<R>& p) {
  Tape<R> tp;
  const int x = tp.input(f);
  const McmOutIds ids = mcm_forward(tp, x, load_mcb(tp, p));
  return {tp.val(ids.f_m_up), tp.val(ids.f_mm_raw), tp.val(ids.f_mm_up)};
}

template <typename R>
Tensor<R> mcb_forward(const Tensor<R>& f, const McbParams<R>& p) {
  Tape<R> tp;
  const int x = tp.input(f);
  return tp.val(mcb_forward(tp, x, load_mcb(tp, p)));
}

template <typename R>
Tensor<R> ad_forward(const Tensor<R>& f, const AdParams<R>& p) {
  if (f.rank() == 5 && !p.units.empty() && p.channels() != f.dim(1))
    throw DimError("ad_forward: channel mismatch");
  Tape<R> tp;
  const int x = tp.input(f);
  return tp.val(ad_forward(tp, x, load_ad(tp, p)));
}

}  // namespace gml
