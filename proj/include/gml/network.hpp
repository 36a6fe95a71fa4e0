#pragma once

#include <array>
#include <string>
#include <vector>

#include "gml/blocks.hpp"
#include "gml/common.hpp"
#include "gml/tape.hpp"
#include "gml/tensor.hpp"

// The full detector: a pointwise stem, a stack of motion-block stages
// (each block, then ReLU, then 2x2 mean-pool + width-change conv between
// stages), a linear main head, and the optional anomaly branch tapped off a
// configurable stage with its own linear head.

namespace gml {

inline constexpr std::int64_t kInputChannels = 3;
inline constexpr std::int64_t kNumClasses = 2;
inline constexpr std::uint64_t kParamInitStream = 0x706172616d;

struct ModelConfig {
  int stages = 2;
  std::int64_t base_width = 16;
  std::int64_t width_multiplier = 2;
  McbMode mode = McbMode::kMcb;
  bool ad_enabled = true;
  int ad_tap_stage = -1;  // -1 means last stage
  std::int64_t reduction_ratio = 16;
  std::uint64_t seed = 0;
};

inline std::int64_t stage_width(const ModelConfig& cfg, int stage) {
  std::int64_t w = cfg.base_width;
  for (int s = 0; s < stage; ++s) {
    w *= cfg.width_multiplier;
    if (w > (std::int64_t(1) << 20)) throw ConfigError("stage width overflows sane bounds");
  }
  return w;
}

inline int tap_stage(const ModelConfig& cfg) {
  return cfg.ad_tap_stage < 0 ? cfg.stages - 1 : cfg.ad_tap_stage;
}

inline void validate(const ModelConfig& cfg) {
  if (cfg.stages < 1) throw ConfigError("stages must be >= 1");
  if (cfg.base_width < 1) throw ConfigError("base_width must be >= 1");
  if (cfg.width_multiplier < 1) throw ConfigError("width_multiplier must be >= 1");
  if (tap_stage(cfg) >= cfg.stages)
    throw ConfigError("ad_tap_stage " + std::to_string(cfg.ad_tap_stage) + " out of range for " +
                      std::to_string(cfg.stages) + " stages");
  for (int s = 0; s < cfg.stages; ++s) reduced_channels(stage_width(cfg, s), cfg.reduction_ratio);
}

template <typename R>
struct Model {
  ModelConfig cfg;
  ParamStore<R> params;
  int stem_w = -1, stem_b = -1;
  std::vector<McbIds> stage_slots;                // ParamStore slots per stage
  std::vector<std::array<int, 2>> trans_slots;    // (w,b) between stages
  int head_w = -1, head_b = -1;
  AdIds ad_slots;
  int ad_head_w = -1, ad_head_b = -1;
};

template <typename R>
Model<R> build_model(const ModelConfig& cfg) {
  validate(cfg);
  Model<R> m;
  m.cfg = cfg;
  SplitMix64 rng = seed_stream(cfg.seed, kParamInitStream);

  m.stem_w = m.params.add("stem.w",
                          uniform_init<R>({cfg.base_width, kInputChannels}, kInputChannels, rng));
  m.stem_b = m.params.add("stem.b", Tensor<R>({cfg.base_width}, R(0)));

  for (int s = 0; s < cfg.stages; ++s) {
    const std::int64_t c = stage_width(cfg, s);
    McbParams<R> p = make_mcb_params<R>(c, cfg.reduction_ratio, cfg.mode, rng);
    const std::string pre = "stage" + std::to_string(s) + ".";
    McbIds sl;
    sl.mode = cfg.mode;
    sl.temporal_k = m.params.add(pre + "temporal_k", std::move(p.temporal_k));
    sl.spatial_k = m.params.add(pre + "spatial_k", std::move(p.spatial_k));
    if (cfg.mode != McbMode::kCstmOnly) {
      sl.down_w = m.params.add(pre + "down.w", std::move(p.down_w));
      sl.down_b = m.params.add(pre + "down.b", std::move(p.down_b));
      sl.kpm = m.params.add(pre + "kpm", std::move(p.kpm));
      sl.up_m_w = m.params.add(pre + "up_m.w", std::move(p.up_m_w));
      sl.up_m_b = m.params.add(pre + "up_m.b", std::move(p.up_m_b));
      if (cfg.mode == McbMode::kMcb) {
        sl.up_mm_w = m.params.add(pre + "up_mm.w", std::move(p.up_mm_w));
        sl.up_mm_b = m.params.add(pre + "up_mm.b", std::move(p.up_mm_b));
      }
    }
    m.stage_slots.push_back(sl);
    if (s + 1 < cfg.stages) {
      const std::int64_t c2 = stage_width(cfg, s + 1);
      const std::string tp = "trans" + std::to_string(s) + ".";
      const int tw = m.params.add(tp + "w", uniform_init<R>({c2, c}, c, rng));
      const int tb = m.params.add(tp + "b", Tensor<R>({c2}, R(0)));
      m.trans_slots.push_back({tw, tb});
    }
  }

  const std::int64_t c_last = stage_width(cfg, cfg.stages - 1);
  m.head_w = m.params.add("head.w", uniform_init<R>({kNumClasses, c_last}, c_last, rng));
  m.head_b = m.params.add("head.b", Tensor<R>({kNumClasses}, R(0)));

  if (cfg.ad_enabled) {
    const std::int64_t ct = stage_width(cfg, tap_stage(cfg));
    AdParams<R> ap = make_ad_params<R>(ct, rng);
    for (int i = 0; i < kAdUnits; ++i) {
      const std::string up = "ad.unit" + std::to_string(i) + ".";
      AdIds::Unit u;
      u.cw_k = m.params.add(up + "cw_k", std::move(ap.units[static_cast<std::size_t>(i)].cw_k));
      u.pw_w = m.params.add(up + "pw.w", std::move(ap.units[static_cast<std::size_t>(i)].pw_w));
      u.pw_b = m.params.add(up + "pw.b", std::move(ap.units[static_cast<std::size_t>(i)].pw_b));
      m.ad_slots.units.push_back(u);
    }
    m.ad_head_w = m.params.add("ad_head.w", uniform_init<R>({kNumClasses, ct}, ct, rng));
    m.ad_head_b = m.params.add("ad_head.b", Tensor<R>({kNumClasses}, R(0)));
  }
  return m;
}

// --- graph assembly ---------------------------------------------------------

template <typename R>
McbIds bind_mcb(Tape<R>& tp, const McbIds& slots) {
  auto bind = [&tp](int slot) { return slot < 0 ? -1 : tp.param(slot); };
  McbIds ids;
  ids.mode = slots.mode;
  ids.temporal_k = bind(slots.temporal_k);
  ids.spatial_k = bind(slots.spatial_k);
  ids.down_w = bind(slots.down_w);
  ids.down_b = bind(slots.down_b);
  ids.kpm = bind(slots.kpm);
  ids.up_m_w = bind(slots.up_m_w);
  ids.up_m_b = bind(slots.up_m_b);
  ids.up_mm_w = bind(slots.up_mm_w);
  ids.up_mm_b = bind(slots.up_mm_b);
  return ids;
}

template <typename R>
AdIds bind_ad(Tape<R>& tp, const AdIds& slots) {
  AdIds ids;
  for (const auto& u : slots.units)
    ids.units.push_back({tp.param(u.cw_k), tp.param(u.pw_w), tp.param(u.pw_b)});
  return ids;
}

struct ForwardIds {
  int logits_main = -1;
  int logits_ad = -1;
  int f_star = -1;
};

template <typename R>
ForwardIds build_forward(Tape<R>& tp, const Model<R>& m, int x) {
  const Tensor<R>& xv = tp.val(x);
  require_feature_map(xv, "model input");
  if (xv.dim(1) != kInputChannels)
    throw DimError("model input must have " + std::to_string(kInputChannels) + " channels, got " +
                   std::to_string(xv.dim(1)));
  const std::int64_t pool_factor = std::int64_t(1) << (m.cfg.stages - 1);
  if (xv.dim(3) < pool_factor * 2 || xv.dim(4) < pool_factor * 2 ||
      xv.dim(3) % pool_factor != 0 || xv.dim(4) % pool_factor != 0)
    throw DimError("input " + shape_str(xv.shape) + " too small for " +
                   std::to_string(m.cfg.stages) + "-stage pooling chain");

  int f = tp.conv_pointwise(x, tp.param(m.stem_w), tp.param(m.stem_b));
  int tap = -1;
  for (int s = 0; s < m.cfg.stages; ++s) {
    f = mcb_forward(tp, f, bind_mcb(tp, m.stage_slots[static_cast<std::size_t>(s)]));
    f = tp.relu(f);
    if (m.cfg.ad_enabled && s == tap_stage(m.cfg)) tap = f;
    if (s + 1 < m.cfg.stages) {
      const auto& tr = m.trans_slots[static_cast<std::size_t>(s)];
      f = tp.mean_pool_2x2(f);
      f = tp.conv_pointwise(f, tp.param(tr[0]), tp.param(tr[1]));
    }
  }

  ForwardIds out;
  out.logits_main = tp.linear(tp.global_avg_pool(f), tp.param(m.head_w), tp.param(m.head_b));
  if (m.cfg.ad_enabled) {
    out.f_star = ad_forward(tp, tap, bind_ad(tp, m.ad_slots));
    out.logits_ad =
        tp.linear(tp.global_avg_pool(out.f_star), tp.param(m.ad_head_w), tp.param(m.ad_head_b));
  }
  return out;
}

// --- loss --------------------------------------------------------------------

template <typename R>
struct LossBundle {
  R l_cls1 = R(0);
  R l_l1 = R(0);
  R l_cls2 = R(0);
  R total = R(0);
};

inline void check_binary_labels(const std::vector<int>& labels) {
  for (int y : labels)
    if (y != 0 && y != 1) throw Error("label " + std::to_string(y) + " outside {0,1}");
}

// Per-sample weights for the zero-map loss: real samples (label 0, the
// "positive" samples of the anomaly loss) get 1/N_real, fakes get 0.
template <typename R>
std::vector<R> real_sample_mask(const std::vector<int>& labels) {
  check_binary_labels(labels);
  std::int64_t n_real = 0;
  for (int y : labels)
    if (y == 0) ++n_real;
  std::vector<R> mask(labels.size(), R(0));
  if (n_real > 0) {
    const R w = R(1) / static_cast<R>(n_real);
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == 0) mask[i] = w;
  }
  return mask;
}

struct LossIds {
  int l_cls1 = -1;
  int l_l1 = -1;
  int l_cls2 = -1;
  int total = -1;
};

template <typename R>
LossIds build_loss(Tape<R>& tp, const ForwardIds& f, const std::vector<int>& labels) {
  check_binary_labels(labels);
  LossIds out;
  out.l_cls1 = tp.softmax_cross_entropy(f.logits_main, labels);
  if (f.logits_ad >= 0) {
    out.l_l1 = tp.masked_l1(f.f_star, real_sample_mask<R>(labels));
    out.l_cls2 = tp.softmax_cross_entropy(f.logits_ad, labels);
    out.total = tp.affine_combine({out.l_cls1, out.l_l1, out.l_cls2}, {R(1), R(1), R(1)});
  } else {
    out.l_l1 = tp.input(Tensor<R>({1}, R(0)));
    out.l_cls2 = tp.input(Tensor<R>({1}, R(0)));
    out.total = tp.affine_combine({out.l_cls1}, {R(1)});
  }
  return out;
}

// Pure form used by tests and the trainer's bookkeeping. Pass nullptr for
// logits_ad / f_star when the anomaly branch is disabled.
template <typename R>
LossBundle<R> compute_loss(const Tensor<R>& logits_main, const Tensor<R>* logits_ad,
                           const Tensor<R>* f_star, const std::vector<int>& labels) {
  check_binary_labels(labels);
  LossBundle<R> lb;
  lb.l_cls1 = ops::softmax_cross_entropy(logits_main, labels);
  if (logits_ad && f_star) {
    lb.l_l1 = ops::masked_l1_sum(*f_star, real_sample_mask<R>(labels));
    lb.l_cls2 = ops::softmax_cross_entropy(*logits_ad, labels);
  }
  lb.total = lb.l_cls1 + lb.l_l1 + lb.l_cls2;
  return lb;
}

// --- inference ----------------------------------------------------------------

template <typename R>
struct ForwardOut {
  Tensor<R> logits_main;
  Tensor<R> logits_ad;  // empty when the anomaly branch is disabled
  Tensor<R> f_star;     // empty when the anomaly branch is disabled
};

template <typename R>
ForwardOut<R> forward(const Model<R>& m, const Tensor<R>& x) {
  Tape<R> tp(&m.params);
  const ForwardIds ids = build_forward(tp, m, tp.input(x));
  ForwardOut<R> out;
  out.logits_main = tp.val(ids.logits_main);
  if (!all_finite(out.logits_main)) throw Error("forward produced non-finite logits");
  if (ids.logits_ad >= 0) {
    out.logits_ad = tp.val(ids.logits_ad);
    out.f_star = tp.val(ids.f_star);
    if (!all_finite(out.logits_ad)) throw Error("forward produced non-finite anomaly logits");
  }
  return out;
}

template <typename R>
struct Prediction {
  Tensor<R> p_main;       // (B,2) softmax rows
  Tensor<R> p_ad;         // (B,2) or empty
  std::vector<R> score;   // probability of class fake (1)
};

template <typename R>
Prediction<R> predict(const Model<R>& m, const Tensor<R>& x) {
  const ForwardOut<R> f = forward(m, x);
  Prediction<R> pr;
  pr.p_main = ops::softmax_rows(f.logits_main);
  const std::int64_t B = pr.p_main.dim(0);
  pr.score.resize(static_cast<std::size_t>(B));
  if (!f.logits_ad.empty()) {
    pr.p_ad = ops::softmax_rows(f.logits_ad);
    for (std::int64_t b = 0; b < B; ++b)
      pr.score[static_cast<std::size_t>(b)] = (pr.p_main.at2(b, 1) + pr.p_ad.at2(b, 1)) / R(2);
  } else {
    for (std::int64_t b = 0; b < B; ++b) pr.score[static_cast<std::size_t>(b)] = pr.p_main.at2(b, 1);
  }
  return pr;
}

}  // namespace gml
