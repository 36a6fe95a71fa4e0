#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "gml/blocks.hpp"
#include "gml/network.hpp"
#include "gml/tape.hpp"
#include "gml/tensor.hpp"

// Central finite-difference verification of every backward formula, run at
// 64-bit. Each named check builds a scalar graph from seeded random leaves,
// compares analytic leaf gradients against (f(x+h) - f(x-h)) / 2h, and
// reports the worst relative error.

namespace gml::gradcheck {

using D = double;

inline constexpr double kStep = 1e-3;
inline constexpr double kTolerance = 1e-4;

struct Report {
  std::string name;
  double max_rel_err = 0.0;
  std::int64_t coords = 0;    // coordinates compared
  std::int64_t skipped = 0;   // coordinates rejected by the kink guard
  bool pass() const { return max_rel_err <= kTolerance && coords > 0; }
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline void fill_uniform(Tensor<D>& t, double lo, double hi, SplitMix64& rng) {
  for (auto& v : t.data) v = rng.uniform(lo, hi);
}

// Values with |v| in [0.1, 1.1]: far from the ReLU / |.| kinks relative to
// any perturbation of size kStep.
inline void fill_kink_free(Tensor<D>& t, SplitMix64& rng) {
  for (auto& v : t.data) {
    const double mag = 0.1 + rng.uniform();
    v = rng.below(2) ? mag : -mag;
  }
}

inline double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor, 1e-6});
}

// One coordinate's central-difference estimate, from five evaluations at
// 0, +-h, +-h/2. A ReLU / |.| kink strictly inside (x-h, x+h) but off-center
// makes finite differences meaningless there, so such coordinates are
// detected and skipped ("probed away from the kink"):
//   - the h and h/2 central estimates must agree (catches off-center
//     crossings, whose contamination differs between the two step sizes);
//   - the symmetric second difference J(g) = (f(+g)+f(-g)-2f(0))/g equals
//     g*f'' on smooth ground but picks up the full slope jump from any
//     crossing, so J(h) - 2J(h/2) cancels curvature and isolates kinks that
//     sit too close to 0 for the first detector.
// A kink centered EXACTLY at the probe point (an |v| term with v = 0, which
// zero-initialized branches produce structurally) is benign: its symmetric
// halves cancel in every central difference, matching the sign(0) = 0
// convention of the analytic gradient. Its signature is an h-independent
// second difference (J(h) = J(h/2) = the jump itself), so such coordinates
// stay usable. `noise` is the roundoff floor from the function magnitude.
struct FdSample {
  double slope = 0.0;       // the h/2 estimate
  double noise = 0.0;       // absolute uncertainty from cancellation
  bool smooth = false;
};

template <typename F>
FdSample fd_probe(F&& eval, double& coord, double h = kStep) {
  const double orig = coord;
  auto at = [&](double t) {
    coord = orig + t;
    const double f = eval();
    coord = orig;
    return f;
  };
  const double f0 = at(0);
  const double fp1 = at(h), fm1 = at(-h);
  const double fp2 = at(h / 2), fm2 = at(-h / 2);
  FdSample s;
  const double fd1 = (fp1 - fm1) / (2 * h);
  s.slope = (fp2 - fm2) / h;
  const double fscale =
      std::max({std::abs(f0), std::abs(fp1), std::abs(fm1), std::abs(fp2), std::abs(fm2), 1.0});
  s.noise = 16.0 * std::numeric_limits<double>::epsilon() * fscale / h;
  const double slope_scale = std::max({std::abs(fd1), std::abs(s.slope), 1.0});
  const double j1 = (fp1 + fm1 - 2 * f0) / h;
  const double j2 = (fp2 + fm2 - 2 * f0) / (h / 2);
  const bool rings_agree = std::abs(fd1 - s.slope) <= 1e-5 * slope_scale + 4 * s.noise;
  const bool jump = std::abs(j1 - 2 * j2) >
                    1e-5 * std::max(std::abs(fd1), std::abs(s.slope)) + 8 * s.noise;
  const bool centered =
      std::abs(j1 - j2) <= 1e-5 * std::max(std::abs(j1), std::abs(j2)) + 8 * s.noise;
  s.smooth = rings_agree && (!jump || centered);
  return s;
}

}  // namespace detail

// A scalar-valued graph over a list of leaf tensors.
struct Probe {
  std::vector<Tensor<D>> leaves;
  // probe at most this many coordinates per leaf; 0 means all
  std::int64_t max_coords = 0;
  double step = kStep;
  std::function<int(Tape<D>&, const std::vector<int>&)> build;
};

inline Report run_probe(const std::string& name, Probe& p, SplitMix64& rng) {
  Report rep{name, 0.0, 0};

  std::vector<Tensor<D>> analytic;
  {
    Tape<D> tp;
    std::vector<int> ids;
    ids.reserve(p.leaves.size());
    for (const auto& t : p.leaves) ids.push_back(tp.input(t, true));
    const int root = p.build(tp, ids);
    tp.backward(root);
    // A leaf the graph never consumed has gradient identically zero.
    for (std::size_t i = 0; i < ids.size(); ++i)
      analytic.push_back(tp.has_gradient(ids[i]) ? tp.grad_of(ids[i])
                                                 : Tensor<D>(p.leaves[i].shape, 0.0));
  }

  auto eval = [&p]() {
    Tape<D> tp;
    std::vector<int> ids;
    ids.reserve(p.leaves.size());
    for (const auto& t : p.leaves) ids.push_back(tp.input(t, false));
    return tp.val(p.build(tp, ids)).data[0];
  };

  for (std::size_t li = 0; li < p.leaves.size(); ++li) {
    Tensor<D>& leaf = p.leaves[li];
    const std::int64_t n = leaf.numel();
    const std::int64_t probes = (p.max_coords > 0 && p.max_coords < n) ? p.max_coords : n;
    for (std::int64_t c = 0; c < probes; ++c) {
      const std::int64_t j = (probes == n) ? c : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
      const detail::FdSample fd = detail::fd_probe(eval, leaf.data[static_cast<std::size_t>(j)], p.step);
      if (!fd.smooth) {
        ++rep.skipped;
        continue;
      }
      const double a = analytic[li].data[static_cast<std::size_t>(j)];
      rep.max_rel_err = std::max(rep.max_rel_err, detail::rel_err(a, fd.slope, fd.noise / kTolerance));
      ++rep.coords;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Individual op and block checks. Each scalarizes its output through a
// weighted sum with fixed random weights so every output coordinate matters.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor<D> rand_weights(const Shape& s, SplitMix64& rng) {
  Tensor<D> w(s);
  fill_uniform(w, -1.0, 1.0, rng);
  return w;
}

inline Report check_conv_pointwise(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(3);
  p.leaves[0] = Tensor<D>({2, 4, 3, 4, 5});
  p.leaves[1] = Tensor<D>({3, 4});
  p.leaves[2] = Tensor<D>({3});
  for (auto& t : p.leaves) fill_uniform(t, -1.0, 1.0, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 3, 3, 4, 5}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.conv_pointwise(ids[0], ids[1], ids[2]), *w);
  };
  return run_probe("conv_pointwise", p, rng);
}

inline Report check_conv_cw_spatial(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(2);
  p.leaves[0] = Tensor<D>({2, 3, 2, 5, 6});
  p.leaves[1] = Tensor<D>({3, 3, 3});
  for (auto& t : p.leaves) fill_uniform(t, -1.0, 1.0, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 3, 2, 5, 6}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.conv_cw_spatial(ids[0], ids[1]), *w);
  };
  return run_probe("conv_channelwise_spatial", p, rng);
}

inline Report check_conv_cw_temporal(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(2);
  p.leaves[0] = Tensor<D>({2, 3, 5, 3, 4});
  p.leaves[1] = Tensor<D>({3, 3});
  for (auto& t : p.leaves) fill_uniform(t, -1.0, 1.0, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 3, 5, 3, 4}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.conv_cw_temporal(ids[0], ids[1]), *w);
  };
  return run_probe("conv_channelwise_temporal", p, rng);
}

inline Report check_shifted_subtract(SplitMix64& rng) {
  Probe p;
  p.leaves.assign(2, Tensor<D>({2, 3, 4, 3, 3}));
  for (auto& t : p.leaves) fill_uniform(t, -1.0, 1.0, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 3, 4, 3, 3}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.shifted_subtract(ids[0], ids[1]), *w);
  };
  return run_probe("shifted_subtract", p, rng);
}

inline Report check_add(SplitMix64& rng) {
  Probe p;
  p.leaves.assign(2, Tensor<D>({2, 3, 2, 3, 3}));
  for (auto& t : p.leaves) fill_uniform(t, -1.0, 1.0, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 3, 2, 3, 3}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.add(ids[0], ids[1]), *w);
  };
  return run_probe("add", p, rng);
}

inline Report check_relu(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(1);
  p.leaves[0] = Tensor<D>({2, 4, 3, 4, 4});
  fill_kink_free(p.leaves[0], rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 4, 3, 4, 4}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.relu(ids[0]), *w);
  };
  return run_probe("relu", p, rng);
}

inline Report check_mean_pool(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(1);
  p.leaves[0] = Tensor<D>({2, 3, 2, 4, 6});
  fill_uniform(p.leaves[0], -1.0, 1.0, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 3, 2, 2, 3}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.mean_pool_2x2(ids[0]), *w);
  };
  return run_probe("mean_pool_2x2", p, rng);
}

inline Report check_global_avg_pool(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(1);
  p.leaves[0] = Tensor<D>({2, 4, 2, 3, 3});
  fill_uniform(p.leaves[0], -1.0, 1.0, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 4}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.global_avg_pool(ids[0]), *w);
  };
  return run_probe("global_avg_pool", p, rng);
}

inline Report check_linear(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(3);
  p.leaves[0] = Tensor<D>({3, 5});
  p.leaves[1] = Tensor<D>({4, 5});
  p.leaves[2] = Tensor<D>({4});
  for (auto& t : p.leaves) fill_uniform(t, -1.0, 1.0, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({3, 4}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(tp.linear(ids[0], ids[1], ids[2]), *w);
  };
  return run_probe("linear", p, rng);
}

inline Report check_softmax_cross_entropy(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(1);
  p.leaves[0] = Tensor<D>({4, 2});
  fill_uniform(p.leaves[0], -2.0, 2.0, rng);
  p.build = [](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.softmax_cross_entropy(ids[0], {0, 1, 1, 0});
  };
  return run_probe("softmax_cross_entropy", p, rng);
}

inline Report check_l1_mean(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(1);
  p.leaves[0] = Tensor<D>({2, 3, 2, 3, 3});
  fill_kink_free(p.leaves[0], rng);
  p.build = [](Tape<D>& tp, const std::vector<int>& ids) { return tp.l1_norm(ids[0]); };
  return run_probe("l1_mean", p, rng);
}

inline Report check_masked_l1(SplitMix64& rng) {
  Probe p;
  p.leaves.resize(1);
  p.leaves[0] = Tensor<D>({4, 2, 2, 3, 3});
  fill_kink_free(p.leaves[0], rng);
  p.build = [](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.masked_l1(ids[0], {0.5, 0.0, 0.5, 0.0});
  };
  return run_probe("masked_l1", p, rng);
}

// Leaf order for block checks: x, then kernels in McbParams declaration order.
inline McbIds mcb_ids_from(const std::vector<int>& ids, McbMode mode) {
  McbIds r;
  r.mode = mode;
  r.temporal_k = ids[1];
  r.spatial_k = ids[2];
  if (mode != McbMode::kCstmOnly) {
    r.down_w = ids[3];
    r.down_b = ids[4];
    r.kpm = ids[5];
    r.up_m_w = ids[6];
    r.up_m_b = ids[7];
    if (mode == McbMode::kMcb) {
      r.up_mm_w = ids[8];
      r.up_mm_b = ids[9];
    }
  }
  return r;
}

inline std::vector<Tensor<D>> mcb_leaves(std::int64_t c, std::int64_t cr, McbMode mode,
                                         const Shape& xshape, SplitMix64& rng) {
  std::vector<Tensor<D>> ls;
  ls.emplace_back(xshape);
  ls.emplace_back(Shape{c, 3});
  ls.emplace_back(Shape{c, 3, 3});
  if (mode != McbMode::kCstmOnly) {
    ls.emplace_back(Shape{cr, c});
    ls.emplace_back(Shape{cr});
    ls.emplace_back(Shape{cr, 3, 3});
    ls.emplace_back(Shape{c, cr});
    ls.emplace_back(Shape{c});
    if (mode == McbMode::kMcb) {
      ls.emplace_back(Shape{c, cr});
      ls.emplace_back(Shape{c});
    }
  }
  for (auto& t : ls) fill_uniform(t, -1.0, 1.0, rng);
  return ls;
}

inline Report check_cstm(SplitMix64& rng) {
  Probe p;
  p.leaves = mcb_leaves(4, 0, McbMode::kCstmOnly, {2, 4, 3, 5, 5}, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 4, 3, 5, 5}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(cstm_forward(tp, ids[0], mcb_ids_from(ids, McbMode::kCstmOnly)), *w);
  };
  return run_probe("cstm_block", p, rng);
}

inline Report check_cmm(SplitMix64& rng) {
  Probe p;
  p.leaves = mcb_leaves(4, 2, McbMode::kStm, {2, 4, 3, 4, 4}, rng);
  auto wr = std::make_shared<Tensor<D>>(rand_weights({2, 2, 3, 4, 4}, rng));
  auto wu = std::make_shared<Tensor<D>>(rand_weights({2, 4, 3, 4, 4}, rng));
  p.build = [wr, wu](Tape<D>& tp, const std::vector<int>& ids) {
    const CmmOutIds o = cmm_forward(tp, ids[0], mcb_ids_from(ids, McbMode::kStm));
    return tp.affine_combine({tp.weighted_sum(o.f_m_raw, *wr), tp.weighted_sum(o.f_m_up, *wu)},
                             {1.0, 1.0});
  };
  return run_probe("cmm_block", p, rng);
}

inline Report check_mcm(SplitMix64& rng) {
  Probe p;
  p.leaves = mcb_leaves(4, 2, McbMode::kMcb, {2, 4, 3, 4, 4}, rng);
  auto wr = std::make_shared<Tensor<D>>(rand_weights({2, 2, 3, 4, 4}, rng));
  auto wu = std::make_shared<Tensor<D>>(rand_weights({2, 4, 3, 4, 4}, rng));
  p.build = [wr, wu](Tape<D>& tp, const std::vector<int>& ids) {
    const McmOutIds o = mcm_forward(tp, ids[0], mcb_ids_from(ids, McbMode::kMcb));
    return tp.affine_combine({tp.weighted_sum(o.f_mm_raw, *wr), tp.weighted_sum(o.f_m_up, *wu),
                              tp.weighted_sum(o.f_mm_up, *wu)},
                             {1.0, 1.0, 1.0});
  };
  return run_probe("mcm_block", p, rng);
}

inline Report check_mcb(SplitMix64& rng) {
  Probe p;
  p.leaves = mcb_leaves(4, 2, McbMode::kMcb, {2, 4, 3, 4, 4}, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({2, 4, 3, 4, 4}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    return tp.weighted_sum(mcb_forward(tp, ids[0], mcb_ids_from(ids, McbMode::kMcb)), *w);
  };
  return run_probe("mcb_block", p, rng);
}

inline Report check_ad(SplitMix64& rng) {
  Probe p;
  p.leaves.emplace_back(Shape{1, 2, 2, 4, 4});
  for (int i = 0; i < kAdUnits; ++i) {
    p.leaves.emplace_back(Shape{2, 3, 3});
    p.leaves.emplace_back(Shape{2, 2});
    p.leaves.emplace_back(Shape{2});
  }
  for (auto& t : p.leaves) fill_uniform(t, -0.5, 0.5, rng);
  auto w = std::make_shared<Tensor<D>>(rand_weights({1, 2, 2, 4, 4}, rng));
  p.build = [w](Tape<D>& tp, const std::vector<int>& ids) {
    AdIds ad;
    for (int i = 0; i < kAdUnits; ++i)
      ad.units.push_back({ids[1 + 3 * i], ids[2 + 3 * i], ids[3 + 3 * i]});
    return tp.weighted_sum(ad_forward(tp, ids[0], ad), *w);
  };
  return run_probe("ad_block", p, rng);
}

// End-to-end: total loss of a tiny one-stage model, probing a random subset of
// coordinates in every parameter tensor plus the input.
inline Report check_model(SplitMix64& rng) {
  ModelConfig cfg;
  cfg.stages = 1;
  cfg.base_width = 16;
  cfg.width_multiplier = 1;
  cfg.mode = McbMode::kMcb;
  cfg.ad_enabled = true;
  cfg.reduction_ratio = 16;
  cfg.seed = rng.next();
  Model<D> m = build_model<D>(cfg);

  Tensor<D> x({2, 3, 4, 8, 8});
  fill_uniform(x, 0.0, 1.0, rng);
  const std::vector<int> labels = {0, 1};

  Report rep{"model_e2e", 0.0, 0, 0};
  constexpr std::int64_t kMaxCoords = 100;
  // The loss sums |.| over thousands of feature coordinates, so a step this
  // small keeps the rate of kink crossings (and hence skipped probes) low.
  constexpr double kModelStep = 1e-5;

  std::vector<Tensor<D>> analytic(static_cast<std::size_t>(m.params.size()));
  Tensor<D> x_analytic;
  {
    Tape<D> tp(&m.params);
    const int xid = tp.input(x, true);
    const LossIds loss = build_loss(tp, build_forward(tp, m, xid), labels);
    tp.backward(loss.total);
    for (int s = 0; s < m.params.size(); ++s) {
      const int pid = tp.param(s);
      analytic[static_cast<std::size_t>(s)] =
          tp.has_gradient(pid) ? tp.grad_of(pid) : Tensor<D>(m.params.at(s).value.shape, 0.0);
    }
    x_analytic = tp.grad_of(xid);
  }

  auto eval = [&m, &x, &labels]() {
    Tape<D> tp(&m.params);
    const LossIds loss = build_loss(tp, build_forward(tp, m, tp.input(x, false)), labels);
    return tp.val(loss.total).data[0];
  };

  auto probe_tensor = [&](Tensor<D>& t, const Tensor<D>& a) {
    const std::int64_t n = t.numel();
    const std::int64_t probes = std::min(n, kMaxCoords);
    for (std::int64_t c = 0; c < probes; ++c) {
      const std::int64_t j = (probes == n) ? c : static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
      const FdSample fd = fd_probe(eval, t.data[static_cast<std::size_t>(j)], kModelStep);
      if (!fd.smooth) {
        ++rep.skipped;
        continue;
      }
      rep.max_rel_err = std::max(
          rep.max_rel_err,
          rel_err(a.data[static_cast<std::size_t>(j)], fd.slope, fd.noise / kTolerance));
      ++rep.coords;
    }
  };

  for (int s = 0; s < m.params.size(); ++s)
    probe_tensor(m.params.at(s).value, analytic[static_cast<std::size_t>(s)]);
  probe_tensor(x, x_analytic);
  return rep;
}

}  // namespace detail

struct Check {
  std::string name;
  Report (*run)(SplitMix64&);
};

inline const std::vector<Check>& all_checks() {
  static const std::vector<Check> checks = {
      {"conv_pointwise", detail::check_conv_pointwise},
      {"conv_channelwise_spatial", detail::check_conv_cw_spatial},
      {"conv_channelwise_temporal", detail::check_conv_cw_temporal},
      {"shifted_subtract", detail::check_shifted_subtract},
      {"add", detail::check_add},
      {"relu", detail::check_relu},
      {"mean_pool_2x2", detail::check_mean_pool},
      {"global_avg_pool", detail::check_global_avg_pool},
      {"linear", detail::check_linear},
      {"softmax_cross_entropy", detail::check_softmax_cross_entropy},
      {"l1_mean", detail::check_l1_mean},
      {"masked_l1", detail::check_masked_l1},
      {"cstm_block", detail::check_cstm},
      {"cmm_block", detail::check_cmm},
      {"mcm_block", detail::check_mcm},
      {"mcb_block", detail::check_mcb},
      {"ad_block", detail::check_ad},
      {"model_e2e", detail::check_model},
  };
  return checks;
}

inline Report run_check(const std::string& name, std::uint64_t seed) {
  for (const auto& c : all_checks()) {
    if (c.name != name) continue;
    SplitMix64 rng(seed ^ detail::fnv1a(name));
    return c.run(rng);
  }
  throw ConfigError("unknown gradcheck op '" + name + "'");
}

inline std::vector<Report> run_all(std::uint64_t seed) {
  std::vector<Report> out;
  for (const auto& c : all_checks()) out.push_back(run_check(c.name, seed));
  return out;
}

}  // namespace gml::gradcheck
