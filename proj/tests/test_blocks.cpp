#include <cmath>

#include "doctest.h"
#include "gml/blocks.hpp"
#include "gml/gradcheck.hpp"
#include "oracles.hpp"

using namespace gml;
using oracle::max_abs_diff;
using oracle::rand_tensor;

namespace {

// Block compositions restated with the reference kernels.
struct OracleMcb {
  Tensor<double> f_s, f_d, f_pm, f_m_raw, f_m_up, f_pmm, f_mm_raw, f_mm_up;
};

OracleMcb run_oracle(const Tensor<double>& f, const McbParams<double>& p) {
  OracleMcb o;
  o.f_s = oracle::conv_cw_spatial(oracle::conv_cw_temporal(f, p.temporal_k), p.spatial_k);
  if (p.mode == McbMode::kCstmOnly) return o;
  o.f_d = oracle::conv_pointwise(f, p.down_w, p.down_b);
  o.f_pm = oracle::conv_cw_spatial(o.f_d, p.kpm);
  o.f_m_raw = oracle::shifted_subtract(o.f_d, o.f_pm);
  o.f_m_up = oracle::conv_pointwise(o.f_m_raw, p.up_m_w, p.up_m_b);
  if (p.mode != McbMode::kMcb) return o;
  o.f_pmm = oracle::conv_cw_spatial(o.f_m_raw, p.kpm);
  o.f_mm_raw = oracle::shifted_subtract(o.f_m_raw, o.f_pmm);
  o.f_mm_up = oracle::conv_pointwise(o.f_mm_raw, p.up_mm_w, p.up_mm_b);
  return o;
}

}  // namespace

TEST_SUITE("blocks") {

TEST_CASE("reduced_channels applies the 1/16 rule with a floor of one") {
  CHECK(reduced_channels(16, 16) == 1);
  CHECK(reduced_channels(32, 16) == 2);
  CHECK(reduced_channels(64, 16) == 4);
  CHECK(reduced_channels(4, 16) == 1);   // below the ratio: floor
  CHECK(reduced_channels(1, 16) == 1);
  CHECK_THROWS_AS(reduced_channels(24, 16), ConfigError);
  CHECK_THROWS_AS(reduced_channels(16, 0), ConfigError);
}

TEST_CASE("uniform_init respects the fan-in bound and the seed") {
  SplitMix64 a(7), b(7), c(8);
  const Tensor<double> t1 = uniform_init<double>({4, 3, 3}, 9, a);
  const Tensor<double> t2 = uniform_init<double>({4, 3, 3}, 9, b);
  const Tensor<double> t3 = uniform_init<double>({4, 3, 3}, 9, c);
  CHECK(t1.data == t2.data);
  CHECK(t1.data != t3.data);
  const double bound = std::sqrt(6.0 / 9.0);
  for (double v : t1.data) CHECK(std::abs(v) <= bound);
}

TEST_CASE("mode names round trip") {
  CHECK(parse_mcb_mode("cstm_only") == McbMode::kCstmOnly);
  CHECK(parse_mcb_mode("stm") == McbMode::kStm);
  CHECK(parse_mcb_mode("mcb") == McbMode::kMcb);
  CHECK(to_string(McbMode::kStm) == "stm");
  CHECK_THROWS_AS(parse_mcb_mode("spicy"), ConfigError);
}

TEST_CASE("make_mcb_params is deterministic per seed") {
  SplitMix64 a(5), b(5);
  const McbParams<double> p1 = make_mcb_params<double>(16, 16, McbMode::kMcb, a);
  const McbParams<double> p2 = make_mcb_params<double>(16, 16, McbMode::kMcb, b);
  CHECK(p1.kpm.data == p2.kpm.data);
  CHECK(p1.up_mm_w.data == p2.up_mm_w.data);
  CHECK(p1.down_b.data == std::vector<double>{0.0});
  CHECK(p1.reduced() == 1);
}

TEST_CASE("cstm with identity kernels is the identity") {
  SplitMix64 rng(41);
  const Tensor<double> f = rand_tensor({1, 4, 3, 5, 5}, rng);
  McbParams<double> p;
  p.mode = McbMode::kCstmOnly;
  p.temporal_k = identity_temporal_kernel<double>(4);
  p.spatial_k = identity_spatial_kernel<double>(4);
  CHECK(max_abs_diff(cstm_forward(f, p), f) == 0.0);
}

TEST_CASE("cstm matches the composed oracle") {
  SplitMix64 rng(42);
  const Tensor<double> f = rand_tensor({2, 4, 3, 4, 4}, rng);
  const McbParams<double> p = make_mcb_params<double>(4, 16, McbMode::kCstmOnly, rng);
  CHECK(max_abs_diff(cstm_forward(f, p), run_oracle(f, p).f_s) < 1e-12);
}

TEST_CASE("cmm follows the downsample / premodel / subtract / restore chain") {
  SplitMix64 rng(43);
  const Tensor<double> f = rand_tensor({1, 8, 4, 4, 4}, rng);
  const McbParams<double> p = make_mcb_params<double>(8, 4, McbMode::kStm, rng);
  const CmmOut<double> got = cmm_forward(f, p);
  const OracleMcb want = run_oracle(f, p);
  CHECK(got.f_m_raw.shape == Shape{1, 2, 4, 4, 4});  // C_r = 8/4
  CHECK(max_abs_diff(got.f_m_raw, want.f_m_raw) < 1e-12);
  CHECK(max_abs_diff(got.f_m_up, want.f_m_up) < 1e-12);
  // frame 0 of the raw motion feature is the zero map
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t i = 0; i < 4; ++i)
      for (std::int64_t j = 0; j < 4; ++j) CHECK(got.f_m_raw.at5(0, c, 0, i, j) == 0.0);
}

TEST_CASE("mcm applies the shared kernel a second time") {
  SplitMix64 rng(44);
  const Tensor<double> f = rand_tensor({1, 8, 4, 4, 4}, rng);
  const McbParams<double> p = make_mcb_params<double>(8, 4, McbMode::kMcb, rng);
  const McmOut<double> got = mcm_forward(f, p);
  const OracleMcb want = run_oracle(f, p);
  CHECK(max_abs_diff(got.f_mm_raw, want.f_mm_raw) < 1e-12);
  CHECK(max_abs_diff(got.f_mm_up, want.f_mm_up) < 1e-12);

  // falsification: an oracle that premodels the second difference with a
  // different kernel must disagree
  McbParams<double> q = p;
  q.kpm = rand_tensor({2, 3, 3}, rng);
  Tensor<double> f_pmm_wrong = oracle::conv_cw_spatial(want.f_m_raw, q.kpm);
  Tensor<double> f_mm_wrong = oracle::shifted_subtract(want.f_m_raw, f_pmm_wrong);
  CHECK(max_abs_diff(got.f_mm_raw, f_mm_wrong) > 1e-6);

  // and mutating the shared kernel moves both differencing stages
  const McmOut<double> moved = mcm_forward(f, q);
  CHECK(max_abs_diff(moved.f_mm_raw, got.f_mm_raw) > 1e-6);
  CHECK(max_abs_diff(moved.f_mm_raw, oracle::shifted_subtract(
                                         oracle::shifted_subtract(
                                             oracle::conv_pointwise(f, q.down_w, q.down_b),
                                             oracle::conv_cw_spatial(
                                                 oracle::conv_pointwise(f, q.down_w, q.down_b),
                                                 q.kpm)),
                                         oracle::conv_cw_spatial(
                                             oracle::shifted_subtract(
                                                 oracle::conv_pointwise(f, q.down_w, q.down_b),
                                                 oracle::conv_cw_spatial(
                                                     oracle::conv_pointwise(f, q.down_w,
                                                                            q.down_b),
                                                     q.kpm)),
                                             q.kpm))) < 1e-12);
}

TEST_CASE("mcb output is the sum of its restored components") {
  SplitMix64 rng(45);
  const Tensor<double> f = rand_tensor({2, 8, 3, 4, 4}, rng);
  const McbParams<double> p = make_mcb_params<double>(8, 4, McbMode::kMcb, rng);
  const OracleMcb o = run_oracle(f, p);
  const Tensor<double> want = oracle::add(oracle::add(o.f_s, o.f_m_up), o.f_mm_up);
  CHECK(max_abs_diff(mcb_forward(f, p), want) < 1e-12);
}

TEST_CASE("stm mode drops the second-order term") {
  SplitMix64 rng(46);
  const Tensor<double> f = rand_tensor({1, 8, 3, 4, 4}, rng);
  const McbParams<double> p = make_mcb_params<double>(8, 4, McbMode::kStm, rng);
  const OracleMcb o = run_oracle(f, p);
  CHECK(max_abs_diff(mcb_forward(f, p), oracle::add(o.f_s, o.f_m_up)) < 1e-12);
}

TEST_CASE("mcb with zero restoration kernels equals cstm alone") {
  SplitMix64 rng(47);
  const Tensor<double> f = rand_tensor({1, 8, 3, 4, 4}, rng);
  McbParams<double> p = make_mcb_params<double>(8, 4, McbMode::kMcb, rng);
  p.up_m_w.fill(0.0);
  p.up_m_b.fill(0.0);
  p.up_mm_w.fill(0.0);
  p.up_mm_b.fill(0.0);
  McbParams<double> cstm = p;
  cstm.mode = McbMode::kCstmOnly;
  CHECK(max_abs_diff(mcb_forward(f, p), cstm_forward(f, cstm)) == 0.0);
}

TEST_CASE("temporally constant input with identity premodel kills the motion terms") {
  SplitMix64 rng(48);
  Tensor<double> frame = rand_tensor({1, 8, 1, 4, 4}, rng);
  Tensor<double> f({1, 8, 5, 4, 4});
  for (std::int64_t c = 0; c < 8; ++c)
    for (std::int64_t t = 0; t < 5; ++t)
      for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 4; ++j) f.at5(0, c, t, i, j) = frame.at5(0, c, 0, i, j);

  McbParams<double> p = make_mcb_params<double>(8, 4, McbMode::kMcb, rng);
  p.kpm = identity_spatial_kernel<double>(2);
  const McmOut<double> m = mcm_forward(f, p);
  for (double v : m.f_mm_raw.data) CHECK(v == 0.0);
  const CmmOut<double> c = cmm_forward(f, p);
  for (double v : c.f_m_raw.data) CHECK(v == 0.0);

  // with zero restoration biases the whole block collapses onto the CSTM path
  McbParams<double> cstm = p;
  cstm.mode = McbMode::kCstmOnly;
  CHECK(max_abs_diff(mcb_forward(f, p), cstm_forward(f, cstm)) == 0.0);
}

TEST_CASE("cmm_forward refuses cstm-only parameters") {
  SplitMix64 rng(49);
  const McbParams<double> p = make_mcb_params<double>(8, 4, McbMode::kCstmOnly, rng);
  const Tensor<double> f = rand_tensor({1, 8, 3, 4, 4}, rng);
  CHECK_THROWS_AS(cmm_forward(f, p), ConfigError);
  const McbParams<double> stm = make_mcb_params<double>(8, 4, McbMode::kStm, rng);
  CHECK_THROWS_AS(mcm_forward(f, stm), ConfigError);
}

TEST_CASE("anomaly branch with zero weights is the identity") {
  SplitMix64 rng(50);
  const Tensor<double> f = rand_tensor({1, 4, 2, 4, 4}, rng);
  AdParams<double> p;
  for (int i = 0; i < kAdUnits; ++i)
    p.units.push_back({Tensor<double>({4, 3, 3}, 0.0), Tensor<double>({4, 4}, 0.0),
                       Tensor<double>({4}, 0.0)});
  CHECK(max_abs_diff(ad_forward(f, p), f) == 0.0);

  // the default init zeroes each closing conv, so it starts as the identity too
  SplitMix64 prng(51);
  const AdParams<double> init = make_ad_params<double>(4, prng);
  CHECK(max_abs_diff(ad_forward(f, init), f) == 0.0);
}

TEST_CASE("anomaly branch matches the residual-unit oracle") {
  SplitMix64 rng(52);
  const Tensor<double> f = rand_tensor({1, 4, 2, 4, 4}, rng);
  AdParams<double> p = make_ad_params<double>(4, rng);
  for (auto& u : p.units) {
    u.pw_w = rand_tensor({4, 4}, rng, -0.3, 0.3);
    u.pw_b = rand_tensor({4}, rng, -0.1, 0.1);
  }
  Tensor<double> x = f;
  for (const auto& u : p.units)
    x = oracle::add(x, oracle::conv_pointwise(oracle::relu(oracle::conv_cw_spatial(x, u.cw_k)),
                                              u.pw_w, u.pw_b));
  CHECK(max_abs_diff(ad_forward(f, p), x) < 1e-12);
}

TEST_CASE("ad parameter validation") {
  SplitMix64 rng(53);
  AdParams<double> p = make_ad_params<double>(4, rng);
  CHECK_NOTHROW(check_ad_params(p));
  p.units.pop_back();
  CHECK_THROWS_AS(check_ad_params(p), DimError);
  const Tensor<double> wrong = rand_tensor({1, 6, 2, 4, 4}, rng);
  const AdParams<double> q = make_ad_params<double>(4, rng);
  CHECK_THROWS_AS(ad_forward(wrong, q), DimError);
}

TEST_CASE("block-level finite-difference checks pass at seed 1") {
  for (const char* name : {"cstm_block", "cmm_block", "mcm_block", "mcb_block", "ad_block"}) {
    const gradcheck::Report rep = gradcheck::run_check(name, 1);
    CAPTURE(name);
    CHECK(rep.pass());
  }
}

}  // TEST_SUITE
