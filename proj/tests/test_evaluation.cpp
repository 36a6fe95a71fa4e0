#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "evaluation.hpp"
#include "gml/common.hpp"

using namespace gml;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "gml_eval_tests";
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

// brute-force doubled Mann-Whitney count: +2 per won pair, +1 per tie
AucParts pair_count_oracle(const ScoredSet& s) {
  AucParts parts;
  for (std::size_t i = 0; i < s.scores.size(); ++i) {
    if (s.labels[i] != 1) continue;
    for (std::size_t j = 0; j < s.scores.size(); ++j) {
      if (s.labels[j] != 0) continue;
      if (s.scores[i] > s.scores[j])
        parts.num2 += 2;
      else if (s.scores[i] == s.scores[j])
        parts.num2 += 1;
      parts.den2 += 2;
    }
  }
  return parts;
}

ScoredSet random_set(SplitMix64& rng, bool gridded) {
  const std::size_t n = 2 + static_cast<std::size_t>(rng.below(59));
  ScoredSet s;
  for (std::size_t i = 0; i < n; ++i) {
    if (gridded)
      s.scores.push_back(static_cast<double>(rng.below(17)) / 16.0);  // dense ties
    else
      s.scores.push_back(rng.uniform());
    s.labels.push_back(static_cast<int>(rng.below(2)));
  }
  s.labels[0] = 0;  // force both classes
  s.labels[n - 1] = 1;
  return s;
}

}  // namespace

TEST_SUITE("evaluation") {

TEST_CASE("accuracy hand counts and threshold semantics") {
  CHECK(accuracy({{0.9, 0.1}, {1, 0}}) == 1.0);
  CHECK(accuracy({{0.1, 0.9}, {1, 0}}) == 0.0);
  CHECK(accuracy({{0.6, 0.4, 0.7, 0.2}, {1, 1, 0, 0}}) == 0.5);
  CHECK(accuracy({{0.6, 0.4, 0.7, 0.2}, {1, 1, 0, 0}}, 0.65) == 0.25);
  // a score exactly at the threshold predicts fake
  CHECK(accuracy({{0.5}, {1}}) == 1.0);
  CHECK(accuracy({{0.5}, {0}}) == 0.0);
}

TEST_CASE("accuracy is permutation invariant") {
  const ScoredSet a{{0.9, 0.2, 0.7, 0.4, 0.55}, {1, 0, 0, 1, 1}};
  const ScoredSet b{{0.55, 0.4, 0.7, 0.2, 0.9}, {1, 1, 0, 0, 1}};
  CHECK(accuracy(a) == accuracy(b));
}

TEST_CASE("metric inputs are validated") {
  CHECK_THROWS_AS(accuracy({{}, {}}), Error);
  CHECK_THROWS_AS(accuracy({{0.5}, {0, 1}}), DimError);
  CHECK_THROWS_AS(accuracy({{0.5}, {2}}), Error);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(accuracy({{inf}, {1}}), Error);
  CHECK_THROWS_AS(auc({{0.2, 0.4}, {0, 0}}), Error);  // needs both classes
  CHECK_THROWS_AS(auc({{0.2, 0.4}, {1, 1}}), Error);
}

TEST_CASE("auc reaches its extremes and the tie midpoint") {
  CHECK(auc({{0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}}) == 1.0);
  CHECK(auc({{0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}}) == 0.0);
  CHECK(auc({{0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}}) == 0.5);
}

TEST_CASE("auc counts tied pairs at half weight") {
  // fake 0.5 vs reals {0.5, 0.3}: one tie, one win
  const AucParts p = auc_parts({{0.5, 0.5, 0.3}, {1, 0, 0}});
  CHECK(p.num2 == 3);
  CHECK(p.den2 == 4);
  CHECK(auc({{0.5, 0.5, 0.3}, {1, 0, 0}}) == 0.75);
}

TEST_CASE("auc is invariant under a strictly increasing score transform") {
  SplitMix64 rng = seed_stream(42, 0x6576616c);
  for (int rep = 0; rep < 50; ++rep) {
    ScoredSet s = random_set(rng, true);
    const AucParts before = auc_parts(s);
    ScoredSet t = s;
    for (double& v : t.scores) v = (v + 1.0) / 2.0;  // exact on the 1/16 grid
    const AucParts after = auc_parts(t);
    CHECK(before.num2 == after.num2);
    CHECK(before.den2 == after.den2);
  }
}

TEST_CASE("auc of flipped labels is the exact complement") {
  SplitMix64 rng = seed_stream(43, 0x65766c32);
  for (int rep = 0; rep < 50; ++rep) {
    ScoredSet s = random_set(rng, rep % 2 == 0);
    ScoredSet f = s;
    for (int& y : f.labels) y = 1 - y;
    const AucParts a = auc_parts(s);
    const AucParts b = auc_parts(f);
    CHECK(a.den2 == b.den2);
    CHECK(a.num2 + b.num2 == a.den2);
  }
}

TEST_CASE("auc matches brute-force pair counting on 1000 random sets") {
  SplitMix64 rng = seed_stream(7, 0x61756331);
  for (int rep = 0; rep < 1000; ++rep) {
    const ScoredSet s = random_set(rng, rep % 3 == 0);
    const AucParts fast = auc_parts(s);
    const AucParts slow = pair_count_oracle(s);
    REQUIRE(fast.num2 == slow.num2);
    REQUIRE(fast.den2 == slow.den2);
  }
}

TEST_CASE("heatmap export writes one normalized pgm per frame") {
  const fs::path dir = scratch_dir();

  Tensor<float> zero({1, 2, 3, 4, 5}, 0.0f);
  const auto paths = export_heatmap(zero, (dir / "zero").string());
  REQUIRE(paths.size() == 3);
  CHECK(paths[0] == (dir / "zero").string() + "_t0.pgm");
  CHECK(paths[2] == (dir / "zero").string() + "_t2.pgm");
  const std::string zero_header = "P5\n5 4\n255\n";
  for (const auto& p : paths) {
    const std::string bytes = read_bytes(p);
    REQUIRE(bytes.size() == zero_header.size() + 20);
    CHECK(bytes.substr(0, zero_header.size()) == zero_header);
    for (std::size_t i = zero_header.size(); i < bytes.size(); ++i) CHECK(bytes[i] == '\0');
  }

  Tensor<float> hot({1, 1, 1, 2, 2}, 0.0f);
  hot.data[3] = -7.0f;  // magnitude drives the map, sign does not
  const auto hp = export_heatmap(hot, (dir / "hot").string());
  const std::string bytes = read_bytes(hp[0]);
  const std::string hot_header = "P5\n2 2\n255\n";
  REQUIRE(bytes.size() == hot_header.size() + 4);
  CHECK(bytes.substr(0, hot_header.size()) == hot_header);
  CHECK(static_cast<unsigned char>(bytes[hot_header.size() + 0]) == 0);
  CHECK(static_cast<unsigned char>(bytes[hot_header.size() + 1]) == 0);
  CHECK(static_cast<unsigned char>(bytes[hot_header.size() + 2]) == 0);
  CHECK(static_cast<unsigned char>(bytes[hot_header.size() + 3]) == 255);
}

TEST_CASE("heatmap normalization ignores positive rescaling") {
  const fs::path dir = scratch_dir();
  SplitMix64 rng = seed_stream(9, 0x686d6170);
  Tensor<float> f({1, 3, 2, 6, 5});
  for (auto& v : f.data) v = static_cast<float>(rng.uniform() * 4.0 - 2.0);
  Tensor<float> g = f;
  for (auto& v : g.data) v *= 2.5f;

  const auto pa = export_heatmap(f, (dir / "scale_a").string());
  const auto pb = export_heatmap(g, (dir / "scale_b").string());
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(read_bytes(pa[i]) == read_bytes(pb[i]));
}

TEST_CASE("heatmap pixels match a direct recomputation") {
  const fs::path dir = scratch_dir();
  SplitMix64 rng = seed_stream(11, 0x686d6f72);
  const std::int64_t c_n = 4, t_n = 3, h = 5, w = 7;
  Tensor<float> f({1, c_n, t_n, h, w});
  for (auto& v : f.data) v = static_cast<float>(rng.uniform() * 2.0 - 1.0);

  const auto paths = export_heatmap(f, (dir / "orc").string());
  for (std::int64_t t = 0; t < t_n; ++t) {
    std::vector<double> map(static_cast<std::size_t>(h * w), 0.0);
    for (std::int64_t c = 0; c < c_n; ++c)
      for (std::int64_t i = 0; i < h * w; ++i)
        map[static_cast<std::size_t>(i)] +=
            std::abs(static_cast<double>(f.data[static_cast<std::size_t>(((c * t_n + t) * h * w) + i)]));
    for (double& v : map) v /= static_cast<double>(c_n);
    const auto [mn_it, mx_it] = std::minmax_element(map.begin(), map.end());
    const std::string bytes = read_bytes(paths[static_cast<std::size_t>(t)]);
    const std::size_t header = bytes.find("255\n") + 4;
    for (std::size_t i = 0; i < map.size(); ++i) {
      const long expect = std::lround((map[i] - *mn_it) * 255.0 / (*mx_it - *mn_it));
      CHECK(static_cast<long>(static_cast<unsigned char>(bytes[header + i])) == expect);
    }
  }
}

TEST_CASE("heatmap export rejects batched maps") {
  Tensor<float> two({2, 1, 1, 2, 2}, 1.0f);
  CHECK_THROWS_AS(export_heatmap(two, (scratch_dir() / "nope").string()), DimError);
}

TEST_CASE("report csv holds exactly the two metric rows") {
  const fs::path p = scratch_dir() / "report.csv";
  write_report(p.string(), 0.8125, 0.912);
  CHECK(read_bytes(p) == "metric,value\nacc,0.8125\nauc,0.912\n");
}

}  // TEST_SUITE
