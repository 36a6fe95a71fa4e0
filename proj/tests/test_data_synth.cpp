#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "data_synth.hpp"
#include "doctest.h"
#include "gml/common.hpp"
#include "tensor_io.hpp"

using namespace gml;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const fs::path dir = fs::temp_directory_path() / "gml_synth_tests";
  fs::create_directories(dir);
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return s;
}

void write_bytes(const fs::path& p, const std::string& s) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// mean |x_t - 2 x_{t-1} + x_{t-2}| inside a box, all channels, t >= 2
double second_difference_energy(const Tensor<float>& x, const Box& box) {
  const std::int64_t T = x.dim(2);
  double acc = 0;
  std::int64_t n = 0;
  for (std::int64_t c = 0; c < x.dim(1); ++c)
    for (std::int64_t t = 2; t < T; ++t)
      for (std::int64_t y = box.y0; y < box.y0 + box.side; ++y)
        for (std::int64_t xx = box.x0; xx < box.x0 + box.side; ++xx) {
          const double d = static_cast<double>(x.at5(0, c, t, y, xx)) -
                           2.0 * x.at5(0, c, t - 1, y, xx) + x.at5(0, c, t - 2, y, xx);
          acc += std::abs(d);
          ++n;
        }
  return acc / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("data_synth") {

TEST_CASE("crop_box side is 2*sqrt(wh), rounded half up, centered") {
  CHECK(crop_box(100, 100, 0, 0).side == 200);
  CHECK(crop_box(64, 100, 0, 0).side == 160);
  CHECK(crop_box(50, 200, 0, 0).side == 200);
  CHECK(crop_box(3, 3, 0, 0).side == 6);
  CHECK(crop_box(5, 10, 0, 0).side == 14);  // 2*sqrt(50) = 14.14..

  const Box b = crop_box(100, 100, 70, 40);
  CHECK(b.x0 == 70 - 100);  // may extend past the image, caller clamps
  CHECK(b.y0 == 40 - 100);

  for (auto [w, h] : {std::pair<std::int64_t, std::int64_t>{7, 13}, {1, 999}, {40, 90}}) {
    const Box ab = crop_box(w, h, 5, 6), ba = crop_box(h, w, 5, 6);
    CHECK(ab.side == ba.side);
    CHECK(ab.x0 == ba.x0);
  }
  CHECK_THROWS_AS(crop_box(0, 5, 0, 0), ConfigError);
  CHECK_THROWS_AS(crop_box(5, -1, 0, 0), ConfigError);
}

TEST_CASE("sample_frames keeps every stride-th frame in non-overlapping windows") {
  const auto two = sample_frames(32, 2, 8);
  REQUIRE(two.size() == 2);
  CHECK(two[0] == std::vector<std::int64_t>{0, 2, 4, 6, 8, 10, 12, 14});
  CHECK(two[1] == std::vector<std::int64_t>{16, 18, 20, 22, 24, 26, 28, 30});

  const auto one = sample_frames(15, 2, 8);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == std::vector<std::int64_t>{0, 2, 4, 6, 8, 10, 12, 14});

  CHECK(sample_frames(7).empty());
  CHECK(sample_frames(0).empty());

  // stride 3: indices 0,3,..,27; two windows of 4, trailing partial dropped
  const auto s3 = sample_frames(28, 3, 4);
  REQUIRE(s3.size() == 2);
  CHECK(s3[0] == std::vector<std::int64_t>{0, 3, 6, 9});
  CHECK(s3[1] == std::vector<std::int64_t>{12, 15, 18, 21});

  CHECK_THROWS_AS(sample_frames(10, 0, 8), ConfigError);
  CHECK_THROWS_AS(sample_frames(-1, 2, 8), ConfigError);
}

TEST_CASE("generation is deterministic and bounded") {
  GenParams p;
  for (int label : {0, 1}) {
    const SequenceSample a = gen_sequence(p, label, 42);
    const SequenceSample b = gen_sequence(p, label, 42);
    const SequenceSample c = gen_sequence(p, label, 43);
    CHECK(a.tensor.data == b.tensor.data);
    CHECK(a.tensor.data != c.tensor.data);
    CHECK(a.label == label);
    CHECK(a.tensor.shape == Shape{1, 3, 8, 32, 32});
    for (float v : a.tensor.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}

TEST_CASE("zero jitter makes the fake identical to its paired real") {
  GenParams p;
  p.jitter_amp = 0.0;
  const SequenceSample real = gen_sequence(p, 0, 7);
  const SequenceSample fake = gen_sequence(p, 1, 7);
  CHECK(real.tensor.data == fake.tensor.data);
}

TEST_CASE("the fake differs from its paired real only inside the manipulated region") {
  GenParams p;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 11ULL}) {
    const SequenceSample real = gen_sequence(p, 0, seed);
    const SequenceSample fake = gen_sequence(p, 1, seed);
    const Box box = manipulation_box(p, seed);
    bool inside_differs = false;
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t t = 0; t < p.t; ++t)
        for (std::int64_t y = 0; y < p.h; ++y)
          for (std::int64_t x = 0; x < p.w; ++x) {
            const bool inside = y >= box.y0 && y < box.y0 + box.side && x >= box.x0 &&
                                x < box.x0 + box.side;
            const float rv = real.tensor.at5(0, c, t, y, x);
            const float fv = fake.tensor.at5(0, c, t, y, x);
            if (!inside) {
              CHECK(rv == fv);
            } else if (rv != fv) {
              inside_differs = true;
            }
          }
    CHECK(inside_differs);
  }
}

TEST_CASE("second-difference energy separates fake from real on >= 95 of 100 seeds") {
  GenParams p;
  int fake_wins = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const SequenceSample real = gen_sequence(p, 0, seed);
    const SequenceSample fake = gen_sequence(p, 1, seed);
    const Box box = manipulation_box(p, seed);
    if (second_difference_energy(fake.tensor, box) > second_difference_energy(real.tensor, box))
      ++fake_wins;
  }
  CHECK(fake_wins >= 95);
}

TEST_CASE("generator parameter validation") {
  GenParams p;
  p.t = 0;
  CHECK_THROWS_AS(validate(p), ConfigError);
  p = GenParams{};
  p.region_fraction = 0.0;
  CHECK_THROWS_AS(validate(p), ConfigError);
  p = GenParams{};
  p.jitter_amp = -0.5;
  CHECK_THROWS_AS(validate(p), ConfigError);
  p = GenParams{};
  p.velocity_hi = p.velocity_lo - 1;
  CHECK_THROWS_AS(validate(p), ConfigError);
  CHECK_THROWS_AS(gen_sequence(GenParams{}, 2, 0), ConfigError);
}

TEST_CASE("tensor files round trip bit-exactly") {
  const fs::path dir = scratch_dir();
  const fs::path file = dir / "roundtrip.gmlt";
  SplitMix64 rng(19);
  Tensor<float> t({2, 3, 4, 5, 6});
  for (float& v : t.data) v = static_cast<float>(rng.uniform(-10.0, 10.0));
  write_tensor(file.string(), t);
  const Tensor<float> back = read_tensor(file.string());
  CHECK(back.shape == t.shape);
  CHECK(back.data == t.data);
}

TEST_CASE("a one-element tensor file is exactly 31 bytes") {
  const fs::path file = scratch_dir() / "tiny.gmlt";
  write_tensor(file.string(), Tensor<float>({1, 1, 1, 1, 1}, 0.25f));
  CHECK(fs::file_size(file) == 31);
}

TEST_CASE("malformed tensor files raise typed format errors") {
  const fs::path dir = scratch_dir();
  const fs::path good = dir / "good.gmlt";
  write_tensor(good.string(), Tensor<float>({1, 1, 2, 2, 2}, 1.0f));
  const std::string bytes = read_bytes(good);

  auto kind_of = [](const fs::path& p) {
    try {
      read_tensor(p.string());
    } catch (const FormatError& e) {
      return e.kind();
    }
    throw std::runtime_error("expected a FormatError");
  };

  const fs::path bad = dir / "bad.gmlt";
  std::string b = bytes;
  b[0] = 'X';
  write_bytes(bad, b);
  CHECK(kind_of(bad) == FormatError::Kind::kBadMagic);

  b = bytes;
  b[4] = 9;
  write_bytes(bad, b);
  CHECK(kind_of(bad) == FormatError::Kind::kBadVersion);

  b = bytes;
  b[5] = 7;
  write_bytes(bad, b);
  CHECK(kind_of(bad) == FormatError::Kind::kBadDtype);

  b = bytes;
  b[6] = 4;
  write_bytes(bad, b);
  CHECK(kind_of(bad) == FormatError::Kind::kBadRank);

  b = bytes.substr(0, bytes.size() - 3);  // payload cut short
  write_bytes(bad, b);
  CHECK(kind_of(bad) == FormatError::Kind::kTruncated);

  b = bytes.substr(0, 10);  // header cut short
  write_bytes(bad, b);
  CHECK(kind_of(bad) == FormatError::Kind::kTruncated);

  b = bytes;  // dims whose product overflows the element cap
  for (int d = 0; d < 5; ++d)
    for (int i = 0; i < 4; ++i) b[7 + 4 * d + i] = static_cast<char>(0xFF);
  write_bytes(bad, b);
  CHECK(kind_of(bad) == FormatError::Kind::kDimOverflow);

  CHECK_THROWS_AS(read_tensor((dir / "missing.gmlt").string()), IoError);
}

TEST_CASE("manifests round trip and reject malformed rows") {
  const fs::path dir = scratch_dir();
  const fs::path mf = dir / "manifest.csv";
  const std::vector<ManifestEntry> entries{{"a.gmlt", 0, 5}, {"b.gmlt", 1, 99}};
  write_manifest(mf.string(), entries);
  const auto back = read_manifest(mf.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].path == "a.gmlt");
  CHECK(back[0].label == 0);
  CHECK(back[0].seed == 5);
  CHECK(back[1].path == "b.gmlt");
  CHECK(back[1].label == 1);
  CHECK(back[1].seed == 99);

  write_bytes(mf, "a.gmlt,0\n");
  CHECK_THROWS_AS(read_manifest(mf.string()), FormatError);
  write_bytes(mf, "a.gmlt,3,1\n");
  CHECK_THROWS_AS(read_manifest(mf.string()), FormatError);
  write_bytes(mf, "a.gmlt,zero,1\n");
  CHECK_THROWS_AS(read_manifest(mf.string()), FormatError);
  write_bytes(mf, "a.gmlt,0,1\na.gmlt,1,2\n");
  CHECK_THROWS_AS(read_manifest(mf.string()), FormatError);
}

}  // TEST_SUITE
