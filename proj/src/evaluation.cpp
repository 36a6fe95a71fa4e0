#include "evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "gml/common.hpp"

namespace gml {

namespace {

void check_scored_set(const ScoredSet& s) {
  if (s.scores.empty()) throw Error("empty score set");
  if (s.scores.size() != s.labels.size()) throw DimError("scores/labels length mismatch");
  for (double v : s.scores)
    if (!std::isfinite(v)) throw Error("non-finite score");
  for (int y : s.labels)
    if (y != 0 && y != 1) throw Error("label " + std::to_string(y) + " outside {0,1}");
}

}  // namespace

double accuracy(const ScoredSet& s, double threshold) {
  check_scored_set(s);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    if ((s.scores[i] >= threshold) == (s.labels[i] == 1)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(s.scores.size());
}

AucParts auc_parts(const ScoredSet& s) {
  check_scored_set(s);
  const std::size_t n = s.scores.size();
  long long n_fake = 0;
  for (int y : s.labels) n_fake += y;
  const long long n_real = static_cast<long long>(n) - n_fake;
  if (n_fake == 0 || n_real == 0) throw Error("auc undefined: need both classes in the score set");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&s](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });

  // Midranks doubled to stay in integers: a tie block occupying 0-based sorted
  // positions [lo,hi] has doubled midrank lo+hi+2 for each member.
  long long sum2_fake = 0;
  std::size_t lo = 0;
  while (lo < n) {
    std::size_t hi = lo;
    while (hi + 1 < n && s.scores[order[hi + 1]] == s.scores[order[lo]]) ++hi;
    const long long rank2 = static_cast<long long>(lo) + static_cast<long long>(hi) + 2;
    for (std::size_t i = lo; i <= hi; ++i)
      if (s.labels[order[i]] == 1) sum2_fake += rank2;
    lo = hi + 1;
  }

  AucParts parts;
  parts.num2 = sum2_fake - n_fake * (n_fake + 1);
  parts.den2 = 2 * n_fake * n_real;
  return parts;
}

double auc(const ScoredSet& s) {
  const AucParts p = auc_parts(s);
  return static_cast<double>(p.num2) / static_cast<double>(p.den2);
}

std::vector<std::string> export_heatmap(const Tensor<float>& f_star, const std::string& prefix) {
  require_feature_map(f_star, "export_heatmap");
  if (f_star.dim(0) != 1) throw DimError("export_heatmap expects batch size 1");
  const std::int64_t c_n = f_star.dim(1), t_n = f_star.dim(2), h = f_star.dim(3), w = f_star.dim(4);

  std::vector<std::string> paths;
  std::vector<double> map(static_cast<std::size_t>(h * w));
  std::vector<unsigned char> bytes(static_cast<std::size_t>(h * w));
  for (std::int64_t t = 0; t < t_n; ++t) {
    std::fill(map.begin(), map.end(), 0.0);
    for (std::int64_t c = 0; c < c_n; ++c) {
      const float* pl = f_star.data.data() + (c * t_n + t) * h * w;
      for (std::int64_t i = 0; i < h * w; ++i)
        map[static_cast<std::size_t>(i)] += std::abs(static_cast<double>(pl[i]));
    }
    for (double& v : map) v /= static_cast<double>(c_n);
    double mn = map[0], mx = map[0];
    for (double v : map) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    if (mx > mn) {
      const double scale = 255.0 / (mx - mn);
      for (std::size_t i = 0; i < map.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround((map[i] - mn) * scale));
    } else {
      std::fill(bytes.begin(), bytes.end(), static_cast<unsigned char>(0));
    }

    const std::string path = prefix + "_t" + std::to_string(t) + ".pgm";
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os << "P5\n" << w << " " << h << "\n255\n";
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    os.flush();
    if (!os) throw IoError("write failed for '" + path + "'");
    paths.push_back(path);
  }
  return paths;
}

void write_report(const std::string& path, double acc, double auc_value) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  char buf[64];
  os << "metric,value\n";
  std::snprintf(buf, sizeof(buf), "acc,%.9g\n", acc);
  os << buf;
  std::snprintf(buf, sizeof(buf), "auc,%.9g\n", auc_value);
  os << buf;
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

}  // namespace gml
