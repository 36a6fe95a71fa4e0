#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gml/tensor.hpp"

// Detection metrics and anomaly-map export. Scores are probabilities of the
// fake class; AUC is the Mann-Whitney statistic with midrank tie handling.

namespace gml {

struct ScoredSet {
  std::vector<double> scores;  // in [0,1]
  std::vector<int> labels;     // 1 = fake
};

double accuracy(const ScoredSet& s, double threshold = 0.5);

// AUC as an exact integer ratio: num2 = 2U, den2 = 2*n_fake*n_real.
struct AucParts {
  long long num2 = 0;
  long long den2 = 0;
};

AucParts auc_parts(const ScoredSet& s);
double auc(const ScoredSet& s);

// Per frame t of a (1,C,T,H,W) map: mean |value| over channels, min-max
// normalized to [0,255], written as binary PGM to `{prefix}_t{t}.pgm`.
// Constant frames come out all black. Returns the written paths.
std::vector<std::string> export_heatmap(const Tensor<float>& f_star, const std::string& prefix);

// `metric,value` CSV with header.
void write_report(const std::string& path, double acc, double auc_value);

}  // namespace gml
