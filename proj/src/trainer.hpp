#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "checkpoint.hpp"
#include "data_synth.hpp"
#include "gml/network.hpp"

// SGD training loop: epoch-wise seeded shuffling, per-sample backward passes
// accumulated into shared gradients, and resumable bit-exact checkpoints.

namespace gml {

struct TrainConfig {
  double lr = 0.001;
  double weight_decay = 1e-6;
  double momentum = 0.0;
  int batch_size = 16;
  std::uint64_t steps = 0;  // target total step count
  std::uint64_t seed = 0;
  int log_every = 10;
  // Cap on the global gradient norm before each update, 0 disables. The
  // zero-map penalty is an unweighted sum over a whole feature map, so its
  // raw gradients dwarf the cross-entropy terms by orders of magnitude at
  // the default learning rate; the cap turns that into a bounded descent
  // direction instead of an immediate overflow.
  double clip_norm = 5.0;
};

void validate(const TrainConfig& cfg);

struct Dataset {
  std::vector<Tensor<float>> tensors;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

// Reads manifest.csv in dir and loads every referenced tensor.
Dataset load_dataset(const std::string& dir);

struct MetricsRow {
  std::uint64_t step = 0;
  float l_cls1 = 0, l_l1 = 0, l_cls2 = 0, total = 0;
};

// `step,l_cls1,l_l1,l_cls2,total` with header.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);

struct Trainer {
  Model<float> model;
  TrainConfig cfg;
  std::uint64_t step = 0;
  SplitMix64 rng{0};
  // rng state a checkpoint taken now must carry: the state at the start of
  // the current epoch while mid-epoch, the live state on epoch boundaries
  std::uint64_t ckpt_rng_state = 0;
  std::vector<Tensor<float>> momentum;  // allocated only when cfg.momentum != 0
};

Trainer make_trainer(const ModelConfig& mcfg, const TrainConfig& tcfg);
Trainer resume_trainer(const Checkpoint& ckpt, const TrainConfig& tcfg);

// Rescales all gradients so their joint euclidean norm is at most max_norm.
// No-op when the norm is already within the cap or max_norm is 0.
void clip_gradients(ParamStore<float>& params, double max_norm);

// One SGD update over already-populated gradients.
void sgd_step(ParamStore<float>& params, std::vector<Tensor<float>>& momentum,
              const TrainConfig& cfg);

// Runs until tr.step == cfg.steps, appending logged rows. Logs every
// cfg.log_every steps and always at the final step.
std::vector<MetricsRow> train(Trainer& tr, const Dataset& data);

// Checkpoint whose restore continues training bit-exactly.
Checkpoint make_checkpoint(const Trainer& tr);

}  // namespace gml
