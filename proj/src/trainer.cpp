#include "trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "tensor_io.hpp"

namespace gml {

namespace {
constexpr std::uint64_t kShuffleStream = 0x73687566;
}

void validate(const TrainConfig& cfg) {
  if (!(cfg.lr > 0)) throw ConfigError("lr must be > 0");
  if (cfg.weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.momentum < 0 || cfg.momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.log_every < 1) throw ConfigError("log_every must be >= 1");
  if (cfg.clip_norm < 0) throw ConfigError("clip_norm must be >= 0");
}

void clip_gradients(ParamStore<float>& params, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (int s = 0; s < params.size(); ++s)
    for (const float g : params.at(s).grad.data) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  const float scale = static_cast<float>(max_norm / norm);
  for (int s = 0; s < params.size(); ++s)
    for (float& g : params.at(s).grad.data) g *= scale;
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto entries = read_manifest((fs::path(dir) / "manifest.csv").string());
  if (entries.empty()) throw ConfigError("empty manifest in " + dir);
  Dataset d;
  d.tensors.reserve(entries.size());
  d.labels.reserve(entries.size());
  for (const auto& e : entries) {
    Tensor<float> t = read_tensor((fs::path(dir) / e.path).string());
    if (t.dim(0) != 1)
      throw FormatError(FormatError::Kind::kBadRecord,
                        "dataset tensor " + e.path + " must have batch dim 1");
    d.tensors.push_back(std::move(t));
    d.labels.push_back(e.label);
  }
  return d;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "step,l_cls1,l_l1,l_cls2,total\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%llu,%.9g,%.9g,%.9g,%.9g\n",
                  static_cast<unsigned long long>(r.step), static_cast<double>(r.l_cls1),
                  static_cast<double>(r.l_l1), static_cast<double>(r.l_cls2),
                  static_cast<double>(r.total));
    os << buf;
  }
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

Trainer make_trainer(const ModelConfig& mcfg, const TrainConfig& tcfg) {
  validate(tcfg);
  Trainer tr;
  tr.model = build_model<float>(mcfg);
  tr.cfg = tcfg;
  tr.rng = seed_stream(tcfg.seed, kShuffleStream);
  tr.ckpt_rng_state = tr.rng.state;
  if (tcfg.momentum != 0)
    for (const auto& e : tr.model.params.entries) tr.momentum.emplace_back(e.value.shape, 0.0f);
  return tr;
}

Trainer resume_trainer(const Checkpoint& ckpt, const TrainConfig& tcfg) {
  validate(tcfg);
  Trainer tr;
  tr.model = model_from_checkpoint(ckpt);
  tr.cfg = tcfg;
  tr.step = ckpt.step;
  tr.rng.state = ckpt.rng_state;
  tr.ckpt_rng_state = ckpt.rng_state;
  tr.momentum = ckpt.momentum;
  if (tcfg.momentum != 0 && tr.momentum.empty())
    for (const auto& e : tr.model.params.entries) tr.momentum.emplace_back(e.value.shape, 0.0f);
  if (tcfg.momentum == 0) tr.momentum.clear();
  return tr;
}

void sgd_step(ParamStore<float>& params, std::vector<Tensor<float>>& momentum,
              const TrainConfig& cfg) {
  const float lr = static_cast<float>(cfg.lr);
  const float wd = static_cast<float>(cfg.weight_decay);
  const float mu = static_cast<float>(cfg.momentum);
  for (int s = 0; s < params.size(); ++s) {
    auto& e = params.at(s);
    if (mu != 0.0f) {
      Tensor<float>& v = momentum[static_cast<std::size_t>(s)];
      for (std::int64_t i = 0; i < e.value.numel(); ++i) {
        v.data[i] = mu * v.data[i] + e.grad.data[i] + wd * e.value.data[i];
        e.value.data[i] -= lr * v.data[i];
      }
    } else {
      for (std::int64_t i = 0; i < e.value.numel(); ++i)
        e.value.data[i] -= lr * (e.grad.data[i] + wd * e.value.data[i]);
    }
  }
}

std::vector<MetricsRow> train(Trainer& tr, const Dataset& data) {
  validate(tr.cfg);
  const std::uint64_t n = data.size();
  const std::uint64_t batch = static_cast<std::uint64_t>(tr.cfg.batch_size);
  if (n < batch)
    throw ConfigError("dataset of " + std::to_string(n) + " samples is smaller than one batch");
  const std::uint64_t spe = n / batch;  // partial trailing batch is dropped

  if (tr.model.cfg.ad_enabled) {
    bool has_real = false, has_fake = false;
    for (int y : data.labels) (y == 0 ? has_real : has_fake) = true;
    if (!has_real || !has_fake)
      throw ConfigError("anomaly-branch training needs both real and fake samples");
  }

  // each epoch's order must be a pure function of the epoch-start rng state,
  // or a resumed run could not replay it; hence the reset to identity
  std::vector<std::uint64_t> perm(n);
  auto shuffle = [&perm, n](SplitMix64& rng) {
    for (std::uint64_t i = 0; i < n; ++i) perm[i] = i;
    for (std::uint64_t i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[static_cast<std::size_t>(rng.below(i + 1))]);
  };

  std::uint64_t epoch_start_state = tr.rng.state;
  bool have_perm = false;
  if (tr.step % spe != 0) {
    // resumed mid-epoch: rng currently holds the epoch-start state
    shuffle(tr.rng);
    have_perm = true;
  }

  std::vector<MetricsRow> log;
  const bool ad = tr.model.cfg.ad_enabled;
  const float inv_b = 1.0f / static_cast<float>(batch);

  while (tr.step < tr.cfg.steps) {
    const std::uint64_t cursor = tr.step % spe;
    if (cursor == 0 || !have_perm) {
      if (cursor != 0) throw Error("internal: lost batch permutation mid-epoch");
      epoch_start_state = tr.rng.state;
      shuffle(tr.rng);
      have_perm = true;
    }

    const std::uint64_t base = cursor * batch;
    int n_real = 0;
    for (std::uint64_t k = 0; k < batch; ++k)
      if (data.labels[static_cast<std::size_t>(perm[base + k])] == 0) ++n_real;
    const float l1_coeff = n_real > 0 ? 1.0f / static_cast<float>(n_real) : 0.0f;

    tr.model.params.zero_grad();
    MetricsRow row;
    row.step = tr.step + 1;
    for (std::uint64_t k = 0; k < batch; ++k) {
      const std::uint64_t idx = perm[base + k];
      const int label = data.labels[static_cast<std::size_t>(idx)];
      try {
        Tape<float> tp(&tr.model.params);
        const ForwardIds fwd =
            build_forward(tp, tr.model, tp.input(data.tensors[static_cast<std::size_t>(idx)]));
        const int ce1 = tp.softmax_cross_entropy(fwd.logits_main, {label});
        int contrib;
        if (ad) {
          const int l1 = tp.l1_norm(fwd.f_star);
          const int ce2 = tp.softmax_cross_entropy(fwd.logits_ad, {label});
          const float cl1 = label == 0 ? l1_coeff : 0.0f;
          contrib = tp.affine_combine({ce1, l1, ce2}, {inv_b, cl1, inv_b});
          row.l_l1 += cl1 * tp.val(l1).data[0];
          row.l_cls2 += inv_b * tp.val(ce2).data[0];
        } else {
          contrib = tp.affine_combine({ce1}, {inv_b});
        }
        row.l_cls1 += inv_b * tp.val(ce1).data[0];
        tp.backward(contrib);
        tp.accumulate_param_grads(tr.model.params);
      } catch (const Error& e) {
        throw Error("step " + std::to_string(tr.step + 1) + ", sample " + std::to_string(idx) +
                    ": " + e.what());
      }
    }
    row.total = row.l_cls1 + row.l_l1 + row.l_cls2;

    clip_gradients(tr.model.params, tr.cfg.clip_norm);
    sgd_step(tr.model.params, tr.momentum, tr.cfg);
    ++tr.step;
    tr.ckpt_rng_state = (tr.step % spe == 0) ? tr.rng.state : epoch_start_state;
    if (tr.step % static_cast<std::uint64_t>(tr.cfg.log_every) == 0 || tr.step == tr.cfg.steps)
      log.push_back(row);
  }
  return log;
}

Checkpoint make_checkpoint(const Trainer& tr) {
  return snapshot(tr.model, tr.step, tr.ckpt_rng_state, tr.momentum);
}

}  // namespace gml
