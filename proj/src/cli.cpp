#include "cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "checkpoint.hpp"
#include "data_synth.hpp"
#include "evaluation.hpp"
#include "gml/gradcheck.hpp"
#include "gml/network.hpp"
#include "tensor_io.hpp"
#include "trainer.hpp"

namespace gml::cli {

namespace {

namespace fs = std::filesystem;

constexpr std::uint64_t kSampleSeedStream = 0x64617461;

// The reference architecture every train run uses; only mode and the anomaly
// branch are switchable from the command line.
constexpr int kStages = 2;
constexpr std::int64_t kBaseWidth = 16;
constexpr std::int64_t kWidthMultiplier = 2;
constexpr std::int64_t kReductionRatio = 16;

McbMode mode_from_flag(const std::string& s) {
  if (s == "cstm") return McbMode::kCstmOnly;
  return parse_mcb_mode(s);
}

struct ShapeFlag {
  std::int64_t c = 3, t = 8, h = 32, w = 32;
  std::string str() const {
    return std::to_string(c) + "," + std::to_string(t) + "," + std::to_string(h) + "," +
           std::to_string(w);
  }
};

ShapeFlag parse_shape(const std::string& s) {
  ShapeFlag out;
  std::int64_t v[4];
  char extra;
  if (std::sscanf(s.c_str(), "%ld,%ld,%ld,%ld%c", &v[0], &v[1], &v[2], &v[3], &extra) != 4)
    throw CLI::ValidationError("--shape", "expected C,T,H,W");
  out.c = v[0];
  out.t = v[1];
  out.h = v[2];
  out.w = v[3];
  if (out.c != kInputChannels)
    throw CLI::ValidationError("--shape", "channel count must be 3");
  if (out.t < 1 || out.h < 2 || out.w < 2)
    throw CLI::ValidationError("--shape", "need T>=1 and H,W>=2");
  return out;
}

int cmd_gen_data(const std::string& out_dir, std::int64_t count, double fake_ratio,
                 std::uint64_t seed, const ShapeFlag& shape, double jitter_amp,
                 double region_fraction) {
  GenParams p;
  p.t = shape.t;
  p.h = shape.h;
  p.w = shape.w;
  p.jitter_amp = jitter_amp;
  p.region_fraction = region_fraction;
  validate(p);
  if (count < 1) throw ConfigError("--count must be >= 1");
  if (fake_ratio < 0 || fake_ratio > 1) throw ConfigError("--fake-ratio must be in [0,1]");

  std::cout << "config: cmd=gen-data out=" << out_dir << " count=" << count
            << " fake_ratio=" << fake_ratio << " seed=" << seed << " shape=" << shape.str()
            << " jitter_amp=" << jitter_amp << " region_fraction=" << region_fraction << "\n";

  fs::create_directories(out_dir);
  const std::int64_t n_fake = std::llround(static_cast<double>(count) * fake_ratio);
  SplitMix64 seeds = seed_stream(seed, kSampleSeedStream);

  std::vector<ManifestEntry> manifest;
  char name[32];
  for (std::int64_t i = 0; i < count; ++i) {
    ManifestEntry e;
    std::snprintf(name, sizeof(name), "sample_%05lld.gmlt", static_cast<long long>(i));
    e.path = name;
    e.label = i < count - n_fake ? 0 : 1;
    e.seed = seeds.next();
    const SequenceSample s = gen_sequence(p, e.label, e.seed);
    write_tensor((fs::path(out_dir) / e.path).string(), s.tensor);
    manifest.push_back(std::move(e));
  }
  write_manifest((fs::path(out_dir) / "manifest.csv").string(), manifest);
  std::cout << "wrote " << count << " sequences (" << n_fake << " fake) to " << out_dir << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_ckpt, std::uint64_t steps,
              double lr, double wd, int batch, double clip, const std::string& mode_s,
              const std::string& ad_s, std::uint64_t seed, const std::string& log_path) {
  ModelConfig mcfg;
  mcfg.stages = kStages;
  mcfg.base_width = kBaseWidth;
  mcfg.width_multiplier = kWidthMultiplier;
  mcfg.reduction_ratio = kReductionRatio;
  mcfg.mode = mode_from_flag(mode_s);
  mcfg.ad_enabled = ad_s == "on";
  mcfg.seed = seed;

  TrainConfig tcfg;
  tcfg.lr = lr;
  tcfg.weight_decay = wd;
  tcfg.batch_size = batch;
  tcfg.steps = steps;
  tcfg.seed = seed;
  tcfg.clip_norm = clip;

  std::cout << "config: cmd=train data=" << data_dir << " out=" << out_ckpt << " steps=" << steps
            << " lr=" << lr << " wd=" << wd << " batch=" << batch << " clip=" << clip
            << " mode=" << mode_s << " ad=" << ad_s << " seed=" << seed
            << " log=" << (log_path.empty() ? "-" : log_path)
            << " arch=stages:" << kStages << ",width:" << kBaseWidth << ",mult:" << kWidthMultiplier
            << ",ratio:" << kReductionRatio << "\n";

  const Dataset ds = load_dataset(data_dir);
  Trainer tr = make_trainer(mcfg, tcfg);
  const std::vector<MetricsRow> log = train(tr, ds);
  for (const auto& r : log) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "step %llu: l_cls1=%.6g l_l1=%.6g l_cls2=%.6g total=%.6g\n",
                  static_cast<unsigned long long>(r.step), static_cast<double>(r.l_cls1),
                  static_cast<double>(r.l_l1), static_cast<double>(r.l_cls2),
                  static_cast<double>(r.total));
    std::cout << buf;
  }
  save_checkpoint(out_ckpt, make_checkpoint(tr));
  if (!log_path.empty()) write_metrics_csv(log_path, log);
  std::cout << "saved checkpoint to " << out_ckpt << " at step " << tr.step << "\n";
  return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& ckpt_path,
             const std::string& report_path) {
  std::cout << "config: cmd=eval data=" << data_dir << " ckpt=" << ckpt_path
            << " report=" << report_path << "\n";
  const Dataset ds = load_dataset(data_dir);
  const Model<float> m = model_from_checkpoint(load_checkpoint(ckpt_path));
  ScoredSet set;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Prediction<float> pr = predict(m, ds.tensors[i]);
    set.scores.push_back(static_cast<double>(pr.score[0]));
    set.labels.push_back(ds.labels[i]);
  }
  const double acc_v = accuracy(set);
  const double auc_v = auc(set);
  write_report(report_path, acc_v, auc_v);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "acc,%.9g\nauc,%.9g\n", acc_v, auc_v);
  std::cout << buf;
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& op) {
  std::cout << "config: cmd=gradcheck seed=" << seed << " op=" << (op.empty() ? "all" : op)
            << "\n";
  std::vector<gradcheck::Report> reports;
  if (op.empty())
    reports = gradcheck::run_all(seed);
  else
    reports.push_back(gradcheck::run_check(op, seed));
  bool all_pass = true;
  for (const auto& r : reports) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "op %-26s max_rel_err=%.3e coords=%lld skipped=%lld %s\n",
                  r.name.c_str(), r.max_rel_err, static_cast<long long>(r.coords),
                  static_cast<long long>(r.skipped), r.pass() ? "ok" : "FAIL");
    std::cout << buf;
    all_pass = all_pass && r.pass();
  }
  std::cout << (all_pass ? "gradcheck: PASS\n" : "gradcheck: FAIL\n");
  return all_pass ? 0 : 2;
}

int cmd_heatmap(const std::string& ckpt_path, const std::string& input_path,
                const std::string& prefix) {
  std::cout << "config: cmd=heatmap ckpt=" << ckpt_path << " input=" << input_path
            << " out=" << prefix << "\n";
  const Model<float> m = model_from_checkpoint(load_checkpoint(ckpt_path));
  if (!m.cfg.ad_enabled) throw ConfigError("checkpoint has no anomaly branch");
  const Tensor<float> x = read_tensor(input_path);
  if (x.dim(0) != 1) throw DimError("heatmap input must have batch dim 1");
  const ForwardOut<float> out = forward(m, x);
  const std::vector<std::string> files = export_heatmap(out.f_star, prefix);
  for (const auto& f : files) std::cout << "wrote " << f << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"motion-consistency forgery detector"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic labeled dataset");
  std::string gen_out;
  std::int64_t gen_count = 64;
  double gen_fake_ratio = 0.5;
  std::uint64_t gen_seed = 0;
  std::string gen_shape = "3,8,32,32";
  GenParams gen_defaults;
  double gen_jitter = gen_defaults.jitter_amp;
  double gen_region = gen_defaults.region_fraction;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of sequences")->required();
  gen->add_option("--fake-ratio", gen_fake_ratio, "fraction of fake sequences")->capture_default_str();
  gen->add_option("--seed", gen_seed, "master seed")->capture_default_str();
  gen->add_option("--shape", gen_shape, "C,T,H,W")->capture_default_str();
  gen->add_option("--jitter-amp", gen_jitter, "fake per-frame displacement")->capture_default_str();
  gen->add_option("--region-fraction", gen_region, "manipulated area fraction")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train a detector");
  std::string tr_data, tr_out, tr_mode = "mcb", tr_ad = "on", tr_log;
  std::uint64_t tr_steps = 0, tr_seed = 0;
  double tr_lr = 0.001, tr_wd = 1e-6, tr_clip = TrainConfig{}.clip_norm;
  int tr_batch = 16;
  tr->add_option("--data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "checkpoint output path")->required();
  tr->add_option("--steps", tr_steps, "total optimizer steps")->capture_default_str();
  tr->add_option("--lr", tr_lr, "learning rate")->capture_default_str();
  tr->add_option("--wd", tr_wd, "weight decay")->capture_default_str();
  tr->add_option("--batch", tr_batch, "batch size")->capture_default_str();
  tr->add_option("--clip", tr_clip, "global gradient-norm cap, 0 = off")->capture_default_str();
  tr->add_option("--mode", tr_mode, "block mode")->capture_default_str()
      ->check(CLI::IsMember({"cstm", "stm", "mcb"}));
  tr->add_option("--ad", tr_ad, "anomaly branch on/off")->capture_default_str()
      ->check(CLI::IsMember({"on", "off"}));
  tr->add_option("--seed", tr_seed, "master seed")->capture_default_str();
  tr->add_option("--log", tr_log, "metrics CSV path");
  tr->set_config("--config", "", "key = value config file; flags win");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_data, ev_ckpt, ev_report;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--report", ev_report, "report CSV path")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::uint64_t gc_seed = 1;
  std::string gc_op;
  gc->add_option("--seed", gc_seed, "probe seed")->capture_default_str();
  gc->add_option("--op", gc_op, "check a single op by name");

  // heatmap
  auto* hm = app.add_subcommand("heatmap", "export per-frame anomaly maps");
  std::string hm_ckpt, hm_input, hm_out;
  hm->add_option("--ckpt", hm_ckpt, "checkpoint path")->required();
  hm->add_option("--input", hm_input, "input .gmlt tensor (batch 1)")->required();
  hm->add_option("--out", hm_out, "output PGM path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n" << app.help() << std::flush;
    return 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_count, gen_fake_ratio, gen_seed, parse_shape(gen_shape),
                          gen_jitter, gen_region);
    if (tr->parsed())
      return cmd_train(tr_data, tr_out, tr_steps, tr_lr, tr_wd, tr_batch, tr_clip, tr_mode, tr_ad,
                       tr_seed, tr_log);
    if (ev->parsed()) return cmd_eval(ev_data, ev_ckpt, ev_report);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_op);
    if (hm->parsed()) return cmd_heatmap(hm_ckpt, hm_input, hm_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace gml::cli
