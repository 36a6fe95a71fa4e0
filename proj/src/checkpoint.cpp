#include "checkpoint.hpp"

#include <fstream>
#include <limits>
#include <map>

#include "binio.hpp"

namespace gml {

namespace {

constexpr char kMagic[4] = {'G', 'M', 'L', 'C'};
constexpr std::uint8_t kVersion = 1;
constexpr int kMaxRank = 8;

void write_shape_payload(std::ostream& os, const Tensor<float>& t) {
  binio::put_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d) {
    if (t.dim(d) > std::numeric_limits<std::uint32_t>::max())
      throw DimError("parameter dimension too large for checkpoint");
    binio::put_u32(os, static_cast<std::uint32_t>(t.dim(d)));
  }
  binio::put_f32(os, t.data.data(), t.numel());
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  if (!ckpt.momentum.empty() && ckpt.momentum.size() != ckpt.params.size())
    throw ConfigError("momentum buffer count does not match parameter count");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  binio::put_u8(os, kVersion);
  binio::put_u32(os, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, value] : ckpt.params) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max())
      throw ConfigError("parameter name too long: " + name);
    binio::put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_shape_payload(os, value);
  }
  binio::put_u64(os, ckpt.step);
  binio::put_u64(os, ckpt.rng_state);
  binio::put_u8(os, ckpt.momentum.empty() ? 0 : 1);
  for (std::size_t i = 0; i < ckpt.momentum.size(); ++i) {
    if (ckpt.momentum[i].shape != ckpt.params[i].second.shape)
      throw ConfigError("momentum buffer shape mismatch for " + ckpt.params[i].first);
    binio::put_f32(os, ckpt.momentum[i].data.data(), ckpt.momentum[i].numel());
  }
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  binio::expect_magic(is, kMagic, "GMLC checkpoint");
  if (const auto v = binio::get_u8(is, "version"); v != kVersion)
    throw FormatError(FormatError::Kind::kBadVersion,
                      "unsupported checkpoint version " + std::to_string(v));
  Checkpoint ckpt;
  const std::uint32_t count = binio::get_u32(is, "param count");
  ckpt.params.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = binio::get_u16(is, "name length");
    std::string name(len, '\0');
    binio::read_exact(is, name.data(), len, "name");
    const std::uint8_t rank = binio::get_u8(is, "ndim");
    if (rank == 0 || rank > kMaxRank)
      throw FormatError(FormatError::Kind::kBadRank,
                        "parameter '" + name + "' has rank " + std::to_string(rank));
    Shape shape(rank);
    std::int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const std::uint32_t v = binio::get_u32(is, "dims");
      if (v == 0)
        throw FormatError(FormatError::Kind::kBadRecord, "zero dimension for parameter " + name);
      shape[static_cast<std::size_t>(d)] = v;
      numel *= v;
      if (numel > kMaxTensorElems)
        throw FormatError(FormatError::Kind::kDimOverflow,
                          "parameter '" + name + "' dims overflow element budget");
    }
    Tensor<float> t(shape);
    binio::get_f32(is, t.data.data(), t.numel(), "parameter payload");
    ckpt.params.emplace_back(std::move(name), std::move(t));
  }
  ckpt.step = binio::get_u64(is, "step");
  ckpt.rng_state = binio::get_u64(is, "rng state");
  const std::uint8_t has_momentum = binio::get_u8(is, "momentum flag");
  if (has_momentum > 1)
    throw FormatError(FormatError::Kind::kBadRecord, "momentum flag must be 0 or 1");
  if (has_momentum) {
    ckpt.momentum.reserve(ckpt.params.size());
    for (const auto& [name, value] : ckpt.params) {
      Tensor<float> m(value.shape);
      binio::get_f32(is, m.data.data(), m.numel(), "momentum payload");
      ckpt.momentum.push_back(std::move(m));
    }
  }
  binio::expect_eof(is, "checkpoint");
  return ckpt;
}

Checkpoint snapshot(const Model<float>& m, std::uint64_t step, std::uint64_t rng_state,
                    const std::vector<Tensor<float>>& momentum) {
  Checkpoint ckpt;
  ckpt.step = step;
  ckpt.rng_state = rng_state;
  ckpt.params.reserve(static_cast<std::size_t>(m.params.size()));
  for (const auto& e : m.params.entries) ckpt.params.emplace_back(e.name, e.value);
  ckpt.momentum = momentum;
  return ckpt;
}

Model<float> model_from_checkpoint(const Checkpoint& ckpt) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& [name, value] : ckpt.params) {
    if (!by_name.emplace(name, &value).second)
      throw FormatError(FormatError::Kind::kBadRecord, "duplicate parameter name " + name);
  }
  auto find = [&by_name](const std::string& name) -> const Tensor<float>* {
    auto it = by_name.find(name);
    return it == by_name.end() ? nullptr : it->second;
  };
  auto require = [&find](const std::string& name) -> const Tensor<float>& {
    const Tensor<float>* t = find(name);
    if (!t)
      throw FormatError(FormatError::Kind::kBadRecord, "checkpoint missing parameter " + name);
    return *t;
  };

  ModelConfig cfg;
  const Tensor<float>& stem_w = require("stem.w");
  if (stem_w.rank() != 2 || stem_w.dim(1) != kInputChannels)
    throw FormatError(FormatError::Kind::kBadRecord, "stem.w has unexpected shape");
  cfg.base_width = stem_w.dim(0);

  cfg.stages = 0;
  while (find("stage" + std::to_string(cfg.stages) + ".temporal_k")) ++cfg.stages;
  if (cfg.stages == 0)
    throw FormatError(FormatError::Kind::kBadRecord, "checkpoint has no stage parameters");

  auto width_of = [&require](int s) {
    return require("stage" + std::to_string(s) + ".temporal_k").dim(0);
  };
  if (cfg.stages > 1) {
    if (width_of(1) % width_of(0) != 0)
      throw FormatError(FormatError::Kind::kBadRecord, "stage widths are not multiplicative");
    cfg.width_multiplier = width_of(1) / width_of(0);
  } else {
    cfg.width_multiplier = 1;
  }

  if (find("stage0.up_mm.w"))
    cfg.mode = McbMode::kMcb;
  else if (find("stage0.up_m.w"))
    cfg.mode = McbMode::kStm;
  else
    cfg.mode = McbMode::kCstmOnly;

  cfg.reduction_ratio = 16;
  if (cfg.mode != McbMode::kCstmOnly) {
    const std::int64_t c = width_of(0);
    const std::int64_t cr = require("stage0.down.w").dim(0);
    if (cr != std::max<std::int64_t>(c / 16, 1)) {
      if (cr < 1 || c % cr != 0)
        throw FormatError(FormatError::Kind::kBadRecord, "cannot infer reduction ratio");
      cfg.reduction_ratio = c / cr;
    }
  }

  cfg.ad_enabled = find("ad_head.w") != nullptr;
  cfg.ad_tap_stage = -1;
  if (cfg.ad_enabled) {
    const std::int64_t c_tap = require("ad_head.w").dim(1);
    int tap = -1;
    for (int s = 0; s < cfg.stages; ++s)
      if (width_of(s) == c_tap) tap = s;
    if (tap < 0)
      throw FormatError(FormatError::Kind::kBadRecord,
                        "anomaly head width matches no stage width");
    cfg.ad_tap_stage = tap;
  }
  cfg.seed = 0;

  Model<float> m = build_model<float>(cfg);
  if (m.params.size() != static_cast<int>(ckpt.params.size()))
    throw FormatError(FormatError::Kind::kBadRecord,
                      "checkpoint has " + std::to_string(ckpt.params.size()) +
                          " parameters, inferred architecture needs " +
                          std::to_string(m.params.size()));
  for (int s = 0; s < m.params.size(); ++s) {
    auto& e = m.params.at(s);
    const auto& [name, value] = ckpt.params[static_cast<std::size_t>(s)];
    if (name != e.name)
      throw FormatError(FormatError::Kind::kBadRecord,
                        "checkpoint parameter order mismatch: got '" + name + "', expected '" +
                            e.name + "'");
    if (value.shape != e.value.shape)
      throw FormatError(FormatError::Kind::kBadRecord, "shape mismatch for parameter " + name);
    e.value = value;
  }
  return m;
}

}  // namespace gml
