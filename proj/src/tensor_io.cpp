#include "tensor_io.hpp"

#include <cstdint>
#include <fstream>
#include <limits>

#include "binio.hpp"

namespace gml {

namespace {
constexpr char kMagic[4] = {'G', 'M', 'L', 'T'};
constexpr std::uint8_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kRank = 5;
}  // namespace

void write_tensor(const std::string& path, const Tensor<float>& t) {
  require_feature_map(t, "write_tensor");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(kMagic, 4);
  binio::put_u8(os, kVersion);
  binio::put_u8(os, kDtypeF32);
  binio::put_u8(os, kRank);
  for (int d = 0; d < kRank; ++d) {
    const std::int64_t v = t.dim(d);
    if (v > std::numeric_limits<std::uint32_t>::max())
      throw DimError("dimension too large for tensor file: " + std::to_string(v));
    binio::put_u32(os, static_cast<std::uint32_t>(v));
  }
  binio::put_f32(os, t.data.data(), t.numel());
  os.flush();
  if (!os) throw IoError("write failed for '" + path + "'");
}

Tensor<float> read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  binio::expect_magic(is, kMagic, "GMLT tensor");
  if (const auto v = binio::get_u8(is, "version"); v != kVersion)
    throw FormatError(FormatError::Kind::kBadVersion,
                      "unsupported tensor file version " + std::to_string(v));
  if (const auto d = binio::get_u8(is, "dtype"); d != kDtypeF32)
    throw FormatError(FormatError::Kind::kBadDtype, "unsupported dtype " + std::to_string(d));
  if (const auto r = binio::get_u8(is, "ndim"); r != kRank)
    throw FormatError(FormatError::Kind::kBadRank,
                      "tensor file rank " + std::to_string(r) + ", expected 5");
  Shape shape(kRank);
  std::int64_t numel = 1;
  for (int d = 0; d < kRank; ++d) {
    const std::uint32_t v = binio::get_u32(is, "dims");
    if (v == 0) throw FormatError(FormatError::Kind::kBadRecord, "zero dimension in tensor file");
    shape[static_cast<std::size_t>(d)] = v;
    numel *= v;
    if (numel > kMaxTensorElems)
      throw FormatError(FormatError::Kind::kDimOverflow,
                        "tensor file dims overflow element budget: " + shape_str(shape));
  }
  Tensor<float> t(shape);
  binio::get_f32(is, t.data.data(), t.numel(), "payload");
  binio::expect_eof(is, "tensor");
  return t;
}

}  // namespace gml
