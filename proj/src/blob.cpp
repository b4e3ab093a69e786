#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "faxis/io.hpp"

namespace faxis {

namespace {
constexpr std::string_view kMagic = "FPEB";
}

std::string encode_blob(const BlobMatrix& m) {
  constexpr auto kMax = std::numeric_limits<std::uint32_t>::max();
  if (static_cast<std::uint64_t>(m.rows()) > kMax || static_cast<std::uint64_t>(m.cols()) > kMax)
    throw Error(Errc::DimMismatch, "blob dimensions do not fit in u32");
  if (!m.allFinite()) throw Error(Errc::NonFinite, "blob contains non-finite values");
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kBlobFormatVersion);
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.size(); ++i) w.f32(m.data()[i]);
  return w.str();
}

BlobMatrix decode_blob(std::string_view bytes, const std::string& source) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != kMagic) throw Error(Errc::BadMagic, source + ": not an FPEB blob");
  detail::ByteReader r(bytes, source);
  r.bytes(4);
  const auto version = r.u16();
  if (version != kBlobFormatVersion)
    throw Error(Errc::BadFormat, source + ": unsupported blob version " + std::to_string(version));
  const auto rows = r.u32();
  const auto dim = r.u32();
  const std::uint64_t expected = kBlobHeaderBytes + 4ULL * rows * dim;
  if (bytes.size() != expected)
    throw Error(Errc::TruncatedFile, source + ": expected " + std::to_string(expected) + " bytes, found " +
                                         std::to_string(bytes.size()));
  BlobMatrix m(rows, dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float v = r.f32();
    if (!std::isfinite(v))
      throw Error(Errc::NonFinite, source + ": non-finite value at row " + std::to_string(i / std::max<Eigen::Index>(dim, 1)));
    m.data()[i] = v;
  }
  return m;
}

void write_blob(const std::filesystem::path& path, const BlobMatrix& m) { detail::write_file(path, encode_blob(m)); }

BlobMatrix read_blob(const std::filesystem::path& path) {
  return decode_blob(detail::read_file(path, Errc::MissingBlob), path.string());
}

BlobMatrix to_blob(const Eigen::MatrixXd& m) { return m.cast<float>(); }

Eigen::MatrixXd from_blob(const BlobMatrix& m) { return m.cast<double>(); }

}  // namespace faxis
