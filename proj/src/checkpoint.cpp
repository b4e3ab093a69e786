#include "faxis/checkpoint.hpp"

#include <cmath>
#include <limits>

#include "binary_io.hpp"

namespace faxis {

namespace {

constexpr std::string_view kMagic = "FPHD";

void put_matrix(detail::ByteWriter& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
}

Eigen::MatrixXd get_matrix(detail::ByteReader& r, std::uint32_t rows, std::uint32_t cols) {
  Eigen::MatrixXd m(rows, cols);
  for (std::uint32_t i = 0; i < rows; ++i)
    for (std::uint32_t j = 0; j < cols; ++j) m(i, j) = r.f32();
  return m;
}

}  // namespace

std::string encode_head(const HeadCheckpoint& ckpt) {
  const auto& head = ckpt.head;
  if (head.axis.size() > std::numeric_limits<std::uint16_t>::max())
    throw Error(Errc::ConfigInvalid, "axis name too long");
  if (!head.weight.allFinite() || (head.has_bias && !head.bias.allFinite()))
    throw Error(Errc::NonFinite, "head '" + head.axis + "' has non-finite parameters");
  detail::ByteWriter w;
  w.bytes(kMagic);
  w.u16(kHeadFormatVersion);
  w.u16(static_cast<std::uint16_t>(head.axis.size()));
  w.bytes(head.axis);
  w.u32(static_cast<std::uint32_t>(head.input_dim()));
  w.u32(static_cast<std::uint32_t>(head.output_dim()));
  put_matrix(w, head.weight);
  w.u8(head.has_bias ? 1 : 0);
  if (head.has_bias)
    for (Eigen::Index i = 0; i < head.bias.size(); ++i) w.f32(static_cast<float>(head.bias(i)));
  if (ckpt.alignment) {
    const auto& a = ckpt.alignment->matrix;
    if (static_cast<std::size_t>(a.rows()) != head.output_dim())
      throw Error(Errc::DimMismatch, "alignment rows must equal the head output dim");
    w.u32(static_cast<std::uint32_t>(a.cols()));
    put_matrix(w, a);
  }
  return w.str();
}

HeadCheckpoint decode_head(std::string_view bytes, const std::string& source) {
  detail::ByteReader r(bytes, source);
  if (bytes.size() < 4 || r.bytes(4) != kMagic) throw Error(Errc::BadMagic, source + ": not an FPHD head checkpoint");
  const auto version = r.u16();
  if (version != kHeadFormatVersion)
    throw Error(Errc::BadFormat, source + ": unsupported head format version " + std::to_string(version));
  HeadCheckpoint ckpt;
  const auto name_len = r.u16();
  ckpt.head.axis = std::string(r.bytes(name_len));
  const auto d_enc = r.u32();
  const auto d_axis = r.u32();
  if (static_cast<std::uint64_t>(d_enc) * d_axis * 4 > r.remaining())
    throw Error(Errc::TruncatedFile, source + ": weight block exceeds file size");
  ckpt.head.weight = get_matrix(r, d_axis, d_enc);
  ckpt.head.has_bias = r.u8() != 0;
  ckpt.head.bias = Eigen::VectorXd::Zero(d_axis);
  if (ckpt.head.has_bias)
    for (std::uint32_t i = 0; i < d_axis; ++i) ckpt.head.bias(i) = r.f32();
  if (r.remaining() > 0) {
    const auto d_teacher = r.u32();
    if (static_cast<std::uint64_t>(d_teacher) * d_axis * 4 != r.remaining())
      throw Error(Errc::TruncatedFile, source + ": alignment block size mismatch");
    ckpt.alignment = AlignmentMatrix{get_matrix(r, d_axis, d_teacher)};
  }
  if (!ckpt.head.weight.allFinite() || !ckpt.head.bias.allFinite() ||
      (ckpt.alignment && !ckpt.alignment->matrix.allFinite()))
    throw Error(Errc::NonFinite, source + ": checkpoint contains non-finite values");
  return ckpt;
}

void save_head(const std::filesystem::path& path, const HeadCheckpoint& ckpt) {
  detail::write_file(path, encode_head(ckpt));
}

HeadCheckpoint load_head(const std::filesystem::path& path) {
  return decode_head(detail::read_file(path, Errc::MissingBlob), path.string());
}

}  // namespace faxis
