#include "faxis/embed.hpp"

#include "faxis/error.hpp"

namespace faxis {

SchemaPtr schema_for_heads(std::span<const ProjectionHead> heads) {
  std::vector<Axis> axes;
  for (const auto& h : heads) axes.push_back({h.axis, h.output_dim()});
  return make_schema(std::move(axes));
}

std::vector<ItemRecord> embed_rows(std::span<const ProjectionHead> heads, std::span<const ManifestEntry> entries,
                                   const Eigen::MatrixXd& features) {
  if (entries.size() != static_cast<std::size_t>(features.rows()))
    throw Error(Errc::DimMismatch, "entry count does not match feature rows");
  const auto schema = schema_for_heads(heads);
  std::vector<ItemRecord> out;
  out.reserve(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Eigen::VectorXd x = features.row(static_cast<Eigen::Index>(i)).transpose();
    std::vector<double> data;
    data.reserve(schema->total_dim());
    for (const auto& h : heads) {
      const Eigen::VectorXd z = project(h, x, entries[i].id);
      data.insert(data.end(), z.data(), z.data() + z.size());
    }
    out.push_back({entries[i].id, entries[i].corpus, entries[i].labels, PartitionedEmbedding(schema, std::move(data))});
  }
  return out;
}

}  // namespace faxis
