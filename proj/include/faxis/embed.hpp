#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "faxis/io.hpp"
#include "faxis/item.hpp"
#include "faxis/train.hpp"

namespace faxis {

// One axis per head, in the given order.
SchemaPtr schema_for_heads(std::span<const ProjectionHead> heads);

// Projects each feature row through every head and concatenates the slices.
// `entries` supply id, corpus and labels for the matching feature rows.
std::vector<ItemRecord> embed_rows(std::span<const ProjectionHead> heads, std::span<const ManifestEntry> entries,
                                   const Eigen::MatrixXd& features);

}  // namespace faxis
