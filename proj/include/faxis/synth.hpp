#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "faxis/core.hpp"
#include "faxis/io.hpp"
#include "faxis/train.hpp"

namespace faxis {

enum class Mixing { Orthogonal, RandomFullRank };

Mixing parse_mixing(std::string_view name);
std::string_view mixing_name(Mixing m) noexcept;

// Planted-factor generator settings. One item per (speaker, sentence) pair;
// speaker s has dialect s % n_dialects and belongs to corpus "corpus_a" when
// s < query_speakers, otherwise "corpus_b".
struct SynthConfig {
  std::size_t n_speakers = 8;
  std::size_t n_sentences = 25;
  std::size_t n_dialects = 3;
  std::size_t enc_dim = 64;
  double noise_sigma = 0.1;
  Mixing mixing = Mixing::Orthogonal;
  std::uint64_t seed = 0;
  std::size_t semantic_dim = 16;
  std::size_t speaker_dim = 16;
  std::size_t dialect_dim = 4;
  // Scale applied to the speaker latent block before mixing, so speaker
  // variance dominates the pooled features.
  double speaker_scale = 3.0;
  std::size_t query_speakers = 1;

  std::size_t latent_dim() const noexcept { return semantic_dim + speaker_dim + dialect_dim; }
  void validate() const;
};

struct SynthData {
  SynthConfig config;
  std::vector<std::string> ids;
  std::vector<std::string> corpus;
  std::map<std::string, std::vector<std::string>> labels;  // field -> per item
  Eigen::MatrixXd latents;   // items x latent_dim, after speaker scaling
  Eigen::MatrixXd features;  // items x enc_dim
  Eigen::MatrixXd mixing;    // enc_dim x latent_dim
  // Per axis: the clean prototype of each item's label (items x axis dim).
  std::map<std::string, Eigen::MatrixXd> teachers;
  // Per axis: one prototype per label value (label count x axis dim).
  std::map<std::string, Eigen::MatrixXd> prototypes;
  SchemaPtr schema;  // semantic / speaker_id / dialect with the latent dims

  std::size_t size() const noexcept { return ids.size(); }
  // Column offset and width of an axis block inside the latent vector.
  std::pair<std::size_t, std::size_t> latent_block(std::string_view axis) const;
};

// Label field that supervises each standard axis.
std::string_view label_field_for_axis(std::string_view axis);

SynthData generate_synthetic(const SynthConfig& config);

// Features, labels and (optionally) one axis's teachers as a training set.
TrainingSet synth_training_set(const SynthData& data, std::string_view teacher_axis = {});

// Feature-manifest entries pointing into features.fpeb.
std::vector<ManifestEntry> synth_entries(const SynthData& data);

// Writes features.fpeb, teacher_<axis>.fpeb and manifest.jsonl into `dir`.
void write_synthetic(const SynthData& data, const std::filesystem::path& dir);

}  // namespace faxis
