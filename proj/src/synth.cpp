#include "faxis/synth.hpp"

#include <cstdio>

#include "faxis/error.hpp"
#include "faxis/rng.hpp"

namespace faxis {

namespace {

std::string numbered(const char* prefix, std::size_t i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i);
  return buf;
}

Eigen::MatrixXd gaussian(Rng& rng, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = standard_normal(rng);
  return m;
}

Eigen::MatrixXd unit_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  Eigen::MatrixXd m = gaussian(rng, rows, cols);
  for (Eigen::Index r = 0; r < m.rows(); ++r) m.row(r).normalize();
  return m;
}

}  // namespace

Mixing parse_mixing(std::string_view name) {
  if (name == "orthogonal") return Mixing::Orthogonal;
  if (name == "random_full_rank") return Mixing::RandomFullRank;
  throw Error(Errc::ConfigInvalid, "unknown mixing '" + std::string(name) + "'; expected orthogonal or random_full_rank");
}

std::string_view mixing_name(Mixing m) noexcept {
  return m == Mixing::Orthogonal ? "orthogonal" : "random_full_rank";
}

void SynthConfig::validate() const {
  if (n_speakers == 0 || n_sentences == 0 || n_dialects == 0)
    throw Error(Errc::ConfigInvalid, "speaker, sentence and dialect counts must be positive");
  if (semantic_dim == 0 || speaker_dim == 0 || dialect_dim == 0)
    throw Error(Errc::ConfigInvalid, "latent block dims must be positive");
  if (enc_dim < latent_dim())
    throw Error(Errc::ConfigInvalid, "enc_dim " + std::to_string(enc_dim) + " is smaller than the latent dim " +
                                         std::to_string(latent_dim()));
  if (!(noise_sigma >= 0.0)) throw Error(Errc::ConfigInvalid, "noise_sigma must be non-negative");
  if (!(speaker_scale > 0.0)) throw Error(Errc::ConfigInvalid, "speaker_scale must be positive");
  if (query_speakers > n_speakers) throw Error(Errc::ConfigInvalid, "query_speakers exceeds n_speakers");
}

std::pair<std::size_t, std::size_t> SynthData::latent_block(std::string_view axis) const {
  if (axis == "semantic") return {0, config.semantic_dim};
  if (axis == "speaker_id") return {config.semantic_dim, config.speaker_dim};
  if (axis == "dialect") return {config.semantic_dim + config.speaker_dim, config.dialect_dim};
  throw Error(Errc::UnknownAxis, "synthetic data has no axis '" + std::string(axis) + "'");
}

std::string_view label_field_for_axis(std::string_view axis) {
  if (axis == "semantic") return kSentenceField;
  if (axis == "speaker_id") return kSpeakerField;
  if (axis == "dialect") return kDialectField;
  return {};
}

SynthData generate_synthetic(const SynthConfig& config) {
  config.validate();
  SynthData d;
  d.config = config;
  d.schema = make_schema({{"semantic", config.semantic_dim},
                          {"speaker_id", config.speaker_dim},
                          {"dialect", config.dialect_dim}});

  Rng rng = substream(config.seed, "synth");
  d.prototypes["semantic"] = unit_rows(rng, config.n_sentences, config.semantic_dim);
  d.prototypes["speaker_id"] = unit_rows(rng, config.n_speakers, config.speaker_dim);
  d.prototypes["dialect"] = unit_rows(rng, config.n_dialects, config.dialect_dim);

  const std::size_t latent = config.latent_dim();
  Eigen::MatrixXd g = gaussian(rng, config.enc_dim, latent);
  if (config.mixing == Mixing::Orthogonal) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    d.mixing = qr.householderQ() * Eigen::MatrixXd::Identity(g.rows(), g.cols());
  } else {
    d.mixing = g / std::sqrt(static_cast<double>(config.enc_dim));
  }

  const std::size_t n = config.n_speakers * config.n_sentences;
  d.latents.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(latent));
  for (const char* axis : {"semantic", "speaker_id", "dialect"})
    d.teachers[axis].resize(static_cast<Eigen::Index>(n), d.prototypes[axis].cols());
  auto& sentence_labels = d.labels[kSentenceField];
  auto& speaker_labels = d.labels[kSpeakerField];
  auto& dialect_labels = d.labels[kDialectField];

  std::size_t item = 0;
  for (std::size_t s = 0; s < config.n_speakers; ++s) {
    const std::size_t dialect = s % config.n_dialects;
    for (std::size_t t = 0; t < config.n_sentences; ++t, ++item) {
      d.ids.push_back(numbered("spk", s, 2) + "_" + numbered("sent", t, 3));
      d.corpus.push_back(s < config.query_speakers ? "corpus_a" : "corpus_b");
      sentence_labels.push_back(numbered("sent", t, 3));
      speaker_labels.push_back(numbered("spk", s, 2));
      dialect_labels.push_back(numbered("dia", dialect, 2));

      const std::pair<const char*, std::size_t> blocks[] = {
          {"semantic", t}, {"speaker_id", s}, {"dialect", dialect}};
      for (const auto& [axis, label] : blocks) {
        const auto& protos = d.prototypes[axis];
        const Eigen::RowVectorXd proto = protos.row(static_cast<Eigen::Index>(label));
        d.teachers[axis].row(static_cast<Eigen::Index>(item)) = proto;
        Eigen::RowVectorXd v = proto;
        if (config.noise_sigma > 0.0) {
          for (Eigen::Index k = 0; k < v.size(); ++k) v(k) += config.noise_sigma * standard_normal(rng);
          v.normalize();
        }
        if (std::string_view(axis) == "speaker_id") v *= config.speaker_scale;
        const auto [off, width] = d.latent_block(axis);
        d.latents.block(static_cast<Eigen::Index>(item), static_cast<Eigen::Index>(off), 1,
                        static_cast<Eigen::Index>(width)) = v;
      }
    }
  }
  d.features = d.latents * d.mixing.transpose();
  return d;
}

TrainingSet synth_training_set(const SynthData& data, std::string_view teacher_axis) {
  TrainingSet set;
  set.ids = data.ids;
  set.features = data.features;
  set.labels = data.labels;
  if (!teacher_axis.empty()) {
    auto it = data.teachers.find(std::string(teacher_axis));
    if (it == data.teachers.end())
      throw Error(Errc::UnknownAxis, "synthetic data has no teachers for axis '" + std::string(teacher_axis) + "'");
    set.teachers = it->second;
  }
  return set;
}

std::vector<ManifestEntry> synth_entries(const SynthData& data) {
  const auto dim = static_cast<std::uint64_t>(data.features.cols());
  std::vector<ManifestEntry> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    ManifestEntry e;
    e.id = data.ids[i];
    e.corpus = data.corpus[i];
    for (const auto& [field, values] : data.labels) e.labels[field] = values[i];
    e.blob = "features.fpeb";
    e.row = i;
    e.offset = blob_row_offset(dim, i);
    out.push_back(std::move(e));
  }
  return out;
}

void write_synthetic(const SynthData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_blob(dir / "features.fpeb", to_blob(data.features));
  for (const auto& [axis, teachers] : data.teachers) write_blob(dir / ("teacher_" + axis + ".fpeb"), to_blob(teachers));
  Manifest m;
  m.kind = ManifestKind::Features;
  m.entries = synth_entries(data);
  write_manifest(dir / "manifest.jsonl", m);
}

}  // namespace faxis
