#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "faxis/checkpoint.hpp"
#include "faxis/error.hpp"
#include "faxis/losses.hpp"
#include "faxis/synth.hpp"
#include "faxis/train.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace faxis;
using faxis::testing::TempDir;

namespace {

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected faxis::Error");
  return Errc::Io;
}

Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = standard_normal(rng);
  return m;
}

// Orthonormal rows via SVD of a Gaussian matrix.
Eigen::MatrixXd orthonormal_rows(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(gaussian(rng, r, c), Eigen::ComputeThinU | Eigen::ComputeThinV);
  return svd.matrixU() * svd.matrixV().transpose();
}

TrainingSet labelled_set(std::size_t groups, std::size_t per_group, Rng& rng) {
  TrainingSet set;
  set.features = gaussian(rng, static_cast<Eigen::Index>(groups * per_group), 6);
  auto& spk = set.labels["speaker"];
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < per_group; ++i) {
      set.ids.push_back("g" + std::to_string(g) + "_" + std::to_string(i));
      spk.push_back("spk" + std::to_string(g));
    }
  set.positives.assign(set.size(), std::nullopt);
  return set;
}

double mean_row_cosine(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) s += a.row(i).dot(b.row(i)) / (a.row(i).norm() * b.row(i).norm());
  return s / static_cast<double>(a.rows());
}

}  // namespace

TEST_CASE("project examples") {
  ProjectionHead h{"semantic", Eigen::MatrixXd::Identity(3, 3), Eigen::VectorXd::Zero(3), false};
  Eigen::VectorXd x(3);
  x << 0, 3, 4;
  auto z = project(h, x);
  CHECK(z(1) == doctest::Approx(0.6));
  CHECK(z(2) == doctest::Approx(0.8));
  CHECK(project(h, x) == z);

  ProjectionHead zero{"semantic", Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Zero(2), false};
  try {
    project(zero, x, "utt_7");
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::DegenerateHead);
    CHECK(std::string(e.what()).find("utt_7") != std::string::npos);
  }

  ProjectionHead biased{"semantic", Eigen::MatrixXd::Zero(2, 3), Eigen::VectorXd::Ones(2), true};
  CHECK(project(biased, x).norm() == doctest::Approx(1.0));
  CHECK(code_of([&] { project(h, Eigen::VectorXd::Ones(4)); }) == Errc::DimMismatch);
}

TEST_CASE("objective names") {
  CHECK(parse_objective("distill") == Objective::Distill);
  CHECK(parse_objective("infonce_pairs") == Objective::InfoncePairs);
  CHECK(parse_objective("supcon_labels") == Objective::SupconLabels);
  CHECK(objective_name(Objective::SupconLabels) == "supcon_labels");
  CHECK(code_of([] { parse_objective("triplet"); }) == Errc::ConfigInvalid);
}

TEST_CASE("sampler avoids cross-factor collisions") {
  Rng data_rng(1);
  auto set = labelled_set(64, 4, data_rng);
  Rng rng(substream(7, "sampler"));
  std::size_t total = 0;
  for (int t = 0; t < 1000; ++t) {
    auto batch = sample_batch(set, "sentence", 8, rng);
    REQUIRE(batch.size() == 8);
    std::set<std::size_t> rows;
    for (auto& ex : batch) rows.insert(ex.row);
    CHECK(rows.size() == 8);
    total += count_collisions(set, batch, "speaker");
  }
  CHECK(total == 0);
}

TEST_CASE("sampler degrades gracefully with a single speaker") {
  Rng data_rng(2);
  auto set = labelled_set(1, 20, data_rng);
  Rng rng(3);
  auto batch = sample_batch(set, "sentence", 8, rng);
  CHECK(batch.size() == 8);
  std::set<std::size_t> rows;
  for (auto& ex : batch) rows.insert(ex.row);
  CHECK(rows.size() == 8);
  CHECK(count_collisions(set, batch, "speaker") == 28);
}

TEST_CASE("sampler ignores the trained field and empty labels") {
  Rng data_rng(4);
  auto set = labelled_set(1, 30, data_rng);
  set.labels["dialect"].assign(set.size(), "");
  Rng a(9), b(9);
  auto ba = sample_batch(set, "speaker", 6, a);
  auto bb = sample_batch(set, "speaker", 6, b);
  REQUIRE(ba.size() == bb.size());
  for (std::size_t i = 0; i < ba.size(); ++i) CHECK(ba[i].row == bb[i].row);
  CHECK(ba.front().label.value() == "spk0");
}

TEST_CASE("parameter packing round-trips") {
  Rng rng(8);
  ProjectionHead h{"speaker_id", gaussian(rng, 3, 5), gaussian(rng, 3, 1), true};
  AlignmentMatrix a{gaussian(rng, 3, 4)};
  auto p = pack_parameters(h, &a);
  ParameterLayout layout{3, 5, true, 4};
  REQUIRE(p.size() == layout.size());
  CHECK(p[1] == h.weight(1, 0));  // column-major
  auto h2 = unpack_head(layout, p, "speaker_id");
  CHECK(h2.weight == h.weight);
  CHECK(h2.bias == h.bias);
  CHECK(unpack_alignment(layout, p)->matrix == a.matrix);
}

TEST_CASE("finite difference check validates epsilon") {
  ObjectiveFn fn = [](std::span<const double> p, std::span<double> g) {
    if (!g.empty()) g[0] = 2 * p[0];
    return p[0] * p[0];
  };
  std::vector<double> p = {0.3};
  CHECK(finite_difference_check(fn, p, 1e-5) <= 1e-8);
  CHECK(code_of([&] { finite_difference_check(fn, p, 1e-2); }) == Errc::ConfigInvalid);
  CHECK(code_of([&] { finite_difference_check(fn, p, 1e-9); }) == Errc::ConfigInvalid);
}

// Gradient through head and alignment matches central differences.
TEST_CASE("objective gradients through the head") {
  Rng rng(21);
  SUBCASE("distill with alignment and bias") {
    TrainingSet set;
    set.features = gaussian(rng, 8, 10);
    set.teachers = gaussian(rng, 8, 7);
    for (int i = 0; i < 8; ++i) set.ids.push_back("i" + std::to_string(i));
    set.positives.assign(8, std::nullopt);
    TrainConfig c;
    c.axis = "semantic";
    c.dim = 4;
    c.bias = true;
    ParameterLayout layout{4, 10, true, 7};
    std::vector<double> params(layout.size());
    for (auto& x : params) x = 0.5 * standard_normal(rng);
    std::vector<TrainExample> batch;
    for (std::size_t i = 0; i < 8; ++i) batch.push_back({i, std::nullopt, std::nullopt, true});
    auto fn = batch_objective(c, set, batch, layout);
    CHECK(finite_difference_check(fn, params, 1e-5, 1) <= 1e-4);
  }
  SUBCASE("infonce pairs") {
    TrainingSet set;
    set.features = gaussian(rng, 8, 10);
    for (int i = 0; i < 8; ++i) set.ids.push_back("i" + std::to_string(i));
    set.positives.assign(8, std::nullopt);
    for (std::size_t i = 0; i < 4; ++i) set.positives[i] = i + 4;
    TrainConfig c;
    c.axis = "semantic";
    c.dim = 5;
    c.objective = Objective::InfoncePairs;
    c.temperature = 0.07;
    ParameterLayout layout{5, 10, false, 0};
    std::vector<double> params(layout.size());
    for (auto& x : params) x = 0.3 * standard_normal(rng);
    std::vector<TrainExample> batch;
    for (std::size_t i = 0; i < 4; ++i) batch.push_back({i, i + 4, std::nullopt, false});
    auto fn = batch_objective(c, set, batch, layout);
    CHECK(finite_difference_check(fn, params, 1e-5, 2) <= 1e-4);
  }
  SUBCASE("supcon labels") {
    TrainingSet set;
    set.features = gaussian(rng, 6, 9);
    set.labels["speaker"] = {"a", "b", "a", "c", "b", "a"};
    for (int i = 0; i < 6; ++i) set.ids.push_back("i" + std::to_string(i));
    set.positives.assign(6, std::nullopt);
    TrainConfig c;
    c.axis = "speaker_id";
    c.dim = 4;
    c.objective = Objective::SupconLabels;
    c.label_field = "speaker";
    c.temperature = 0.1;
    ParameterLayout layout{4, 9, false, 0};
    std::vector<double> params(layout.size());
    for (auto& x : params) x = 0.3 * standard_normal(rng);
    std::vector<TrainExample> batch;
    for (std::size_t i = 0; i < 6; ++i) batch.push_back({i, std::nullopt, set.labels["speaker"][i], false});
    auto fn = batch_objective(c, set, batch, layout);
    CHECK(finite_difference_check(fn, params, 1e-5, 3) <= 1e-4);
  }
}

TEST_CASE("distillation recovers a planted linear map") {
  Rng rng(31);
  const Eigen::MatrixXd x = gaussian(rng, 300, 24);
  const Eigen::MatrixXd q = orthonormal_rows(rng, 16, 24);
  const Eigen::MatrixXd t = x * q.transpose();

  TrainingSet set;
  set.features = x.topRows(240);
  set.teachers = t.topRows(240);
  for (int i = 0; i < 240; ++i) set.ids.push_back("i" + std::to_string(i));
  set.positives.assign(240, std::nullopt);

  TrainConfig c;
  c.axis = "semantic";
  c.dim = 16;
  c.learning_rate = 0.05;
  c.steps = 1500;
  c.batch_size = 32;
  auto result = train_axis(c, set);
  CHECK_FALSE(result.alignment.has_value());

  // Least-squares fit on the same rows as an independent reference.
  const Eigen::MatrixXd w_ls = set.features.colPivHouseholderQr().solve(*set.teachers).transpose();
  const Eigen::MatrixXd held_x = x.bottomRows(60), held_t = t.bottomRows(60);
  const double oracle = mean_row_cosine(held_x * w_ls.transpose(), held_t);
  const double trained = mean_teacher_cosine(result.head, nullptr, held_x, held_t);
  CHECK(oracle > 0.999);
  CHECK(trained >= 0.99);
  CHECK(result.log.back().loss < result.log.front().loss);
}

TEST_CASE("distillation learns an orthonormal alignment when dims differ") {
  Rng rng(32);
  const Eigen::MatrixXd x = gaussian(rng, 300, 24);
  const Eigen::MatrixXd t = x * orthonormal_rows(rng, 12, 24).transpose();

  TrainingSet set;
  set.features = x;
  set.teachers = t;
  for (int i = 0; i < 300; ++i) set.ids.push_back("i" + std::to_string(i));
  set.positives.assign(300, std::nullopt);

  TrainConfig c;
  c.axis = "semantic";
  c.dim = 8;
  c.learning_rate = 0.05;
  c.steps = 1500;
  c.batch_size = 32;
  auto result = train_axis(c, set);
  REQUIRE(result.alignment.has_value());
  CHECK(result.alignment->matrix.rows() == 8);
  CHECK(result.alignment->matrix.cols() == 12);
  CHECK(orthogonality_penalty(result.alignment->matrix) <= 1e-20);
  CHECK(result.orthogonality_after_projection <= 1e-10);
  CHECK(mean_teacher_cosine(result.head, &*result.alignment, x, t) >= 0.95);
}

TEST_CASE("supcon separates speakers on synthetic data") {
  SynthConfig sc;
  sc.n_speakers = 6;
  sc.n_sentences = 12;
  sc.seed = 4;
  auto data = generate_synthetic(sc);
  auto set = synth_training_set(data);
  TrainConfig c;
  c.axis = "speaker_id";
  c.dim = 16;
  c.objective = Objective::SupconLabels;
  c.label_field = "speaker";
  c.learning_rate = 0.05;
  c.steps = 400;
  c.batch_size = 32;
  auto result = train_axis(c, set);

  double within = 0, cross = 0;
  std::size_t nw = 0, nc = 0;
  std::vector<Eigen::VectorXd> z;
  for (std::size_t i = 0; i < data.size(); ++i) z.push_back(project(result.head, data.features.row(i).transpose()));
  const auto& spk = data.labels.at("speaker");
  for (std::size_t i = 0; i < z.size(); ++i)
    for (std::size_t j = i + 1; j < z.size(); ++j) {
      if (spk[i] == spk[j]) within += z[i].dot(z[j]), ++nw;
      else cross += z[i].dot(z[j]), ++nc;
    }
  CHECK(within / nw - cross / nc >= 0.3);
}

TEST_CASE("zero steps leaves the initial head") {
  Rng rng(5);
  TrainingSet set;
  set.features = gaussian(rng, 20, 8);
  set.teachers = gaussian(rng, 20, 4);
  for (int i = 0; i < 20; ++i) set.ids.push_back("i" + std::to_string(i));
  set.positives.assign(20, std::nullopt);
  TrainConfig c;
  c.axis = "semantic";
  c.dim = 4;
  c.steps = 0;
  c.seed = 77;
  auto result = train_axis(c, set);
  auto init = initial_head(c, 8);
  CHECK(result.head.weight == init.weight);
  CHECK(result.log.empty());
  const double bound = 1.0 / std::sqrt(8.0);
  CHECK(init.weight.cwiseAbs().maxCoeff() <= bound);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
  SynthConfig sc;
  sc.n_speakers = 4;
  sc.n_sentences = 10;
  auto data = generate_synthetic(sc);
  auto set = synth_training_set(data, "semantic");
  TrainConfig c;
  c.axis = "semantic";
  c.dim = 16;
  c.steps = 50;
  c.batch_size = 16;
  c.seed = 3;
  auto a = train_axis(c, set);
  auto b = train_axis(c, set);
  CHECK(a.head.weight == b.head.weight);
  CHECK(a.log == b.log);
  c.seed = 4;
  CHECK(train_axis(c, set).head.weight != a.head.weight);
}

TEST_CASE("training config validation") {
  TrainConfig c;
  c.axis = "semantic";
  c.dim = 4;
  CHECK_NOTHROW(c.validate());
  c.temperature = 0.0;
  CHECK(code_of([&] { c.validate(); }) == Errc::ConfigInvalid);
  c.temperature = 0.07;
  c.dim = 0;
  CHECK(code_of([&] { c.validate(); }) == Errc::ConfigInvalid);
}

TEST_CASE("train log serializes one object per step") {
  std::vector<TrainLogEntry> log = {{1, 0.5, 0.0, 2.0}, {2, 0.25, 0.0, 1.0}};
  auto text = log_to_jsonl(log);
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
  auto first = nlohmann::json::parse(text.substr(0, text.find('\n')));
  CHECK(first.at("step") == 1);
  CHECK(first.at("loss") == 0.5);
  CHECK(first.contains("grad_norm"));
}

TEST_CASE("head checkpoint round-trip") {
  Rng rng(6);
  TempDir dir("ckpt");
  HeadCheckpoint ck{{"speaker_id", gaussian(rng, 3, 5), gaussian(rng, 3, 1), true}, AlignmentMatrix{gaussian(rng, 3, 2)}};
  save_head(dir / "h.fphd", ck);
  auto back = load_head(dir / "h.fphd");
  CHECK(back.head.axis == "speaker_id");
  CHECK(back.head.has_bias);
  CHECK((back.head.weight - ck.head.weight).cwiseAbs().maxCoeff() <= 1e-6);
  REQUIRE(back.alignment.has_value());
  CHECK((back.alignment->matrix - ck.alignment->matrix).cwiseAbs().maxCoeff() <= 1e-6);

  HeadCheckpoint plain{{"semantic", gaussian(rng, 2, 2), Eigen::VectorXd::Zero(2), false}, std::nullopt};
  auto bytes = encode_head(plain);
  // magic + version + name_len + "semantic" + dims + W + has_bias
  CHECK(bytes.size() == 4 + 2 + 2 + 8 + 8 + 16 + 1);
  CHECK_FALSE(decode_head(bytes).alignment.has_value());

  CHECK(code_of([&] { decode_head("XXXX" + bytes.substr(4)); }) == Errc::BadMagic);
  CHECK(code_of([&] { decode_head(bytes.substr(0, bytes.size() - 3)); }) == Errc::TruncatedFile);
  CHECK(code_of([&] { load_head(dir / "missing.fphd"); }) == Errc::MissingBlob);
}
