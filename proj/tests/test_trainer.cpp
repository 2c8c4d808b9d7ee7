#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "otmatch/grad_check.hpp"
#include "otmatch/trainer.hpp"

using namespace otmatch;
namespace fs = std::filesystem;

namespace {

BatchScores make_scores(const Matrix& r) {
  BatchScores s;
  s.r = r;
  s.positive.assign(r.rows, std::vector<bool>(r.cols, false));
  for (std::size_t i = 0; i < std::min(r.rows, r.cols); ++i)
    s.positive[i][i] = true;
  return s;
}

std::string temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("otmatch_train_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

ShapeEncoderConfig tiny_shape_config(std::size_t d = 8) {
  ShapeEncoderConfig cfg;
  cfg.d1 = 8;
  cfg.d2 = 12;
  cfg.d3 = 12;
  cfg.d_mid = 10;
  cfg.d_color = 4;
  cfg.d = d;
  return cfg;
}

TrainConfig fast_train_config() {
  TrainConfig cfg;
  cfg.stage1_epochs = 4;
  cfg.stage2_epochs = 4;
  cfg.batch = 4;
  cfg.seed = 11;
  cfg.sinkhorn.max_iters = 300;
  return cfg;
}

}  // namespace

TEST_CASE("semi-hard mining picks the hardest negative below the positive") {
  // Anchor 0 positive scores -0.2; negatives -0.1, -0.3, -0.5.
  Matrix r = Matrix::from_rows({{-0.2, -0.1, -0.3, -0.5}});
  BatchScores s;
  s.r = r;
  s.positive.assign(1, std::vector<bool>(4, false));
  s.positive[0][0] = true;
  // Mining runs over a square batch in training; emulate the row here.
  auto neg = mine_semi_hard(s, 0, Direction::S2T);
  REQUIRE(neg.has_value());
  CHECK(*neg == 2);  // -0.3 is the largest score strictly below -0.2
}

TEST_CASE("semi-hard mining returns nothing when all negatives beat the positive") {
  Matrix r = Matrix::from_rows({{-0.5, -0.4, -0.3}});
  BatchScores s;
  s.r = r;
  s.positive.assign(1, std::vector<bool>(3, false));
  s.positive[0][0] = true;
  CHECK(!mine_semi_hard(s, 0, Direction::S2T).has_value());
}

TEST_CASE("mining on a single-element batch finds nothing") {
  BatchScores s = make_scores(Matrix(1, 1, -0.5));
  CHECK(!mine_semi_hard(s, 0, Direction::S2T).has_value());
  CHECK(!mine_semi_hard(s, 0, Direction::T2S).has_value());
}

TEST_CASE("semi-hard ties resolve to the lowest index") {
  Matrix r = Matrix::from_rows({{-0.2, -0.4, -0.4}});
  BatchScores s;
  s.r = r;
  s.positive.assign(1, std::vector<bool>(3, false));
  s.positive[0][0] = true;
  auto neg = mine_semi_hard(s, 0, Direction::S2T);
  REQUIRE(neg.has_value());
  CHECK(*neg == 1);
}

TEST_CASE("hardest mining ignores the positive threshold") {
  Matrix r = Matrix::from_rows({{-0.5, -0.1, -0.9}});
  BatchScores s;
  s.r = r;
  s.positive.assign(1, std::vector<bool>(3, false));
  s.positive[0][0] = true;
  auto neg = mine_hardest(s, 0, Direction::S2T);
  REQUIRE(neg.has_value());
  CHECK(*neg == 1);  // -0.1 beats the positive but is still chosen
}

TEST_CASE("triplet loss hand cases") {
  CHECK(triplet_loss(-0.1, -0.5, 0.2) == 0.0);
  CHECK(triplet_loss(-0.4, -0.3, 0.2) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(triplet_loss(-0.7, -0.7, 0.2) == doctest::Approx(0.2).epsilon(1e-12));
  CHECK_THROWS_AS(triplet_loss(0.0, 0.0, 0.0), ConfigError);
}

TEST_CASE("matching loss on the hand-evaluated 2x2 batch") {
  BatchScores s = make_scores(Matrix::from_rows({{-0.1, -0.2}, {-0.25, -0.15}}));
  // S2T: anchor 0 hinge 0.1, anchor 1 hinge 0.1 -> mean 0.1.
  // T2S: anchor 0 hinge 0.05, anchor 1 hinge 0.15 -> mean 0.1.
  CHECK(matching_loss(s, 0.2) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("matching loss vanishes on margin-satisfied batches") {
  // Positives at 0, every negative at -0.9, margin 0.2: hinges all clamp.
  Matrix r(3, 3, -0.9);
  for (std::size_t i = 0; i < 3; ++i) r.at(i, i) = 0.0;
  BatchScores s = make_scores(r);
  CHECK(matching_loss(s, 0.2) == 0.0);
}

TEST_CASE("matching loss is nonnegative on random batches") {
  Rng rng(19);
  for (int it = 0; it < 20; ++it) {
    Matrix r(4, 4);
    for (double& x : r.data) x = -2.0 * rng.uniform();
    BatchScores s = make_scores(r);
    CHECK(matching_loss(s, 0.2) >= 0.0);
    CHECK(matching_loss(s, 0.2, Mining::Hardest) >= 0.0);
  }
}

TEST_CASE("combined loss hand cases and linearity in beta") {
  CHECK(combined_loss(0.7, 0.33, 0.0) == 0.7);
  CHECK(combined_loss(0.5, 0.05, 40.0) == doctest::Approx(2.5).epsilon(1e-12));
  const double s = 0.37, m = 0.021;
  const double d1 = combined_loss(s, m, 1.0) - combined_loss(s, m, 0.0);
  const double d2 = combined_loss(s, m, 2.0) - combined_loss(s, m, 1.0);
  CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
  CHECK_THROWS_AS(combined_loss(1.0, 1.0, -1.0), ConfigError);
}

TEST_CASE("train validates its configuration before any work") {
  SyntheticConfig gcfg;
  gcfg.n_shapes = 4;
  gcfg.points_per_shape = 32;
  PairedCorpus corpus = gen_synthetic(gcfg);

  TrainConfig cfg = fast_train_config();
  cfg.batch = 1;  // stage 2 needs >= 2
  CHECK_THROWS_AS(train(corpus, cfg, tiny_shape_config(), ""), ConfigError);

  cfg = fast_train_config();
  cfg.margin = 0.0;
  CHECK_THROWS_AS(train(corpus, cfg, tiny_shape_config(), ""), ConfigError);

  cfg = fast_train_config();
  corpus.shapes[0].labels.clear();
  CHECK_THROWS_AS(train(corpus, cfg, tiny_shape_config(), ""), DataError);
}

TEST_CASE("stage-2 matching loss drops substantially on a small corpus") {
  SyntheticConfig gcfg;
  gcfg.seed = 5;
  gcfg.n_shapes = 16;
  gcfg.points_per_shape = 64;
  PairedCorpus corpus = gen_synthetic(gcfg);

  TrainConfig cfg;
  cfg.seed = 5;
  cfg.batch = 8;
  cfg.stage1_epochs = 10;
  cfg.stage2_epochs = 30;
  cfg.sinkhorn.max_iters = 300;
  TrainOutput out = train(corpus, cfg, tiny_shape_config(16), "");

  double first_emd = -1.0, last_emd = -1.0;
  for (const EpochLog& e : out.log) {
    if (e.stage != Stage::Joint) continue;
    if (first_emd < 0.0) first_emd = e.emd;
    last_emd = e.emd;
  }
  REQUIRE(first_emd >= 0.0);
  CHECK(last_emd <= 0.5 * first_emd);
}

TEST_CASE("cross entropy decreases over optimizer steps on the fixture") {
  const fs::path fixture = fs::path(OTMATCH_TEST_DIR) / "fixtures" / "mini";
  PairedCorpus corpus = load_corpus((fixture / "manifest.json").string());

  TrainConfig cfg;
  cfg.stage1_epochs = 50;  // 50 epochs x 1 batch of 2 = 50 steps
  cfg.stage2_epochs = 0;
  cfg.batch = 2;
  cfg.seed = 3;
  TrainOutput out = train(corpus, cfg, tiny_shape_config(), "");
  CHECK(out.log.back().ce < 0.8 * out.log.front().ce);
}

TEST_CASE("identical seeds give byte-identical checkpoints and logs") {
  SyntheticConfig gcfg;
  gcfg.seed = 9;
  gcfg.n_shapes = 6;
  gcfg.points_per_shape = 48;
  PairedCorpus corpus = gen_synthetic(gcfg);

  TrainConfig cfg = fast_train_config();
  const std::string dir_a = temp_dir("det_a");
  const std::string dir_b = temp_dir("det_b");
  train(corpus, cfg, tiny_shape_config(), dir_a);
  train(corpus, cfg, tiny_shape_config(), dir_b);
  CHECK(slurp(dir_a + "/final.otm") == slurp(dir_b + "/final.otm"));
  CHECK(slurp(dir_a + "/metrics.tsv") == slurp(dir_b + "/metrics.tsv"));
}

TEST_CASE("checkpoints round-trip exactly") {
  SyntheticConfig gcfg;
  gcfg.n_shapes = 4;
  gcfg.points_per_shape = 32;
  PairedCorpus corpus = gen_synthetic(gcfg);
  TrainConfig cfg = fast_train_config();
  cfg.stage1_epochs = 2;
  cfg.stage2_epochs = 2;
  const std::string dir = temp_dir("roundtrip");
  TrainOutput out = train(corpus, cfg, tiny_shape_config(), dir);

  Checkpoint ck = load_checkpoint(out.final_checkpoint);
  CHECK(ck.model.stage == Stage::Joint);
  CHECK(ck.model.epoch == 4);
  CHECK(ck.train_cfg.batch == cfg.batch);
  std::vector<Parameter*> a = out.model.all_params();
  std::vector<Parameter*> b = ck.model.all_params();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i]->id == b[i]->id);
    CHECK(a[i]->value == b[i]->value);
  }
  // Saving the loaded model again reproduces the file bit for bit.
  const std::string again = dir + "/again.otm";
  save_checkpoint(ck.model, ck.train_cfg, again);
  CHECK(slurp(out.final_checkpoint) == slurp(again));
}

TEST_CASE("loading a checkpoint with mismatched shapes fails") {
  SyntheticConfig gcfg;
  gcfg.n_shapes = 4;
  gcfg.points_per_shape = 32;
  PairedCorpus corpus = gen_synthetic(gcfg);
  TrainConfig cfg = fast_train_config();
  cfg.stage1_epochs = 1;
  cfg.stage2_epochs = 0;
  const std::string dir = temp_dir("badshape");
  TrainOutput out = train(corpus, cfg, tiny_shape_config(), dir);

  // Corrupt the declared shape of the first tensor.
  std::string text = slurp(out.final_checkpoint);
  const std::string needle = "tensor shape.w1 3 8";
  const auto pos = text.find(needle);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, needle.size(), "tensor shape.w1 3 9");
  const std::string bad = dir + "/bad.otm";
  std::ofstream(bad) << text;
  CHECK_THROWS_AS(load_checkpoint(bad), DataError);
}

TEST_CASE("combined loss through both encoders passes a loose gradient check") {
  SyntheticConfig gcfg;
  gcfg.seed = 21;
  gcfg.n_shapes = 2;
  gcfg.points_per_shape = 12;
  PairedCorpus corpus = gen_synthetic(gcfg);

  ShapeEncoderConfig scfg = tiny_shape_config(6);
  scfg.d1 = 4;
  scfg.d2 = 5;
  scfg.d3 = 5;
  scfg.d_mid = 5;
  scfg.d_color = 3;
  scfg.num_classes = corpus.num_classes;
  Vocabulary vocab = build_vocab(corpus.texts, 1);
  std::vector<std::vector<int>> tokens;
  for (const auto& t : corpus.texts)
    tokens.push_back(tokenize(t.raw, vocab, 8).tokens);

  ModelState model = ModelState::init(scfg, {vocab.size(), 6}, vocab,
                                      AdamConfig{}, 99);
  SinkhornConfig sk;
  sk.epsilon = 0.05;
  sk.marginal_tol = 1e-9;
  sk.max_iters = 50000;

  auto f = [&](bool with_grad) {
    Tape t;
    std::vector<Tape::Id> parts(2), words(2);
    Tape::Id ce = 0;
    for (std::size_t i = 0; i < 2; ++i) {
      ShapeEncoding enc = encode_shape(t, corpus.shapes[i], model.shape, scfg,
                                       PartSource::GroundTruth);
      parts[i] = enc.parts.parts;
      Tape::Id c = t.softmax_cross_entropy(enc.seg.logits,
                                           corpus.shapes[i].labels);
      ce = i == 0 ? c : t.add(ce, c);
      words[i] = encode_text(t, tokens[2 * i], model.text);
    }
    BatchScores scores;
    scores.r = Matrix(2, 2);
    std::vector<std::vector<Tape::Id>> nodes(2, std::vector<Tape::Id>(2));
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 2; ++b) {
        nodes[a][b] = emd_score(t, parts[a], words[b], sk);
        scores.r.at(a, b) = t.value(nodes[a][b]).data[0];
      }
    scores.positive.assign(2, std::vector<bool>(2, false));
    scores.positive[0][0] = scores.positive[1][1] = true;

    Tape::Id margin = t.input(Matrix(1, 1, 0.2));
    Tape::Id lemd = t.input(Matrix(1, 1, 0.0));
    bool any = false;
    for (Direction dir : {Direction::S2T, Direction::T2S}) {
      for (std::size_t anchor = 0; anchor < 2; ++anchor) {
        auto neg = mine_semi_hard(scores, anchor, dir);
        if (!neg) continue;
        Tape::Id rp = dir == Direction::S2T ? nodes[anchor][anchor]
                                            : nodes[anchor][anchor];
        Tape::Id rn = dir == Direction::S2T ? nodes[anchor][*neg]
                                            : nodes[*neg][anchor];
        Tape::Id hinge = t.relu(t.add(t.sub(rn, rp), margin));
        lemd = any ? t.add(lemd, hinge) : hinge;
        any = true;
      }
    }
    Tape::Id total = t.add(t.scale(ce, 0.5), t.scale(lemd, 2.0));
    if (with_grad) t.backward(total);
    return t.value(total).data[0];
  };

  std::vector<Parameter*> params = model.all_params();
  const auto rep = grad_check(f, params, 1e-6);
  INFO("worst " << rep.worst_param << " err " << rep.max_rel_err);
  CHECK(rep.max_rel_err <= 1e-3);
}
