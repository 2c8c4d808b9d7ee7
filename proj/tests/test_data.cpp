#include <doctest.h>

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "otmatch/data.hpp"

using namespace otmatch;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("otmatch_test_" + tag);
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

bool same_corpus(const PairedCorpus& a, const PairedCorpus& b) {
  if (a.shapes.size() != b.shapes.size()) return false;
  if (a.texts.size() != b.texts.size()) return false;
  if (a.pairs != b.pairs) return false;
  if (a.num_classes != b.num_classes) return false;
  for (std::size_t i = 0; i < a.shapes.size(); ++i) {
    const auto& x = a.shapes[i];
    const auto& y = b.shapes[i];
    if (x.shape_id != y.shape_id || !(x.points == y.points) ||
        !(x.colors == y.colors) || x.labels != y.labels)
      return false;
  }
  for (std::size_t i = 0; i < a.texts.size(); ++i) {
    const auto& x = a.texts[i];
    const auto& y = b.texts[i];
    if (x.text_id != y.text_id || x.shape_id != y.shape_id || x.raw != y.raw)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("tokenize maps, lowercases and strips punctuation") {
  Vocabulary vocab;
  REQUIRE(vocab.add("a") == 2);
  REQUIRE(vocab.add("red") == 3);
  REQUIRE(vocab.add("chair") == 4);
  CHECK(tokenize("A red chair.", vocab, 32).tokens ==
        std::vector<int>{2, 3, 4});
}

TEST_CASE("tokenize maps unknown words to UNK") {
  Vocabulary vocab;
  vocab.add("table");
  CHECK(tokenize("Zorbium table", vocab, 32).tokens ==
        std::vector<int>{Vocabulary::kUnk, 2});
}

TEST_CASE("tokenize truncates to max_len") {
  Vocabulary vocab;
  vocab.add("w");
  std::string raw;
  for (int i = 0; i < 30; ++i) raw += "w ";
  CHECK(tokenize(raw, vocab, 16).tokens.size() == 16);
}

TEST_CASE("tokenize rejects text that cleans to nothing") {
  Vocabulary vocab;
  CHECK_THROWS_AS(tokenize("?!...", vocab, 32), DataError);
  CHECK_THROWS_AS(tokenize("", vocab, 32), DataError);
}

TEST_CASE("tokenize is idempotent on already-clean text") {
  Vocabulary vocab;
  vocab.add("red");
  vocab.add("seat");
  vocab.add("and");
  TokenSequence once = tokenize("red seat and seat", vocab, 32);
  // Re-joining the mapped tokens and tokenizing again gives the same ids.
  std::string rejoined;
  for (std::size_t i = 0; i < once.tokens.size(); ++i) {
    if (i) rejoined += ' ';
    rejoined += vocab.token(once.tokens[i]);
  }
  CHECK(tokenize(rejoined, vocab, 32).tokens == once.tokens);
}

TEST_CASE("build_vocab respects min_count and orders deterministically") {
  std::vector<TextEntry> texts = {{"t0", "s0", "a a b"}, {"t1", "s0", "a c"}};
  Vocabulary v2 = build_vocab(texts, 2);
  CHECK(v2.size() == 3);  // pad, unk, a
  CHECK(v2.id("a") == 2);
  CHECK(v2.id("b") == Vocabulary::kUnk);

  Vocabulary v1 = build_vocab(texts, 1);
  CHECK(v1.size() == 5);
  CHECK(v1.id("a") == 2);  // highest frequency first
  CHECK(v1.id("b") == 3);  // then ties alphabetically
  CHECK(v1.id("c") == 4);

  Vocabulary empty = build_vocab({}, 1);
  CHECK(empty.size() == 2);
}

TEST_CASE("synthetic generation is deterministic") {
  SyntheticConfig cfg;
  cfg.seed = 7;
  cfg.n_shapes = 6;
  cfg.points_per_shape = 48;
  PairedCorpus a = gen_synthetic(cfg);
  PairedCorpus b = gen_synthetic(cfg);
  CHECK(same_corpus(a, b));

  const std::string dir_a = temp_dir("gen_a");
  const std::string dir_b = temp_dir("gen_b");
  save_corpus(a, dir_a);
  save_corpus(b, dir_b);
  for (const auto& entry : fs::directory_iterator(dir_a)) {
    const std::string name = entry.path().filename().string();
    CHECK(slurp(entry.path().string()) ==
          slurp((fs::path(dir_b) / name).string()));
  }
}

TEST_CASE("synthetic corpus shape/text/pair counts") {
  SyntheticConfig cfg;
  cfg.n_shapes = 2;
  cfg.points_per_shape = 32;
  PairedCorpus c = gen_synthetic(cfg);
  CHECK(c.shapes.size() == 2);
  CHECK(c.texts.size() == 4);
  CHECK(c.pairs.size() == 4);
  for (const auto& s : c.shapes) {
    CHECK(s.num_points() == 32);
    CHECK(s.has_labels());
    std::set<int> classes(s.labels.begin(), s.labels.end());
    CHECK(classes.size() >= 2);
  }
}

TEST_CASE("synthetic point colors stay within the jitter of their palette") {
  SyntheticConfig cfg;
  cfg.seed = 123;
  cfg.n_shapes = 8;
  cfg.points_per_shape = 64;
  PairedCorpus c = gen_synthetic(cfg);
  // Every part's points must agree on a base color within +-0.05 of the
  // first point of the part, and colors must be valid.
  for (const auto& s : c.shapes) {
    std::map<int, std::array<double, 3>> first;
    for (std::size_t i = 0; i < s.num_points(); ++i) {
      const int cls = s.labels[i];
      std::array<double, 3> col{s.colors.at(i, 0), s.colors.at(i, 1),
                                s.colors.at(i, 2)};
      for (double ch : col) {
        CHECK(ch >= 0.0);
        CHECK(ch <= 1.0);
      }
      auto [it, inserted] = first.emplace(cls, col);
      if (!inserted)
        for (std::size_t a = 0; a < 3; ++a)
          CHECK(std::fabs(col[a] - it->second[a]) <= 0.1 + 1e-12);
    }
  }
}

TEST_CASE("gen_synthetic validates its inputs") {
  SyntheticConfig cfg;
  cfg.n_shapes = 1;
  CHECK_THROWS_AS(gen_synthetic(cfg), ConfigError);
  cfg.n_shapes = 4;
  cfg.classes = 1;
  CHECK_THROWS_AS(gen_synthetic(cfg), ConfigError);
}

TEST_CASE("corpus round-trips through the file format") {
  SyntheticConfig cfg;
  cfg.seed = 99;
  cfg.n_shapes = 4;
  cfg.points_per_shape = 40;
  PairedCorpus original = gen_synthetic(cfg);
  const std::string dir = temp_dir("roundtrip");
  const std::string manifest = save_corpus(original, dir);
  PairedCorpus loaded = load_corpus(manifest);
  CHECK(same_corpus(original, loaded));
}

TEST_CASE("load_corpus on the checked-in two-shape fixture") {
  const fs::path fixture = fs::path(OTMATCH_TEST_DIR) / "fixtures" / "mini";
  PairedCorpus c = load_corpus((fixture / "manifest.json").string());
  CHECK(c.shapes.size() == 2);
  CHECK(c.texts.size() == 4);
  CHECK(c.pairs.size() == 4);
  CHECK(c.num_classes == 3);
  CHECK(c.shapes[0].shape_id == "m000");
  CHECK(c.shapes[0].num_points() == 4);
  CHECK(c.shapes[1].has_labels());
  CHECK(c.texts[0].raw == "a red seat and a blue leg");
}

TEST_CASE("load_corpus errors name the offending file and line") {
  const std::string dir = temp_dir("badload");

  {  // manifest referencing a missing cloud file
    std::ofstream m(fs::path(dir) / "manifest.json");
    m << R"({"clouds": ["nope.pc"], "texts": "texts.tsv", "classes": 2})";
  }
  CHECK_THROWS_WITH_AS(load_corpus(dir + "/manifest.json"),
                       doctest::Contains("nope.pc"), DataError);

  {  // color component out of range on line 2
    std::ofstream pc(fs::path(dir) / "bad.pc");
    pc << "pc b000 1 2\n";
    pc << "0 0 0 1.5 0 0 1\n";
    std::ofstream m(fs::path(dir) / "manifest.json", std::ios::trunc);
    m << R"({"clouds": ["bad.pc"], "texts": "texts.tsv", "classes": 2})";
    std::ofstream t(fs::path(dir) / "texts.tsv");
    t << "t0\tb000\tsome text\n";
  }
  CHECK_THROWS_WITH_AS(load_corpus(dir + "/manifest.json"),
                       doctest::Contains(":2"), DataError);

  {  // label outside [0, C)
    std::ofstream pc(fs::path(dir) / "bad.pc", std::ios::trunc);
    pc << "pc b000 1 2\n";
    pc << "0 0 0 0.5 0 0 7\n";
  }
  CHECK_THROWS_AS(load_corpus(dir + "/manifest.json"), DataError);

  {  // text referencing an unknown shape
    std::ofstream pc(fs::path(dir) / "bad.pc", std::ios::trunc);
    pc << "pc b000 1 2\n";
    pc << "0 0 0 0.5 0 0 1\n";
    std::ofstream t(fs::path(dir) / "texts.tsv", std::ios::trunc);
    t << "t0\tmissing\tsome text\n";
  }
  CHECK_THROWS_WITH_AS(load_corpus(dir + "/manifest.json"),
                       doctest::Contains("missing"), DataError);

  {  // unknown manifest key
    std::ofstream m(fs::path(dir) / "manifest.json", std::ios::trunc);
    m << R"({"clouds": [], "texts": "texts.tsv", "classes": 2, "bogus": 1})";
  }
  CHECK_THROWS_WITH_AS(load_corpus(dir + "/manifest.json"),
                       doctest::Contains("bogus"), DataError);
}

TEST_CASE("split_dataset partitions shapes with their texts") {
  SyntheticConfig cfg;
  cfg.seed = 3;
  cfg.n_shapes = 10;
  cfg.points_per_shape = 24;
  PairedCorpus c = gen_synthetic(cfg);

  auto [train, test] = split_dataset(c, 0.2, 42);
  CHECK(train.shapes.size() == 8);
  CHECK(test.shapes.size() == 2);
  CHECK(train.texts.size() + test.texts.size() == c.texts.size());
  CHECK(train.pairs.size() + test.pairs.size() == c.pairs.size());

  std::set<std::string> train_ids, test_ids;
  for (const auto& s : train.shapes) train_ids.insert(s.shape_id);
  for (const auto& s : test.shapes) test_ids.insert(s.shape_id);
  CHECK(train_ids.size() + test_ids.size() == c.shapes.size());
  for (const auto& id : test_ids) CHECK(!train_ids.count(id));
  for (const auto& t : train.texts) CHECK(train_ids.count(t.shape_id));
  for (const auto& t : test.texts) CHECK(test_ids.count(t.shape_id));

  auto [train2, test2] = split_dataset(c, 0.2, 42);
  CHECK(same_corpus(train, train2));
  CHECK(same_corpus(test, test2));

  CHECK_THROWS_AS(split_dataset(c, 0.01, 42), ConfigError);
  CHECK_THROWS_AS(split_dataset(c, 0.0, 42), ConfigError);
  CHECK_THROWS_AS(split_dataset(c, 1.0, 42), ConfigError);
}
