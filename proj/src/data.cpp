#include "otmatch/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "otmatch/rng.hpp"

namespace fs = std::filesystem;

namespace otmatch {

namespace {

// %.17g round-trips doubles exactly through strtod.
std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

[[noreturn]] void load_fail(const std::string& file, std::size_t line,
                            const std::string& msg) {
  throw DataError(file + ":" + std::to_string(line) + ": " + msg);
}

struct PaletteEntry {
  const char* name;
  double r, g, b;
};

// All channels stay in [0.05, 0.95] so the +-0.05 point jitter never
// leaves [0, 1].
constexpr PaletteEntry kPalette[8] = {
    {"red", 0.9, 0.1, 0.1},    {"blue", 0.1, 0.2, 0.9},
    {"green", 0.1, 0.8, 0.2},  {"yellow", 0.95, 0.9, 0.1},
    {"white", 0.95, 0.95, 0.95}, {"black", 0.05, 0.05, 0.05},
    {"purple", 0.6, 0.15, 0.8}, {"orange", 0.95, 0.55, 0.1}};

const char* kClassWords[8] = {"seat", "back",  "leg",   "top",
                              "arm",  "base",  "shelf", "frame"};

std::string class_word(int c) {
  if (c >= 0 && c < 8) return kClassWords[c];
  return "part" + std::to_string(c);
}

}  // namespace

int Vocabulary::add(const std::string& token) {
  auto it = token_to_id_.find(token);
  if (it != token_to_id_.end()) return it->second;
  const int id = static_cast<int>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

const ColoredPointCloud& PairedCorpus::shape(const std::string& id) const {
  for (const auto& s : shapes)
    if (s.shape_id == id) return s;
  throw DataError("corpus: unknown shape id " + id);
}

std::vector<std::size_t> PairedCorpus::text_indices_of_shape(
    const std::string& id) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < texts.size(); ++i)
    if (texts[i].shape_id == id) out.push_back(i);
  return out;
}

TokenSequence tokenize(const std::string& raw, const Vocabulary& vocab,
                       std::size_t max_len) {
  if (raw.empty()) throw DataError("tokenize: empty input text");
  std::string cleaned;
  cleaned.reserve(raw.size());
  for (unsigned char c : raw)
    cleaned.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c))
                                      : ' ');
  TokenSequence seq;
  seq.raw = raw;
  std::istringstream in(cleaned);
  std::string tok;
  while (in >> tok && seq.tokens.size() < max_len)
    seq.tokens.push_back(vocab.id(tok));
  if (seq.tokens.empty())
    throw DataError("tokenize: no tokens survive cleaning: \"" + raw + "\"");
  return seq;
}

Vocabulary build_vocab(const std::vector<TextEntry>& texts,
                       std::size_t min_count) {
  std::map<std::string, std::size_t> freq;
  for (const TextEntry& t : texts) {
    std::string cleaned;
    cleaned.reserve(t.raw.size());
    for (unsigned char c : t.raw)
      cleaned.push_back(std::isalnum(c) ? static_cast<char>(std::tolower(c))
                                        : ' ');
    std::istringstream in(cleaned);
    std::string tok;
    while (in >> tok) ++freq[tok];
  }
  std::vector<std::pair<std::string, std::size_t>> entries(freq.begin(),
                                                           freq.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Vocabulary vocab;
  for (const auto& [tok, count] : entries)
    if (count >= min_count) vocab.add(tok);
  return vocab;
}

PairedCorpus load_corpus(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("cannot open manifest: " + manifest_path);
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path + ": invalid JSON: " + e.what());
  }
  if (!manifest.is_object())
    throw DataError(manifest_path + ": manifest must be a JSON object");
  for (const auto& [key, _] : manifest.items())
    if (key != "clouds" && key != "texts" && key != "classes" &&
        key != "split_seed")
      throw DataError(manifest_path + ": unknown manifest key \"" + key + "\"");
  if (!manifest.contains("clouds") || !manifest.contains("texts") ||
      !manifest.contains("classes"))
    throw DataError(manifest_path + ": manifest needs clouds, texts, classes");

  PairedCorpus corpus;
  corpus.num_classes = manifest["classes"].get<int>();
  if (corpus.num_classes < 1)
    throw DataError(manifest_path + ": classes must be >= 1");
  corpus.split_seed = manifest.value("split_seed", std::uint64_t{0});

  const fs::path base = fs::path(manifest_path).parent_path();
  std::set<std::string> seen_ids;

  for (const auto& entry : manifest["clouds"]) {
    const std::string rel = entry.get<std::string>();
    const std::string path = (base / rel).string();
    std::ifstream in(path);
    if (!in) throw DataError("manifest references missing cloud file: " + path);

    std::string line;
    std::size_t lineno = 1;
    if (!std::getline(in, line)) load_fail(path, lineno, "missing header");
    std::istringstream head(line);
    std::string magic;
    std::string shape_id;
    std::size_t l = 0;
    int c_file = 0;
    if (!(head >> magic >> shape_id >> l >> c_file) || magic != "pc")
      load_fail(path, lineno, "malformed header, expected: pc <id> <l> <C>");
    if (l < 1) load_fail(path, lineno, "point count must be >= 1");
    if (c_file != corpus.num_classes)
      load_fail(path, lineno,
                "class count " + std::to_string(c_file) +
                    " disagrees with manifest " +
                    std::to_string(corpus.num_classes));
    if (!seen_ids.insert(shape_id).second)
      load_fail(path, lineno, "duplicate shape id " + shape_id);

    ColoredPointCloud cloud;
    cloud.shape_id = shape_id;
    cloud.points = Matrix(l, 3);
    cloud.colors = Matrix(l, 3);
    std::vector<int> labels(l, -1);
    std::size_t labeled = 0;
    for (std::size_t i = 0; i < l; ++i) {
      ++lineno;
      if (!std::getline(in, line))
        load_fail(path, lineno, "expected " + std::to_string(l) +
                                    " point lines, file ends early");
      std::istringstream ls(line);
      double x, y, z, r, g, b;
      int label;
      if (!(ls >> x >> y >> z >> r >> g >> b >> label))
        load_fail(path, lineno, "malformed point line");
      for (double col : {r, g, b})
        if (col < 0.0 || col > 1.0)
          load_fail(path, lineno,
                    "color component " + fmt_double(col) + " outside [0, 1]");
      if (label < -1 || label >= corpus.num_classes)
        load_fail(path, lineno, "label " + std::to_string(label) +
                                    " outside [0, " +
                                    std::to_string(corpus.num_classes) + ")");
      cloud.points.at(i, 0) = x;
      cloud.points.at(i, 1) = y;
      cloud.points.at(i, 2) = z;
      cloud.colors.at(i, 0) = r;
      cloud.colors.at(i, 1) = g;
      cloud.colors.at(i, 2) = b;
      labels[i] = label;
      if (label >= 0) ++labeled;
    }
    if (labeled != 0 && labeled != l)
      load_fail(path, lineno, "labels must be all present or all absent");
    if (labeled == l) cloud.labels = std::move(labels);
    corpus.shapes.push_back(std::move(cloud));
  }

  const std::string texts_path =
      (base / manifest["texts"].get<std::string>()).string();
  std::ifstream tin(texts_path);
  if (!tin) throw DataError("manifest references missing text file: " + texts_path);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> seen_text_ids;
  while (std::getline(tin, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string::npos ? std::string::npos
                                                : line.find('\t', tab1 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos)
      load_fail(texts_path, lineno, "expected <text_id>\\t<shape_id>\\t<text>");
    TextEntry t;
    t.text_id = line.substr(0, tab1);
    t.shape_id = line.substr(tab1 + 1, tab2 - tab1 - 1);
    t.raw = line.substr(tab2 + 1);
    if (t.text_id.empty() || t.raw.empty())
      load_fail(texts_path, lineno, "empty text id or description");
    if (!seen_text_ids.insert(t.text_id).second)
      load_fail(texts_path, lineno, "duplicate text id " + t.text_id);
    if (!seen_ids.count(t.shape_id))
      load_fail(texts_path, lineno,
                "text references unknown shape id " + t.shape_id);
    corpus.pairs.emplace_back(t.shape_id, t.text_id);
    corpus.texts.push_back(std::move(t));
  }

  for (const auto& s : corpus.shapes)
    if (corpus.text_indices_of_shape(s.shape_id).empty())
      throw DataError(texts_path + ": shape " + s.shape_id +
                      " has no paired text");
  return corpus;
}

std::string save_corpus(const PairedCorpus& corpus, const std::string& dir) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["classes"] = corpus.num_classes;
  manifest["split_seed"] = corpus.split_seed;
  manifest["texts"] = "texts.tsv";
  std::vector<std::string> cloud_files;

  for (const auto& s : corpus.shapes) {
    const std::string rel = s.shape_id + ".pc";
    cloud_files.push_back(rel);
    std::ofstream out(fs::path(dir) / rel);
    if (!out) throw DataError("cannot write " + (fs::path(dir) / rel).string());
    out << "pc " << s.shape_id << ' ' << s.num_points() << ' '
        << corpus.num_classes << '\n';
    for (std::size_t i = 0; i < s.num_points(); ++i) {
      out << fmt_double(s.points.at(i, 0)) << ' '
          << fmt_double(s.points.at(i, 1)) << ' '
          << fmt_double(s.points.at(i, 2)) << ' '
          << fmt_double(s.colors.at(i, 0)) << ' '
          << fmt_double(s.colors.at(i, 1)) << ' '
          << fmt_double(s.colors.at(i, 2)) << ' '
          << (s.has_labels() ? s.labels[i] : -1) << '\n';
    }
  }
  manifest["clouds"] = cloud_files;

  {
    std::ofstream out(fs::path(dir) / "texts.tsv");
    if (!out) throw DataError("cannot write texts.tsv in " + dir);
    for (const auto& t : corpus.texts)
      out << t.text_id << '\t' << t.shape_id << '\t' << t.raw << '\n';
  }

  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(manifest_path);
  if (!out) throw DataError("cannot write " + manifest_path);
  out << manifest.dump(2) << '\n';
  return manifest_path;
}

PairedCorpus gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_shapes < 2)
    throw ConfigError("gen_synthetic: need at least 2 shapes");
  if (cfg.classes < 2)
    throw ConfigError("gen_synthetic: need at least 2 classes");
  if (cfg.points_per_shape < 4)
    throw ConfigError("gen_synthetic: need at least 4 points per shape");

  Rng rng(cfg.seed);
  PairedCorpus corpus;
  corpus.num_classes = cfg.classes;
  corpus.split_seed = cfg.seed;

  // Class geometry is a fixed octant corner per class, so shapes that
  // share a class set look alike and differ mainly in color.
  const auto class_center = [](int c) {
    return std::array<double, 3>{(c & 1) ? 0.6 : -0.6, (c & 2) ? 0.6 : -0.6,
                                 (c & 4) ? 0.6 : -0.6};
  };

  std::set<std::vector<std::pair<int, int>>> signatures;
  std::vector<int> class_ids(static_cast<std::size_t>(cfg.classes));
  std::iota(class_ids.begin(), class_ids.end(), 0);
  std::vector<int> palette_ids(8);
  std::iota(palette_ids.begin(), palette_ids.end(), 0);

  for (std::size_t si = 0; si < cfg.n_shapes; ++si) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "s%03zu", si);
    const std::string shape_id = idbuf;

    // Pick a (class, color) signature, retrying a bounded number of
    // times to keep signatures unique across the corpus.
    std::vector<std::pair<int, int>> sig;
    const std::size_t max_parts =
        std::min<std::size_t>(4, static_cast<std::size_t>(cfg.classes));
    for (int attempt = 0; attempt < 100; ++attempt) {
      const std::size_t k = 2 + rng.below(max_parts - 1);
      rng.shuffle(class_ids);
      rng.shuffle(palette_ids);
      sig.clear();
      for (std::size_t p = 0; p < k; ++p)
        sig.emplace_back(class_ids[p], palette_ids[p % palette_ids.size()]);
      std::sort(sig.begin(), sig.end());
      if (signatures.insert(sig).second) break;
      if (attempt == 99) signatures.insert(sig);
    }

    const std::size_t k = sig.size();
    ColoredPointCloud cloud;
    cloud.shape_id = shape_id;
    cloud.points = Matrix(cfg.points_per_shape, 3);
    cloud.colors = Matrix(cfg.points_per_shape, 3);
    cloud.labels.assign(cfg.points_per_shape, 0);

    std::size_t next_point = 0;
    for (std::size_t p = 0; p < k; ++p) {
      const auto [cls, col] = sig[p];
      const auto center = class_center(cls);
      std::array<double, 3> jitter{rng.uniform(-0.05, 0.05),
                                   rng.uniform(-0.05, 0.05),
                                   rng.uniform(-0.05, 0.05)};
      std::array<double, 3> half{0.25 + rng.uniform(-0.02, 0.02),
                                 0.25 + rng.uniform(-0.02, 0.02),
                                 0.25 + rng.uniform(-0.02, 0.02)};
      const std::size_t count = cfg.points_per_shape / k +
                                (p < cfg.points_per_shape % k ? 1 : 0);
      const PaletteEntry& pal = kPalette[col];
      for (std::size_t q = 0; q < count; ++q, ++next_point) {
        for (std::size_t a = 0; a < 3; ++a)
          cloud.points.at(next_point, a) =
              center[a] + jitter[a] + rng.uniform(-half[a], half[a]);
        const double base[3] = {pal.r, pal.g, pal.b};
        for (std::size_t a = 0; a < 3; ++a)
          cloud.colors.at(next_point, a) =
              std::clamp(base[a] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
        cloud.labels[next_point] = cls;
      }
    }

    // Two texts per shape: forward and reverse part order.
    std::string fwd, rev;
    for (std::size_t p = 0; p < k; ++p) {
      const auto [cls, col] = sig[p];
      const auto [rcls, rcol] = sig[k - 1 - p];
      if (p) fwd += " and ";
      fwd += "a " + std::string(kPalette[col].name) + " " + class_word(cls);
      if (p) rev += " and ";
      rev += "a " + std::string(kPalette[rcol].name) + " " + class_word(rcls);
    }
    TextEntry t0{shape_id + "_t0", shape_id, fwd};
    TextEntry t1{shape_id + "_t1", shape_id, "this shape has " + rev};
    corpus.pairs.emplace_back(shape_id, t0.text_id);
    corpus.pairs.emplace_back(shape_id, t1.text_id);
    corpus.texts.push_back(std::move(t0));
    corpus.texts.push_back(std::move(t1));
    corpus.shapes.push_back(std::move(cloud));
  }
  return corpus;
}

std::pair<PairedCorpus, PairedCorpus> split_dataset(const PairedCorpus& corpus,
                                                    double test_fraction,
                                                    std::uint64_t seed) {
  if (test_fraction <= 0.0 || test_fraction >= 1.0)
    throw ConfigError("split_dataset: test_fraction must be in (0, 1)");
  const std::size_t n = corpus.shapes.size();
  const std::size_t test_count = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(n)));
  if (test_count == 0 || test_count >= n)
    throw ConfigError("split_dataset: fraction " + fmt_double(test_fraction) +
                      " leaves an empty side for " + std::to_string(n) +
                      " shapes");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  std::set<std::string> test_ids;
  for (std::size_t i = 0; i < test_count; ++i)
    test_ids.insert(corpus.shapes[order[i]].shape_id);

  PairedCorpus train, test;
  train.num_classes = test.num_classes = corpus.num_classes;
  train.split_seed = test.split_seed = seed;
  train.split_tag = "train";
  test.split_tag = "test";
  for (const auto& s : corpus.shapes)
    (test_ids.count(s.shape_id) ? test : train).shapes.push_back(s);
  for (const auto& t : corpus.texts)
    (test_ids.count(t.shape_id) ? test : train).texts.push_back(t);
  for (const auto& p : corpus.pairs)
    (test_ids.count(p.first) ? test : train).pairs.push_back(p);
  return {std::move(train), std::move(test)};
}

}  // namespace otmatch
