#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "otmatch/errors.hpp"
#include "otmatch/matrix.hpp"

namespace otmatch {

// One segmented, colored point cloud. labels is empty when the cloud is
// unlabeled, otherwise it holds one part-class id in [0, C) per point.
struct ColoredPointCloud {
  std::string shape_id;
  Matrix points;  // l x 3
  Matrix colors;  // l x 3, entries in [0, 1]
  std::vector<int> labels;

  std::size_t num_points() const { return points.rows; }
  bool has_labels() const { return !labels.empty(); }
};

struct TextEntry {
  std::string text_id;
  std::string shape_id;
  std::string raw;
};

struct TokenSequence {
  std::string text_id;
  std::vector<int> tokens;
  std::string raw;
};

// Token ids are dense; 0 and 1 are reserved for PAD and UNK.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary() : id_to_token_{"<pad>", "<unk>"} {}

  // Returns kUnk for unknown tokens.
  int id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const {
    return token_to_id_.count(token) > 0;
  }
  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
      throw DataError("vocabulary: id " + std::to_string(id) + " out of range");
    return id_to_token_[static_cast<std::size_t>(id)];
  }
  int add(const std::string& token);
  std::size_t size() const { return id_to_token_.size(); }

 private:
  std::map<std::string, int> token_to_id_;
  std::vector<std::string> id_to_token_;
};

struct PairedCorpus {
  std::vector<ColoredPointCloud> shapes;
  std::vector<TextEntry> texts;
  // Ground-truth (shape_id, text_id) links.
  std::vector<std::pair<std::string, std::string>> pairs;
  int num_classes = 0;
  std::uint64_t split_seed = 0;
  std::string split_tag = "all";

  const ColoredPointCloud& shape(const std::string& id) const;
  std::vector<std::size_t> text_indices_of_shape(const std::string& id) const;
};

// Lowercase, map every non-alphanumeric byte to a space, split on
// whitespace, look up ids (UNK on misses), truncate to max_len. Throws
// DataError when nothing survives cleaning.
TokenSequence tokenize(const std::string& raw, const Vocabulary& vocab,
                       std::size_t max_len);

// Tokens with frequency >= min_count, ordered by (-frequency, token) so
// ids are deterministic; ids start after the reserved slots.
Vocabulary build_vocab(const std::vector<TextEntry>& texts,
                       std::size_t min_count);

PairedCorpus load_corpus(const std::string& manifest_path);

// Writes one .pc file per shape plus texts.tsv and a manifest into dir.
// Returns the manifest path.
std::string save_corpus(const PairedCorpus& corpus, const std::string& dir);

struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t n_shapes = 64;
  int classes = 4;
  std::size_t points_per_shape = 256;
};

// Deterministic synthetic corpus: each shape is 2-4 axis-aligned part
// blobs with a part class and a named palette color; per-point labels
// are the generating class; two template texts per shape name every
// part's color and class word. Same seed, same corpus, byte for byte.
PairedCorpus gen_synthetic(const SyntheticConfig& cfg);

// Disjoint partition of shape ids; texts and pairs follow their shape.
std::pair<PairedCorpus, PairedCorpus> split_dataset(const PairedCorpus& corpus,
                                                    double test_fraction,
                                                    std::uint64_t seed);

}  // namespace otmatch
