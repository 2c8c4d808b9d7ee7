#pragma once

#include <set>
#include <string>
#include <vector>

#include "otmatch/common.hpp"
#include "otmatch/data.hpp"
#include "otmatch/ot.hpp"
#include "otmatch/trainer.hpp"

namespace otmatch {

struct RankedList {
  std::size_t query = 0;
  std::vector<std::size_t> order;  // gallery indices, best first
  std::vector<double> scores;      // non-increasing
};

// Descending score; ties broken by ascending gallery index.
RankedList rank_row(const Matrix& scores, std::size_t query);
std::vector<RankedList> rank_all(const Matrix& scores);

// Percentage (0..100) of queries whose top-k contains a relevant item.
double rr_at_k(const std::vector<RankedList>& ranked,
               const std::vector<std::set<std::size_t>>& relevance,
               std::size_t k);

// Binary-gain NDCG with the log2(i+1) discount, averaged over queries.
double ndcg_at_k(const std::vector<RankedList>& ranked,
                 const std::vector<std::set<std::size_t>>& relevance,
                 std::size_t k);

struct EvalConfig {
  SinkhornConfig sinkhorn;
  Matcher matcher = Matcher::Emd;
  bool parallel = true;
  PartSource part_source = PartSource::Predicted;
};

// Frozen-model embeddings for every shape (part sets) and text (word
// sets) of a corpus. Inference is forward-only, so items are
// independent and may be embedded in parallel.
struct EmbeddedCorpus {
  std::vector<std::string> shape_ids;
  std::vector<std::string> text_ids;
  std::vector<Matrix> shape_parts;
  std::vector<Matrix> text_words;
};
EmbeddedCorpus embed_corpus(ModelState& model, const PairedCorpus& corpus,
                            const EvalConfig& cfg);

// Pairwise similarity of every part set against every word set.
// The serial kernel is the reference; the parallel kernel computes the
// identical matrix with OpenMP worksharing. bench_score compares them.
Matrix score_matrix_serial(const std::vector<Matrix>& parts,
                           const std::vector<Matrix>& words,
                           const SinkhornConfig& cfg, Matcher matcher);
Matrix score_matrix_parallel(const std::vector<Matrix>& parts,
                             const std::vector<Matrix>& words,
                             const SinkhornConfig& cfg, Matcher matcher);

// Query-by-gallery similarity matrix for one retrieval direction.
// S2T rows are shapes; T2S rows are texts (the transpose by symmetry of
// the score).
Matrix score_corpus(ModelState& model, const PairedCorpus& corpus,
                    Direction dir, const EvalConfig& cfg);

struct MetricRow {
  Direction dir = Direction::S2T;
  std::size_t k = 1;
  double rr = 0.0;
  double ndcg = 0.0;
};

struct EvalReport {
  std::vector<MetricRow> rows;
  const MetricRow& find(Direction dir, std::size_t k) const;
};

// Both directions at every k. S2T relevance is every paired text of the
// query shape; T2S relevance is the paired shape(s) of the query text.
EvalReport evaluate(ModelState& model, const PairedCorpus& corpus,
                    const std::vector<std::size_t>& ks, const EvalConfig& cfg);

void write_report(const EvalReport& report, const std::string& path);
EvalReport read_report(const std::string& path);

// Optional per-query JSON dump of full rankings for both directions.
void dump_rankings(const EmbeddedCorpus& embedded, const Matrix& s2t_scores,
                   std::size_t top_k, const std::string& path);

}  // namespace otmatch
