#include "otmatch/evalmod.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace otmatch {

RankedList rank_row(const Matrix& scores, std::size_t query) {
  RankedList out;
  out.query = query;
  out.order.resize(scores.cols);
  std::iota(out.order.begin(), out.order.end(), 0);
  const double* row = scores.row_ptr(query);
  std::sort(out.order.begin(), out.order.end(),
            [row](std::size_t a, std::size_t b) {
              if (row[a] != row[b]) return row[a] > row[b];
              return a < b;
            });
  out.scores.resize(scores.cols);
  for (std::size_t i = 0; i < scores.cols; ++i) out.scores[i] = row[out.order[i]];
  return out;
}

std::vector<RankedList> rank_all(const Matrix& scores) {
  std::vector<RankedList> out;
  out.reserve(scores.rows);
  for (std::size_t q = 0; q < scores.rows; ++q) out.push_back(rank_row(scores, q));
  return out;
}

double rr_at_k(const std::vector<RankedList>& ranked,
               const std::vector<std::set<std::size_t>>& relevance,
               std::size_t k) {
  if (k < 1) throw ConfigError("rr_at_k: k must be >= 1");
  if (ranked.empty()) throw ConfigError("rr_at_k: no queries");
  std::size_t hits = 0;
  for (const RankedList& r : ranked) {
    const auto& rel = relevance[r.query];
    const std::size_t top = std::min(k, r.order.size());
    for (std::size_t i = 0; i < top; ++i) {
      if (rel.count(r.order[i])) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranked.size());
}

double ndcg_at_k(const std::vector<RankedList>& ranked,
                 const std::vector<std::set<std::size_t>>& relevance,
                 std::size_t k) {
  if (k < 1) throw ConfigError("ndcg_at_k: k must be >= 1");
  if (ranked.empty()) throw ConfigError("ndcg_at_k: no queries");
  double total = 0.0;
  for (const RankedList& r : ranked) {
    const auto& rel = relevance[r.query];
    const std::size_t top = std::min(k, r.order.size());
    double dcg = 0.0;
    for (std::size_t i = 0; i < top; ++i)
      if (rel.count(r.order[i]))
        dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    double idcg = 0.0;
    const std::size_t ideal = std::min(k, rel.size());
    for (std::size_t i = 0; i < ideal; ++i)
      idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    total += idcg > 0.0 ? dcg / idcg : 0.0;
  }
  return total / static_cast<double>(ranked.size());
}

Matrix score_corpus(ModelState& model, const PairedCorpus& corpus,
                    Direction dir, const EvalConfig& cfg) {
  EmbeddedCorpus e = embed_corpus(model, corpus, cfg);
  Matrix s2t = cfg.parallel ? score_matrix_parallel(e.shape_parts, e.text_words,
                                                    cfg.sinkhorn, cfg.matcher)
                            : score_matrix_serial(e.shape_parts, e.text_words,
                                                  cfg.sinkhorn, cfg.matcher);
  return dir == Direction::S2T ? s2t : transpose(s2t);
}

const MetricRow& EvalReport::find(Direction dir, std::size_t k) const {
  for (const MetricRow& r : rows)
    if (r.dir == dir && r.k == k) return r;
  throw ConfigError("report: no row for " + std::string(to_string(dir)) +
                    " @ " + std::to_string(k));
}

EvalReport evaluate(ModelState& model, const PairedCorpus& corpus,
                    const std::vector<std::size_t>& ks,
                    const EvalConfig& cfg) {
  if (corpus.shapes.empty() || corpus.texts.empty())
    throw DataError("evaluate: empty corpus");
  EmbeddedCorpus e = embed_corpus(model, corpus, cfg);
  const Matrix s2t = cfg.parallel
                         ? score_matrix_parallel(e.shape_parts, e.text_words,
                                                 cfg.sinkhorn, cfg.matcher)
                         : score_matrix_serial(e.shape_parts, e.text_words,
                                               cfg.sinkhorn, cfg.matcher);
  const Matrix t2s = transpose(s2t);

  // Relevance sets from the ground-truth pairs.
  std::vector<std::set<std::size_t>> s2t_rel(corpus.shapes.size());
  std::vector<std::set<std::size_t>> t2s_rel(corpus.texts.size());
  for (const auto& [shape_id, text_id] : corpus.pairs) {
    std::size_t si = 0, ti = 0;
    for (; si < e.shape_ids.size(); ++si)
      if (e.shape_ids[si] == shape_id) break;
    for (; ti < e.text_ids.size(); ++ti)
      if (e.text_ids[ti] == text_id) break;
    if (si == e.shape_ids.size() || ti == e.text_ids.size())
      throw DataError("evaluate: pair references unknown ids (" + shape_id +
                      ", " + text_id + ")");
    s2t_rel[si].insert(ti);
    t2s_rel[ti].insert(si);
  }
  for (std::size_t q = 0; q < s2t_rel.size(); ++q)
    if (s2t_rel[q].empty())
      throw DataError("evaluate: shape " + e.shape_ids[q] +
                      " has no relevant texts");
  for (std::size_t q = 0; q < t2s_rel.size(); ++q)
    if (t2s_rel[q].empty())
      throw DataError("evaluate: text " + e.text_ids[q] +
                      " has no relevant shape");

  const std::vector<RankedList> s2t_ranked = rank_all(s2t);
  const std::vector<RankedList> t2s_ranked = rank_all(t2s);

  EvalReport report;
  for (Direction dir : {Direction::S2T, Direction::T2S}) {
    const auto& ranked = dir == Direction::S2T ? s2t_ranked : t2s_ranked;
    const auto& rel = dir == Direction::S2T ? s2t_rel : t2s_rel;
    for (std::size_t k : ks) {
      MetricRow row;
      row.dir = dir;
      row.k = k;
      row.rr = rr_at_k(ranked, rel, k);
      row.ndcg = ndcg_at_k(ranked, rel, k);
      report.rows.push_back(row);
    }
  }
  return report;
}

void write_report(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report " + path);
  out << "direction\tk\tRR\tNDCG\n";
  char buf[96];
  for (const MetricRow& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%.10g\t%.10g\n", to_string(r.dir),
                  r.k, r.rr, r.ndcg);
    out << buf;
  }
}

EvalReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report " + path);
  std::string line;
  if (!std::getline(in, line) || line != "direction\tk\tRR\tNDCG")
    throw DataError(path + ": not a report file");
  EvalReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string dir;
    MetricRow r;
    if (!(ls >> dir >> r.k >> r.rr >> r.ndcg))
      throw DataError(path + ": malformed report row: " + line);
    if (dir != "S2T" && dir != "T2S")
      throw DataError(path + ": unknown direction " + dir);
    r.dir = dir == "S2T" ? Direction::S2T : Direction::T2S;
    report.rows.push_back(r);
  }
  return report;
}

void dump_rankings(const EmbeddedCorpus& embedded, const Matrix& s2t_scores,
                   std::size_t top_k, const std::string& path) {
  nlohmann::json out = nlohmann::json::array();
  const Matrix t2s = transpose(s2t_scores);
  const auto add = [&](Direction dir, const Matrix& m,
                       const std::vector<std::string>& queries,
                       const std::vector<std::string>& gallery) {
    for (std::size_t q = 0; q < m.rows; ++q) {
      RankedList r = rank_row(m, q);
      nlohmann::json entry;
      entry["direction"] = to_string(dir);
      entry["query"] = queries[q];
      nlohmann::json items = nlohmann::json::array();
      for (std::size_t i = 0; i < std::min(top_k, r.order.size()); ++i)
        items.push_back({{"id", gallery[r.order[i]]}, {"score", r.scores[i]}});
      entry["ranked"] = items;
      out.push_back(entry);
    }
  };
  add(Direction::S2T, s2t_scores, embedded.shape_ids, embedded.text_ids);
  add(Direction::T2S, t2s, embedded.text_ids, embedded.shape_ids);
  std::ofstream f(path);
  if (!f) throw DataError("cannot write rankings dump " + path);
  f << out.dump(2) << '\n';
}

}  // namespace otmatch
