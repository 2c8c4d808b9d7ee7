#include "otmatch/evalmod.hpp"
#include "otmatch/text_encoder.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace otmatch {

namespace {

Matrix embed_one_shape(ModelState& model, const ColoredPointCloud& cloud,
                       const EvalConfig& cfg) {
  Tape tape;
  PartSource source = cfg.part_source;
  if (source == PartSource::GroundTruth && !cloud.has_labels())
    source = PartSource::Predicted;
  ShapeEncoding enc =
      encode_shape(tape, cloud, model.shape, model.shape_cfg, source);
  return tape.value(enc.parts.parts);
}

Matrix embed_one_text(ModelState& model, const TextEntry& text,
                      std::size_t max_len) {
  Tape tape;
  TokenSequence seq = tokenize(text.raw, model.vocab, max_len);
  return tape.value(encode_text(tape, seq.tokens, model.text));
}

double score_pair(const Matrix& parts, const Matrix& words,
                  const SinkhornConfig& cfg, Matcher matcher) {
  return matcher == Matcher::Emd ? emd_similarity(parts, words, cfg)
                                 : chamfer_similarity(parts, words);
}

}  // namespace

EmbeddedCorpus embed_corpus(ModelState& model, const PairedCorpus& corpus,
                            const EvalConfig& cfg) {
  EmbeddedCorpus out;
  out.shape_ids.reserve(corpus.shapes.size());
  out.text_ids.reserve(corpus.texts.size());
  for (const auto& s : corpus.shapes) out.shape_ids.push_back(s.shape_id);
  for (const auto& t : corpus.texts) out.text_ids.push_back(t.text_id);
  out.shape_parts.resize(corpus.shapes.size());
  out.text_words.resize(corpus.texts.size());

  // Tokenization touches no shared state and each item gets its own
  // tape, so items are independent.
  const std::size_t max_len = 32;
  if (cfg.parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (std::ptrdiff_t i = 0;
         i < static_cast<std::ptrdiff_t>(corpus.shapes.size()); ++i)
      out.shape_parts[static_cast<std::size_t>(i)] =
          embed_one_shape(model, corpus.shapes[static_cast<std::size_t>(i)], cfg);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (std::ptrdiff_t i = 0;
         i < static_cast<std::ptrdiff_t>(corpus.texts.size()); ++i)
      out.text_words[static_cast<std::size_t>(i)] = embed_one_text(
          model, corpus.texts[static_cast<std::size_t>(i)], max_len);
  } else {
    for (std::size_t i = 0; i < corpus.shapes.size(); ++i)
      out.shape_parts[i] = embed_one_shape(model, corpus.shapes[i], cfg);
    for (std::size_t i = 0; i < corpus.texts.size(); ++i)
      out.text_words[i] = embed_one_text(model, corpus.texts[i], max_len);
  }
  return out;
}

Matrix score_matrix_serial(const std::vector<Matrix>& parts,
                           const std::vector<Matrix>& words,
                           const SinkhornConfig& cfg, Matcher matcher) {
  Matrix scores(parts.size(), words.size());
  for (std::size_t i = 0; i < parts.size(); ++i)
    for (std::size_t j = 0; j < words.size(); ++j)
      scores.at(i, j) = score_pair(parts[i], words[j], cfg, matcher);
  return scores;
}

Matrix score_matrix_parallel(const std::vector<Matrix>& parts,
                             const std::vector<Matrix>& words,
                             const SinkhornConfig& cfg, Matcher matcher) {
  Matrix scores(parts.size(), words.size());
  const std::ptrdiff_t total =
      static_cast<std::ptrdiff_t>(parts.size() * words.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 16)
#endif
  for (std::ptrdiff_t idx = 0; idx < total; ++idx) {
    const std::size_t i = static_cast<std::size_t>(idx) / words.size();
    const std::size_t j = static_cast<std::size_t>(idx) % words.size();
    scores.at(i, j) = score_pair(parts[i], words[j], cfg, matcher);
  }
  return scores;
}

}  // namespace otmatch
