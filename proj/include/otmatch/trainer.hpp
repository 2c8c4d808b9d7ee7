#pragma once

#include <optional>
#include <string>
#include <vector>

#include "otmatch/adam.hpp"
#include "otmatch/common.hpp"
#include "otmatch/data.hpp"
#include "otmatch/ot.hpp"
#include "otmatch/shape_encoder.hpp"
#include "otmatch/text_encoder.hpp"

namespace otmatch {

enum class Mining { SemiHard, Hardest };
enum class Stage { SegPretrain, Joint };

struct TrainConfig {
  double margin = 0.2;  // triplet margin
  double beta = 40.0;   // matching loss weight
  std::size_t stage1_epochs = 30;
  std::size_t stage2_epochs = 30;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 7;
  Mining mining = Mining::SemiHard;
  PartSource part_source = PartSource::Predicted;
  Matcher matcher = Matcher::Emd;
  std::size_t checkpoint_every = 0;  // extra checkpoints every k epochs; 0 = off
  std::size_t max_len = 32;
  std::size_t min_count = 1;
  bool log_rr1 = false;  // append train-split T2S RR@1 to each epoch line
  SinkhornConfig sinkhorn;
};

// Everything trainable plus optimizer moments, the stage flag and the
// epoch counter. The stage only ever moves SegPretrain -> Joint.
struct ModelState {
  ShapeEncoderConfig shape_cfg;
  TextEncoderConfig text_cfg;
  ShapeEncoderParams shape;
  TextEncoderParams text;
  Vocabulary vocab;
  AdamState adam;
  Stage stage = Stage::SegPretrain;
  std::size_t epoch = 0;

  std::vector<Parameter*> all_params();
  static ModelState init(const ShapeEncoderConfig& scfg,
                         const TextEncoderConfig& tcfg, Vocabulary vocab,
                         AdamConfig adam_cfg, std::uint64_t seed);
};

// In-batch similarity matrix: r(a, b) scores shape a against text b;
// positive(a, b) marks ground-truth pairs.
struct BatchScores {
  Matrix r;
  std::vector<std::vector<bool>> positive;

  std::size_t size() const { return r.rows; }
  bool is_positive(std::size_t a, std::size_t b) const {
    return positive[a][b];
  }
};

// Among the anchor's non-positive candidates scoring below its (best)
// positive, returns the one with the largest score; ties take the lowest
// index; nullopt when the set is empty. Direction S2T mines over the
// anchor's row, T2S over its column.
std::optional<std::size_t> mine_semi_hard(const BatchScores& scores,
                                          std::size_t anchor, Direction dir);

// Hardest-negative variant used by the collapse ablation: the best
// scoring non-positive regardless of the positive score.
std::optional<std::size_t> mine_hardest(const BatchScores& scores,
                                        std::size_t anchor, Direction dir);

// max(margin - r_pos + r_neg, 0)
double triplet_loss(double r_pos, double r_neg, double margin);

// Mean over anchors of the mined triplet terms in both directions;
// anchors without a mined negative contribute 0.
double matching_loss(const BatchScores& scores, double margin,
                     Mining mining = Mining::SemiHard);

// seg_ce + beta * match
double combined_loss(double seg_ce, double match, double beta);

struct EpochLog {
  std::size_t epoch = 0;  // 1-based over the whole run
  Stage stage = Stage::SegPretrain;
  double ce = 0.0;
  double emd = 0.0;
  double total = 0.0;
  std::optional<double> rr1;
};

struct TrainOutput {
  ModelState model;
  std::vector<EpochLog> log;
  std::string metrics_path;
  std::string stage1_checkpoint;  // empty when stage 1 was skipped
  std::string final_checkpoint;
};

// Two-stage training: segmentation-only pretraining with ground-truth
// part grouping, then joint multi-task training with in-batch mining.
// Deterministic given the seed. Writes metrics.tsv plus checkpoints
// under out_dir; pass an empty out_dir to keep everything in memory.
TrainOutput train(const PairedCorpus& corpus, const TrainConfig& cfg,
                  const ShapeEncoderConfig& shape_cfg,
                  const std::string& out_dir);

// Fraction of points whose predicted label matches the ground truth,
// over every labeled shape in the corpus.
double segmentation_accuracy(ModelState& model, const PairedCorpus& corpus);

// Checkpoints are versioned text files carrying every tensor (values
// and both Adam moments) in hexfloat, the vocabulary, stage, epoch and
// the caller's config blob; they round-trip bit-exactly.
void save_checkpoint(const ModelState& model, const TrainConfig& cfg,
                     const std::string& path);
struct Checkpoint {
  ModelState model;
  TrainConfig train_cfg;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace otmatch
