#include "otmatch/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "otmatch/evalmod.hpp"

namespace fs = std::filesystem;

namespace otmatch {

namespace {

std::string hexfloat(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

const char* stage_name(Stage s) {
  return s == Stage::SegPretrain ? "seg_pretrain" : "joint";
}

const char* mining_name(Mining m) {
  return m == Mining::SemiHard ? "semi_hard" : "hardest";
}

const char* part_source_name(PartSource p) {
  return p == PartSource::Predicted ? "predicted" : "ground_truth";
}

}  // namespace

std::vector<Parameter*> ModelState::all_params() {
  std::vector<Parameter*> out = shape.all();
  for (Parameter* p : text.all()) out.push_back(p);
  return out;
}

ModelState ModelState::init(const ShapeEncoderConfig& scfg,
                            const TextEncoderConfig& tcfg, Vocabulary vocab,
                            AdamConfig adam_cfg, std::uint64_t seed) {
  if (scfg.d != tcfg.d)
    throw ConfigError("model: shape width " + std::to_string(scfg.d) +
                      " and text width " + std::to_string(tcfg.d) +
                      " must agree");
  if (tcfg.vocab_size != vocab.size())
    throw ConfigError("model: vocab size mismatch");
  ModelState m;
  m.shape_cfg = scfg;
  m.text_cfg = tcfg;
  m.vocab = std::move(vocab);
  Rng root(seed);
  Rng srng = root.fork(1);
  Rng trng = root.fork(2);
  m.shape = ShapeEncoderParams::init(scfg, srng);
  m.text = TextEncoderParams::init(tcfg, trng);
  m.adam = AdamState(m.all_params(), adam_cfg);
  return m;
}

namespace {

// Collects the anchor's candidate scores for one direction.
struct AnchorView {
  double r_pos = -std::numeric_limits<double>::infinity();
  bool has_pos = false;
  std::size_t pos_index = 0;
};

// Number of candidates the anchor ranges over: a row of texts for S2T,
// a column of shapes for T2S.
std::size_t candidate_count(const BatchScores& s, Direction dir) {
  return dir == Direction::S2T ? s.r.cols : s.r.rows;
}

AnchorView anchor_positive(const BatchScores& s, std::size_t anchor,
                           Direction dir) {
  AnchorView v;
  for (std::size_t c = 0; c < candidate_count(s, dir); ++c) {
    const bool pos = dir == Direction::S2T ? s.is_positive(anchor, c)
                                           : s.is_positive(c, anchor);
    if (!pos) continue;
    const double r = dir == Direction::S2T ? s.r.at(anchor, c)
                                           : s.r.at(c, anchor);
    if (!v.has_pos || r > v.r_pos) {
      v.r_pos = r;
      v.pos_index = c;
      v.has_pos = true;
    }
  }
  return v;
}

std::optional<std::size_t> mine(const BatchScores& s, std::size_t anchor,
                                Direction dir, Mining mode) {
  const AnchorView pos = anchor_positive(s, anchor, dir);
  if (!pos.has_pos) return std::nullopt;
  std::optional<std::size_t> best;
  double best_r = 0.0;
  for (std::size_t c = 0; c < candidate_count(s, dir); ++c) {
    const bool is_pos = dir == Direction::S2T ? s.is_positive(anchor, c)
                                              : s.is_positive(c, anchor);
    if (is_pos) continue;
    const double r = dir == Direction::S2T ? s.r.at(anchor, c)
                                           : s.r.at(c, anchor);
    if (mode == Mining::SemiHard && !(r < pos.r_pos)) continue;
    if (!best || r > best_r) {  // strict > keeps the lowest index on ties
      best = c;
      best_r = r;
    }
  }
  return best;
}

}  // namespace

std::optional<std::size_t> mine_semi_hard(const BatchScores& scores,
                                          std::size_t anchor, Direction dir) {
  return mine(scores, anchor, dir, Mining::SemiHard);
}

std::optional<std::size_t> mine_hardest(const BatchScores& scores,
                                        std::size_t anchor, Direction dir) {
  return mine(scores, anchor, dir, Mining::Hardest);
}

double triplet_loss(double r_pos, double r_neg, double margin) {
  if (margin <= 0.0) throw ConfigError("triplet_loss: margin must be > 0");
  return std::max(margin - r_pos + r_neg, 0.0);
}

double matching_loss(const BatchScores& scores, double margin, Mining mining) {
  const std::size_t b = scores.size();
  if (b < 2) throw ConfigError("matching_loss: batch must be >= 2");
  double total = 0.0;
  for (Direction dir : {Direction::S2T, Direction::T2S}) {
    double dir_sum = 0.0;
    for (std::size_t anchor = 0; anchor < b; ++anchor) {
      const AnchorView pos = anchor_positive(scores, anchor, dir);
      if (!pos.has_pos) continue;
      const auto neg = mine(scores, anchor, dir, mining);
      if (!neg) continue;
      const double r_neg = dir == Direction::S2T
                               ? scores.r.at(anchor, *neg)
                               : scores.r.at(*neg, anchor);
      dir_sum += triplet_loss(pos.r_pos, r_neg, margin);
    }
    total += dir_sum / static_cast<double>(b);
  }
  return total;
}

double combined_loss(double seg_ce, double match, double beta) {
  if (beta < 0.0) throw ConfigError("combined_loss: beta must be >= 0");
  return seg_ce + beta * match;
}

namespace {

void validate_train_inputs(const PairedCorpus& corpus, const TrainConfig& cfg) {
  if (corpus.shapes.empty()) throw DataError("train: corpus has no shapes");
  if (corpus.texts.empty()) throw DataError("train: corpus has no texts");
  for (const auto& s : corpus.shapes)
    if (!s.has_labels())
      throw DataError("train: shape " + s.shape_id +
                      " has no segmentation labels");
  if (cfg.margin <= 0.0) throw ConfigError("train: margin must be > 0");
  if (cfg.beta < 0.0) throw ConfigError("train: beta must be >= 0");
  if (cfg.lr <= 0.0) throw ConfigError("train: lr must be > 0");
  if (cfg.batch < 1) throw ConfigError("train: batch must be >= 1");
  if (cfg.stage2_epochs > 0) {
    if (cfg.batch < 2)
      throw ConfigError("train: batch must be >= 2 for in-batch mining");
    if (corpus.shapes.size() < 2)
      throw ConfigError("train: need at least 2 shapes for mining");
  }
  if (cfg.sinkhorn.epsilon <= 0.0)
    throw ConfigError("train: sinkhorn epsilon must be > 0");
  if (cfg.sinkhorn.max_iters < 1)
    throw ConfigError("train: sinkhorn max_iters must be >= 1");
}

std::string format_epoch_line(const EpochLog& e) {
  char buf[160];
  int n = std::snprintf(buf, sizeof buf, "%zu\t%s\t%.10g\t%.10g\t%.10g",
                        e.epoch, stage_name(e.stage), e.ce, e.emd, e.total);
  std::string line(buf, static_cast<std::size_t>(n));
  if (e.rr1) {
    std::snprintf(buf, sizeof buf, "\t%.10g", *e.rr1);
    line += buf;
  }
  return line;
}

}  // namespace

TrainOutput train(const PairedCorpus& corpus, const TrainConfig& cfg,
                  const ShapeEncoderConfig& shape_cfg_in,
                  const std::string& out_dir) {
  validate_train_inputs(corpus, cfg);

  ShapeEncoderConfig shape_cfg = shape_cfg_in;
  shape_cfg.num_classes = corpus.num_classes;

  Vocabulary vocab = build_vocab(corpus.texts, cfg.min_count);
  std::vector<std::vector<int>> tokens(corpus.texts.size());
  for (std::size_t i = 0; i < corpus.texts.size(); ++i)
    tokens[i] = tokenize(corpus.texts[i].raw, vocab, cfg.max_len).tokens;

  TextEncoderConfig text_cfg{vocab.size(), shape_cfg.d};
  TrainOutput out{ModelState::init(shape_cfg, text_cfg, std::move(vocab),
                                   AdamConfig{cfg.lr}, cfg.seed),
                  {}, "", "", ""};
  ModelState& model = out.model;
  std::vector<Parameter*> params = model.all_params();

  std::set<std::pair<std::string, std::string>> pair_set(corpus.pairs.begin(),
                                                         corpus.pairs.end());
  std::vector<std::vector<std::size_t>> texts_of(corpus.shapes.size());
  for (std::size_t si = 0; si < corpus.shapes.size(); ++si)
    texts_of[si] = corpus.text_indices_of_shape(corpus.shapes[si].shape_id);

  std::ofstream metrics;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    out.metrics_path = (fs::path(out_dir) / "metrics.tsv").string();
    metrics.open(out.metrics_path);
    if (!metrics) throw DataError("train: cannot write " + out.metrics_path);
  }
  const auto emit = [&](const EpochLog& e) {
    out.log.push_back(e);
    if (metrics.is_open()) metrics << format_epoch_line(e) << '\n' << std::flush;
  };

  Rng batch_rng = Rng(cfg.seed).fork(3);
  std::vector<std::size_t> order(corpus.shapes.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t global_epoch = 0;

  // Stage 1: segmentation cross-entropy only.
  for (std::size_t ep = 0; ep < cfg.stage1_epochs; ++ep) {
    batch_rng.shuffle(order);
    double epoch_ce = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      Tape tape;
      Tape::Id ce_sum = 0;
      bool first = true;
      for (std::size_t bi = start; bi < end; ++bi) {
        const ColoredPointCloud& cloud = corpus.shapes[order[bi]];
        PointFeatures f = backbone_forward(tape, cloud, model.shape, shape_cfg);
        SegmentationOutput seg = segment(tape, f, model.shape);
        Tape::Id ce = tape.softmax_cross_entropy(seg.logits, cloud.labels);
        ce_sum = first ? ce : tape.add(ce_sum, ce);
        first = false;
      }
      Tape::Id loss =
          tape.scale(ce_sum, 1.0 / static_cast<double>(end - start));
      tape.backward(loss);
      model.adam.step(params);
      epoch_ce += tape.value(loss).data[0];
      ++steps;
    }
    ++global_epoch;
    EpochLog e;
    e.epoch = global_epoch;
    e.stage = Stage::SegPretrain;
    e.ce = epoch_ce / static_cast<double>(std::max<std::size_t>(steps, 1));
    e.total = e.ce;
    model.epoch = global_epoch;
    emit(e);
  }

  if (!out_dir.empty() && cfg.stage1_epochs > 0) {
    out.stage1_checkpoint = (fs::path(out_dir) / "ckpt_stage1.otm").string();
    save_checkpoint(model, cfg, out.stage1_checkpoint);
  }

  model.stage = Stage::Joint;

  // Stage 2: joint multi-task objective with in-batch mining.
  for (std::size_t ep = 0; ep < cfg.stage2_epochs; ++ep) {
    batch_rng.shuffle(order);
    double epoch_ce = 0.0, epoch_emd = 0.0, epoch_total = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const std::size_t b = end - start;
      if (b < 2) continue;  // mining needs at least two anchors

      Tape tape;
      std::vector<Tape::Id> part_nodes(b), word_nodes(b);
      std::vector<std::size_t> text_pick(b);
      Tape::Id ce_sum = 0;
      for (std::size_t k = 0; k < b; ++k) {
        const std::size_t si = order[start + k];
        const ColoredPointCloud& cloud = corpus.shapes[si];
        ShapeEncoding enc =
            encode_shape(tape, cloud, model.shape, shape_cfg, cfg.part_source);
        part_nodes[k] = enc.parts.parts;
        Tape::Id ce = tape.softmax_cross_entropy(enc.seg.logits, cloud.labels);
        ce_sum = k == 0 ? ce : tape.add(ce_sum, ce);

        const auto& tix = texts_of[si];
        text_pick[k] = tix[batch_rng.below(tix.size())];
        word_nodes[k] = encode_text(tape, tokens[text_pick[k]], model.text);
      }
      Tape::Id ce_mean = tape.scale(ce_sum, 1.0 / static_cast<double>(b));

      BatchScores scores;
      scores.r = Matrix(b, b);
      scores.positive.assign(b, std::vector<bool>(b, false));
      std::vector<std::vector<Tape::Id>> score_nodes(b,
                                                     std::vector<Tape::Id>(b));
      for (std::size_t a = 0; a < b; ++a) {
        for (std::size_t bb = 0; bb < b; ++bb) {
          score_nodes[a][bb] =
              cfg.matcher == Matcher::Emd
                  ? emd_score(tape, part_nodes[a], word_nodes[bb], cfg.sinkhorn)
                  : chamfer_score(tape, part_nodes[a], word_nodes[bb]);
          scores.r.at(a, bb) = tape.value(score_nodes[a][bb]).data[0];
          scores.positive[a][bb] = pair_set.count(
              {corpus.shapes[order[start + a]].shape_id,
               corpus.texts[text_pick[bb]].text_id}) > 0;
        }
      }

      // Hinge terms from the mined triplets, averaged over anchors.
      Tape::Id margin_node = tape.input(Matrix(1, 1, cfg.margin));
      Tape::Id term_sum = 0;
      bool have_terms = false;
      for (Direction dir : {Direction::S2T, Direction::T2S}) {
        for (std::size_t anchor = 0; anchor < b; ++anchor) {
          const AnchorView pos = anchor_positive(scores, anchor, dir);
          if (!pos.has_pos) continue;
          const auto neg = mine(scores, anchor, dir, cfg.mining);
          if (!neg) continue;
          Tape::Id r_pos = dir == Direction::S2T
                               ? score_nodes[anchor][pos.pos_index]
                               : score_nodes[pos.pos_index][anchor];
          Tape::Id r_neg = dir == Direction::S2T ? score_nodes[anchor][*neg]
                                                 : score_nodes[*neg][anchor];
          Tape::Id hinge =
              tape.relu(tape.add(tape.sub(r_neg, r_pos), margin_node));
          term_sum = have_terms ? tape.add(term_sum, hinge) : hinge;
          have_terms = true;
        }
      }
      Tape::Id l_emd = have_terms
                           ? tape.scale(term_sum, 1.0 / static_cast<double>(b))
                           : tape.input(Matrix(1, 1, 0.0));
      Tape::Id total = tape.add(ce_mean, tape.scale(l_emd, cfg.beta));
      tape.backward(total);
      model.adam.step(params);

      epoch_ce += tape.value(ce_mean).data[0];
      epoch_emd += tape.value(l_emd).data[0];
      epoch_total += tape.value(total).data[0];
      ++steps;
    }
    ++global_epoch;
    EpochLog e;
    e.epoch = global_epoch;
    e.stage = Stage::Joint;
    const double denom = static_cast<double>(std::max<std::size_t>(steps, 1));
    e.ce = epoch_ce / denom;
    e.emd = epoch_emd / denom;
    e.total = epoch_total / denom;
    model.epoch = global_epoch;
    if (cfg.log_rr1) {
      EvalConfig ecfg;
      ecfg.sinkhorn = cfg.sinkhorn;
      ecfg.matcher = cfg.matcher;
      EvalReport rep = evaluate(model, corpus, {1}, ecfg);
      e.rr1 = rep.find(Direction::T2S, 1).rr;
    }
    emit(e);

    if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
        (ep + 1) % cfg.checkpoint_every == 0 && ep + 1 < cfg.stage2_epochs) {
      char name[48];
      std::snprintf(name, sizeof name, "ckpt_epoch%03zu.otm", global_epoch);
      save_checkpoint(model, cfg, (fs::path(out_dir) / name).string());
    }
  }

  if (!out_dir.empty()) {
    out.final_checkpoint = (fs::path(out_dir) / "final.otm").string();
    save_checkpoint(model, cfg, out.final_checkpoint);
  }
  return out;
}

double segmentation_accuracy(ModelState& model, const PairedCorpus& corpus) {
  std::size_t hits = 0, total = 0;
  for (const auto& cloud : corpus.shapes) {
    if (!cloud.has_labels()) continue;
    Tape tape;
    PointFeatures f = backbone_forward(tape, cloud, model.shape,
                                       model.shape_cfg);
    SegmentationOutput seg = segment(tape, f, model.shape);
    for (std::size_t i = 0; i < cloud.num_points(); ++i) {
      hits += seg.labels[i] == cloud.labels[i] ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw DataError("segmentation_accuracy: no labeled shapes");
  return static_cast<double>(hits) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["margin"] = cfg.margin;
  j["beta"] = cfg.beta;
  j["stage1_epochs"] = cfg.stage1_epochs;
  j["stage2_epochs"] = cfg.stage2_epochs;
  j["batch"] = cfg.batch;
  j["lr"] = cfg.lr;
  j["seed"] = cfg.seed;
  j["mining"] = mining_name(cfg.mining);
  j["part_source"] = part_source_name(cfg.part_source);
  j["matcher"] = to_string(cfg.matcher);
  j["checkpoint_every"] = cfg.checkpoint_every;
  j["max_len"] = cfg.max_len;
  j["min_count"] = cfg.min_count;
  j["log_rr1"] = cfg.log_rr1;
  j["sinkhorn"] = {{"epsilon", cfg.sinkhorn.epsilon},
                   {"max_iters", cfg.sinkhorn.max_iters},
                   {"marginal_tol", cfg.sinkhorn.marginal_tol}};
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.margin = j.at("margin").get<double>();
  cfg.beta = j.at("beta").get<double>();
  cfg.stage1_epochs = j.at("stage1_epochs").get<std::size_t>();
  cfg.stage2_epochs = j.at("stage2_epochs").get<std::size_t>();
  cfg.batch = j.at("batch").get<std::size_t>();
  cfg.lr = j.at("lr").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  const std::string mining = j.at("mining").get<std::string>();
  cfg.mining = mining == "hardest" ? Mining::Hardest : Mining::SemiHard;
  const std::string ps = j.at("part_source").get<std::string>();
  cfg.part_source =
      ps == "ground_truth" ? PartSource::GroundTruth : PartSource::Predicted;
  cfg.matcher = j.at("matcher").get<std::string>() == "chamfer"
                    ? Matcher::Chamfer
                    : Matcher::Emd;
  cfg.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  cfg.max_len = j.at("max_len").get<std::size_t>();
  cfg.min_count = j.at("min_count").get<std::size_t>();
  cfg.log_rr1 = j.at("log_rr1").get<bool>();
  cfg.sinkhorn.epsilon = j.at("sinkhorn").at("epsilon").get<double>();
  cfg.sinkhorn.max_iters = j.at("sinkhorn").at("max_iters").get<std::size_t>();
  cfg.sinkhorn.marginal_tol =
      j.at("sinkhorn").at("marginal_tol").get<double>();
  return cfg;
}

nlohmann::json shape_config_to_json(const ShapeEncoderConfig& cfg) {
  nlohmann::json j;
  j["d1"] = cfg.d1;
  j["d2"] = cfg.d2;
  j["d3"] = cfg.d3;
  j["d_mid"] = cfg.d_mid;
  j["d_color"] = cfg.d_color;
  j["d"] = cfg.d;
  j["num_classes"] = cfg.num_classes;
  j["min_part_fraction"] = cfg.min_part_fraction;
  j["use_color"] = cfg.use_color;
  return j;
}

ShapeEncoderConfig shape_config_from_json(const nlohmann::json& j) {
  ShapeEncoderConfig cfg;
  cfg.d1 = j.at("d1").get<std::size_t>();
  cfg.d2 = j.at("d2").get<std::size_t>();
  cfg.d3 = j.at("d3").get<std::size_t>();
  cfg.d_mid = j.at("d_mid").get<std::size_t>();
  cfg.d_color = j.at("d_color").get<std::size_t>();
  cfg.d = j.at("d").get<std::size_t>();
  cfg.num_classes = j.at("num_classes").get<int>();
  cfg.min_part_fraction = j.at("min_part_fraction").get<double>();
  cfg.use_color = j.at("use_color").get<bool>();
  return cfg;
}

void write_matrix_rows(std::ofstream& out, const Matrix& m) {
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (j) out << ' ';
      out << hexfloat(m.at(i, j));
    }
    out << '\n';
  }
}

void read_matrix_rows(std::ifstream& in, Matrix& m, const std::string& path,
                      const std::string& what) {
  std::string line;
  for (std::size_t i = 0; i < m.rows; ++i) {
    if (!std::getline(in, line))
      throw DataError(path + ": truncated tensor data in " + what);
    std::istringstream ls(line);
    std::string tok;
    for (std::size_t j = 0; j < m.cols; ++j) {
      if (!(ls >> tok))
        throw DataError(path + ": short row in " + what);
      m.at(i, j) = std::strtod(tok.c_str(), nullptr);
    }
  }
}

}  // namespace

void save_checkpoint(const ModelState& model, const TrainConfig& cfg,
                     const std::string& path) {
  ModelState& m = const_cast<ModelState&>(model);  // read-only access below
  std::vector<Parameter*> params = m.all_params();
  if (params.size() != m.adam.num_slots())
    throw DimensionError("checkpoint: adam slots do not match parameters");

  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint " + path);

  nlohmann::json cfg_json;
  cfg_json["shape_encoder"] = shape_config_to_json(m.shape_cfg);
  cfg_json["text_d"] = m.text_cfg.d;
  cfg_json["train"] = train_config_to_json(cfg);

  out << "otmatch-checkpoint 1\n";
  out << "stage " << stage_name(m.stage) << '\n';
  out << "epoch " << m.epoch << '\n';
  out << "adam_t " << m.adam.t() << '\n';
  out << "config " << cfg_json.dump() << '\n';
  out << "vocab " << m.vocab.size() << '\n';
  for (std::size_t id = 2; id < m.vocab.size(); ++id)
    out << m.vocab.token(static_cast<int>(id)) << '\n';
  out << "tensors " << params.size() << '\n';
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = *params[i];
    out << "tensor " << p.id << ' ' << p.value.rows << ' ' << p.value.cols
        << '\n';
    write_matrix_rows(out, p.value);
    write_matrix_rows(out, m.adam.moment1(i));
    write_matrix_rows(out, m.adam.moment2(i));
  }
  out << "end\n";
  if (!out) throw DataError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint " + path);
  std::string line, word;

  const auto expect_line = [&](const char* what) {
    if (!std::getline(in, line))
      throw DataError(path + ": truncated checkpoint, expected " +
                      std::string(what));
    return std::istringstream(line);
  };

  {
    auto ls = expect_line("header");
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != "otmatch-checkpoint" || version != 1)
      throw DataError(path + ": not a version-1 otmatch checkpoint");
  }

  std::string stage_str;
  std::size_t epoch = 0;
  std::uint64_t adam_t = 0;
  {
    auto ls = expect_line("stage");
    ls >> word >> stage_str;
    if (word != "stage") throw DataError(path + ": expected stage line");
  }
  {
    auto ls = expect_line("epoch");
    ls >> word >> epoch;
    if (word != "epoch") throw DataError(path + ": expected epoch line");
  }
  {
    auto ls = expect_line("adam_t");
    ls >> word >> adam_t;
    if (word != "adam_t") throw DataError(path + ": expected adam_t line");
  }

  nlohmann::json cfg_json;
  {
    if (!std::getline(in, line) || line.rfind("config ", 0) != 0)
      throw DataError(path + ": expected config line");
    try {
      cfg_json = nlohmann::json::parse(line.substr(7));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ": bad config JSON: " + e.what());
    }
  }

  Checkpoint ck;
  ck.train_cfg = train_config_from_json(cfg_json.at("train"));
  ShapeEncoderConfig scfg = shape_config_from_json(cfg_json.at("shape_encoder"));

  std::size_t vocab_size = 0;
  {
    auto ls = expect_line("vocab");
    ls >> word >> vocab_size;
    if (word != "vocab") throw DataError(path + ": expected vocab line");
  }
  Vocabulary vocab;
  for (std::size_t id = 2; id < vocab_size; ++id) {
    if (!std::getline(in, line))
      throw DataError(path + ": truncated vocabulary");
    vocab.add(line);
  }

  TextEncoderConfig tcfg{vocab.size(), cfg_json.at("text_d").get<std::size_t>()};
  ck.model = ModelState::init(scfg, tcfg, std::move(vocab),
                              AdamConfig{ck.train_cfg.lr}, 0);
  ck.model.stage =
      stage_str == "joint" ? Stage::Joint : Stage::SegPretrain;
  ck.model.epoch = epoch;
  ck.model.adam.restore_t(adam_t);

  std::size_t tensor_count = 0;
  {
    auto ls = expect_line("tensors");
    ls >> word >> tensor_count;
    if (word != "tensors") throw DataError(path + ": expected tensors line");
  }
  std::vector<Parameter*> params = ck.model.all_params();
  if (tensor_count != params.size())
    throw DataError(path + ": checkpoint has " + std::to_string(tensor_count) +
                    " tensors, model expects " +
                    std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto ls = expect_line("tensor header");
    std::string name;
    std::size_t rows = 0, cols = 0;
    ls >> word >> name >> rows >> cols;
    if (word != "tensor" || name != params[i]->id)
      throw DataError(path + ": tensor " + std::to_string(i) + " is \"" +
                      name + "\", expected \"" + params[i]->id + "\"");
    if (rows != params[i]->value.rows || cols != params[i]->value.cols)
      throw DataError(path + ": tensor " + name + " has shape " +
                      std::to_string(rows) + "x" + std::to_string(cols) +
                      ", model expects " + params[i]->value.shape_str());
    read_matrix_rows(in, params[i]->value, path, name);
    read_matrix_rows(in, ck.model.adam.moment1(i), path, name + ".m");
    read_matrix_rows(in, ck.model.adam.moment2(i), path, name + ".v");
  }
  {
    auto ls = expect_line("end");
    ls >> word;
    if (word != "end") throw DataError(path + ": missing end marker");
  }
  return ck;
}

}  // namespace otmatch
