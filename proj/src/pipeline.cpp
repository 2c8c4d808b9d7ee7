#include "otmatch/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace otmatch {

namespace {

void reject_unknown(const nlohmann::json& obj,
                    std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) {
          return key == a;
        }) == allowed.end())
      throw ConfigError(where + ": unknown key \"" + key + "\"");
  }
}

void apply_json(RunConfig& cfg, const nlohmann::json& j,
                const std::string& origin);

}  // namespace

RunConfig preset(const std::string& name) {
  RunConfig cfg;  // defaults are the desk settings
  if (name == "desk") return cfg;
  if (name == "paper") {
    cfg.model.d = 1024;
    cfg.train.margin = 0.2;
    cfg.train.beta = 40.0;
    cfg.train.batch = 128;
    cfg.train.stage1_epochs = 50;
    cfg.train.stage2_epochs = 20;
    cfg.train.lr = 1e-3;
    return cfg;
  }
  throw ConfigError("unknown preset \"" + name + "\" (expected desk or paper)");
}

RunConfig config_from_json_text(const std::string& text,
                                const std::string& origin) {
  RunConfig cfg;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(origin + ": invalid JSON: " + e.what());
  }
  apply_json(cfg, j, origin);
  return cfg;
}

namespace {

void apply_model(ShapeEncoderConfig& m, const nlohmann::json& j,
                 const std::string& where) {
  reject_unknown(j,
                 {"d1", "d2", "d3", "d_mid", "d_color", "d",
                  "min_part_fraction", "use_color"},
                 where);
  if (j.contains("d1")) m.d1 = j["d1"].get<std::size_t>();
  if (j.contains("d2")) m.d2 = j["d2"].get<std::size_t>();
  if (j.contains("d3")) m.d3 = j["d3"].get<std::size_t>();
  if (j.contains("d_mid")) m.d_mid = j["d_mid"].get<std::size_t>();
  if (j.contains("d_color")) m.d_color = j["d_color"].get<std::size_t>();
  if (j.contains("d")) m.d = j["d"].get<std::size_t>();
  if (j.contains("min_part_fraction"))
    m.min_part_fraction = j["min_part_fraction"].get<double>();
  if (j.contains("use_color")) m.use_color = j["use_color"].get<bool>();
}

Mining mining_from_string(const std::string& s, const std::string& where) {
  if (s == "semi_hard" || s == "semi-hard") return Mining::SemiHard;
  if (s == "hardest") return Mining::Hardest;
  throw ConfigError(where + ": mining must be semi_hard or hardest, got " + s);
}

PartSource part_source_from_string(const std::string& s,
                                   const std::string& where) {
  if (s == "predicted") return PartSource::Predicted;
  if (s == "ground_truth" || s == "ground-truth") return PartSource::GroundTruth;
  throw ConfigError(where + ": part_source must be predicted or ground_truth");
}

Matcher matcher_from_string(const std::string& s, const std::string& where) {
  if (s == "emd") return Matcher::Emd;
  if (s == "chamfer" || s == "cd") return Matcher::Chamfer;
  throw ConfigError(where + ": matcher must be emd or chamfer, got " + s);
}

void apply_train(TrainConfig& t, const nlohmann::json& j,
                 const std::string& where) {
  reject_unknown(j,
                 {"margin", "beta", "stage1_epochs", "stage2_epochs", "batch",
                  "lr", "seed", "mining", "part_source", "matcher",
                  "checkpoint_every", "max_len", "min_count", "log_rr1"},
                 where);
  if (j.contains("margin")) t.margin = j["margin"].get<double>();
  if (j.contains("beta")) t.beta = j["beta"].get<double>();
  if (j.contains("stage1_epochs"))
    t.stage1_epochs = j["stage1_epochs"].get<std::size_t>();
  if (j.contains("stage2_epochs"))
    t.stage2_epochs = j["stage2_epochs"].get<std::size_t>();
  if (j.contains("batch")) t.batch = j["batch"].get<std::size_t>();
  if (j.contains("lr")) t.lr = j["lr"].get<double>();
  if (j.contains("seed")) t.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("mining"))
    t.mining = mining_from_string(j["mining"].get<std::string>(), where);
  if (j.contains("part_source"))
    t.part_source =
        part_source_from_string(j["part_source"].get<std::string>(), where);
  if (j.contains("matcher"))
    t.matcher = matcher_from_string(j["matcher"].get<std::string>(), where);
  if (j.contains("checkpoint_every"))
    t.checkpoint_every = j["checkpoint_every"].get<std::size_t>();
  if (j.contains("max_len")) t.max_len = j["max_len"].get<std::size_t>();
  if (j.contains("min_count")) t.min_count = j["min_count"].get<std::size_t>();
  if (j.contains("log_rr1")) t.log_rr1 = j["log_rr1"].get<bool>();
}

void apply_sinkhorn(SinkhornConfig& s, const nlohmann::json& j,
                    const std::string& where) {
  reject_unknown(j, {"epsilon", "max_iters", "marginal_tol"}, where);
  if (j.contains("epsilon")) s.epsilon = j["epsilon"].get<double>();
  if (j.contains("max_iters")) s.max_iters = j["max_iters"].get<std::size_t>();
  if (j.contains("marginal_tol"))
    s.marginal_tol = j["marginal_tol"].get<double>();
}

void apply_json(RunConfig& cfg, const nlohmann::json& j,
                const std::string& origin) {
  if (!j.is_object()) throw ConfigError(origin + ": config must be an object");
  reject_unknown(
      j, {"preset", "model", "train", "sinkhorn", "eval", "test_fraction",
          "threads"},
      origin);
  if (j.contains("preset")) cfg = preset(j["preset"].get<std::string>());
  if (j.contains("model")) apply_model(cfg.model, j["model"], origin + ".model");
  if (j.contains("train")) apply_train(cfg.train, j["train"], origin + ".train");
  if (j.contains("sinkhorn"))
    apply_sinkhorn(cfg.train.sinkhorn, j["sinkhorn"], origin + ".sinkhorn");
  if (j.contains("eval")) {
    reject_unknown(j["eval"], {"k"}, origin + ".eval");
    if (j["eval"].contains("k"))
      cfg.eval_ks = j["eval"]["k"].get<std::vector<std::size_t>>();
  }
  if (j.contains("test_fraction"))
    cfg.test_fraction = j["test_fraction"].get<double>();
  if (j.contains("threads")) cfg.threads = j["threads"].get<int>();
}

}  // namespace

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  apply_json(cfg, j, path);
}

std::string run_gen(const GenOptions& opt, std::ostream& log) {
  SyntheticConfig scfg;
  scfg.seed = opt.seed;
  scfg.n_shapes = opt.shapes;
  scfg.classes = opt.classes;
  scfg.points_per_shape = opt.points;
  PairedCorpus corpus = gen_synthetic(scfg);
  const std::string manifest = save_corpus(corpus, opt.out_dir);
  log << "generated " << corpus.shapes.size() << " shapes, "
      << corpus.texts.size() << " texts, " << corpus.pairs.size()
      << " pairs -> " << manifest << "\n";
  return manifest;
}

std::string resolve_manifest(const std::string& data_arg) {
  if (data_arg.empty()) throw ConfigError("no data directory given");
  fs::path p(data_arg);
  if (p.extension() == ".json") return p.string();
  return (p / "manifest.json").string();
}

TrainRunResult run_train(const std::string& data_arg, const RunConfig& cfg,
                         const std::string& out_dir, std::ostream& log) {
  PairedCorpus corpus = load_corpus(resolve_manifest(data_arg));
  PairedCorpus train_split = std::move(corpus);
  if (cfg.test_fraction > 0.0) {
    auto [tr, te] =
        split_dataset(train_split, cfg.test_fraction, train_split.split_seed);
    log << "split: " << tr.shapes.size() << " train / " << te.shapes.size()
        << " test shapes\n";
    train_split = std::move(tr);
  }
  TrainOutput out = train(train_split, cfg.train, cfg.model, out_dir);
  log << "trained " << out.log.size() << " epochs; final checkpoint "
      << out.final_checkpoint << "\n";
  return TrainRunResult{out.final_checkpoint, out.stage1_checkpoint,
                        out.metrics_path};
}

namespace {

PairedCorpus select_split(PairedCorpus corpus, const std::string& split,
                          double test_fraction) {
  if (split == "all") return corpus;
  auto [tr, te] = split_dataset(corpus, test_fraction, corpus.split_seed);
  if (split == "train") return std::move(tr);
  if (split == "test") return std::move(te);
  throw ConfigError("split must be all, train or test, got " + split);
}

}  // namespace

EvalReport run_eval(const EvalOptions& opt, std::ostream& log) {
  Checkpoint ck = load_checkpoint(opt.checkpoint);
  PairedCorpus corpus = select_split(load_corpus(resolve_manifest(opt.data_arg)),
                                     opt.split, opt.test_fraction);
  EvalConfig ecfg;
  ecfg.sinkhorn = ck.train_cfg.sinkhorn;
  ecfg.matcher = ck.train_cfg.matcher;
  ecfg.part_source = ck.train_cfg.part_source;
  ecfg.parallel = opt.parallel;
  EvalReport report = evaluate(ck.model, corpus, opt.ks, ecfg);
  if (!opt.report_path.empty()) {
    write_report(report, opt.report_path);
    log << "report -> " << opt.report_path << "\n";
  }
  if (!opt.dump_path.empty()) {
    EmbeddedCorpus e = embed_corpus(ck.model, corpus, ecfg);
    Matrix s2t = opt.parallel
                     ? score_matrix_parallel(e.shape_parts, e.text_words,
                                             ecfg.sinkhorn, ecfg.matcher)
                     : score_matrix_serial(e.shape_parts, e.text_words,
                                           ecfg.sinkhorn, ecfg.matcher);
    dump_rankings(e, s2t, corpus.texts.size(), opt.dump_path);
    log << "rankings -> " << opt.dump_path << "\n";
  }
  return report;
}

void run_retrieve(const RetrieveOptions& opt, std::ostream& out) {
  if (opt.text.empty() == opt.shape_id.empty())
    throw ConfigError("retrieve: give exactly one of --text or --shape");
  Checkpoint ck = load_checkpoint(opt.checkpoint);
  PairedCorpus corpus = load_corpus(resolve_manifest(opt.data_arg));
  EvalConfig ecfg;
  ecfg.sinkhorn = ck.train_cfg.sinkhorn;
  ecfg.matcher = ck.train_cfg.matcher;
  ecfg.part_source = ck.train_cfg.part_source;
  ecfg.parallel = opt.parallel;
  EmbeddedCorpus e = embed_corpus(ck.model, corpus, ecfg);

  Matrix query;  // the query-side embedding set
  const std::vector<Matrix>* gallery = nullptr;
  const std::vector<std::string>* gallery_ids = nullptr;
  bool query_is_parts = false;
  if (!opt.text.empty()) {
    Tape tape;
    TokenSequence seq = tokenize(opt.text, ck.model.vocab, ck.train_cfg.max_len);
    query = tape.value(encode_text(tape, seq.tokens, ck.model.text));
    gallery = &e.shape_parts;
    gallery_ids = &e.shape_ids;
  } else {
    const auto it = std::find(e.shape_ids.begin(), e.shape_ids.end(),
                              opt.shape_id);
    if (it == e.shape_ids.end())
      throw DataError("retrieve: unknown shape id " + opt.shape_id);
    query = e.shape_parts[static_cast<std::size_t>(it - e.shape_ids.begin())];
    query_is_parts = true;
    gallery = &e.text_words;
    gallery_ids = &e.text_ids;
  }

  Matrix scores(1, gallery->size());
  for (std::size_t g = 0; g < gallery->size(); ++g) {
    const Matrix& parts = query_is_parts ? query : (*gallery)[g];
    const Matrix& words = query_is_parts ? (*gallery)[g] : query;
    scores.at(0, g) = ecfg.matcher == Matcher::Emd
                          ? emd_similarity(parts, words, ecfg.sinkhorn)
                          : chamfer_similarity(parts, words);
  }
  RankedList ranked = rank_row(scores, 0);
  char buf[64];
  for (std::size_t i = 0; i < std::min(opt.k, ranked.order.size()); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f", ranked.scores[i]);
    out << (*gallery_ids)[ranked.order[i]] << '\t' << buf << '\n';
  }

  if (!opt.dump_costs_path.empty() && !ranked.order.empty()) {
    // Raw pairwise 1 - c_ij numbers for the query against the top hit.
    const Matrix& top = (*gallery)[ranked.order[0]];
    const Matrix& parts = query_is_parts ? query : top;
    const Matrix& words = query_is_parts ? top : query;
    CostMatrix c = cosine_cost(parts, words);
    std::ofstream f(opt.dump_costs_path);
    if (!f) throw DataError("cannot write " + opt.dump_costs_path);
    for (std::size_t i = 0; i < c.values.rows; ++i) {
      for (std::size_t j = 0; j < c.values.cols; ++j) {
        if (j) f << ' ';
        std::snprintf(buf, sizeof buf, "%.9g", 1.0 - c.values.at(i, j));
        f << buf;
      }
      f << '\n';
    }
  }
}

}  // namespace otmatch
