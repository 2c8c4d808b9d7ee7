#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "otmatch/pipeline.hpp"

namespace {

// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
// fault or anything unexpected.
int fail(const std::exception& e, int code) {
  std::cerr << "error: " << e.what() << "\n";
  return code;
}

std::string default_data_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("OTMATCH_DATA_DIR")) return env;
  return "";
}

std::vector<std::size_t> parse_k_list(const std::string& text) {
  std::vector<std::size_t> ks;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    const std::string item = text.substr(pos, next - pos);
    if (!item.empty()) ks.push_back(std::stoul(item));
    pos = next + 1;
  }
  if (ks.empty()) throw otmatch::ConfigError("empty k list");
  return ks;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"otmatch: part/word matching of point clouds and texts via "
               "entropically regularized optimal transport"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand name

  std::string config_path;
  std::uint64_t seed = 7;
  int threads = 0;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "root random seed")->capture_default_str();
  app.add_option("--threads", threads,
                 "worker threads for scoring (0 = runtime default)")
      ->capture_default_str();

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  otmatch::GenOptions gen_opt;
  gen->add_option("--out", gen_opt.out_dir, "output directory")->required();
  gen->add_option("--shapes", gen_opt.shapes, "number of shapes")
      ->capture_default_str();
  gen->add_option("--classes", gen_opt.classes, "part classes")
      ->capture_default_str();
  gen->add_option("--points", gen_opt.points, "points per shape")
      ->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "train a model");
  std::string tr_data, tr_out, tr_preset = "desk";
  std::string tr_matcher, tr_mining, tr_part_source;
  bool tr_no_color = false;
  double tr_margin = -1.0, tr_beta = -1.0, tr_lr = -1.0, tr_test_fraction = -1.0;
  std::int64_t tr_batch = -1, tr_e1 = -1, tr_e2 = -1, tr_dim = -1;
  tr->add_option("--data", tr_data, "corpus directory or manifest path");
  tr->add_option("--out", tr_out, "run output directory")->required();
  tr->add_option("--preset", tr_preset, "desk or paper")
      ->capture_default_str();
  tr->add_option("--matcher", tr_matcher, "emd or chamfer");
  tr->add_option("--mining", tr_mining, "semi_hard or hardest");
  tr->add_option("--part-source", tr_part_source, "predicted or ground_truth");
  tr->add_flag("--no-color", tr_no_color, "drop the color input channel");
  tr->add_option("--margin", tr_margin, "triplet margin");
  tr->add_option("--beta", tr_beta, "matching loss weight");
  tr->add_option("--lr", tr_lr, "learning rate");
  tr->add_option("--batch", tr_batch, "batch size");
  tr->add_option("--stage1-epochs", tr_e1, "segmentation pretraining epochs");
  tr->add_option("--stage2-epochs", tr_e2, "joint training epochs");
  tr->add_option("--dim", tr_dim, "shared embedding width d");
  tr->add_option("--test-fraction", tr_test_fraction,
                 "hold out this fraction of shapes");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate retrieval metrics");
  otmatch::EvalOptions ev_opt;
  std::string ev_k = "1,5";
  ev->add_option("--ckpt", ev_opt.checkpoint, "checkpoint path")->required();
  ev->add_option("--data", ev_opt.data_arg, "corpus directory or manifest");
  ev->add_option("--out", ev_opt.report_path, "report TSV path");
  ev->add_option("--k", ev_k, "comma-separated cutoffs")
      ->capture_default_str();
  ev->add_option("--split", ev_opt.split, "all, train or test")
      ->capture_default_str();
  ev->add_option("--test-fraction", ev_opt.test_fraction,
                 "fraction used when --split is train/test")
      ->capture_default_str();
  ev->add_option("--dump-queries", ev_opt.dump_path,
                 "per-query rankings JSON path");

  // retrieve
  auto* rt = app.add_subcommand("retrieve", "rank the gallery for one query");
  otmatch::RetrieveOptions rt_opt;
  rt->add_option("--ckpt", rt_opt.checkpoint, "checkpoint path")->required();
  rt->add_option("--data", rt_opt.data_arg, "corpus directory or manifest");
  rt->add_option("--text", rt_opt.text, "query text");
  rt->add_option("--shape", rt_opt.shape_id, "query shape id");
  rt->add_option("--k", rt_opt.k, "results to print")->capture_default_str();
  rt->add_option("--dump-costs", rt_opt.dump_costs_path,
                 "write the query/top-hit 1-c_ij matrix to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif

  try {
    if (gen->parsed()) {
      gen_opt.seed = seed;
      otmatch::run_gen(gen_opt, std::cout);
      return 0;
    }
    if (tr->parsed()) {
      otmatch::RunConfig cfg = otmatch::preset(tr_preset);
      if (!config_path.empty()) otmatch::apply_config_file(cfg, config_path);
      if (!app.get_option("--seed")->empty() ||
          cfg.train.seed == 0)
        cfg.train.seed = seed;
      if (!tr_matcher.empty())
        cfg.train.matcher = tr_matcher == "chamfer" ? otmatch::Matcher::Chamfer
                                                    : otmatch::Matcher::Emd;
      if (!tr_mining.empty())
        cfg.train.mining = tr_mining == "hardest" ? otmatch::Mining::Hardest
                                                  : otmatch::Mining::SemiHard;
      if (!tr_part_source.empty())
        cfg.train.part_source = tr_part_source == "ground_truth"
                                    ? otmatch::PartSource::GroundTruth
                                    : otmatch::PartSource::Predicted;
      if (tr_no_color) cfg.model.use_color = false;
      if (tr_margin > 0) cfg.train.margin = tr_margin;
      if (tr_beta >= 0) cfg.train.beta = tr_beta;
      if (tr_lr > 0) cfg.train.lr = tr_lr;
      if (tr_batch > 0) cfg.train.batch = static_cast<std::size_t>(tr_batch);
      if (tr_e1 >= 0) cfg.train.stage1_epochs = static_cast<std::size_t>(tr_e1);
      if (tr_e2 >= 0) cfg.train.stage2_epochs = static_cast<std::size_t>(tr_e2);
      if (tr_dim > 0) cfg.model.d = static_cast<std::size_t>(tr_dim);
      if (tr_test_fraction >= 0) cfg.test_fraction = tr_test_fraction;
      if (threads > 0) cfg.threads = threads;
      otmatch::run_train(default_data_dir(tr_data), cfg, tr_out, std::cout);
      return 0;
    }
    if (ev->parsed()) {
      ev_opt.ks = parse_k_list(ev_k);
      ev_opt.data_arg = default_data_dir(ev_opt.data_arg);
      otmatch::EvalReport report = otmatch::run_eval(ev_opt, std::cerr);
      for (const auto& row : report.rows) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%s\t%zu\t%.10g\t%.10g",
                      otmatch::to_string(row.dir), row.k, row.rr, row.ndcg);
        std::cout << buf << "\n";
      }
      return 0;
    }
    if (rt->parsed()) {
      rt_opt.data_arg = default_data_dir(rt_opt.data_arg);
      otmatch::run_retrieve(rt_opt, std::cout);
      return 0;
    }
  } catch (const otmatch::ConfigError& e) {
    return fail(e, 1);
  } catch (const otmatch::DataError& e) {
    return fail(e, 2);
  } catch (const otmatch::NumericError& e) {
    return fail(e, 3);
  } catch (const std::exception& e) {
    return fail(e, 3);
  }
  return 1;
}
