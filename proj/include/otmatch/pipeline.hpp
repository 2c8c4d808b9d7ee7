#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "otmatch/data.hpp"
#include "otmatch/evalmod.hpp"
#include "otmatch/trainer.hpp"

namespace otmatch {

// Full run configuration: model widths, training schedule, matcher and
// solver settings. Built from a named preset, optionally overridden by
// a JSON config file and then by CLI flags.
struct RunConfig {
  ShapeEncoderConfig model;
  TrainConfig train;
  std::vector<std::size_t> eval_ks = {1, 5};
  double test_fraction = 0.0;  // 0 trains on the whole corpus
  int threads = 0;             // 0 keeps the runtime default
};

// "desk" is the small fast configuration used by the test suite;
// "paper" mirrors the full-scale settings (d=1024, batch 128, 50+20
// epochs, margin 0.2, beta 40, lr 1e-3).
RunConfig preset(const std::string& name);

// Strict JSON overlay: unknown keys anywhere are an error.
void apply_config_file(RunConfig& cfg, const std::string& path);
RunConfig config_from_json_text(const std::string& text,
                                const std::string& origin);

struct GenOptions {
  std::string out_dir;
  std::uint64_t seed = 7;
  std::size_t shapes = 64;
  int classes = 4;
  std::size_t points = 256;
};
// Writes the synthetic corpus; returns the manifest path.
std::string run_gen(const GenOptions& opt, std::ostream& log);

// Resolves a data argument to a manifest path: either the path itself
// when it names a .json file, or <dir>/manifest.json.
std::string resolve_manifest(const std::string& data_arg);

struct TrainRunResult {
  std::string final_checkpoint;
  std::string stage1_checkpoint;
  std::string metrics_path;
};
TrainRunResult run_train(const std::string& data_arg, const RunConfig& cfg,
                         const std::string& out_dir, std::ostream& log);

struct EvalOptions {
  std::string checkpoint;
  std::string data_arg;
  std::string report_path;
  std::vector<std::size_t> ks = {1, 5};
  std::string split = "all";  // all | train | test
  double test_fraction = 0.2;
  std::string dump_path;  // optional per-query rankings JSON
  bool parallel = true;
};
EvalReport run_eval(const EvalOptions& opt, std::ostream& log);

struct RetrieveOptions {
  std::string checkpoint;
  std::string data_arg;
  std::string text;      // query text, or
  std::string shape_id;  // query shape id
  std::size_t k = 5;
  std::string dump_costs_path;  // optional raw 1 - c_ij dump vs the top hit
  bool parallel = true;
};
void run_retrieve(const RetrieveOptions& opt, std::ostream& out);

}  // namespace otmatch
