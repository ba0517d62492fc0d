// autoprep: speech corpus preprocessing command line.
//
//   autoprep run --config cfg.json --input manifest.jsonl --out out/
//                [--stages enhance,segment,cluster,tse,filter,asr] [--resume]
//                [--workers N] [--seed S] [--quiet]
//   autoprep stats <out>
//   autoprep export-embeddings <out>
//
// Failures print a JSON error summary on stderr and exit nonzero.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "autoprep/backends.h"
#include "autoprep/core.h"
#include "autoprep/manifest.h"
#include "autoprep/pipeline.h"

namespace {

using namespace autoprep;
namespace fs = std::filesystem;

constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitCapability = 3;

int fail(const std::string &type, const std::string &message, int code,
         const std::string &key = {}) {
  nlohmann::ordered_json j;
  j["error"] = type;
  j["message"] = message;
  if (!key.empty()) j["key"] = key;
  std::cerr << j.dump() << '\n';
  return code;
}

nlohmann::json read_json_file(const fs::path &path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(path.string() + " is not valid JSON");
  return j;
}

// --stages lists exactly the stages to run; persist always runs.
void apply_stage_list(nlohmann::json &raw, const std::string &csv) {
  nlohmann::json stages = {{"enhance", false}, {"segment", false}, {"cluster", false},
                           {"tse", false},     {"filter", false},  {"asr", false}};
  std::stringstream ss(csv);
  for (std::string name; std::getline(ss, name, ',');) {
    if (name.empty() || name == "persist") continue;
    if (!stages.contains(name)) throw ConfigError("stages." + name, "unknown stage");
    stages[name] = true;
  }
  raw["stages"] = stages;
}

struct RunArgs {
  std::string config;
  std::string input;
  std::string out;
  std::string stages;
  bool resume = false;
  int workers = 1;
  std::optional<uint64_t> seed;
  bool quiet = false;
};

int run(const RunArgs &args) {
  nlohmann::json raw = read_json_file(args.config);
  if (!raw.is_object()) throw ConfigError("", "config must be a JSON object");
  if (!args.stages.empty()) apply_stage_list(raw, args.stages);
  if (args.seed) raw["rng_seed"] = *args.seed;
  const PipelineConfig config = validate_config(raw);
  const BackendSet backends =
      make_backend_set(config.backends, fs::absolute(args.config).parent_path());
  const auto inputs = read_input_manifest(args.input);

  RunOptions options;
  options.out_dir = args.out;
  options.resume = args.resume;
  options.workers = args.workers;
  options.quiet = args.quiet;
  const RunResult result = run_pipeline(inputs, config, backends, options);
  std::cout << "segments: " << result.manifest.size() << " labeled, " << result.unlabeled.size()
            << " unlabeled; skipped recordings: " << result.skipped.size() << '\n';
  std::cout << "Dur  nSpk  DNSMOS  PDNSMOS\n" << result.stats.table_row() << '\n';
  return 0;
}

int stats(const fs::path &dir) {
  const auto manifest = read_manifest(dir / "manifest.jsonl");
  std::vector<StageRetention> retention;
  if (fs::exists(dir / "stats.json")) {
    retention = CorpusStats::from_json(read_json_file(dir / "stats.json")).retention;
  }
  const CorpusStats s = compute_stats(manifest, retention);
  std::cout << "Dur  nSpk  DNSMOS  PDNSMOS\n" << s.table_row() << '\n';
  for (const auto &r : s.retention) {
    std::printf("%-8s %8zu segments %10.4f h\n", r.stage.c_str(), r.segments, r.duration_h);
  }
  return 0;
}

int export_cmd(const fs::path &dir) {
  for (const auto &path : export_embeddings(dir)) std::cout << path.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"Speech corpus preprocessing pipeline"};
  app.require_subcommand(1);

  RunArgs args;
  auto *run_cmd = app.add_subcommand("run", "Run the pipeline");
  run_cmd->add_option("--config", args.config, "Config JSON")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--input", args.input, "Input manifest (JSONL)")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--out", args.out, "Output directory")->required();
  run_cmd->add_option("--stages", args.stages, "Comma-separated stages to run");
  run_cmd->add_flag("--resume", args.resume, "Reuse checkpoints from a previous run");
  run_cmd->add_option("--workers", args.workers, "Worker threads")->check(CLI::Range(1, 1024));
  run_cmd->add_option("--seed", args.seed, "Override rng_seed");
  run_cmd->add_flag("--quiet", args.quiet, "Suppress progress logging");

  std::string dir;
  auto *stats_cmd = app.add_subcommand("stats", "Recompute corpus statistics");
  stats_cmd->add_option("dir", dir, "Output directory")->required()->check(CLI::ExistingDirectory);
  auto *export_sub = app.add_subcommand("export-embeddings", "Export chunk embeddings per batch");
  export_sub->add_option("dir", dir, "Output directory")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage_error", e.what(), kExitConfig);
  }

  try {
    if (*run_cmd) return run(args);
    if (*stats_cmd) return stats(dir);
    return export_cmd(dir);
  } catch (const ConfigError &e) {
    return fail("config_error", e.what(), kExitConfig, e.key());
  } catch (const CapabilityError &e) {
    return fail("capability_error", e.what(), kExitCapability);
  } catch (const BackendError &e) {
    return fail("backend_error", e.what(), kExitError);
  } catch (const std::exception &e) {
    return fail("error", e.what(), kExitError);
  }
}
