// sqzsim: run the multimode squeezing simulation or analyse recorded traces.
//
//   sqzsim --config configs/default.json --out run1
//   sqzsim --config configs/default.json --stage modes --override analysis.g=0
//   sqzsim homodyne --config cfg.json --out run1
//   sqzsim ingest --config cfg.json --traces run1/traces --out run2
//
// Exit codes: 0 success, 1 config error, 2 numerical/invariant failure,
// 3 I/O error.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "sqz/config.hpp"
#include "sqz/errors.hpp"
#include "sqz/pipeline.hpp"

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string stage = "report";
  std::vector<std::string> overrides;
  std::string traces;
  bool quiet = false;
};

void add_common(CLI::App& app, Options& o) {
  app.add_option("--config", o.config, "experiment configuration (JSON)")->required();
  app.add_option("--seed", o.seed, "random seed (overrides noise.seed)");
  app.add_option("--out", o.out, "output directory (overrides output.directory)");
  app.add_option("--override", o.overrides, "key.path=value configuration override")
      ->allow_extra_args(false);
  app.add_flag("--quiet", o.quiet, "suppress progress messages");
}

sqz::ExperimentConfig load(const Options& o) {
  std::vector<std::string> overrides = o.overrides;
  if (o.seed) overrides.push_back("noise.seed=" + std::to_string(*o.seed));
  if (!o.out.empty()) overrides.push_back("output.directory=\"" + o.out + "\"");
  return sqz::load_config(o.config, overrides);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimode single-pass squeezing simulator"};
  app.require_subcommand(0, 1);
  Options opts;
  add_common(app, opts);
  app.add_option("--stage", opts.stage, "last stage to run: kernel, modes, homodyne, covariance, report");

  std::vector<std::pair<std::string, CLI::App*>> stage_cmds;
  for (const char* name : {"kernel", "modes", "homodyne", "covariance", "report"}) {
    auto* sub = app.add_subcommand(name, std::string("run the pipeline through the ") + name + " stage");
    stage_cmds.emplace_back(name, sub);
  }
  auto* ingest = app.add_subcommand("ingest", "analyse a directory of recorded traces");
  ingest->add_option("--traces", opts.traces, "trace directory holding manifest.json")->required();
  for (auto& [name, sub] : stage_cmds) sub->fallthrough();
  ingest->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::string stage_label = "config";
  try {
    const sqz::ExperimentConfig cfg = load(opts);
    std::ostream* log = opts.quiet ? nullptr : &std::cerr;
    if (ingest->parsed()) {
      stage_label = "ingest";
      const auto groups = sqz::run_ingest(cfg, opts.traces, cfg.output.directory);
      if (log) *log << "sqzsim: ingested " << groups.size() << " covariance groups\n";
      return 0;
    }
    std::string stage = opts.stage;
    for (auto& [name, sub] : stage_cmds)
      if (sub->parsed()) stage = name;
    const sqz::Stage last = sqz::parse_stage(stage);
    sqz::Pipeline pipeline(cfg, cfg.output.directory, log);
    try {
      pipeline.run(last);
    } catch (...) {
      stage_label = sqz::stage_name(pipeline.current_stage());
      throw;
    }
    if (log) *log << "sqzsim: done, outputs in " << cfg.output.directory << '\n';
    return 0;
  } catch (const sqz::Error& e) {
    std::cerr << "sqzsim: error in " << stage_label << ": " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "sqzsim: I/O error in " << stage_label << ": " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "sqzsim: failure in " << stage_label << ": " << e.what() << '\n';
    return 2;
  }
}
