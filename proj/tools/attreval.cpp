#include <chrono>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "attreval/errors.hpp"
#include "attreval/pipeline.hpp"

using namespace attreval;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 0;
  bool force = false;
  bool rerun = false;
  bool restrict_correct = false;
  std::string k_grid;
  bool include_k_1 = false;
  std::string output;
  bool quiet = false;
};

void emit_error(const std::string& kind, const std::string& stage, const std::string& message) {
  nlohmann::json record{{"error", {{"kind", kind}, {"stage", stage}, {"message", message}}}};
  std::cerr << record.dump() << std::endl;
}

pipeline::PipelineConfig effective_config(const Flags& f) {
  auto config = pipeline::load_config(f.config);
  if (f.seed) config.seed = *f.seed;
  if (f.restrict_correct) config.restrict_correct = true;
  if (!f.k_grid.empty()) config.k_grid = corruption::parse_k_grid(f.k_grid);
  if (f.include_k_1 && config.k_grid.back() < 1.0) config.k_grid.push_back(1.0);
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Corruption-based evaluation of attribution methods for time-series classifiers"};
  app.require_subcommand(1, 1);
  Flags f;
  app.add_option("-c,--config", f.config, "INI config file")->required()->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "override [run] seed");
  app.add_option("-j,--jobs", f.jobs, "worker threads (default: available cores)");
  app.add_flag("--force", f.force, "accept artifacts written under a different config hash");
  app.add_flag("--rerun", f.rerun, "recompute stages whose artifacts already exist");
  app.add_flag("--restrict-correct", f.restrict_correct, "evaluate only correctly classified samples");
  app.add_option("--k-grid", f.k_grid, "comma separated corruption fractions");
  app.add_flag("--include-k-1", f.include_k_1, "append k = 1.0 to the grid");
  app.add_option("-o,--output", f.output, fmt::format("output root (default: ${} or [run] output)", pipeline::kOutputEnv));
  app.add_flag("-q,--quiet", f.quiet, "no progress messages");
  app.fallthrough();

  const char* stages[][2] = {{"generate", "synthesise or load the dataset and split it"},
                             {"train", "train the classifier"},
                             {"attribute", "compute relevance maps for every method"},
                             {"corrupt", "corrupt inputs by relevance and record score drops"},
                             {"evaluate", "aggregate score drops into the metric table"},
                             {"report", "render ridgelines, curves and the per-sample figure"},
                             {"pipeline", "run every stage in order"},
                             {"hash", "print the config hash and output directory"}};
  for (auto& s : stages) app.add_subcommand(s[0], s[1]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string stage = app.get_subcommands().front()->get_name();

  try {
    const auto config = effective_config(f);
    pipeline::RunOptions options;
    options.output_root = f.output;
    options.jobs = f.jobs;
    options.force = f.force;
    options.rerun = f.rerun;
    const auto start = std::chrono::steady_clock::now();
    if (!f.quiet) {
      options.log = [start](const std::string& message) {
        const std::chrono::duration<double> t = std::chrono::steady_clock::now() - start;
        std::cerr << fmt::format("[{:7.1f}s] {}", t.count(), message) << std::endl;
      };
    }
    pipeline::Pipeline run(config, options);
    if (stage == "hash") {
      std::cout << run.hash() << ' ' << run.dir().string() << '\n';
    } else if (stage == "generate") {
      run.generate();
    } else if (stage == "train") {
      run.train();
    } else if (stage == "attribute") {
      run.attribute();
    } else if (stage == "corrupt") {
      run.corrupt();
    } else if (stage == "evaluate") {
      run.evaluate();
    } else if (stage == "report") {
      run.report();
    } else {
      run.run_all();
    }
    if (stage != "hash" && !f.quiet) std::cerr << "artifacts: " << run.dir().string() << std::endl;
  } catch (const Error& e) {
    emit_error(e.kind(), stage, e.what());
    return 2;
  } catch (const std::exception& e) {
    emit_error("internal", stage, e.what());
    return 3;
  }
  return 0;
}
