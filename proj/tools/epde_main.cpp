#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "epde/pipeline.hpp"

namespace {

// exit codes: 0 success, 1 numerical failure, 2 usage/config error
int run(const std::string& stage, const std::string& config, const std::string& out,
        const epde::PipelineOptions& opt) {
  try {
    epde::run_stage(stage, config, out, opt);
    return 0;
  } catch (const epde::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epde: scramble, organize, and learn emergent PDEs from spatiotemporal data"};
  app.require_subcommand(1);

  std::string config, out = ".";
  epde::PipelineOptions opt;
  bool csv = false;
  std::string color_by = "auto";
  int threads = 1;
  std::string seed_str;

  const char* stages[] = {"generate", "scramble", "organize", "coords", "learn",
                          "integrate", "eval",     "plot",     "run-all"};
  for (const char* name : stages) {
    CLI::App* sub = app.add_subcommand(name, std::string("run the ") + name + " stage");
    sub->add_option("--config", config, "pipeline config file (JSON)")->required();
    sub->add_option("--out", out, "output directory");
    sub->add_option("--threads", threads, "worker thread cap");
    sub->add_option("--seed", seed_str, "override the global seed");
    sub->add_flag("--dump-intermediate", opt.dump_intermediate,
                  "dump questionnaire trees and distance matrices");
    if (std::string(name) == "plot" || std::string(name) == "run-all") {
      sub->add_flag("--csv", csv, "also dump the numbers behind each plot");
      sub->add_option("--color-by", color_by, "metadata column for embedding colors");
    }
  }

  CLI11_PARSE(app, argc, argv);

  opt.threads = threads;
  opt.csv = csv;
  opt.color_by = color_by;
  if (!seed_str.empty())
    opt.seed_override = std::stoull(seed_str);
  else if (const char* env = std::getenv("EPDE_SEED"))
    opt.seed_override = std::stoull(env);

  return run(app.get_subcommands().front()->get_name(), config, out, opt);
}
