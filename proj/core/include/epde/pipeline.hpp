#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epde/common.hpp"

namespace epde {

struct PipelineOptions {
  int threads = 1;
  std::optional<uint64_t> seed_override;  // EPDE_SEED / --seed
  bool dump_intermediate = false;
  bool csv = false;               // plot stage also dumps the underlying numbers
  std::string color_by = "auto";  // embedding scatter color column
};

// Deterministic evaluation metrics (eval.json) plus wall-clock telemetry that
// only ever goes to the logs.
struct EvalReport {
  std::map<std::string, double> metrics;
  std::map<std::string, double> runtimes_seconds;
};

// Runs one stage of the pipeline (or every configured stage for "run-all").
// Stage names: generate, scramble, organize, coords, learn, integrate, eval,
// plot. Throws UsageError for config/input problems (CLI exit code 2) and
// NumericalError for numerical failures (exit code 1).
void run_stage(const std::string& stage, const std::string& config_path,
               const std::string& out_dir, const PipelineOptions& opt = {});

// Exhaustive config validation; returns every problem found (empty = valid).
std::vector<std::string> validate_config_file(const std::string& config_path);

uint64_t file_hash(const std::string& path);

}  // namespace epde
