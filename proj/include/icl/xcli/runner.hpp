#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "icl/trainer/trainer.hpp"
#include "icl/xcli/config.hpp"

namespace icl::xcli {

struct RunOptions {
  // Result directory; created if missing.
  std::filesystem::path out_dir;
  // Overrides the config's thread count.
  std::optional<std::size_t> threads;
  // Progress lines; silent when empty.
  std::function<void(const std::string&)> log;
};

struct RunResult {
  std::filesystem::path dir;
  train::EvalReport report;
  bool partial = false;
  std::string error;
};

// Runs every cell, writing config.json, results.csv (rows appended in a fixed
// order by a single writer), checkpoints/ and manifest.json. A failing cell
// stops the run; completed rows stay in the CSV and the manifest is marked
// partial.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& opts);

// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the content.
std::string git_blob_sha1(const std::string& content);

// Default output root: $ICL_OUTPUT_ROOT, else "runs".
std::filesystem::path default_output_root();

// Keeps freed training buffers in the heap instead of returning them to the
// OS after every step; a no-op outside glibc.
void tune_allocator();

// Commit hash baked in at configure time, or "unknown".
std::string code_version();

}  // namespace icl::xcli
