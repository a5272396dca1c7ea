#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "xmrbench/bench.hpp"
#include "xmrbench/embedder.hpp"
#include "xmrbench/report.hpp"

namespace xmr::cli {

/// Everything `run` needs. jobs and verbosity affect only execution, so they
/// are left out of to_json() and do not change report bytes.
struct RunConfig {
  std::string manifest_path;
  EmbedderSpec embedder;
  std::string scorer = "cosine";
  std::string head_path;
  std::vector<double> ratios = kDefaultRatios;
  std::vector<std::size_t> k_values = kDefaultKs;
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  OcclusionMode occlusion_mode = OcclusionMode::kPerImage;
  float fill_value = 0.0f;
  std::string out_path;
  ReportFormat format = ReportFormat::kCsv;
  std::string dump_scores_path;
  std::size_t jobs = 0;
  int verbosity = 0;

  nlohmann::json to_json() const;
};

/// Parses the arguments that follow `run`. Throws Error(kUsage) on unknown or
/// conflicting flags and invalid values.
RunConfig parse_run_args(const std::vector<std::string>& args);

/// Full command-line entry point; returns the process exit code.
int main_entry(int argc, const char* const* argv);

}  // namespace xmr::cli
