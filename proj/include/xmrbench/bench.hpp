#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xmrbench/embedder.hpp"
#include "xmrbench/embedding.hpp"
#include "xmrbench/image.hpp"
#include "xmrbench/manifest.hpp"
#include "xmrbench/scoring.hpp"

namespace xmr {

inline const std::vector<double> kDefaultRatios = {0, 0.25, 1, 4, 9, 25, 49, 81};
inline const std::vector<std::size_t> kDefaultKs = {5, 10, 20, 30, 50, 100};

/// kPerImage draws one occlusion per (image, ratio, trial) and scores it
/// against every report. kPerPair redraws the occlusion for every
/// (image, report) pair, matching a literal reading of the test loop.
enum class OcclusionMode { kPerImage, kPerPair };

struct BenchConfig {
  std::vector<double> occlusion_ratios = kDefaultRatios;
  std::vector<std::size_t> k_values = kDefaultKs;
  std::uint64_t seed = 0;
  std::size_t trials_per_image = 1;
  Scorer scorer = Scorer::cosine();
  OcclusionMode occlusion_mode = OcclusionMode::kPerImage;
  float fill_value = 0.0f;
  std::size_t jobs = 1;  // 0 = hardware concurrency

  /// Throws Error(kValidation) unless both grids are nonempty, strictly
  /// ascending, ratios lie in [0, 100], k >= 1 and trials >= 1.
  void validate() const;
};

/// Manifest plus decoded pixels for each image in manifest order.
struct Dataset {
  Manifest manifest;
  std::vector<ImageTensor> images;
};

/// Decodes every referenced image (relative to the manifest directory).
Dataset load_dataset(Manifest manifest, std::size_t jobs = 1);

struct RecallGrid {
  std::vector<std::size_t> k_values;
  std::vector<double> ratios;
  std::vector<double> cells;  // k-major: cells[ki * ratios.size() + pi]
  std::size_t image_count = 0;
  std::size_t report_count = 0;
  std::uint64_t seed = 0;
  std::string scorer;
  std::string model;

  double at(std::size_t k_index, std::size_t ratio_index) const {
    return cells[k_index * ratios.size() + ratio_index];
  }
  double& at(std::size_t k_index, std::size_t ratio_index) {
    return cells[k_index * ratios.size() + ratio_index];
  }
};

/// Embeds every report once (reports are never occluded).
EmbeddingTable embed_reports(const Dataset& data, Embedder& embedder, std::size_t jobs = 1);

/// 0-based rank of the true report for every (image, trial) query at one
/// occlusion ratio; length M * trials_per_image, image-major.
std::vector<std::size_t> true_report_ranks(const Dataset& data, Embedder& embedder,
                                           const ReportIndex& reports, double ratio_percent,
                                           const BenchConfig& config);

/// Recall@k (percent) at one occlusion ratio. Throws Error(kValidation) on
/// an empty manifest; embedder failures are rethrown with the image id.
double occlusion_retrieval_test(const Dataset& data, Embedder& embedder, double ratio_percent,
                                std::size_t k, const BenchConfig& config);

using ProgressFn = std::function<void(double ratio, double seconds)>;

/// Runs the test for every (ratio, k). Image ranks at a ratio are computed
/// once and reused for every k.
RecallGrid sweep(const Dataset& data, Embedder& embedder, const BenchConfig& config,
                 const ProgressFn& progress = {});

/// 100 * k / n: chance that one relevant item lands in a random top-k.
double random_baseline_analytic(std::size_t n_reports, std::size_t k);

struct MonteCarloEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

/// Simulates `trials` uniform-random n_queries x n_reports score matrices
/// and reports mean and standard error of Recall@k across trials.
MonteCarloEstimate random_baseline_monte_carlo(std::size_t n_reports, std::size_t k,
                                               std::size_t n_queries, std::size_t trials,
                                               std::uint64_t seed, std::size_t jobs = 1);

/// Same simulation evaluated at several cutoffs from shared score draws.
std::vector<MonteCarloEstimate> random_baseline_monte_carlo(
    std::size_t n_reports, std::span<const std::size_t> ks, std::size_t n_queries,
    std::size_t trials, std::uint64_t seed, std::size_t jobs = 1);

}  // namespace xmr
