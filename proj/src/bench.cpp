#include "xmrbench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <spdlog/spdlog.h>

#include "xmrbench/error.hpp"
#include "xmrbench/occlusion.hpp"
#include "xmrbench/parallel.hpp"
#include "xmrbench/rng.hpp"

namespace xmr {

void BenchConfig::validate() const {
  if (occlusion_ratios.empty() || k_values.empty()) {
    throw Error(ErrorCode::kValidation, "ratio and k grids must be nonempty");
  }
  for (std::size_t i = 0; i < occlusion_ratios.size(); ++i) {
    const double r = occlusion_ratios[i];
    if (!(r >= 0.0 && r <= 100.0)) {
      throw Error(ErrorCode::kValidation, "occlusion ratio outside [0, 100]");
    }
    if (i > 0 && !(occlusion_ratios[i - 1] < r)) {
      throw Error(ErrorCode::kValidation, "occlusion ratios must be strictly ascending");
    }
  }
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    if (k_values[i] == 0) throw Error(ErrorCode::kValidation, "k must be at least 1");
    if (i > 0 && !(k_values[i - 1] < k_values[i])) {
      throw Error(ErrorCode::kValidation, "k values must be strictly ascending");
    }
  }
  if (trials_per_image == 0) throw Error(ErrorCode::kValidation, "trials_per_image must be >= 1");
  if (!(fill_value >= 0.0f && fill_value <= 1.0f)) {
    throw Error(ErrorCode::kValidation, "fill value must be in [0, 1]");
  }
}

Dataset load_dataset(Manifest manifest, std::size_t jobs) {
  Dataset data;
  data.images.resize(manifest.image_count());
  parallel_for(manifest.image_count(), jobs, [&](std::size_t i) {
    data.images[i] = load_image(manifest.resolve_image_path(i));
  });
  data.manifest = std::move(manifest);
  return data;
}

namespace {

std::size_t effective_jobs(const Embedder& embedder, std::size_t jobs) {
  return embedder.concurrent() ? jobs : 1;
}

[[noreturn]] void rethrow_with_context(const Error& e, std::string_view what, std::string_view id) {
  throw Error(e.code(), std::string(what) + " '" + std::string(id) + "': " + e.what());
}

}  // namespace

EmbeddingTable embed_reports(const Dataset& data, Embedder& embedder, std::size_t jobs) {
  const auto& studies = data.manifest.studies();
  std::vector<std::vector<float>> vectors(studies.size());
  parallel_for(studies.size(), effective_jobs(embedder, jobs), [&](std::size_t s) {
    try {
      vectors[s] = embedder.embed_report({studies[s].study_id, s, &studies[s].report});
    } catch (const Error& e) {
      rethrow_with_context(e, "embedding report", studies[s].study_id);
    }
  });
  EmbeddingTable table(embedder.dim());
  for (std::size_t s = 0; s < studies.size(); ++s) {
    try {
      table.add(studies[s].study_id, std::move(vectors[s]));
    } catch (const Error& e) {
      throw Error(e.code() == ErrorCode::kValidation ? ErrorCode::kDimMismatch : e.code(),
                  "report '" + studies[s].study_id + "': " + e.what());
    }
  }
  return table;
}

std::vector<std::size_t> true_report_ranks(const Dataset& data, Embedder& embedder,
                                           const ReportIndex& reports, double ratio_percent,
                                           const BenchConfig& config) {
  const Manifest& manifest = data.manifest;
  const std::size_t m = manifest.image_count();
  const std::size_t n = reports.size();
  const std::size_t trials = config.trials_per_image;
  if (m == 0 || n == 0) throw Error(ErrorCode::kValidation, "empty manifest");
  if (data.images.size() != m) throw Error(ErrorCode::kValidation, "dataset images not loaded");

  std::vector<std::size_t> ranks(m * trials);
  std::vector<std::size_t> zero_norms(m * trials, 0);
  parallel_for(m * trials, effective_jobs(embedder, config.jobs), [&](std::size_t q) {
    const std::size_t image = q / trials;
    const std::size_t trial = q % trials;
    const std::string& id = manifest.image_ref(image);
    const std::size_t truth = manifest.true_report(image);
    auto embed = [&](const ImageTensor& occluded) {
      std::vector<float> v = embedder.embed_image(
          {id, manifest.images()[image].study_index, &occluded, ratio_percent, trial});
      if (v.size() != reports.dim()) {
        throw Error(ErrorCode::kDimMismatch, "embedding has length " + std::to_string(v.size()) +
                                                 ", expected " + std::to_string(reports.dim()));
      }
      check_finite(v, "image embedding");
      return v;
    };
    try {
      std::vector<double> row(n);
      if (config.occlusion_mode == OcclusionMode::kPerImage) {
        const OcclusionSpec spec{ratio_percent, occlusion_seed(config.seed, image, ratio_percent, trial),
                                 config.fill_value};
        const auto v = embed(apply_occlusion(data.images[image], spec));
        zero_norms[q] = reports.score_row(v, row);
      } else {
        for (std::size_t r = 0; r < n; ++r) {
          const OcclusionSpec spec{ratio_percent,
                                   occlusion_seed(config.seed, image, ratio_percent, trial, r),
                                   config.fill_value};
          row[r] = reports.score_one(embed(apply_occlusion(data.images[image], spec)), r);
        }
      }
      ranks[q] = rank_of(row, truth);
    } catch (const Error& e) {
      rethrow_with_context(e, "image", id);
    }
  });
  std::size_t total_zero = 0;
  for (auto z : zero_norms) total_zero += z;
  if (total_zero > 0) {
    spdlog::warn("ratio {}: {} zero-norm operands scored as 0", ratio_percent, total_zero);
  }
  return ranks;
}

double occlusion_retrieval_test(const Dataset& data, Embedder& embedder, double ratio_percent,
                                std::size_t k, const BenchConfig& config) {
  if (data.manifest.image_count() == 0) throw Error(ErrorCode::kValidation, "empty manifest");
  const EmbeddingTable reports = embed_reports(data, embedder, config.jobs);
  const ReportIndex index(reports, config.scorer);
  const auto ranks = true_report_ranks(data, embedder, index, ratio_percent, config);
  return recall_from_ranks(ranks, k, reports.size());
}

RecallGrid sweep(const Dataset& data, Embedder& embedder, const BenchConfig& config,
                 const ProgressFn& progress) {
  config.validate();
  if (data.manifest.image_count() == 0) throw Error(ErrorCode::kValidation, "empty manifest");
  const EmbeddingTable reports = embed_reports(data, embedder, config.jobs);
  const ReportIndex index(reports, config.scorer);

  RecallGrid grid;
  grid.k_values = config.k_values;
  grid.ratios = config.occlusion_ratios;
  grid.cells.assign(grid.k_values.size() * grid.ratios.size(), 0.0);
  grid.image_count = data.manifest.image_count();
  grid.report_count = data.manifest.report_count();
  grid.seed = config.seed;
  grid.scorer = config.scorer.name();
  grid.model = embedder.name();

  std::vector<std::size_t> cutoffs;
  for (auto k : grid.k_values) cutoffs.push_back(clamp_k(k, reports.size()));
  for (std::size_t pi = 0; pi < grid.ratios.size(); ++pi) {
    const auto start = std::chrono::steady_clock::now();
    const auto ranks = true_report_ranks(data, embedder, index, grid.ratios[pi], config);
    for (std::size_t ki = 0; ki < grid.k_values.size(); ++ki) {
      grid.at(ki, pi) = recall_from_ranks(ranks, cutoffs[ki], reports.size());
    }
    if (progress) {
      progress(grid.ratios[pi],
               std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
  }
  return grid;
}

double random_baseline_analytic(std::size_t n_reports, std::size_t k) {
  if (n_reports == 0 || k == 0 || k > n_reports) {
    throw Error(ErrorCode::kValidation, "random baseline needs 1 <= k <= n");
  }
  return 100.0 * static_cast<double>(k) / static_cast<double>(n_reports);
}

std::vector<MonteCarloEstimate> random_baseline_monte_carlo(
    std::size_t n_reports, std::span<const std::size_t> ks, std::size_t n_queries,
    std::size_t trials, std::uint64_t seed, std::size_t jobs) {
  if (n_reports == 0 || n_queries == 0 || trials == 0 || ks.empty()) {
    throw Error(ErrorCode::kValidation, "Monte-Carlo baseline arguments must be positive");
  }
  std::vector<std::size_t> clamped;
  for (auto k : ks) clamped.push_back(clamp_k(k, n_reports));

  // recalls[t * ks + j]
  std::vector<double> recalls(trials * ks.size());
  parallel_for(trials, jobs, [&](std::size_t t) {
    Rng rng(hash_combine(mix64(seed), t));
    std::vector<double> row(n_reports);
    std::vector<std::size_t> ranks(n_queries);
    for (std::size_t q = 0; q < n_queries; ++q) {
      for (auto& s : row) s = rng.uniform01();
      ranks[q] = rank_of(row, q % n_reports);
    }
    for (std::size_t j = 0; j < clamped.size(); ++j) {
      recalls[t * ks.size() + j] = recall_from_ranks(ranks, clamped[j], n_reports);
    }
  });

  std::vector<MonteCarloEstimate> out(ks.size());
  for (std::size_t j = 0; j < ks.size(); ++j) {
    double sum = 0.0;
    for (std::size_t t = 0; t < trials; ++t) sum += recalls[t * ks.size() + j];
    const double mean = sum / static_cast<double>(trials);
    double ss = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      const double d = recalls[t * ks.size() + j] - mean;
      ss += d * d;
    }
    const double var = trials > 1 ? ss / static_cast<double>(trials - 1) : 0.0;
    out[j] = {mean, std::sqrt(var / static_cast<double>(trials))};
  }
  return out;
}

MonteCarloEstimate random_baseline_monte_carlo(std::size_t n_reports, std::size_t k,
                                               std::size_t n_queries, std::size_t trials,
                                               std::uint64_t seed, std::size_t jobs) {
  const std::size_t ks[] = {k};
  return random_baseline_monte_carlo(n_reports, ks, n_queries, trials, seed, jobs).front();
}

}  // namespace xmr
