// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
// criterion fails.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <spdlog/spdlog.h>

#include "conformance.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"
#include "xmrbench/bench.hpp"
#include "xmrbench/embedder.hpp"
#include "xmrbench/occlusion.hpp"
#include "xmrbench/parallel.hpp"
#include "xmrbench/scoring.hpp"
#include "xmrbench/toymodel.hpp"

namespace {

using namespace xmr;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

// Chance-level Recall@k over N = 994 reports and M = 1770 queries.
Outcome random_baseline() {
  const std::vector<std::size_t> ks = {5, 10, 20, 30, 50, 100};
  const std::vector<double> reference = {0.50, 0.99, 2.01, 3.02, 5.03, 9.94};
  const auto start = Clock::now();
  const auto est = random_baseline_monte_carlo(994, ks, 1770, 500, 20240601, default_jobs());
  const double elapsed = seconds_since(start);
  bool ok = elapsed <= 60.0;
  std::string detail;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double tol = ks[i] == 100 ? 0.20 : 0.15;
    const double diff = std::fabs(est[i].mean - reference[i]);
    ok = ok && diff <= tol;
    detail += fmt("k=%zu %.3f (ref %.2f, |d| %.3f<=%.2f) ", ks[i], est[i].mean, reference[i], diff, tol);
  }
  return {ok, detail + fmt("in %.1fs (limit 60s)", elapsed)};
}

// recall_at_k against a full sort and linear scan, on random 50x40 matrices.
Outcome metric_oracle() {
  const auto start = Clock::now();
  constexpr std::size_t kM = 50, kN = 40;
  Rng rng(77);
  std::size_t compared = 0, mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    // Every third matrix uses coarse scores so ties are exercised.
    const bool coarse = trial % 3 == 0;
    std::vector<std::vector<double>> scores(kM, std::vector<double>(kN));
    std::vector<std::size_t> truth(kM);
    for (std::size_t m = 0; m < kM; ++m) {
      for (auto& s : scores[m]) {
        s = coarse ? static_cast<double>(rng.uniform_index(5)) : rng.uniform01();
      }
      truth[m] = rng.uniform_index(kN);
    }
    std::vector<RankedList> rankings;
    std::vector<std::size_t> ranks;
    std::vector<std::size_t> naive_position(kM);
    for (std::size_t m = 0; m < kM; ++m) {
      rankings.push_back(rank_reports(scores[m]));
      ranks.push_back(rank_of(scores[m], truth[m]));
      std::vector<std::pair<double, std::size_t>> order;
      for (std::size_t n = 0; n < kN; ++n) order.emplace_back(scores[m][n], n);
      std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first > b.first : a.second < b.second;
      });
      for (std::size_t pos = 0; pos < kN; ++pos) {
        if (order[pos].second == truth[m]) naive_position[m] = pos;
      }
    }
    for (std::size_t k = 1; k <= kN; ++k) {
      std::size_t hits = 0;
      for (auto pos : naive_position) hits += pos < k;
      const double naive = 100.0 * static_cast<double>(hits) / static_cast<double>(kM);
      ++compared;
      if (recall_at_k(rankings, truth, k) != naive || recall_from_ranks(ranks, k, kN) != naive) {
        ++mismatches;
      }
    }
  }
  const double elapsed = seconds_since(start);
  return {mismatches == 0 && elapsed <= 10.0,
          fmt("%zu recall values compared, %zu mismatches, in %.2fs (limit 10s)", compared,
              mismatches, elapsed)};
}

Outcome occlusion_geometry() {
  struct Size {
    std::size_t h, w;
  };
  const std::vector<Size> sizes = {{32, 32}, {100, 100}, {224, 224}, {64, 128}};
  const std::vector<double> ratios = kDefaultRatios;
  std::size_t cases = 0, failures = 0;
  std::string first_failure;
  auto fail = [&](const std::string& what) {
    if (failures++ == 0) first_failure = what;
  };
  for (const auto& sz : sizes) {
    const auto image = testing::random_image(sz.h, sz.w, 1, sz.h * 1000 + sz.w);
    for (double p : ratios) {
      for (std::uint64_t s = 0; s < 20; ++s) {
        ++cases;
        const OcclusionSpec spec{p, occlusion_seed(9, s, p, 0), 0.0f};
        const auto out = apply_occlusion(image, spec);
        const auto block = place_block(spec, sz.h, sz.w);
        std::size_t zeroed = 0;
        bool outside_identical = true;
        for (std::size_t r = 0; r < sz.h; ++r) {
          for (std::size_t c = 0; c < sz.w; ++c) {
            const bool changed = out.at(r, c) != image.at(r, c);
            if (block.contains(r, c)) {
              zeroed += out.at(r, c) == 0.0f;
            } else if (changed) {
              outside_identical = false;
            }
          }
        }
        const double target = p / 100.0 * static_cast<double>(sz.h * sz.w);
        const auto label = fmt("%zux%zu p=%.2f seed=%llu", sz.h, sz.w, p,
                               static_cast<unsigned long long>(s));
        if (std::fabs(static_cast<double>(zeroed) - target) > static_cast<double>(sz.h + sz.w + 1)) {
          fail(label + fmt(": zeroed %zu vs target %.1f", zeroed, target));
        }
        if (!outside_identical) fail(label + ": pixel outside block changed");
        if (apply_occlusion(image, spec) != out) fail(label + ": not deterministic");
      }
    }
  }

  // Uniformity of placements: 5x5 blocks on a 10x10 image have 36 positions.
  constexpr std::size_t kPlacements = 10000;
  std::vector<double> counts(36, 0.0);
  for (std::size_t i = 0; i < kPlacements; ++i) {
    const auto b = place_block({25.0, occlusion_seed(31337, i, 25.0, 0), 0.0f}, 10, 10);
    counts[b.top * 6 + b.left] += 1.0;
  }
  const double expected = static_cast<double>(kPlacements) / 36.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared_distribution<double> dist(35.0);
  const double p_value = boost::math::cdf(boost::math::complement(dist, chi2));
  const bool uniform = p_value >= 0.01;
  return {failures == 0 && uniform,
          fmt("%zu placements checked, %zu failures%s; chi2=%.2f df=35 p=%.4f (alpha 0.01)", cases,
              failures, failures ? (" (first: " + first_failure + ")").c_str() : "", chi2, p_value)};
}

Outcome gradient_checks() {
  const auto start = Clock::now();
  Rng rng(4242);
  double worst_nce = 0.0, worst_triplet = 0.0, worst_bce = 0.0;
  for (int i = 0; i < 20; ++i) {
    worst_nce = std::max(worst_nce, testing::infonce_gradient_error(rng));
    worst_triplet = std::max(worst_triplet, testing::triplet_gradient_error(rng));
    worst_bce = std::max(worst_bce, testing::bce_gradient_error(rng));
  }
  const double elapsed = seconds_since(start);
  const bool ok = worst_nce <= 1e-4 && worst_triplet <= 1e-4 && worst_bce <= 1e-4 && elapsed <= 5.0;
  return {ok, fmt("worst relative error infonce %.2e triplet %.2e bce %.2e (limit 1e-4), %.2fs (limit 5s)",
                  worst_nce, worst_triplet, worst_bce, elapsed)};
}

Outcome end_to_end() {
  const auto start = Clock::now();
  constexpr std::size_t kSeeds = 5;
  const std::vector<double> ratios = {0.0, 25.0, 81.0};
  const double chance = random_baseline_analytic(200, 5);
  std::vector<std::vector<double>> r5(ratios.size());
  bool every_seed_strong = true;
  for (std::size_t s = 0; s < kSeeds; ++s) {
    toy::SyntheticPairSpec train_spec;
    train_spec.seed = 1000 + s;
    const auto train_set = toy::gen_synthetic_pairs(train_spec);
    toy::TrainOptions opts;
    opts.seed = train_spec.seed;
    auto params = toy::train(toy::ToyEncoderParams::random(toy::ToyDims{}, train_spec.seed),
                             train_set.images, train_set.texts, opts)
                      .params;

    // Evaluate on a held-out set drawn with a different seed.
    toy::SyntheticPairSpec eval_spec = train_spec;
    eval_spec.seed = 5000 + s;
    auto eval_set = toy::gen_synthetic_pairs(eval_spec);
    const Dataset data{std::move(eval_set.manifest), std::move(eval_set.images)};
    ToyEmbedder embedder(std::move(params), {Section::kFindings, Section::kImpression});
    BenchConfig config;
    config.occlusion_ratios = ratios;
    config.k_values = {5};
    config.seed = 7 + s;
    config.jobs = default_jobs();
    const auto grid = sweep(data, embedder, config);
    for (std::size_t pi = 0; pi < ratios.size(); ++pi) r5[pi].push_back(grid.at(0, pi));
    every_seed_strong = every_seed_strong && grid.at(0, 0) >= 20.0 * chance;
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto std_error = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  };
  const double r0 = mean(r5[0]), r25 = mean(r5[1]), r81 = mean(r5[2]);
  const double se81 = std_error(r5[2]);
  const double min_r0 = *std::min_element(r5[0].begin(), r5[0].end());
  const double elapsed = seconds_since(start);
  const bool ok = every_seed_strong && r0 > r25 && r25 > r81 &&
                  std::fabs(r81 - chance) <= 3.0 * se81 && elapsed <= 300.0;
  return {ok, fmt("R@5 mean over %zu seeds: p0 %.2f (min %.2f, need >= %.2f) > p25 %.2f > p81 %.2f; "
                  "p81 vs chance %.2f: |d| %.2f <= 3*stderr %.2f; %.1fs (limit 300s)",
                  kSeeds, r0, min_r0, 20.0 * chance, r25, r81, chance, std::fabs(r81 - chance),
                  3.0 * se81, elapsed)};
}

int run_bench(const std::string& args) {
  const std::string cmd = testing::bench_path() + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism() {
  testing::TempDir dir;
  if (run_bench("toy-train --seed 8 --out " + dir.file("toy.xtoy")) != 0 ||
      run_bench("toy-gen --seed 9 --out-dir " + dir.file("ds")) != 0) {
    return {false, "toy setup failed"};
  }
  const std::string common = "run --manifest " + dir.file("ds/manifest.jsonl") + " --embedder toy:" +
                             dir.file("toy.xtoy") + " --seed 123 --trials 2 --out ";
  const int a = run_bench(common + dir.file("a.csv") + " --jobs 1");
  const int b = run_bench(common + dir.file("b.csv") + " --jobs 1");
  const int c = run_bench(common + dir.file("c.csv") + " --jobs 8");
  if (a || b || c) return {false, fmt("run exit codes %d %d %d", a, b, c)};
  const auto ta = slurp(dir.file("a.csv"));
  const bool same_runs = ta == slurp(dir.file("b.csv"));
  const bool same_jobs = ta == slurp(dir.file("c.csv"));
  return {same_runs && same_jobs && !ta.empty(),
          fmt("repeat run identical: %s; --jobs 1 vs --jobs 8 identical: %s (%zu bytes)",
              same_runs ? "yes" : "no", same_jobs ? "yes" : "no", ta.size())};
}

Outcome round_trips() {
  testing::TempDir dir;
  Rng rng(555);
  std::size_t table_failures = 0;
  for (std::size_t t = 0; t < 100; ++t) {
    const std::size_t n = rng.uniform_index(60);
    const std::size_t dim = 1 + rng.uniform_index(300);
    EmbeddingTable table(dim);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> v(dim);
      for (auto& x : v) x = static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform01() * 8 - 4));
      table.add("study-" + std::to_string(t) + "/é" + std::to_string(i), std::move(v));
    }
    const auto path = dir.file("t" + std::to_string(t) + ".xemb");
    write_embeddings(table, path);
    if (!(read_embeddings(path) == table)) ++table_failures;
  }
  const auto conformance = testing::run_protocol_conformance(testing::loopback_path());
  std::size_t passed = 0;
  std::string failed;
  for (const auto& r : conformance) {
    if (r.passed) {
      ++passed;
    } else {
      failed += " [" + r.name + ": " + r.detail + "]";
    }
  }
  return {table_failures == 0 && passed == conformance.size(),
          fmt("embedding files: %zu/100 tables equal after write/read; protocol conformance %zu/%zu",
              100 - table_failures, passed, conformance.size()) +
              failed};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  struct Criterion {
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {"random-baseline", random_baseline},   {"metric-oracle", metric_oracle},
      {"occlusion-geometry", occlusion_geometry}, {"gradient-checks", gradient_checks},
      {"end-to-end-robustness", end_to_end},  {"determinism", determinism},
      {"round-trips", round_trips}};
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %s: %s\n", o.passed ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.passed;
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
