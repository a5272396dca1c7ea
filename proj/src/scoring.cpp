#include "xmrbench/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <spdlog/spdlog.h>

#include "xmrbench/error.hpp"
#include "xmrbench/parallel.hpp"

namespace xmr {

ClassifierHead ClassifierHead::zeros(std::size_t input_dim, std::size_t hidden) {
  ClassifierHead h;
  h.input_dim = input_dim;
  h.hidden = hidden;
  h.w1.assign(input_dim * hidden, 0.0);
  h.b1.assign(hidden, 0.0);
  h.w2.assign(hidden, 0.0);
  return h;
}

void ClassifierHead::validate() const {
  if (input_dim == 0 || hidden == 0 || w1.size() != input_dim * hidden ||
      b1.size() != hidden || w2.size() != hidden) {
    throw Error(ErrorCode::kValidation, "classifier head parameter shapes are inconsistent");
  }
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::all_of(w1.begin(), w1.end(), finite) || !std::all_of(b1.begin(), b1.end(), finite) ||
      !std::all_of(w2.begin(), w2.end(), finite) || !std::isfinite(b2)) {
    throw Error(ErrorCode::kValidation, "classifier head has non-finite parameters");
  }
}

double ClassifierHead::logit(std::span<const double> features) const {
  double out = b2;
  for (std::size_t j = 0; j < hidden; ++j) {
    const double* row = w1.data() + j * input_dim;
    double z = b1[j];
    for (std::size_t d = 0; d < input_dim; ++d) z += row[d] * features[d];
    if (z > 0.0) out += w2[j] * z;
  }
  return out;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double dot(std::span<const float> a, std::span<const float> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return s;
}

double l2_norm(std::span<const float> a) noexcept { return std::sqrt(dot(a, a)); }

namespace {

double cosine_with_norms(std::span<const float> a, double norm_a, std::span<const float> b,
                         double norm_b) {
  if (norm_a == 0.0 || norm_b == 0.0) return 0.0;
  return dot(a, b) / (norm_a * norm_b);
}

double classifier_kernel(std::span<const float> a, std::span<const float> b,
                         const ClassifierHead& head) {
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff[i] = std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
  }
  return sigmoid(head.logit(diff));
}

void require_same_dim(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::kValidation, "embedding dimension mismatch: " + std::to_string(a) +
                                            " vs " + std::to_string(b));
  }
}

}  // namespace

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  require_same_dim(a.dim(), b.dim());
  const double na = l2_norm(a.values);
  const double nb = l2_norm(b.values);
  if (na == 0.0 || nb == 0.0) {
    spdlog::warn("zero-norm embedding in cosine similarity ('{}' vs '{}'); scoring as 0", a.id,
                 b.id);
  }
  return cosine_with_norms(a.values, na, b.values, nb);
}

double classifier_score(const EmbeddingVector& image, const EmbeddingVector& report,
                        const ClassifierHead& head) {
  require_same_dim(image.dim(), report.dim());
  require_same_dim(image.dim(), head.input_dim);
  return classifier_kernel(image.values, report.values, head);
}

ReportIndex::ReportIndex(const EmbeddingTable& reports, Scorer scorer)
    : reports_(&reports), scorer_(std::move(scorer)) {
  if (scorer_.kind == Scorer::Kind::kClassifier) {
    if (!scorer_.head) throw Error(ErrorCode::kValidation, "classifier scorer needs a head");
    scorer_.head->validate();
    require_same_dim(reports.dim(), scorer_.head->input_dim);
  } else {
    norms_.reserve(reports.size());
    for (const auto& r : reports.entries()) norms_.push_back(l2_norm(r.values));
  }
}

std::size_t ReportIndex::score_row(std::span<const float> image, std::span<double> out) const {
  require_same_dim(image.size(), dim());
  std::size_t zero_norms = 0;
  if (scorer_.kind == Scorer::Kind::kCosine) {
    const double ni = l2_norm(image);
    if (ni == 0.0) ++zero_norms;
    for (std::size_t n = 0; n < size(); ++n) {
      if (norms_[n] == 0.0) ++zero_norms;
      out[n] = cosine_with_norms(image, ni, (*reports_)[n].values, norms_[n]);
    }
  } else {
    for (std::size_t n = 0; n < size(); ++n) {
      out[n] = classifier_kernel(image, (*reports_)[n].values, *scorer_.head);
    }
  }
  return zero_norms;
}

double ReportIndex::score_one(std::span<const float> image, std::size_t report) const {
  require_same_dim(image.size(), dim());
  const auto& values = (*reports_)[report].values;
  if (scorer_.kind == Scorer::Kind::kCosine) {
    return cosine_with_norms(image, l2_norm(image), values, norms_[report]);
  }
  return classifier_kernel(image, values, *scorer_.head);
}

ScoreMatrix score_all(const EmbeddingTable& images, const EmbeddingTable& reports,
                      const Scorer& scorer, std::size_t jobs) {
  if (images.empty() || reports.empty()) {
    throw Error(ErrorCode::kValidation, "score_all needs nonempty embedding tables");
  }
  require_same_dim(images.dim(), reports.dim());
  const ReportIndex index(reports, scorer);
  ScoreMatrix matrix;
  for (const auto& e : images.entries()) matrix.rows.push_back(e.id);
  for (const auto& e : reports.entries()) matrix.cols.push_back(e.id);
  const std::size_t n = reports.size();
  matrix.scores.assign(images.size() * n, 0.0);
  std::vector<std::size_t> zero_norms(images.size(), 0);
  parallel_for(images.size(), jobs, [&](std::size_t m) {
    try {
      zero_norms[m] = index.score_row(images[m].values,
                                      std::span<double>(matrix.scores).subspan(m * n, n));
    } catch (const Error& e) {
      throw Error(e.code(), "scoring image row " + std::to_string(m) + " ('" + images[m].id +
                                "'): " + e.what());
    }
  });
  const auto total = std::accumulate(zero_norms.begin(), zero_norms.end(), std::size_t{0});
  if (total > 0) {
    spdlog::warn("{} zero-norm operands met while scoring; those pairs scored 0", total);
  }
  return matrix;
}

RankedList rank_reports(std::span<const double> scores) {
  RankedList order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::size_t rank_of(std::span<const double> scores, std::size_t truth) {
  const double t = scores[truth];
  std::size_t ahead = 0;
  for (std::size_t n = 0; n < scores.size(); ++n) {
    if (scores[n] > t || (scores[n] == t && n < truth)) ++ahead;
  }
  return ahead;
}

std::size_t clamp_k(std::size_t k, std::size_t n_candidates) {
  if (k == 0) throw Error(ErrorCode::kValidation, "k must be at least 1");
  if (k > n_candidates) {
    spdlog::warn("k={} exceeds the {} candidates; clamping to {}", k, n_candidates, n_candidates);
    return n_candidates;
  }
  return k;
}

double recall_at_k(std::span<const RankedList> rankings, std::span<const std::size_t> truth,
                   std::size_t k) {
  if (rankings.size() != truth.size()) {
    throw Error(ErrorCode::kValidation, "rankings and truth differ in length");
  }
  if (rankings.empty()) throw Error(ErrorCode::kValidation, "recall over zero queries");
  const std::size_t n = rankings.front().size();
  k = clamp_k(k, n);
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    const auto& r = rankings[q];
    const auto top = r.begin() + static_cast<std::ptrdiff_t>(std::min(k, r.size()));
    if (std::find(r.begin(), top, truth[q]) != top) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k,
                         std::size_t n_candidates) {
  if (ranks.empty()) throw Error(ErrorCode::kValidation, "recall over zero queries");
  k = clamp_k(k, n_candidates);
  const auto hits = std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; });
  return 100.0 * static_cast<double>(hits) / static_cast<double>(ranks.size());
}

}  // namespace xmr
