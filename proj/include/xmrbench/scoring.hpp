#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xmrbench/embedding.hpp"

namespace xmr {

/// One-hidden-layer ReLU network with a sigmoid output, applied to the
/// elementwise absolute difference of an image and a report embedding.
struct ClassifierHead {
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::vector<double> w1;  // hidden x input_dim, row-major
  std::vector<double> b1;  // hidden
  std::vector<double> w2;  // hidden
  double b2 = 0.0;

  static ClassifierHead zeros(std::size_t input_dim, std::size_t hidden);

  /// Throws Error(kValidation) when the array sizes disagree with the dims
  /// or a parameter is not finite.
  void validate() const;

  /// Pre-sigmoid output for a feature vector of length input_dim.
  double logit(std::span<const double> features) const;

  friend bool operator==(const ClassifierHead&, const ClassifierHead&) = default;
};

double sigmoid(double x) noexcept;

double dot(std::span<const float> a, std::span<const float> b) noexcept;
double l2_norm(std::span<const float> a) noexcept;

/// a.b / (|a| |b|). A zero-norm operand yields 0 and logs a warning.
/// Throws Error(kValidation) on dimension mismatch.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

/// sigmoid(head(|v_i - v_t|)), in (0, 1). Throws Error(kValidation) on a
/// dimension mismatch with the head.
double classifier_score(const EmbeddingVector& image, const EmbeddingVector& report,
                        const ClassifierHead& head);

struct Scorer {
  enum class Kind { kCosine, kClassifier };
  Kind kind = Kind::kCosine;
  std::shared_ptr<const ClassifierHead> head;

  static Scorer cosine() { return {}; }
  static Scorer classifier(std::shared_ptr<const ClassifierHead> head) {
    return {Kind::kClassifier, std::move(head)};
  }
  std::string name() const { return kind == Kind::kCosine ? "cosine" : "classifier"; }
};

/// Reports prepared for repeated scoring (norms cached for cosine).
class ReportIndex {
 public:
  ReportIndex(const EmbeddingTable& reports, Scorer scorer);

  std::size_t size() const noexcept { return reports_->size(); }
  std::size_t dim() const noexcept { return reports_->dim(); }
  const Scorer& scorer() const noexcept { return scorer_; }

  /// Scores one image embedding against every report; out.size() == size().
  /// Returns the number of zero-norm operands met (cosine only).
  std::size_t score_row(std::span<const float> image, std::span<double> out) const;

  double score_one(std::span<const float> image, std::size_t report) const;

 private:
  const EmbeddingTable* reports_;
  Scorer scorer_;
  std::vector<double> norms_;
};

/// M x N matrix of scores, higher = better match.
struct ScoreMatrix {
  std::vector<std::string> rows;
  std::vector<std::string> cols;
  std::vector<double> scores;  // row-major M x N

  std::size_t row_count() const noexcept { return rows.size(); }
  std::size_t col_count() const noexcept { return cols.size(); }
  double at(std::size_t m, std::size_t n) const { return scores[m * cols.size() + n]; }
  std::span<const double> row(std::size_t m) const {
    return std::span<const double>(scores).subspan(m * cols.size(), cols.size());
  }
};

/// Scores every (image, report) pair. Rows may be computed in parallel;
/// each cell is computed independently so the result does not depend on
/// `jobs` (0 = hardware concurrency).
ScoreMatrix score_all(const EmbeddingTable& images, const EmbeddingTable& reports,
                      const Scorer& scorer, std::size_t jobs = 1);

/// Report indices sorted by descending score, ties by ascending index.
using RankedList = std::vector<std::size_t>;
RankedList rank_reports(std::span<const double> scores);

/// Position of `truth` in rank_reports(scores) without sorting.
std::size_t rank_of(std::span<const double> scores, std::size_t truth);

/// Percentage of queries whose true report is within the first k entries of
/// its ranking. k > N is clamped to N with a warning; k < 1 throws.
double recall_at_k(std::span<const RankedList> rankings, std::span<const std::size_t> truth,
                   std::size_t k);

/// Same metric from precomputed 0-based ranks of the true report.
double recall_from_ranks(std::span<const std::size_t> ranks, std::size_t k,
                         std::size_t n_candidates);

/// k clamped to [1, n] with a warning when k > n; throws when k == 0.
std::size_t clamp_k(std::size_t k, std::size_t n_candidates);

}  // namespace xmr
