#pragma once

#include <Eigen/Dense>

#include "xmrbench/scoring.hpp"

namespace xmr {

/// Rows of `images` and `texts` are paired embeddings (B x D, B >= 2).
struct InfoNceResult {
  double loss = 0.0;
  Eigen::MatrixXd grad_images;
  Eigen::MatrixXd grad_texts;
};

/// Symmetric in-batch contrastive loss. Rows are L2-normalized, logits are
/// cosine / temperature, and the image->text and text->image cross-entropies
/// (targets on the diagonal) are averaged. Gradients are with respect to the
/// unnormalized inputs. Throws Error(kValidation) for temperature <= 0,
/// B < 2, mismatched shapes or a zero row.
InfoNceResult info_nce_loss(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts,
                            double temperature);

struct TripletResult {
  double loss = 0.0;
  Eigen::VectorXd grad_anchor;
  Eigen::VectorXd grad_positive;
  Eigen::VectorXd grad_negative;
};

/// max(0, |a - p| - |a - n| + margin). At the hinge and at zero distances
/// the zero subgradient is used.
TripletResult triplet_loss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                           const Eigen::VectorXd& negative, double margin);

inline constexpr double kBceEpsilon = 1e-7;

struct BceResult {
  double loss = 0.0;
  double probability = 0.0;
  ClassifierHead grad_head;  // same shapes as the head
  Eigen::VectorXd grad_image;
  Eigen::VectorXd grad_text;
};

/// Binary cross-entropy of the classifier head on |v_i - v_t| against
/// label 0 or 1. The probability is clamped to [eps, 1 - eps]; inside the
/// clamped region the gradient is zero.
BceResult bce_pair_loss(const ClassifierHead& head, const Eigen::VectorXd& image,
                        const Eigen::VectorXd& text, int label);

}  // namespace xmr
