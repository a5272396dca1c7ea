#include "xmrbench/losses.hpp"

#include <algorithm>
#include <cmath>

#include "xmrbench/error.hpp"

namespace xmr {

namespace {

// Row-wise L2 normalization; returns the norms.
Eigen::VectorXd normalize_rows(const Eigen::MatrixXd& x, Eigen::MatrixXd& out) {
  Eigen::VectorXd norms = x.rowwise().norm();
  if ((norms.array() == 0.0).any()) {
    throw Error(ErrorCode::kValidation, "contrastive loss got a zero embedding");
  }
  out = norms.cwiseInverse().asDiagonal() * x;
  return norms;
}

// d(loss)/d(x) given d(loss)/d(u) where u = x / |x| row-wise.
Eigen::MatrixXd normalize_backward(const Eigen::MatrixXd& u, const Eigen::VectorXd& norms,
                                   const Eigen::MatrixXd& grad_u) {
  const Eigen::VectorXd radial = (u.array() * grad_u.array()).rowwise().sum();
  Eigen::MatrixXd g = grad_u - radial.asDiagonal() * u;
  return norms.cwiseInverse().asDiagonal() * g;
}

// Softmax of each row, computed stably; also returns per-row log-sum-exp.
Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits, Eigen::VectorXd& lse) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  lse.resize(logits.rows());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double s = e.sum();
    p.row(i) = e / s;
    lse(i) = mx + std::log(s);
  }
  return p;
}

}  // namespace

InfoNceResult info_nce_loss(const Eigen::MatrixXd& images, const Eigen::MatrixXd& texts,
                            double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::kValidation, "temperature must be positive");
  if (images.rows() != texts.rows() || images.cols() != texts.cols()) {
    throw Error(ErrorCode::kValidation, "contrastive batch shapes differ");
  }
  const Eigen::Index b = images.rows();
  if (b < 2) throw Error(ErrorCode::kValidation, "contrastive batch needs at least 2 pairs");

  Eigen::MatrixXd u, w;
  const Eigen::VectorXd nu = normalize_rows(images, u);
  const Eigen::VectorXd nw = normalize_rows(texts, w);
  const Eigen::MatrixXd logits = (u * w.transpose()) / temperature;

  Eigen::VectorXd lse_rows, lse_cols;
  const Eigen::MatrixXd p_rows = row_softmax(logits, lse_rows);
  const Eigen::MatrixXd p_cols = row_softmax(logits.transpose(), lse_cols);

  const double bd = static_cast<double>(b);
  double loss_i2t = 0.0, loss_t2i = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    loss_i2t += lse_rows(i) - logits(i, i);
    loss_t2i += lse_cols(i) - logits(i, i);
  }
  InfoNceResult r;
  r.loss = 0.5 * (loss_i2t + loss_t2i) / bd;

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(b, b);
  const Eigen::MatrixXd grad_logits =
      (0.5 / bd) * ((p_rows - eye) + (p_cols - eye).transpose());
  const Eigen::MatrixXd grad_u = grad_logits * w / temperature;
  const Eigen::MatrixXd grad_w = grad_logits.transpose() * u / temperature;
  r.grad_images = normalize_backward(u, nu, grad_u);
  r.grad_texts = normalize_backward(w, nw, grad_w);
  return r;
}

TripletResult triplet_loss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                           const Eigen::VectorXd& negative, double margin) {
  if (margin < 0.0) throw Error(ErrorCode::kValidation, "triplet margin must be >= 0");
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error(ErrorCode::kValidation, "triplet dimension mismatch");
  }
  const Eigen::VectorXd ap = anchor - positive;
  const Eigen::VectorXd an = anchor - negative;
  const double d_ap = ap.norm();
  const double d_an = an.norm();
  const double z = d_ap - d_an + margin;

  TripletResult r;
  r.grad_anchor = Eigen::VectorXd::Zero(anchor.size());
  r.grad_positive = Eigen::VectorXd::Zero(anchor.size());
  r.grad_negative = Eigen::VectorXd::Zero(anchor.size());
  if (z <= 0.0) return r;
  r.loss = z;
  if (d_ap > 0.0) {
    const Eigen::VectorXd g = ap / d_ap;
    r.grad_anchor += g;
    r.grad_positive -= g;
  }
  if (d_an > 0.0) {
    const Eigen::VectorXd g = an / d_an;
    r.grad_anchor -= g;
    r.grad_negative += g;
  }
  return r;
}

BceResult bce_pair_loss(const ClassifierHead& head, const Eigen::VectorXd& image,
                        const Eigen::VectorXd& text, int label) {
  if (label != 0 && label != 1) throw Error(ErrorCode::kValidation, "label must be 0 or 1");
  const auto d = static_cast<Eigen::Index>(head.input_dim);
  if (image.size() != d || text.size() != d) {
    throw Error(ErrorCode::kValidation, "pair dimension does not match the classifier head");
  }
  const auto h = static_cast<Eigen::Index>(head.hidden);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
      w1(head.w1.data(), h, d);
  const Eigen::Map<const Eigen::VectorXd> b1(head.b1.data(), h);
  const Eigen::Map<const Eigen::VectorXd> w2(head.w2.data(), h);

  const Eigen::VectorXd delta = image - text;
  const Eigen::VectorXd diff = delta.cwiseAbs();
  const Eigen::VectorXd pre = w1 * diff + b1;
  const Eigen::VectorXd act = pre.cwiseMax(0.0);
  const double logit = w2.dot(act) + head.b2;
  const double p = sigmoid(logit);
  const double pc = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  const double y = static_cast<double>(label);

  BceResult r;
  r.probability = p;
  r.loss = -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
  r.grad_head = ClassifierHead::zeros(head.input_dim, head.hidden);
  r.grad_image = Eigen::VectorXd::Zero(d);
  r.grad_text = Eigen::VectorXd::Zero(d);
  if (p != pc) return r;

  const double g_logit = p - y;
  r.grad_head.b2 = g_logit;
  Eigen::VectorXd g_pre(h);
  for (Eigen::Index j = 0; j < h; ++j) {
    r.grad_head.w2[static_cast<std::size_t>(j)] = g_logit * act(j);
    g_pre(j) = pre(j) > 0.0 ? g_logit * w2(j) : 0.0;
    r.grad_head.b1[static_cast<std::size_t>(j)] = g_pre(j);
    for (Eigen::Index k = 0; k < d; ++k) {
      r.grad_head.w1[static_cast<std::size_t>(j * d + k)] = g_pre(j) * diff(k);
    }
  }
  const Eigen::VectorXd g_diff = w1.transpose() * g_pre;
  for (Eigen::Index k = 0; k < d; ++k) {
    const double sign = delta(k) > 0.0 ? 1.0 : (delta(k) < 0.0 ? -1.0 : 0.0);
    r.grad_image(k) = g_diff(k) * sign;
  }
  r.grad_text = -r.grad_image;
  return r;
}

}  // namespace xmr
