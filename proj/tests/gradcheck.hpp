#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "xmrbench/losses.hpp"
#include "xmrbench/rng.hpp"

namespace xmr::testing {

inline constexpr double kFiniteDiffStep = 1e-4;

inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double h = kFiniteDiffStep) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

// Norm-wise relative error between an analytic and a numeric gradient.
inline double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric) {
  const double scale = std::max({analytic.norm(), numeric.norm(), 1e-12});
  return (analytic - numeric).norm() / scale;
}

inline Eigen::MatrixXd gaussian(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

inline Eigen::VectorXd concat(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd out(a.size() + b.size());
  out << a, b;
  return out;
}

inline Eigen::VectorXd flat(const Eigen::MatrixXd& m) {
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

// One InfoNCE check at a random batch; returns the relative error.
inline double infonce_gradient_error(Rng& rng) {
  const Eigen::Index b = 6, d = 5;
  const double tau = 0.2 + rng.uniform01();
  const Eigen::MatrixXd images = gaussian(rng, b, d);
  const Eigen::MatrixXd texts = gaussian(rng, b, d);
  const auto r = info_nce_loss(images, texts, tau);
  auto loss = [&](const Eigen::VectorXd& x) {
    const Eigen::MatrixXd i = Eigen::Map<const Eigen::MatrixXd>(x.data(), b, d);
    const Eigen::MatrixXd t = Eigen::Map<const Eigen::MatrixXd>(x.data() + b * d, b, d);
    return info_nce_loss(i, t, tau).loss;
  };
  const Eigen::VectorXd x = concat(flat(images), flat(texts));
  return relative_error(concat(flat(r.grad_images), flat(r.grad_texts)),
                        central_difference(loss, x));
}

// One triplet check at a random point at least 0.05 away from the hinge.
inline double triplet_gradient_error(Rng& rng) {
  const Eigen::Index d = 6;
  const double margin = 0.5;
  Eigen::VectorXd a, p, n;
  for (;;) {
    a = gaussian(rng, d, 1);
    p = a + 0.5 * gaussian(rng, d, 1);
    n = gaussian(rng, d, 1);
    if ((a - p).norm() - (a - n).norm() + margin > 0.05) break;
  }
  const auto r = triplet_loss(a, p, n, margin);
  auto loss = [&](const Eigen::VectorXd& x) {
    return triplet_loss(x.segment(0, d), x.segment(d, d), x.segment(2 * d, d), margin).loss;
  };
  const Eigen::VectorXd x = concat(concat(a, p), n);
  return relative_error(concat(concat(r.grad_anchor, r.grad_positive), r.grad_negative),
                        central_difference(loss, x));
}

// One BCE check with a random head, away from ReLU and |.| kinks.
inline double bce_gradient_error(Rng& rng) {
  const std::size_t d = 5, h = 4;
  ClassifierHead head;
  Eigen::VectorXd vi, vt;
  int label = 0;
  for (;;) {
    head = ClassifierHead::zeros(d, h);
    for (auto& w : head.w1) w = 0.7 * rng.normal();
    for (auto& b : head.b1) b = 0.3 * rng.normal();
    for (auto& w : head.w2) w = rng.normal();
    head.b2 = 0.3 * rng.normal();
    vi = gaussian(rng, d, 1);
    vt = gaussian(rng, d, 1);
    label = static_cast<int>(rng.uniform_index(2));
    const Eigen::VectorXd delta = vi - vt;
    bool smooth = delta.cwiseAbs().minCoeff() > 0.05;
    for (std::size_t j = 0; j < h && smooth; ++j) {
      double z = head.b1[j];
      for (std::size_t k = 0; k < d; ++k) z += head.w1[j * d + k] * std::fabs(delta(k));
      smooth = std::fabs(z) > 0.05;
    }
    if (smooth) break;
  }
  const auto r = bce_pair_loss(head, vi, vt, label);

  // Parameter vector: [w1, b1, w2, b2, image, text].
  const Eigen::Index nw1 = d * h;
  auto unpack = [&](const Eigen::VectorXd& x, ClassifierHead& hd, Eigen::VectorXd& i,
                    Eigen::VectorXd& t) {
    hd = ClassifierHead::zeros(d, h);
    Eigen::Index o = 0;
    for (auto& w : hd.w1) w = x(o++);
    for (auto& b : hd.b1) b = x(o++);
    for (auto& w : hd.w2) w = x(o++);
    hd.b2 = x(o++);
    i = x.segment(o, d);
    t = x.segment(o + d, d);
  };
  Eigen::VectorXd x(nw1 + 2 * h + 1 + 2 * d);
  Eigen::VectorXd g(x.size());
  Eigen::Index o = 0;
  for (std::size_t j = 0; j < head.w1.size(); ++j, ++o) x(o) = head.w1[j], g(o) = r.grad_head.w1[j];
  for (std::size_t j = 0; j < h; ++j, ++o) x(o) = head.b1[j], g(o) = r.grad_head.b1[j];
  for (std::size_t j = 0; j < h; ++j, ++o) x(o) = head.w2[j], g(o) = r.grad_head.w2[j];
  x(o) = head.b2, g(o) = r.grad_head.b2, ++o;
  x.segment(o, d) = vi, g.segment(o, d) = r.grad_image;
  x.segment(o + d, d) = vt, g.segment(o + d, d) = r.grad_text;

  auto loss = [&](const Eigen::VectorXd& p) {
    ClassifierHead hd;
    Eigen::VectorXd i, t;
    unpack(p, hd, i, t);
    return bce_pair_loss(hd, i, t, label).loss;
  };
  return relative_error(g, central_difference(loss, x));
}

}  // namespace xmr::testing
