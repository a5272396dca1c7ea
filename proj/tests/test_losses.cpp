#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "xmrbench/error.hpp"
#include "xmrbench/losses.hpp"

namespace xmr {
namespace {

using testing::gaussian;

TEST(InfoNce, IdenticalEmbeddingsGiveLogBatchSize) {
  for (Eigen::Index b : {2, 5, 16}) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(b, 4);
    EXPECT_NEAR(info_nce_loss(x, x, 0.1).loss, std::log(static_cast<double>(b)), 1e-12);
  }
}

TEST(InfoNce, OrthogonalPairsApproachZeroAsTemperatureShrinks) {
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(4, 4);
  EXPECT_LT(info_nce_loss(eye, eye, 0.01).loss, 1e-30);
  EXPECT_GT(info_nce_loss(eye, eye, 1.0).loss, info_nce_loss(eye, eye, 0.5).loss);
}

TEST(InfoNce, InvariantToPositiveRowScaling) {
  Rng rng(1);
  const Eigen::MatrixXd a = gaussian(rng, 5, 3), b = gaussian(rng, 5, 3);
  Eigen::VectorXd s(5);
  s << 0.5, 2.0, 3.0, 10.0, 0.1;
  EXPECT_NEAR(info_nce_loss(a, b, 0.3).loss, info_nce_loss(s.asDiagonal() * a, b, 0.3).loss, 1e-12);
}

TEST(InfoNce, InvariantToSharedRotation) {
  Rng rng(2);
  const Eigen::MatrixXd a = gaussian(rng, 6, 4), b = gaussian(rng, 6, 4);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gaussian(rng, 4, 4)).householderQ();
  EXPECT_NEAR(info_nce_loss(a, b, 0.2).loss, info_nce_loss(a * q, b * q, 0.2).loss, 1e-12);
}

TEST(InfoNce, RejectsBadInputs) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 2);
  EXPECT_THROW(info_nce_loss(x, x, 0.0), Error);
  EXPECT_THROW(info_nce_loss(x, x, -1.0), Error);
  EXPECT_THROW(info_nce_loss(x, Eigen::MatrixXd::Ones(2, 2), 0.1), Error);
  Eigen::MatrixXd z = x;
  z.row(1).setZero();
  EXPECT_THROW(info_nce_loss(z, x, 0.1), Error);
}

TEST(InfoNce, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) EXPECT_LE(testing::infonce_gradient_error(rng), 1e-4);
}

TEST(Triplet, HingeBoundaryAndDegenerateCase) {
  Eigen::VectorXd a(2), n(2);
  a << 0, 0;
  n << 0.5, 0;
  EXPECT_EQ(triplet_loss(a, a, n, 0.5).loss, 0.0);
  EXPECT_DOUBLE_EQ(triplet_loss(a, a, a, 0.7).loss, 0.7);
  EXPECT_THROW(triplet_loss(a, a, a, -0.1), Error);
}

TEST(Triplet, InactiveHingeHasZeroGradient) {
  Eigen::VectorXd a(2), p(2), n(2);
  a << 0, 0;
  p << 0.1, 0;
  n << 5, 5;
  const auto r = triplet_loss(a, p, n, 0.5);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.grad_anchor.norm(), 0.0);
}

TEST(Triplet, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) EXPECT_LE(testing::triplet_gradient_error(rng), 1e-4);
}

TEST(Bce, HalfProbabilityGivesLogTwo) {
  const auto head = ClassifierHead::zeros(3, 2);
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(3);
  for (int label : {0, 1}) {
    const auto r = bce_pair_loss(head, v, v, label);
    EXPECT_DOUBLE_EQ(r.probability, 0.5);
    EXPECT_NEAR(r.loss, std::log(2.0), 1e-15);
  }
}

TEST(Bce, ConfidentCorrectPredictionApproachesZero) {
  auto head = ClassifierHead::zeros(2, 1);
  head.b2 = 12.0;
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(2);
  EXPECT_LT(bce_pair_loss(head, v, v, 1).loss, 1e-5);
  EXPECT_GT(bce_pair_loss(head, v, v, 0).loss, 11.0);
}

TEST(Bce, ClampedProbabilityHasZeroGradient) {
  auto head = ClassifierHead::zeros(2, 1);
  head.b2 = 40.0;
  const Eigen::VectorXd v = Eigen::VectorXd::Zero(2);
  const auto r = bce_pair_loss(head, v, v, 0);
  EXPECT_NEAR(r.loss, -std::log(kBceEpsilon), 1e-9);
  EXPECT_EQ(r.grad_head.b2, 0.0);
}

TEST(Bce, RejectsBadLabelAndShape) {
  const auto head = ClassifierHead::zeros(3, 2);
  const Eigen::VectorXd v = Eigen::VectorXd::Ones(3);
  EXPECT_THROW(bce_pair_loss(head, v, v, 2), Error);
  EXPECT_THROW(bce_pair_loss(head, Eigen::VectorXd::Ones(2), v, 1), Error);
}

TEST(Bce, GradientMatchesFiniteDifferences) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) EXPECT_LE(testing::bce_gradient_error(rng), 1e-4);
}

}  // namespace
}  // namespace xmr
