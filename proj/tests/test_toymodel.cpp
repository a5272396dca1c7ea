#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gradcheck.hpp"
#include "test_util.hpp"
#include "xmrbench/error.hpp"
#include "xmrbench/scoring.hpp"
#include "xmrbench/toymodel.hpp"

namespace xmr::toy {
namespace {

ToyDims small_dims(std::size_t head_hidden = 0) {
  ToyDims d;
  d.image_side = 8;
  d.vocab_size = 8;
  d.token_dim = 3;
  d.embed_dim = 4;
  d.head_hidden = head_hidden;
  return d;
}

SyntheticPairSpec small_spec(std::uint64_t seed) {
  SyntheticPairSpec s;
  s.n_studies = 6;
  s.latent_dim = 4;
  s.image_side = 8;
  s.vocab_size = 8;
  s.seed = seed;
  return s;
}

// Visits every trainable scalar in a fixed order.
template <typename P, typename F>
void for_each_param(P& p, F&& f) {
  for (Eigen::Index i = 0; i < p.image_weight.size(); ++i) f(p.image_weight.data()[i]);
  for (Eigen::Index i = 0; i < p.image_bias.size(); ++i) f(p.image_bias.data()[i]);
  for (Eigen::Index i = 0; i < p.token_table.size(); ++i) f(p.token_table.data()[i]);
  for (Eigen::Index i = 0; i < p.text_weight.size(); ++i) f(p.text_weight.data()[i]);
  for (Eigen::Index i = 0; i < p.text_bias.size(); ++i) f(p.text_bias.data()[i]);
  if (p.head) {
    for (auto& v : p.head->w1) f(v);
    for (auto& v : p.head->b1) f(v);
    for (auto& v : p.head->w2) f(v);
    f(p.head->b2);
  }
}

Eigen::VectorXd pack(ToyEncoderParams p) {
  std::vector<double> out;
  for_each_param(p, [&](double& v) { out.push_back(v); });
  return Eigen::Map<Eigen::VectorXd>(out.data(), static_cast<Eigen::Index>(out.size()));
}

ToyEncoderParams unpack(ToyEncoderParams p, const Eigen::VectorXd& x) {
  Eigen::Index i = 0;
  for_each_param(p, [&](double& v) { v = x(i++); });
  return p;
}

TEST(Synthetic, CountsAndNaming) {
  SyntheticPairSpec spec;
  spec.seed = 3;
  const auto ds = gen_synthetic_pairs(spec);
  EXPECT_EQ(ds.manifest.report_count(), 200u);
  EXPECT_EQ(ds.manifest.image_count(), 200u);
  EXPECT_EQ(ds.images.size(), 200u);
  EXPECT_EQ(ds.manifest.studies()[7].study_id, "toy-00007");
  EXPECT_EQ(ds.manifest.image_ref(7), "images/toy-00007.png");
  EXPECT_EQ(ds.images[0].height(), 32u);
}

TEST(Synthetic, SameSeedSameDataset) {
  auto spec = small_spec(4);
  spec.noise_sigma = 0.0;
  const auto a = gen_synthetic_pairs(spec);
  const auto b = gen_synthetic_pairs(spec);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.texts, b.texts);
  EXPECT_EQ(a.manifest, b.manifest);
  spec.seed = 5;
  EXPECT_NE(gen_synthetic_pairs(spec).texts, a.texts);
}

TEST(Synthetic, TokensEncodeLatentQuantiles) {
  auto spec = small_spec(6);
  spec.n_studies = 50;
  const auto ds = gen_synthetic_pairs(spec);
  const std::size_t bins = spec.bins();
  for (std::size_t s = 0; s < ds.texts.size(); ++s) {
    for (std::size_t j = 0; j < spec.latent_dim; ++j) {
      const auto tok = ds.texts[s][j];
      EXPECT_EQ(tok / bins, j);
      EXPECT_EQ(tok % bins == 1, ds.latents[s][j] >= 0.0);
    }
    EXPECT_EQ(tokenize(*ds.manifest.studies()[s].report.section(Section::kFindings)), ds.texts[s]);
  }
}

TEST(Synthetic, RejectsBadSpecs) {
  auto spec = small_spec(0);
  spec.vocab_size = 7;
  EXPECT_THROW(gen_synthetic_pairs(spec), Error);
  spec = small_spec(0);
  spec.n_studies = 0;
  EXPECT_THROW(gen_synthetic_pairs(spec), Error);
}

TEST(Tokenize, ExtractsOnlyTokenWords) {
  EXPECT_EQ(tokenize("tok3 tok10 hello tokx tok tok7."), (TokenSequence{3, 10}));
  EXPECT_EQ(tokens_to_text({1, 2, 30}), "tok1 tok2 tok30");
}

TEST(Encoder, ZeroWeightsGiveBias) {
  auto p = ToyEncoderParams::zeros(small_dims());
  p.image_bias << 1, 2, 3, 4;
  p.text_bias << -1, 0, 1, 2;
  const auto img = testing::random_image(8, 8, 1, 1);
  EXPECT_EQ(encode_image_raw(p, img), p.image_bias);
  const TokenSequence toks{0, 5};
  EXPECT_EQ(encode_text_raw(p, toks), p.text_bias);
}

TEST(Encoder, MatchesHandRolledMatrixVector) {
  const auto p = ToyEncoderParams::random(small_dims(), 7);
  const auto img = testing::random_image(8, 8, 1, 2);
  const auto v = encode_image_raw(p, img);
  for (Eigen::Index r = 0; r < 4; ++r) {
    double acc = p.image_bias(r);
    for (std::size_t i = 0; i < 64; ++i) acc += p.image_weight(r, i) * img.pixels()[i];
    EXPECT_NEAR(v(r), acc, 1e-12);
  }
  const TokenSequence toks{1, 6, 6};
  const auto t = encode_text_raw(p, toks);
  for (Eigen::Index r = 0; r < 4; ++r) {
    double acc = p.text_bias(r);
    for (Eigen::Index c = 0; c < 3; ++c) {
      const double pooled = (p.token_table(1, c) + 2 * p.token_table(6, c)) / 3.0;
      acc += p.text_weight(r, c) * pooled;
    }
    EXPECT_NEAR(t(r), acc, 1e-12);
  }
}

TEST(Encoder, RejectsOutOfVocabularyAndWrongShape) {
  const auto p = ToyEncoderParams::random(small_dims(), 1);
  const TokenSequence bad{8};
  EXPECT_THROW(encode_text_raw(p, bad), Error);
  EXPECT_THROW(encode_text_raw(p, TokenSequence{}), Error);
  EXPECT_THROW(encode_image_raw(p, testing::random_image(9, 8, 1, 1)), Error);
}

TEST(Training, BatchGradientsMatchFiniteDifferences) {
  const auto ds = gen_synthetic_pairs(small_spec(8));
  for (auto objective : {Objective::kInfoNce, Objective::kTriplet, Objective::kBce}) {
    SCOPED_TRACE(std::string(objective_name(objective)));
    const auto params =
        ToyEncoderParams::random(small_dims(objective == Objective::kBce ? 3 : 0), 9, 0.5);
    TrainOptions opts;
    opts.objective = objective;
    opts.margin = 5.0;  // keeps every triplet on the active side of the hinge
    ToyEncoderParams grads;
    batch_loss_and_gradients(params, ds.images, ds.texts, opts, &grads);
    auto loss = [&](const Eigen::VectorXd& x) {
      return batch_loss_and_gradients(unpack(params, x), ds.images, ds.texts, opts, nullptr);
    };
    EXPECT_LE(testing::relative_error(pack(grads), testing::central_difference(loss, pack(params))),
              1e-4);
  }
}

TEST(Training, ZeroLearningRateLeavesParamsUnchanged) {
  const auto ds = gen_synthetic_pairs(small_spec(10));
  const auto init = ToyEncoderParams::random(small_dims(), 11);
  TrainOptions opts;
  opts.learning_rate = 0.0;
  opts.epochs = 3;
  opts.batch_size = 3;
  EXPECT_EQ(train(init, ds.images, ds.texts, opts).params, init);
}

TEST(Training, DeterministicForSameSeed) {
  const auto ds = gen_synthetic_pairs(small_spec(12));
  TrainOptions opts;
  opts.epochs = 5;
  opts.batch_size = 4;
  opts.seed = 13;
  const auto a = train(ToyEncoderParams::random(small_dims(), 13), ds.images, ds.texts, opts);
  const auto b = train(ToyEncoderParams::random(small_dims(), 13), ds.images, ds.texts, opts);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(Training, DivergenceIsReported) {
  const auto ds = gen_synthetic_pairs(small_spec(14));
  TrainOptions opts;
  opts.objective = Objective::kTriplet;
  opts.learning_rate = 1e300;
  opts.epochs = 5;
  opts.batch_size = 6;
  try {
    train(ToyEncoderParams::random(small_dims(), 14), ds.images, ds.texts, opts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
  }
}

TEST(Training, InfoNceLearnsRetrievableEmbeddings) {
  SyntheticPairSpec spec;
  spec.seed = 21;
  const auto ds = gen_synthetic_pairs(spec);
  TrainOptions opts;
  opts.seed = 21;
  const auto result = train(ToyEncoderParams::random(ToyDims{}, 21), ds.images, ds.texts, opts);
  EXPECT_LT(result.loss_trace.back(), 0.5 * result.loss_trace.front());

  // Studies whose tokens coincide should have image/text pairs that score
  // higher than unrelated pairs.
  double matched = 0.0, unrelated = 0.0;
  for (std::size_t i = 0; i < ds.texts.size(); ++i) {
    const auto vi = encode_image(result.params, ds.images[i]);
    matched += cosine_similarity(vi, encode_text(result.params, ds.texts[i]));
    unrelated += cosine_similarity(vi, encode_text(result.params, ds.texts[(i + 1) % ds.texts.size()]));
  }
  EXPECT_GT(matched, unrelated + 0.3 * static_cast<double>(ds.texts.size()));
}

TEST(Training, EqualLatentsScoreAboveRandomPairs) {
  SyntheticPairSpec spec;
  spec.seed = 22;
  const auto ds = gen_synthetic_pairs(spec);
  TrainOptions opts;
  opts.seed = 22;
  const auto params = train(ToyEncoderParams::random(ToyDims{}, 22), ds.images, ds.texts, opts).params;
  // Re-render each study with fresh pixel noise: same latent, new image.
  Rng rng(23);
  double same = 0.0, other = 0.0;
  const std::size_t n = ds.images.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> px(ds.images[i].pixels().begin(), ds.images[i].pixels().end());
    for (auto& v : px) v = std::clamp(v + 0.05f * static_cast<float>(rng.normal()), 0.0f, 1.0f);
    const auto twin = encode_image(params, ImageTensor(32, 32, 1, std::move(px)));
    same += cosine_similarity(twin, encode_text(params, ds.texts[i]));
    other += cosine_similarity(twin, encode_text(params, ds.texts[(i + 7) % n]));
  }
  EXPECT_GT(same / static_cast<double>(n), other / static_cast<double>(n) + 0.2);
}

TEST(Params, SerializeRoundTrip) {
  for (std::size_t hidden : {0, 5}) {
    auto p = ToyEncoderParams::random(small_dims(hidden), 30, 0.07);
    // Round through f32 so equality after reload is exact.
    p = deserialize_params(serialize_params(p));
    const auto bytes = serialize_params(p);
    EXPECT_EQ(deserialize_params(bytes), p);
    EXPECT_EQ(serialize_params(deserialize_params(bytes)), bytes);
    testing::TempDir dir;
    save_params(p, dir.file("p.xtoy"));
    EXPECT_EQ(load_params(dir.file("p.xtoy")), p);
  }
}

TEST(Params, CorruptFilesAreRejected) {
  const auto bytes = serialize_params(ToyEncoderParams::random(small_dims(2), 31));
  auto bad_magic = bytes;
  bad_magic[0] = 'Q';
  auto expect = [](ErrorCode code, const std::vector<std::uint8_t>& b) {
    try {
      deserialize_params(b);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code) << e.what();
    }
  };
  expect(ErrorCode::kMagicMismatch, bad_magic);
  auto bad_version = bytes;
  bad_version[4] = 9;
  expect(ErrorCode::kVersionMismatch, bad_version);
  expect(ErrorCode::kTruncated, std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 3));
  auto trailing = bytes;
  trailing.push_back(0);
  expect(ErrorCode::kValidation, trailing);
}

}  // namespace
}  // namespace xmr::toy
