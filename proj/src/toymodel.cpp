#include "xmrbench/toymodel.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "xmrbench/byteio.hpp"
#include "xmrbench/error.hpp"
#include "xmrbench/losses.hpp"
#include "xmrbench/rng.hpp"

namespace xmr::toy {

void SyntheticPairSpec::validate() const {
  if (n_studies == 0) throw Error(ErrorCode::kValidation, "n_studies must be positive");
  if (latent_dim == 0) throw Error(ErrorCode::kValidation, "latent_dim must be positive");
  if (image_side < 8) throw Error(ErrorCode::kValidation, "image_side must be at least 8");
  const std::size_t inner = image_side - 2 * (image_side / 8);
  if (inner * inner < latent_dim) {
    throw Error(ErrorCode::kValidation, "image too small to render the latent");
  }
  if (vocab_size % latent_dim != 0 || bins() < 2) {
    throw Error(ErrorCode::kValidation,
                "vocab_size must be a multiple of latent_dim with at least 2 bins per coordinate");
  }
  if (!(noise_sigma >= 0.0)) throw Error(ErrorCode::kValidation, "noise_sigma must be >= 0");
}

std::string tokens_to_text(const TokenSequence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += "tok" + std::to_string(tokens[i]);
  }
  return out;
}

TokenSequence tokenize(std::string_view text) {
  TokenSequence out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::string_view word = text.substr(start, i - start);
    if (word.size() > 3 && word.substr(0, 3) == "tok" &&
        std::all_of(word.begin() + 3, word.end(), [](unsigned char c) { return std::isdigit(c); }) &&
        word.size() <= 12) {
      out.push_back(static_cast<std::uint32_t>(std::stoul(std::string(word.substr(3)))));
    }
  }
  return out;
}

SyntheticDataset gen_synthetic_pairs(const SyntheticPairSpec& spec) {
  spec.validate();
  const std::size_t side = spec.image_side;
  const std::size_t border = side / 8;
  const std::size_t inner = side - 2 * border;
  const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.latent_dim))));
  const std::size_t bins = spec.bins();

  std::vector<double> thresholds;
  const boost::math::normal_distribution<double> unit;
  for (std::size_t b = 1; b < bins; ++b) {
    thresholds.push_back(boost::math::quantile(unit, static_cast<double>(b) / static_cast<double>(bins)));
  }

  SyntheticDataset ds;
  std::vector<StudyRecord> studies;
  Rng rng(hash_combine(mix64(spec.seed), 0x746f79));
  for (std::size_t s = 0; s < spec.n_studies; ++s) {
    std::vector<double> z(spec.latent_dim);
    for (auto& v : z) v = rng.normal();

    std::vector<float> pixels(side * side);
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t c = 0; c < side; ++c) {
        double v = 0.5;
        if (r >= border && r < border + inner && c >= border && c < border + inner) {
          const std::size_t gr = (r - border) * grid / inner;
          const std::size_t gc = (c - border) * grid / inner;
          const std::size_t j = gr * grid + gc;
          if (j < spec.latent_dim) v = 0.5 + 0.35 * std::tanh(z[j]);
        }
        if (spec.noise_sigma > 0.0) v += spec.noise_sigma * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        pixels[r * side + c] = static_cast<float>(std::lround(v * 255.0)) / 255.0f;
      }
    }

    TokenSequence tokens(spec.latent_dim);
    for (std::size_t j = 0; j < spec.latent_dim; ++j) {
      const auto bin = static_cast<std::size_t>(
          std::upper_bound(thresholds.begin(), thresholds.end(), z[j]) - thresholds.begin());
      tokens[j] = static_cast<std::uint32_t>(j * bins + bin);
    }

    char id[32];
    std::snprintf(id, sizeof id, "toy-%05zu", s);
    StudyRecord study;
    study.study_id = id;
    study.image_refs.push_back(std::string("images/") + id + ".png");
    study.report.section(Section::kFindings) = tokens_to_text(tokens);
    study.report.section(Section::kImpression) = "Synthetic study, no acute finding.";
    study.report.raw = "FINDINGS: " + *study.report.section(Section::kFindings) +
                       "\nIMPRESSION: " + *study.report.section(Section::kImpression);
    studies.push_back(std::move(study));

    ds.images.emplace_back(side, side, 1, std::move(pixels));
    ds.texts.push_back(std::move(tokens));
    ds.latents.push_back(std::move(z));
  }
  ds.manifest = Manifest(std::move(studies));
  return ds;
}

// --- parameters -----------------------------------------------------------

ToyEncoderParams ToyEncoderParams::zeros(const ToyDims& dims, double temperature) {
  ToyEncoderParams p;
  p.image_side = dims.image_side;
  p.vocab_size = dims.vocab_size;
  p.temperature = temperature;
  const auto d = static_cast<Eigen::Index>(dims.embed_dim);
  const auto px = static_cast<Eigen::Index>(dims.image_side * dims.image_side);
  const auto v = static_cast<Eigen::Index>(dims.vocab_size);
  const auto t = static_cast<Eigen::Index>(dims.token_dim);
  p.image_weight = Eigen::MatrixXd::Zero(d, px);
  p.image_bias = Eigen::VectorXd::Zero(d);
  p.token_table = Eigen::MatrixXd::Zero(v, t);
  p.text_weight = Eigen::MatrixXd::Zero(d, t);
  p.text_bias = Eigen::VectorXd::Zero(d);
  if (dims.head_hidden > 0) p.head = ClassifierHead::zeros(dims.embed_dim, dims.head_hidden);
  return p;
}

ToyEncoderParams ToyEncoderParams::random(const ToyDims& dims, std::uint64_t seed,
                                          double temperature) {
  ToyEncoderParams p = zeros(dims, temperature);
  Rng rng(hash_combine(mix64(seed), 0x696e6974));
  auto fill = [&rng](Eigen::MatrixXd& m, double scale) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = scale * rng.normal();
    }
  };
  fill(p.image_weight, 1.0 / std::sqrt(static_cast<double>(p.image_weight.cols())));
  fill(p.token_table, 1.0);
  fill(p.text_weight, 1.0 / std::sqrt(static_cast<double>(p.text_weight.cols())));
  if (p.head) {
    const double s = 1.0 / std::sqrt(static_cast<double>(p.head->input_dim));
    for (auto& w : p.head->w1) w = s * rng.normal();
    for (auto& w : p.head->w2) w = rng.normal() / std::sqrt(static_cast<double>(p.head->hidden));
  }
  return p;
}

void ToyEncoderParams::validate() const {
  const auto d = image_bias.size();
  const bool shapes = d > 0 && image_side > 0 && vocab_size > 0 &&
                      image_weight.rows() == d &&
                      image_weight.cols() == static_cast<Eigen::Index>(image_side * image_side) &&
                      token_table.rows() == static_cast<Eigen::Index>(vocab_size) &&
                      token_table.cols() > 0 && text_weight.rows() == d &&
                      text_weight.cols() == token_table.cols() && text_bias.size() == d;
  if (!shapes) throw Error(ErrorCode::kValidation, "toy encoder parameter shapes are inconsistent");
  if (!(temperature > 0.0)) throw Error(ErrorCode::kValidation, "temperature must be positive");
  if (!image_weight.allFinite() || !image_bias.allFinite() || !token_table.allFinite() ||
      !text_weight.allFinite() || !text_bias.allFinite()) {
    throw Error(ErrorCode::kValidation, "toy encoder has non-finite parameters");
  }
  if (head) {
    head->validate();
    if (head->input_dim != static_cast<std::size_t>(d)) {
      throw Error(ErrorCode::kValidation, "classifier head input does not match embed_dim");
    }
  }
}

bool operator==(const ToyEncoderParams& a, const ToyEncoderParams& b) {
  auto same = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
  };
  return a.image_side == b.image_side && a.vocab_size == b.vocab_size &&
         a.temperature == b.temperature && same(a.image_weight, b.image_weight) &&
         same(a.image_bias, b.image_bias) && same(a.token_table, b.token_table) &&
         same(a.text_weight, b.text_weight) && same(a.text_bias, b.text_bias) && a.head == b.head;
}

// --- encoders -------------------------------------------------------------

namespace {

void check_image_shape(const ToyEncoderParams& params, const ImageTensor& image) {
  if (image.height() != params.image_side || image.width() != params.image_side ||
      image.channels() != 1) {
    throw Error(ErrorCode::kValidation,
                "toy encoder expects a " + std::to_string(params.image_side) + "x" +
                    std::to_string(params.image_side) + " grayscale image, got " +
                    std::to_string(image.height()) + "x" + std::to_string(image.width()) + "x" +
                    std::to_string(image.channels()));
  }
}

Eigen::VectorXd flatten(const ImageTensor& image) {
  auto px = image.pixels();
  Eigen::VectorXd x(static_cast<Eigen::Index>(px.size()));
  for (std::size_t i = 0; i < px.size(); ++i) x(static_cast<Eigen::Index>(i)) = px[i];
  return x;
}

Eigen::VectorXd pool_tokens(const ToyEncoderParams& params, std::span<const std::uint32_t> tokens) {
  if (tokens.empty()) throw Error(ErrorCode::kValidation, "text has no tokens");
  Eigen::VectorXd pooled = Eigen::VectorXd::Zero(params.token_table.cols());
  for (auto t : tokens) {
    if (t >= params.vocab_size) {
      throw Error(ErrorCode::kValidation, "token id " + std::to_string(t) +
                                              " outside vocabulary of size " +
                                              std::to_string(params.vocab_size));
    }
    pooled += params.token_table.row(t).transpose();
  }
  return pooled / static_cast<double>(tokens.size());
}

EmbeddingVector to_embedding(const Eigen::VectorXd& v, std::string id) {
  EmbeddingVector e{std::move(id), std::vector<float>(static_cast<std::size_t>(v.size()))};
  for (Eigen::Index i = 0; i < v.size(); ++i) e.values[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
  return e;
}

}  // namespace

Eigen::VectorXd encode_image_raw(const ToyEncoderParams& params, const ImageTensor& image) {
  check_image_shape(params, image);
  return params.image_weight * flatten(image) + params.image_bias;
}

Eigen::VectorXd encode_text_raw(const ToyEncoderParams& params, std::span<const std::uint32_t> tokens) {
  return params.text_weight * pool_tokens(params, tokens) + params.text_bias;
}

EmbeddingVector encode_image(const ToyEncoderParams& params, const ImageTensor& image,
                             std::string id) {
  return to_embedding(encode_image_raw(params, image), std::move(id));
}

EmbeddingVector encode_text(const ToyEncoderParams& params, std::span<const std::uint32_t> tokens,
                            std::string id) {
  return to_embedding(encode_text_raw(params, tokens), std::move(id));
}

// --- training -------------------------------------------------------------

std::string_view objective_name(Objective o) noexcept {
  switch (o) {
    case Objective::kInfoNce: return "infonce";
    case Objective::kTriplet: return "triplet";
    case Objective::kBce: return "bce";
  }
  return "";
}

std::optional<Objective> parse_objective(std::string_view name) noexcept {
  for (auto o : {Objective::kInfoNce, Objective::kTriplet, Objective::kBce}) {
    if (objective_name(o) == name) return o;
  }
  return std::nullopt;
}

namespace {

void add_head(ClassifierHead& acc, const ClassifierHead& g, double scale) {
  for (std::size_t i = 0; i < acc.w1.size(); ++i) acc.w1[i] += scale * g.w1[i];
  for (std::size_t i = 0; i < acc.b1.size(); ++i) acc.b1[i] += scale * g.b1[i];
  for (std::size_t i = 0; i < acc.w2.size(); ++i) acc.w2[i] += scale * g.w2[i];
  acc.b2 += scale * g.b2;
}

}  // namespace

double batch_loss_and_gradients(const ToyEncoderParams& params,
                                std::span<const ImageTensor> images,
                                std::span<const TokenSequence> texts, const TrainOptions& options,
                                ToyEncoderParams* grads) {
  if (images.size() != texts.size() || images.empty()) {
    throw Error(ErrorCode::kValidation, "batch must hold matching, nonempty image/text lists");
  }
  const auto b = static_cast<Eigen::Index>(images.size());
  const auto d = static_cast<Eigen::Index>(params.embed_dim());
  const auto px = params.image_weight.cols();
  const auto td = params.token_table.cols();

  Eigen::MatrixXd x(b, px);
  Eigen::MatrixXd pooled(b, td);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& img = images[static_cast<std::size_t>(i)];
    check_image_shape(params, img);
    x.row(i) = flatten(img).transpose();
    pooled.row(i) = pool_tokens(params, texts[static_cast<std::size_t>(i)]).transpose();
  }
  const Eigen::MatrixXd v_img = (x * params.image_weight.transpose()).rowwise() +
                                params.image_bias.transpose();
  const Eigen::MatrixXd v_txt = (pooled * params.text_weight.transpose()).rowwise() +
                                params.text_bias.transpose();

  double loss = 0.0;
  Eigen::MatrixXd g_img = Eigen::MatrixXd::Zero(b, d);
  Eigen::MatrixXd g_txt = Eigen::MatrixXd::Zero(b, d);
  std::optional<ClassifierHead> g_head;

  switch (options.objective) {
    case Objective::kInfoNce: {
      auto r = info_nce_loss(v_img, v_txt, params.temperature);
      loss = r.loss;
      g_img = std::move(r.grad_images);
      g_txt = std::move(r.grad_texts);
      break;
    }
    case Objective::kTriplet: {
      if (b < 2) throw Error(ErrorCode::kValidation, "triplet batch needs at least 2 pairs");
      const double scale = 1.0 / static_cast<double>(b);
      for (Eigen::Index i = 0; i < b; ++i) {
        const Eigen::Index neg = (i + 1) % b;
        auto r = triplet_loss(v_img.row(i).transpose(), v_txt.row(i).transpose(),
                              v_txt.row(neg).transpose(), options.margin);
        loss += scale * r.loss;
        g_img.row(i) += scale * r.grad_anchor.transpose();
        g_txt.row(i) += scale * r.grad_positive.transpose();
        g_txt.row(neg) += scale * r.grad_negative.transpose();
      }
      break;
    }
    case Objective::kBce: {
      if (!params.head) throw Error(ErrorCode::kValidation, "bce objective needs a classifier head");
      if (b < 2) throw Error(ErrorCode::kValidation, "bce batch needs at least 2 pairs");
      const double scale = 1.0 / static_cast<double>(2 * b);
      g_head = ClassifierHead::zeros(params.head->input_dim, params.head->hidden);
      for (Eigen::Index i = 0; i < b; ++i) {
        for (int label : {1, 0}) {
          const Eigen::Index t = label ? i : (i + 1) % b;
          auto r = bce_pair_loss(*params.head, v_img.row(i).transpose(), v_txt.row(t).transpose(),
                                 label);
          loss += scale * r.loss;
          g_img.row(i) += scale * r.grad_image.transpose();
          g_txt.row(t) += scale * r.grad_text.transpose();
          add_head(*g_head, r.grad_head, scale);
        }
      }
      break;
    }
  }

  if (grads) {
    *grads = params;
    grads->image_weight = g_img.transpose() * x;
    grads->image_bias = g_img.colwise().sum().transpose();
    grads->text_weight = g_txt.transpose() * pooled;
    grads->text_bias = g_txt.colwise().sum().transpose();
    const Eigen::MatrixXd g_pooled = g_txt * params.text_weight;  // b x td
    grads->token_table = Eigen::MatrixXd::Zero(params.token_table.rows(), td);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& toks = texts[static_cast<std::size_t>(i)];
      const double inv = 1.0 / static_cast<double>(toks.size());
      for (auto t : toks) grads->token_table.row(t) += inv * g_pooled.row(i);
    }
    if (g_head) {
      grads->head = std::move(g_head);
    } else if (grads->head) {
      grads->head = ClassifierHead::zeros(grads->head->input_dim, grads->head->hidden);
    }
  }
  return loss;
}

TrainResult train(ToyEncoderParams params, std::span<const ImageTensor> images,
                  std::span<const TokenSequence> texts, const TrainOptions& options) {
  if (images.empty() || images.size() != texts.size()) {
    throw Error(ErrorCode::kValidation, "training needs a nonempty paired dataset");
  }
  if (options.batch_size < 2) throw Error(ErrorCode::kValidation, "batch size must be >= 2");
  params.validate();
  if (options.objective == Objective::kBce && !params.head) {
    throw Error(ErrorCode::kValidation, "bce objective needs a classifier head");
  }

  TrainResult result;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(hash_combine(mix64(options.seed), 0x747261696e));
  ToyEncoderParams grads;
  std::vector<ImageTensor> batch_images;
  std::vector<TokenSequence> batch_texts;

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    // Fisher-Yates with our own bounded draws keeps the order portable.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += options.batch_size) {
      const std::size_t end = std::min(order.size(), start + options.batch_size);
      if (end - start < 2) continue;  // a single pair has no negatives
      batch_images.clear();
      batch_texts.clear();
      for (std::size_t i = start; i < end; ++i) {
        batch_images.push_back(images[order[i]]);
        batch_texts.push_back(texts[order[i]]);
      }
      const double loss =
          batch_loss_and_gradients(params, batch_images, batch_texts, options, &grads);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kDivergence,
                    "training diverged at epoch " + std::to_string(epoch) + ", batch " +
                        std::to_string(batches) + " (loss " + std::to_string(loss) +
                        ", lr " + std::to_string(options.learning_rate) + ")");
      }
      const double lr = options.learning_rate;
      params.image_weight -= lr * grads.image_weight;
      params.image_bias -= lr * grads.image_bias;
      params.token_table -= lr * grads.token_table;
      params.text_weight -= lr * grads.text_weight;
      params.text_bias -= lr * grads.text_bias;
      if (params.head && grads.head) add_head(*params.head, *grads.head, -lr);
      epoch_loss += loss;
      ++batches;
    }
    if (batches == 0) throw Error(ErrorCode::kValidation, "dataset too small for one batch");
    result.loss_trace.push_back(epoch_loss / static_cast<double>(batches));
  }
  result.params = std::move(params);
  return result;
}

// --- serialization --------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'X', 'T', 'O', 'Y'};

void write_matrix(byteio::Writer& w, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(static_cast<float>(m(r, c)));
  }
}

void read_matrix(byteio::Reader& r, Eigen::MatrixXd& m, std::string_view what) {
  r.require(static_cast<std::size_t>(m.size()) * 4, what);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = r.f32(what);
  }
}

void read_vector(byteio::Reader& r, Eigen::VectorXd& v, std::string_view what) {
  r.require(static_cast<std::size_t>(v.size()) * 4, what);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.f32(what);
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const ToyEncoderParams& params) {
  params.validate();
  byteio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kParamsFileVersion);
  w.u32(static_cast<std::uint32_t>(params.image_side));
  w.u32(static_cast<std::uint32_t>(params.vocab_size));
  w.u32(static_cast<std::uint32_t>(params.token_dim()));
  w.u32(static_cast<std::uint32_t>(params.embed_dim()));
  w.f32(static_cast<float>(params.temperature));
  w.u32(params.head ? static_cast<std::uint32_t>(params.head->hidden) : 0u);
  write_matrix(w, params.image_weight);
  write_matrix(w, params.image_bias);
  write_matrix(w, params.token_table);
  write_matrix(w, params.text_weight);
  write_matrix(w, params.text_bias);
  if (params.head) {
    for (double v : params.head->w1) w.f32(static_cast<float>(v));
    for (double v : params.head->b1) w.f32(static_cast<float>(v));
    for (double v : params.head->w2) w.f32(static_cast<float>(v));
    w.f32(static_cast<float>(params.head->b2));
  }
  return w.take();
}

ToyEncoderParams deserialize_params(std::span<const std::uint8_t> bytes) {
  byteio::Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorCode::kMagicMismatch, "not an XTOY parameter file");
  }
  const std::uint32_t version = r.u32("version");
  if (version != kParamsFileVersion) {
    throw Error(ErrorCode::kVersionMismatch, "unsupported XTOY version " + std::to_string(version));
  }
  ToyDims dims;
  dims.image_side = r.u32("image_side");
  dims.vocab_size = r.u32("vocab_size");
  dims.token_dim = r.u32("token_dim");
  dims.embed_dim = r.u32("embed_dim");
  const double temperature = r.f32("temperature");
  dims.head_hidden = r.u32("head_hidden");
  constexpr std::size_t kMaxDim = 1u << 16;
  for (std::size_t v : {dims.image_side, dims.vocab_size, dims.token_dim, dims.embed_dim,
                        dims.head_hidden}) {
    if (v > kMaxDim) throw Error(ErrorCode::kValidation, "XTOY header dimension out of range");
  }
  const std::uint64_t floats =
      static_cast<std::uint64_t>(dims.embed_dim) * dims.image_side * dims.image_side +
      dims.embed_dim + static_cast<std::uint64_t>(dims.vocab_size) * dims.token_dim +
      static_cast<std::uint64_t>(dims.embed_dim) * dims.token_dim + dims.embed_dim +
      (dims.head_hidden ? static_cast<std::uint64_t>(dims.head_hidden) * (dims.embed_dim + 2) + 1 : 0);
  if (floats * 4 != r.remaining()) {
    throw Error(floats * 4 > r.remaining() ? ErrorCode::kTruncated : ErrorCode::kValidation,
                "XTOY payload size does not match its header");
  }
  ToyEncoderParams p = ToyEncoderParams::zeros(dims, temperature);
  read_matrix(r, p.image_weight, "image_weight");
  read_vector(r, p.image_bias, "image_bias");
  read_matrix(r, p.token_table, "token_table");
  read_matrix(r, p.text_weight, "text_weight");
  read_vector(r, p.text_bias, "text_bias");
  if (p.head) {
    for (auto& v : p.head->w1) v = r.f32("head w1");
    for (auto& v : p.head->b1) v = r.f32("head b1");
    for (auto& v : p.head->w2) v = r.f32("head w2");
    p.head->b2 = r.f32("head b2");
  }
  p.validate();
  return p;
}

void save_params(const ToyEncoderParams& params, const std::string& path) {
  write_file_bytes(path, serialize_params(params));
}

ToyEncoderParams load_params(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return deserialize_params(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

}  // namespace xmr::toy
