#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "xmrbench/embedding.hpp"
#include "xmrbench/image.hpp"
#include "xmrbench/manifest.hpp"
#include "xmrbench/scoring.hpp"

namespace xmr::toy {

using TokenSequence = std::vector<std::uint32_t>;

struct SyntheticPairSpec {
  std::size_t n_studies = 200;
  std::size_t latent_dim = 16;
  std::size_t image_side = 32;
  /// Must be a multiple of latent_dim; vocab_size / latent_dim quantization
  /// bins per latent coordinate (at least 2).
  std::size_t vocab_size = 64;
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;

  std::size_t bins() const noexcept { return latent_dim ? vocab_size / latent_dim : 0; }
  void validate() const;
};

struct SyntheticDataset {
  std::vector<ImageTensor> images;   // one per study, side x side x 1
  std::vector<TokenSequence> texts;  // one per study
  std::vector<std::vector<double>> latents;
  Manifest manifest;                 // image refs are "images/<study_id>.png"
};

/// Each study draws a latent z ~ N(0, I). The image renders z as a grid of
/// constant-intensity cells inside the central region (a border of
/// side / 8 pixels is left as background 0.5), adds Gaussian noise, clamps
/// to [0, 1] and quantizes to 8 bits. The text holds one token per latent
/// coordinate: coordinate * bins + quantile bin of z_j.
SyntheticDataset gen_synthetic_pairs(const SyntheticPairSpec& spec);

/// "tok<id>" words for the Findings section.
std::string tokens_to_text(const TokenSequence& tokens);
/// Extracts every "tok<id>" word from free text; other words are ignored.
TokenSequence tokenize(std::string_view text);

struct ToyDims {
  std::size_t image_side = 32;
  std::size_t vocab_size = 64;
  std::size_t token_dim = 32;
  std::size_t embed_dim = 32;
  std::size_t head_hidden = 0;  // 0 = no classifier head
};

/// Affine image branch over flattened pixels and a mean-pooled token-table
/// text branch followed by an affine map, both into embed_dim.
struct ToyEncoderParams {
  std::size_t image_side = 0;
  std::size_t vocab_size = 0;
  double temperature = 0.1;
  Eigen::MatrixXd image_weight;  // embed_dim x side^2
  Eigen::VectorXd image_bias;    // embed_dim
  Eigen::MatrixXd token_table;   // vocab_size x token_dim
  Eigen::MatrixXd text_weight;   // embed_dim x token_dim
  Eigen::VectorXd text_bias;     // embed_dim
  std::optional<ClassifierHead> head;

  std::size_t embed_dim() const noexcept { return static_cast<std::size_t>(image_bias.size()); }
  std::size_t token_dim() const noexcept { return static_cast<std::size_t>(token_table.cols()); }

  static ToyEncoderParams zeros(const ToyDims& dims, double temperature = 0.1);
  /// Gaussian init scaled by 1/sqrt(fan_in); biases zero.
  static ToyEncoderParams random(const ToyDims& dims, std::uint64_t seed,
                                 double temperature = 0.1);

  /// Throws Error(kValidation) if shapes disagree, tau <= 0 or a value is
  /// non-finite.
  void validate() const;

  friend bool operator==(const ToyEncoderParams&, const ToyEncoderParams&);
};

Eigen::VectorXd encode_image_raw(const ToyEncoderParams& params, const ImageTensor& image);
Eigen::VectorXd encode_text_raw(const ToyEncoderParams& params, std::span<const std::uint32_t> tokens);

/// Throws Error(kValidation) when the image is not side x side x 1.
EmbeddingVector encode_image(const ToyEncoderParams& params, const ImageTensor& image,
                             std::string id = {});
/// Throws Error(kValidation) for a token id >= vocab_size or no tokens.
EmbeddingVector encode_text(const ToyEncoderParams& params, std::span<const std::uint32_t> tokens,
                            std::string id = {});

enum class Objective { kInfoNce, kTriplet, kBce };
std::string_view objective_name(Objective o) noexcept;
std::optional<Objective> parse_objective(std::string_view name) noexcept;

struct TrainOptions {
  Objective objective = Objective::kInfoNce;
  std::size_t epochs = 60;
  double learning_rate = 0.5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double margin = 0.5;  // triplet only
};

struct TrainResult {
  ToyEncoderParams params;
  std::vector<double> loss_trace;  // mean batch loss per epoch
};

/// Loss over one batch and exact gradients for every parameter.
/// InfoNCE uses in-batch negatives; triplet and BCE pair each row with the
/// next row's text (cyclically) as the negative.
double batch_loss_and_gradients(const ToyEncoderParams& params,
                                std::span<const ImageTensor> images,
                                std::span<const TokenSequence> texts, const TrainOptions& options,
                                ToyEncoderParams* grads);

/// Plain mini-batch gradient descent with per-epoch seeded shuffling.
/// Throws Error(kDivergence) when the loss stops being finite.
TrainResult train(ToyEncoderParams params, std::span<const ImageTensor> images,
                  std::span<const TokenSequence> texts, const TrainOptions& options);

// Parameter file: "XTOY" | u32 version=1 | u32 image_side | u32 vocab_size |
// u32 token_dim | u32 embed_dim | f32 temperature | u32 head_hidden |
// f32 arrays (row-major) image_weight, image_bias, token_table, text_weight,
// text_bias, then head w1, b1, w2, b2 when head_hidden > 0.
inline constexpr std::uint32_t kParamsFileVersion = 1;

std::vector<std::uint8_t> serialize_params(const ToyEncoderParams& params);
ToyEncoderParams deserialize_params(std::span<const std::uint8_t> bytes);
void save_params(const ToyEncoderParams& params, const std::string& path);
ToyEncoderParams load_params(const std::string& path);

}  // namespace xmr::toy
