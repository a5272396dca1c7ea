#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "xmrbench/embedding.hpp"
#include "xmrbench/image.hpp"
#include "xmrbench/manifest.hpp"
#include "xmrbench/protocol.hpp"
#include "xmrbench/toymodel.hpp"

namespace xmr {

struct ImageRequest {
  std::string_view id;  // image ref from the manifest
  std::size_t study_index = 0;
  const ImageTensor* image = nullptr;
  double ratio_percent = 0.0;
  std::size_t trial = 0;
};

struct ReportRequest {
  std::string_view id;  // study id
  std::size_t study_index = 0;
  const ReportText* report = nullptr;
};

/// The model under test: h_i for images and h_t for reports into a shared
/// space of dimension dim().
class Embedder {
 public:
  virtual ~Embedder() = default;

  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<float> embed_image(const ImageRequest& request) = 0;
  virtual std::vector<float> embed_report(const ReportRequest& request) = 0;

  /// Whether embed_* may be called from several threads at once.
  virtual bool concurrent() const { return true; }
  /// Whether image embeddings depend on pixel content.
  virtual bool reads_pixels() const { return true; }
};

struct EmbedderSpec {
  enum class Kind { kFile, kProcess, kToy, kRandom, kOracle };
  Kind kind = Kind::kOracle;

  std::string images_path;            // file
  std::string reports_path;           // file
  std::vector<std::string> command;   // process
  std::string params_path;            // toy
  std::uint64_t seed = 0;             // random
  std::size_t dim = 64;               // random

  bool normalize = false;
  std::vector<Section> text_sections = {Section::kFindings, Section::kImpression};
  std::chrono::milliseconds timeout = std::chrono::seconds(60);

  /// Grammar:
  ///   oracle
  ///   random[:seed=<u64>][,dim=<n>]
  ///   toy:<params.xtoy>
  ///   file:<images.xemb>,<reports.xemb>
  ///   process:<command line, whitespace separated>
  /// Throws Error(kUsage) on anything else.
  static EmbedderSpec parse(std::string_view text);

  /// Canonical form of the kind-specific part (round-trips through parse).
  std::string to_string() const;
};

std::string_view kind_name(EmbedderSpec::Kind kind) noexcept;

/// Gaussian vector that depends only on (seed, tag, id).
std::vector<float> random_embedding(std::uint64_t seed, std::string_view tag, std::string_view id,
                                    std::size_t dim);

/// Pixel-blind: seeded random vectors keyed by id.
class RandomEmbedder final : public Embedder {
 public:
  RandomEmbedder(std::uint64_t seed, std::size_t dim);
  std::string name() const override { return "builtin-random"; }
  std::size_t dim() const override { return dim_; }
  std::vector<float> embed_image(const ImageRequest& request) override;
  std::vector<float> embed_report(const ReportRequest& request) override;
  bool reads_pixels() const override { return false; }

 private:
  std::uint64_t seed_;
  std::size_t dim_;
};

/// Pixel-blind: one-hot of the study index for both modalities, so every
/// image matches exactly its own report.
class OracleEmbedder final : public Embedder {
 public:
  explicit OracleEmbedder(std::size_t n_studies);
  std::string name() const override { return "builtin-oracle"; }
  std::size_t dim() const override { return n_; }
  std::vector<float> embed_image(const ImageRequest& request) override;
  std::vector<float> embed_report(const ReportRequest& request) override;
  bool reads_pixels() const override { return false; }

 private:
  std::size_t n_;
};

class ToyEmbedder final : public Embedder {
 public:
  ToyEmbedder(toy::ToyEncoderParams params, std::vector<Section> text_sections);
  std::string name() const override { return "builtin-toy"; }
  std::size_t dim() const override { return params_.embed_dim(); }
  std::vector<float> embed_image(const ImageRequest& request) override;
  std::vector<float> embed_report(const ReportRequest& request) override;
  const toy::ToyEncoderParams& params() const noexcept { return params_; }

 private:
  toy::ToyEncoderParams params_;
  std::vector<Section> text_sections_;
};

/// Precomputed tables. Image keys are the image ref for unoccluded input,
/// or precomputed_image_key(ref, ratio, trial) for occluded variants.
class FileEmbedder final : public Embedder {
 public:
  FileEmbedder(EmbeddingTable images, EmbeddingTable reports);
  std::string name() const override { return "file"; }
  std::size_t dim() const override { return reports_.dim(); }
  std::vector<float> embed_image(const ImageRequest& request) override;
  std::vector<float> embed_report(const ReportRequest& request) override;
  bool reads_pixels() const override { return false; }

 private:
  EmbeddingTable images_;
  EmbeddingTable reports_;
};

/// "<ref>|p=<ratio with 2 decimals>|t=<trial>"
std::string precomputed_image_key(std::string_view ref, double ratio_percent, std::size_t trial);

/// External process speaking the length-prefixed JSON protocol. Requests
/// are serialized; images are sent as 8-bit PNG.
class ProcessEmbedder final : public Embedder {
 public:
  ProcessEmbedder(const std::vector<std::string>& command, std::vector<Section> text_sections,
                  std::chrono::milliseconds timeout);
  ~ProcessEmbedder() override;
  std::string name() const override { return name_; }
  std::size_t dim() const override { return dim_; }
  std::vector<float> embed_image(const ImageRequest& request) override;
  std::vector<float> embed_report(const ReportRequest& request) override;
  bool concurrent() const override { return false; }

  void shutdown();

 private:
  std::mutex mutex_;
  protocol::EmbedderClient client_;
  std::vector<Section> text_sections_;
  std::string name_;
  std::size_t dim_ = 0;
};

/// Wraps another embedder and L2-normalizes its outputs (zero vectors pass
/// through unchanged).
class NormalizingEmbedder final : public Embedder {
 public:
  explicit NormalizingEmbedder(std::unique_ptr<Embedder> inner) : inner_(std::move(inner)) {}
  std::string name() const override { return inner_->name(); }
  std::size_t dim() const override { return inner_->dim(); }
  std::vector<float> embed_image(const ImageRequest& request) override;
  std::vector<float> embed_report(const ReportRequest& request) override;
  bool concurrent() const override { return inner_->concurrent(); }
  bool reads_pixels() const override { return inner_->reads_pixels(); }

 private:
  std::unique_ptr<Embedder> inner_;
};

/// Builds the embedder for a spec; the manifest sizes the oracle.
std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec, const Manifest& manifest);

/// Protocol handler used by the loopback embedder tool and tests.
class LoopbackHandler : public protocol::EmbedHandler {
 public:
  enum class Mode { kFixed, kRandom, kPixelMean };
  enum class Fault { kNone, kBadJson, kWrongDim, kWrongId, kNonFinite, kExit, kHang, kError };

  struct Options {
    Mode mode = Mode::kRandom;
    std::size_t dim = 8;
    std::vector<float> fixed;       // kFixed
    std::uint64_t seed = 0;         // kRandom
    Fault fault = Fault::kNone;
    std::size_t fault_after = 0;    // embed requests served normally first
  };

  explicit LoopbackHandler(Options options);
  std::string name() const override { return "loopback"; }
  std::size_t dim() const override { return options_.dim; }
  std::vector<float> embed_image(std::string_view id, std::span<const std::uint8_t> png) override;
  std::vector<float> embed_text(std::string_view id, std::string_view text) override;

  const Options& options() const noexcept { return options_; }
  bool fault_due() const noexcept { return options_.fault != Fault::kNone && served_ >= options_.fault_after; }
  void count_served() noexcept { ++served_; }

 private:
  Options options_;
  std::size_t served_ = 0;
};

/// Runs the loopback server with fault injection on the given descriptors.
int serve_loopback(LoopbackHandler& handler, int in_fd, int out_fd);

}  // namespace xmr
