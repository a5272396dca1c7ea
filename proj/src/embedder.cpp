#include "xmrbench/embedder.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "xmrbench/error.hpp"
#include "xmrbench/rng.hpp"

namespace xmr {

std::string_view kind_name(EmbedderSpec::Kind kind) noexcept {
  switch (kind) {
    case EmbedderSpec::Kind::kFile: return "file";
    case EmbedderSpec::Kind::kProcess: return "process";
    case EmbedderSpec::Kind::kToy: return "toy";
    case EmbedderSpec::Kind::kRandom: return "random";
    case EmbedderSpec::Kind::kOracle: return "oracle";
  }
  return "";
}

namespace {

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  for (;;) {
    const std::size_t next = text.find(sep, pos);
    out.emplace_back(text.substr(pos, next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

std::uint64_t parse_u64(const std::string& s, std::string_view what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || s.front() == '-') {
    throw Error(ErrorCode::kUsage, "invalid " + std::string(what) + " '" + s + "'");
  }
  return v;
}

}  // namespace

EmbedderSpec EmbedderSpec::parse(std::string_view text) {
  const std::size_t colon = text.find(':');
  const std::string_view kind = text.substr(0, colon);
  const std::string_view rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);
  EmbedderSpec spec;
  auto usage = [&](const std::string& why) {
    return Error(ErrorCode::kUsage, "bad embedder spec '" + std::string(text) + "': " + why);
  };
  if (kind == "oracle") {
    if (!rest.empty()) throw usage("oracle takes no arguments");
    spec.kind = Kind::kOracle;
  } else if (kind == "random") {
    spec.kind = Kind::kRandom;
    if (!rest.empty()) {
      for (const auto& kv : split(rest, ',')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw usage("expected key=value, got '" + kv + "'");
        const auto key = kv.substr(0, eq);
        const auto value = kv.substr(eq + 1);
        if (key == "seed") {
          spec.seed = parse_u64(value, "seed");
        } else if (key == "dim") {
          spec.dim = parse_u64(value, "dim");
          if (spec.dim == 0) throw usage("dim must be positive");
        } else {
          throw usage("unknown key '" + key + "'");
        }
      }
    }
  } else if (kind == "toy") {
    if (rest.empty()) throw usage("toy needs a parameter file path");
    spec.kind = Kind::kToy;
    spec.params_path = std::string(rest);
  } else if (kind == "file") {
    const auto parts = split(rest, ',');
    if (parts.size() != 2 || parts[0].empty() || parts[1].empty()) {
      throw usage("file needs <images.xemb>,<reports.xemb>");
    }
    spec.kind = Kind::kFile;
    spec.images_path = parts[0];
    spec.reports_path = parts[1];
  } else if (kind == "process") {
    spec.kind = Kind::kProcess;
    std::istringstream in{std::string(rest)};
    for (std::string word; in >> word;) spec.command.push_back(word);
    if (spec.command.empty()) throw usage("process needs a command line");
  } else {
    throw usage("unknown kind '" + std::string(kind) + "'");
  }
  return spec;
}

std::string EmbedderSpec::to_string() const {
  switch (kind) {
    case Kind::kOracle: return "oracle";
    case Kind::kRandom: return "random:seed=" + std::to_string(seed) + ",dim=" + std::to_string(dim);
    case Kind::kToy: return "toy:" + params_path;
    case Kind::kFile: return "file:" + images_path + "," + reports_path;
    case Kind::kProcess: {
      std::string out = "process:";
      for (std::size_t i = 0; i < command.size(); ++i) {
        if (i) out += ' ';
        out += command[i];
      }
      return out;
    }
  }
  return {};
}

std::vector<float> random_embedding(std::uint64_t seed, std::string_view tag, std::string_view id,
                                    std::size_t dim) {
  Rng rng(hash_combine(hash_combine(mix64(seed), hash_bytes(tag)), hash_bytes(id)));
  std::vector<float> v(dim);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

// --- builtin embedders ----------------------------------------------------

RandomEmbedder::RandomEmbedder(std::uint64_t seed, std::size_t dim) : seed_(seed), dim_(dim) {
  if (dim == 0) throw Error(ErrorCode::kValidation, "random embedder dim must be positive");
}

std::vector<float> RandomEmbedder::embed_image(const ImageRequest& request) {
  return random_embedding(seed_, "image", request.id, dim_);
}

std::vector<float> RandomEmbedder::embed_report(const ReportRequest& request) {
  return random_embedding(seed_, "report", request.id, dim_);
}

OracleEmbedder::OracleEmbedder(std::size_t n_studies) : n_(n_studies) {
  if (n_ == 0) throw Error(ErrorCode::kValidation, "oracle embedder needs at least one study");
}

std::vector<float> OracleEmbedder::embed_image(const ImageRequest& request) {
  std::vector<float> v(n_, 0.0f);
  v.at(request.study_index) = 1.0f;
  return v;
}

std::vector<float> OracleEmbedder::embed_report(const ReportRequest& request) {
  std::vector<float> v(n_, 0.0f);
  v.at(request.study_index) = 1.0f;
  return v;
}

ToyEmbedder::ToyEmbedder(toy::ToyEncoderParams params, std::vector<Section> text_sections)
    : params_(std::move(params)), text_sections_(std::move(text_sections)) {
  params_.validate();
}

std::vector<float> ToyEmbedder::embed_image(const ImageRequest& request) {
  return toy::encode_image(params_, *request.image).values;
}

std::vector<float> ToyEmbedder::embed_report(const ReportRequest& request) {
  const auto tokens = toy::tokenize(request.report->compose(text_sections_));
  return toy::encode_text(params_, tokens).values;
}

std::string precomputed_image_key(std::string_view ref, double ratio_percent, std::size_t trial) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "|p=%.2f|t=%zu", ratio_percent, trial);
  return std::string(ref) + buf;
}

FileEmbedder::FileEmbedder(EmbeddingTable images, EmbeddingTable reports)
    : images_(std::move(images)), reports_(std::move(reports)) {
  if (!images_.empty() && images_.dim() != reports_.dim()) {
    throw Error(ErrorCode::kValidation, "image and report embedding files differ in dim");
  }
}

std::vector<float> FileEmbedder::embed_image(const ImageRequest& request) {
  const auto key = precomputed_image_key(request.id, request.ratio_percent, request.trial);
  if (const auto* e = images_.find(key)) return e->values;
  if (request.ratio_percent == 0.0) {
    if (const auto* e = images_.find(request.id)) return e->values;
  }
  throw Error(ErrorCode::kEmbedderFailure, "no precomputed embedding for image '" + key + "'");
}

std::vector<float> FileEmbedder::embed_report(const ReportRequest& request) {
  if (const auto* e = reports_.find(request.id)) return e->values;
  throw Error(ErrorCode::kEmbedderFailure,
              "no precomputed embedding for report '" + std::string(request.id) + "'");
}

ProcessEmbedder::ProcessEmbedder(const std::vector<std::string>& command,
                                 std::vector<Section> text_sections,
                                 std::chrono::milliseconds timeout)
    : client_(command, timeout), text_sections_(std::move(text_sections)) {
  const auto& info = client_.hello();
  name_ = info.name;
  dim_ = info.dim;
}

ProcessEmbedder::~ProcessEmbedder() = default;

std::vector<float> ProcessEmbedder::embed_image(const ImageRequest& request) {
  const auto png = encode_png(*request.image);
  std::lock_guard lock(mutex_);
  return client_.embed_image(request.id, png);
}

std::vector<float> ProcessEmbedder::embed_report(const ReportRequest& request) {
  const auto text = request.report->compose(text_sections_);
  std::lock_guard lock(mutex_);
  return client_.embed_text(request.id, text);
}

void ProcessEmbedder::shutdown() {
  std::lock_guard lock(mutex_);
  client_.shutdown();
}

namespace {
std::vector<float> l2_normalized(std::vector<float> v) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  if (s == 0.0) return v;
  const double inv = 1.0 / std::sqrt(s);
  for (auto& x : v) x = static_cast<float>(x * inv);
  return v;
}
}  // namespace

std::vector<float> NormalizingEmbedder::embed_image(const ImageRequest& request) {
  return l2_normalized(inner_->embed_image(request));
}

std::vector<float> NormalizingEmbedder::embed_report(const ReportRequest& request) {
  return l2_normalized(inner_->embed_report(request));
}

std::unique_ptr<Embedder> make_embedder(const EmbedderSpec& spec, const Manifest& manifest) {
  std::unique_ptr<Embedder> e;
  switch (spec.kind) {
    case EmbedderSpec::Kind::kOracle:
      e = std::make_unique<OracleEmbedder>(manifest.report_count());
      break;
    case EmbedderSpec::Kind::kRandom:
      e = std::make_unique<RandomEmbedder>(spec.seed, spec.dim);
      break;
    case EmbedderSpec::Kind::kToy:
      e = std::make_unique<ToyEmbedder>(toy::load_params(spec.params_path), spec.text_sections);
      break;
    case EmbedderSpec::Kind::kFile:
      e = std::make_unique<FileEmbedder>(read_embeddings(spec.images_path),
                                         read_embeddings(spec.reports_path));
      break;
    case EmbedderSpec::Kind::kProcess:
      e = std::make_unique<ProcessEmbedder>(spec.command, spec.text_sections, spec.timeout);
      break;
  }
  if (spec.normalize) e = std::make_unique<NormalizingEmbedder>(std::move(e));
  return e;
}

// --- loopback -------------------------------------------------------------

LoopbackHandler::LoopbackHandler(Options options) : options_(std::move(options)) {
  if (options_.mode == Mode::kFixed) options_.dim = options_.fixed.size();
  if (options_.dim == 0) throw Error(ErrorCode::kUsage, "loopback embedder needs dim > 0");
}

std::vector<float> LoopbackHandler::embed_image(std::string_view id,
                                                std::span<const std::uint8_t> png) {
  switch (options_.mode) {
    case Mode::kFixed: return options_.fixed;
    case Mode::kRandom: return random_embedding(options_.seed, "image", id, options_.dim);
    case Mode::kPixelMean: {
      // Mean intensity of `dim` horizontal bands.
      const ImageTensor img = decode_image(png);
      std::vector<float> out(options_.dim, 0.0f);
      const std::size_t row_len = img.width() * img.channels();
      for (std::size_t b = 0; b < options_.dim; ++b) {
        const std::size_t r0 = b * img.height() / options_.dim;
        const std::size_t r1 = std::max(r0 + 1, (b + 1) * img.height() / options_.dim);
        double s = 0.0;
        for (std::size_t r = r0; r < std::min(r1, img.height()); ++r) {
          for (std::size_t i = 0; i < row_len; ++i) s += img.pixels()[r * row_len + i];
        }
        out[b] = static_cast<float>(s / static_cast<double>((r1 - r0) * row_len));
      }
      return out;
    }
  }
  return {};
}

std::vector<float> LoopbackHandler::embed_text(std::string_view id, std::string_view) {
  if (options_.mode == Mode::kFixed) return options_.fixed;
  return random_embedding(options_.seed, "report", id, options_.dim);
}

int serve_loopback(LoopbackHandler& handler, int in_fd, int out_fd) {
  using nlohmann::json;
  for (;;) {
    std::optional<std::string> payload;
    try {
      payload = protocol::read_frame(in_fd);
    } catch (const Error&) {
      return 1;
    }
    if (!payload) return 0;

    bool is_embed = false;
    std::string id;
    try {
      const auto req = json::parse(*payload);
      if (req.is_object() && req.contains("op") && req["op"].is_string()) {
        const auto op = req["op"].get<std::string>();
        is_embed = op == "embed_image" || op == "embed_text";
        if (req.contains("id") && req["id"].is_string()) id = req["id"].get<std::string>();
      }
    } catch (const json::parse_error&) {
    }

    std::string response;
    if (is_embed && handler.fault_due()) {
      using Fault = LoopbackHandler::Fault;
      switch (handler.options().fault) {
        case Fault::kNone: break;
        case Fault::kBadJson: response = "{\"id\": oops"; break;
        case Fault::kWrongDim:
          response = json{{"id", id}, {"embedding", std::vector<float>(handler.dim() + 1, 0.5f)}}.dump();
          break;
        case Fault::kWrongId:
          response = json{{"id", id + "-other"}, {"embedding", std::vector<float>(handler.dim(), 0.5f)}}.dump();
          break;
        case Fault::kNonFinite: {
          json arr = json::array();
          for (std::size_t i = 0; i < handler.dim(); ++i) arr.push_back(i == 0 ? json("nan") : json(0.0));
          response = json{{"id", id}, {"embedding", arr}}.dump();
          break;
        }
        case Fault::kExit: return 3;
        case Fault::kHang:
          for (;;) std::this_thread::sleep_for(std::chrono::seconds(1));
        case Fault::kError: response = json{{"error", "injected failure"}}.dump(); break;
      }
    } else {
      bool shutdown = false;
      response = protocol::handle_request(handler, *payload, shutdown);
      if (shutdown) return 0;
    }
    if (is_embed) handler.count_served();
    try {
      protocol::write_frame(out_fd, response);
    } catch (const Error&) {
      return 1;
    }
  }
}

}  // namespace xmr
