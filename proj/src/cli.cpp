#include "xmrbench/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "xmrbench/error.hpp"
#include "xmrbench/occlusion.hpp"
#include "xmrbench/parallel.hpp"
#include "xmrbench/toymodel.hpp"

namespace xmr::cli {

using nlohmann::json;

namespace {

constexpr const char* kToolName = "xmrbench";

std::string_view mode_name(OcclusionMode m) {
  return m == OcclusionMode::kPerImage ? "per-image" : "per-pair";
}

std::uint64_t seed_from_env_or(std::uint64_t fallback) {
  const char* env = std::getenv("XMRBENCH_SEED");
  if (!env || !*env) return fallback;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || env[0] == '-') {
    throw Error(ErrorCode::kUsage, std::string("XMRBENCH_SEED is not a u64: ") + env);
  }
  return v;
}

std::vector<Section> parse_sections(const std::string& list) {
  std::vector<Section> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto next = std::min(list.find(',', pos), list.size());
    const auto name = list.substr(pos, next - pos);
    const auto s = parse_section(name);
    if (!s) throw Error(ErrorCode::kUsage, "unknown report section '" + name + "'");
    out.push_back(*s);
    pos = next + 1;
  }
  return out;
}

std::string join_sections(const std::vector<Section>& sections) {
  std::string out;
  for (auto s : sections) {
    if (!out.empty()) out += ',';
    out += section_key(s);
  }
  return out;
}

void setup_logging(int verbosity) {
  auto logger = spdlog::get(kToolName);
  if (!logger) logger = spdlog::stderr_color_mt(kToolName);
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  spdlog::set_level(verbosity < 0 ? spdlog::level::warn
                                  : verbosity == 0 ? spdlog::level::info : spdlog::level::debug);
}

// Options shared by parse_run_args and the dispatcher.
struct RunOptions {
  std::string embedder;
  std::optional<std::uint64_t> seed;
  std::string text_sections = "findings,impression";
  double timeout_s = 60.0;
  std::string mode = "per-image";
  bool normalize = false;
  int verbose = 0;
  bool quiet = false;
};

void add_run_options(CLI::App& app, RunConfig& cfg, RunOptions& opt) {
  app.add_option("--manifest", cfg.manifest_path, "Line-delimited JSON manifest")->required();
  app.add_option("--embedder", opt.embedder,
                 "oracle | random[:seed=S,dim=D] | toy:<params> | file:<img.xemb>,<rep.xemb> | "
                 "process:<command>")
      ->required()
      ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
  app.add_option("--scorer", cfg.scorer, "Retrieval score")
      ->check(CLI::IsMember({"cosine", "classifier"}));
  app.add_option("--head", cfg.head_path, "XTOY file providing the classifier head");
  app.add_option("--ratios", cfg.ratios, "Occlusion percentages")->delimiter(',');
  app.add_option("--k", cfg.k_values, "Recall cutoffs")->delimiter(',');
  app.add_option("--seed", opt.seed, "Base seed (falls back to XMRBENCH_SEED, then 0)");
  app.add_option("--trials", cfg.trials, "Occlusion draws per image")->check(CLI::PositiveNumber);
  app.add_option("--occlusion-mode", opt.mode, "per-image or per-pair")
      ->check(CLI::IsMember({"per-image", "per-pair"}));
  app.add_option("--fill", cfg.fill_value, "Occlusion fill value")->check(CLI::Range(0.0, 1.0));
  app.add_option("--out", cfg.out_path, "Report path (.csv or .json)")->required();
  app.add_option("--dump-scores", cfg.dump_scores_path,
                 "Write image_id,report_id,score at the first ratio");
  app.add_option("--jobs", cfg.jobs, "Worker threads (0 = all cores)");
  app.add_flag("--normalize", opt.normalize, "L2-normalize embeddings");
  app.add_option("--text-sections", opt.text_sections, "Report sections sent as text");
  app.add_option("--embed-timeout", opt.timeout_s, "Seconds per external request")
      ->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", opt.verbose, "More logging");
  app.add_flag("-q,--quiet", opt.quiet, "Warnings only");
}

void finish_run_config(RunConfig& cfg, const RunOptions& opt) {
  cfg.embedder = EmbedderSpec::parse(opt.embedder);
  cfg.embedder.normalize = opt.normalize;
  cfg.embedder.text_sections = parse_sections(opt.text_sections);
  cfg.embedder.timeout = std::chrono::milliseconds(static_cast<long long>(opt.timeout_s * 1000.0));
  cfg.seed = opt.seed ? *opt.seed : seed_from_env_or(0);
  cfg.occlusion_mode = opt.mode == "per-pair" ? OcclusionMode::kPerPair : OcclusionMode::kPerImage;
  cfg.format = report_format_for_path(cfg.out_path);
  cfg.verbosity = opt.quiet ? -1 : opt.verbose;
  if (cfg.scorer == "classifier" && cfg.head_path.empty() &&
      cfg.embedder.kind != EmbedderSpec::Kind::kToy) {
    throw Error(ErrorCode::kUsage, "--scorer classifier needs --head unless the embedder is toy");
  }
  BenchConfig check;
  check.occlusion_ratios = cfg.ratios;
  check.k_values = cfg.k_values;
  check.trials_per_image = cfg.trials;
  check.fill_value = cfg.fill_value;
  try {
    check.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kUsage, e.what());
  }
}

std::vector<const char*> to_argv(const std::string& prog, const std::vector<std::string>& args) {
  std::vector<const char*> argv{prog.c_str()};
  for (const auto& a : args) argv.push_back(a.c_str());
  return argv;
}

}  // namespace

json RunConfig::to_json() const {
  return json{{"manifest", manifest_path},
              {"embedder", embedder.to_string()},
              {"normalize", embedder.normalize},
              {"text_sections", join_sections(embedder.text_sections)},
              {"scorer", scorer},
              {"head", head_path},
              {"ratios", ratios},
              {"k", k_values},
              {"seed", seed},
              {"trials", trials},
              {"occlusion_mode", mode_name(occlusion_mode)},
              {"fill", fill_value},
              {"out", out_path}};
}

RunConfig parse_run_args(const std::vector<std::string>& args) {
  CLI::App app{"run"};
  RunConfig cfg;
  RunOptions opt;
  add_run_options(app, cfg, opt);
  const std::string prog = "run";
  auto argv = to_argv(prog, args);
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    throw Error(ErrorCode::kUsage, e.what());
  }
  finish_run_config(cfg, opt);
  return cfg;
}

namespace {

json provenance(const json& config) {
  return json{{"tool", kToolName}, {"version", XMRBENCH_VERSION}, {"config", config}};
}

void dump_scores(const Dataset& data, Embedder& embedder, const EmbeddingTable& reports,
                 const BenchConfig& bench, const std::string& path) {
  const double ratio = bench.occlusion_ratios.front();
  EmbeddingTable images(embedder.dim());
  const auto& m = data.manifest;
  for (std::size_t i = 0; i < m.image_count(); ++i) {
    const OcclusionSpec spec{ratio, occlusion_seed(bench.seed, i, ratio, 0), bench.fill_value};
    const auto occluded = apply_occlusion(data.images[i], spec);
    images.add(m.image_ref(i),
               embedder.embed_image({m.image_ref(i), m.images()[i].study_index, &occluded, ratio, 0}));
  }
  const auto matrix = score_all(images, reports, bench.scorer, bench.jobs);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot open " + path + " for writing");
  out << "image_id,report_id,score\n";
  char buf[32];
  for (std::size_t r = 0; r < matrix.row_count(); ++r) {
    for (std::size_t c = 0; c < matrix.col_count(); ++c) {
      std::snprintf(buf, sizeof buf, "%.9g", matrix.at(r, c));
      out << matrix.rows[r] << ',' << matrix.cols[c] << ',' << buf << '\n';
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path);
}

int do_run(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const Manifest raw = load_manifest(cfg.manifest_path);
  Manifest manifest = filter_studies(raw);
  spdlog::info("manifest: {} studies / {} images; kept {} studies / {} images after filtering",
               raw.report_count(), raw.image_count(), manifest.report_count(),
               manifest.image_count());
  if (manifest.image_count() == 0) {
    throw Error(ErrorCode::kValidation, "no studies left after filtering");
  }
  const std::size_t jobs = cfg.jobs == 0 ? default_jobs() : cfg.jobs;
  Dataset data = load_dataset(std::move(manifest), jobs);

  auto embedder = make_embedder(cfg.embedder, data.manifest);
  spdlog::info("embedder '{}' (dim {})", embedder->name(), embedder->dim());

  BenchConfig bench;
  bench.occlusion_ratios = cfg.ratios;
  bench.k_values = cfg.k_values;
  bench.seed = cfg.seed;
  bench.trials_per_image = cfg.trials;
  bench.occlusion_mode = cfg.occlusion_mode;
  bench.fill_value = cfg.fill_value;
  bench.jobs = jobs;
  if (cfg.scorer == "classifier") {
    std::optional<ClassifierHead> head;
    if (!cfg.head_path.empty()) {
      head = toy::load_params(cfg.head_path).head;
    } else {
      head = toy::load_params(cfg.embedder.params_path).head;
    }
    if (!head) throw Error(ErrorCode::kValidation, "parameter file carries no classifier head");
    bench.scorer = Scorer::classifier(std::make_shared<const ClassifierHead>(std::move(*head)));
  }

  const RecallGrid grid = sweep(data, *embedder, bench, [](double ratio, double seconds) {
    spdlog::info("ratio {:6.2f}%: done in {:.2f}s", ratio, seconds);
  });
  if (!cfg.dump_scores_path.empty()) {
    const EmbeddingTable reports = embed_reports(data, *embedder, bench.jobs);
    dump_scores(data, *embedder, reports, bench, cfg.dump_scores_path);
  }
  if (auto* process = dynamic_cast<ProcessEmbedder*>(embedder.get())) process->shutdown();

  emit_report(grid, cfg.format, cfg.out_path, provenance(cfg.to_json()));
  spdlog::info("wrote {} ({:.2f}s total)", cfg.out_path,
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

}  // namespace

int main_entry(int argc, const char* const* argv) {
  CLI::App app{"Occlusion robustness benchmark for image-text retrieval models", "bench"};
  app.set_version_flag("--version", XMRBENCH_VERSION);
  app.require_subcommand(1);

  // run
  RunConfig run_cfg;
  RunOptions run_opt;
  auto* run = app.add_subcommand("run", "Run the occlusion retrieval sweep");
  add_run_options(*run, run_cfg, run_opt);

  // occlude
  std::string occ_in, occ_out;
  double occ_p = 0.0;
  std::optional<std::uint64_t> occ_seed;
  float occ_fill = 0.0f;
  auto* occlude = app.add_subcommand("occlude", "Occlude one image for inspection");
  occlude->add_option("--in", occ_in, "Input PNG/JPEG")->required();
  occlude->add_option("--p", occ_p, "Occluded area in percent")->required()->check(CLI::Range(0.0, 100.0));
  occlude->add_option("--seed", occ_seed, "Placement seed");
  occlude->add_option("--fill", occ_fill, "Fill value")->check(CLI::Range(0.0, 1.0));
  occlude->add_option("--out", occ_out, "Output path")->required();

  // toy-gen / toy-train
  toy::SyntheticPairSpec gen_spec;
  std::optional<std::uint64_t> gen_seed;
  std::string gen_dir;
  auto add_gen_options = [&](CLI::App* sub) {
    sub->add_option("--studies", gen_spec.n_studies, "Number of studies")->check(CLI::PositiveNumber);
    sub->add_option("--latent", gen_spec.latent_dim, "Latent dimension");
    sub->add_option("--side", gen_spec.image_side, "Image side in pixels");
    sub->add_option("--vocab", gen_spec.vocab_size, "Vocabulary size");
    sub->add_option("--noise", gen_spec.noise_sigma, "Pixel noise sigma");
    sub->add_option("--seed", gen_seed, "Seed");
  };
  auto* toy_gen = app.add_subcommand("toy-gen", "Write a synthetic paired dataset");
  add_gen_options(toy_gen);
  toy_gen->add_option("--out-dir", gen_dir, "Output directory")->required();

  toy::TrainOptions train_opts;
  std::string objective = "infonce";
  std::string train_out;
  toy::ToyDims dims;
  double tau = 0.1;
  std::optional<std::size_t> head_hidden;
  auto* toy_train = app.add_subcommand("toy-train", "Train the toy dual encoder");
  add_gen_options(toy_train);
  toy_train->add_option("--objective", objective, "infonce | triplet | bce")
      ->check(CLI::IsMember({"infonce", "triplet", "bce"}));
  toy_train->add_option("--epochs", train_opts.epochs, "Epochs");
  toy_train->add_option("--lr", train_opts.learning_rate, "Learning rate")->check(CLI::NonNegativeNumber);
  toy_train->add_option("--batch", train_opts.batch_size, "Batch size");
  toy_train->add_option("--margin", train_opts.margin, "Triplet margin")->check(CLI::NonNegativeNumber);
  toy_train->add_option("--embed-dim", dims.embed_dim, "Embedding dimension")->check(CLI::PositiveNumber);
  toy_train->add_option("--token-dim", dims.token_dim, "Token embedding dimension")->check(CLI::PositiveNumber);
  toy_train->add_option("--tau", tau, "Contrastive temperature")->check(CLI::PositiveNumber);
  toy_train->add_option("--head-hidden", head_hidden, "Classifier head width (default 16 for bce)");
  toy_train->add_option("--out", train_out, "Parameter file")->required();

  // random-baseline
  std::size_t rb_n = 0, rb_k = 0, rb_queries = 0, rb_trials = 1000;
  bool rb_mc = false;
  std::optional<std::uint64_t> rb_seed;
  std::size_t rb_jobs = 0;
  auto* baseline = app.add_subcommand("random-baseline", "Chance-level Recall@k");
  baseline->add_option("--n", rb_n, "Number of reports")->required()->check(CLI::PositiveNumber);
  baseline->add_option("--k", rb_k, "Cutoff")->required()->check(CLI::PositiveNumber);
  baseline->add_flag("--mc", rb_mc, "Also run the Monte-Carlo simulation");
  baseline->add_option("--queries", rb_queries, "Queries per trial (default n)");
  baseline->add_option("--trials", rb_trials, "Simulation trials")->check(CLI::PositiveNumber);
  baseline->add_option("--seed", rb_seed, "Seed");
  baseline->add_option("--jobs", rb_jobs, "Worker threads (0 = all cores)");

  // inspect-embeddings
  std::string inspect_path;
  std::size_t inspect_head = 5;
  auto* inspect = app.add_subcommand("inspect-embeddings", "Summarize an XEMB file");
  inspect->add_option("path", inspect_path, "Embedding file")->required();
  inspect->add_option("--head", inspect_head, "Ids to list");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_code_for(ErrorCode::kUsage);
  }

  try {
    if (*run) {
      finish_run_config(run_cfg, run_opt);
      setup_logging(run_cfg.verbosity);
      return do_run(run_cfg);
    }
    setup_logging(0);
    if (*occlude) {
      const auto bytes = read_file_bytes(occ_in);
      const auto format = detect_format(bytes);
      const ImageTensor image = decode_image(bytes);
      const OcclusionSpec spec{occ_p, occ_seed ? *occ_seed : seed_from_env_or(0), occ_fill};
      const auto block = place_block(spec, image.height(), image.width());
      write_file_bytes(occ_out, encode_image(apply_occlusion(image, spec), format));
      spdlog::info("block {}x{} at (row {}, col {})", block.block_h, block.block_w, block.top,
                   block.left);
      return 0;
    }
    if (*toy_gen || *toy_train) {
      gen_spec.seed = gen_seed ? *gen_seed : seed_from_env_or(0);
      const auto ds = toy::gen_synthetic_pairs(gen_spec);
      if (*toy_gen) {
        namespace fs = std::filesystem;
        fs::create_directories(fs::path(gen_dir) / "images");
        for (std::size_t i = 0; i < ds.images.size(); ++i) {
          write_file_bytes((fs::path(gen_dir) / ds.manifest.image_ref(i)).string(),
                           encode_png(ds.images[i]));
        }
        save_manifest(ds.manifest, (fs::path(gen_dir) / "manifest.jsonl").string());
        spdlog::info("wrote {} studies to {}", ds.manifest.report_count(), gen_dir);
        return 0;
      }
      train_opts.objective = *toy::parse_objective(objective);
      train_opts.seed = gen_spec.seed;
      dims.image_side = gen_spec.image_side;
      dims.vocab_size = gen_spec.vocab_size;
      dims.head_hidden = head_hidden ? *head_hidden
                                     : (train_opts.objective == toy::Objective::kBce ? 16 : 0);
      auto init = toy::ToyEncoderParams::random(dims, gen_spec.seed, tau);
      const auto result = toy::train(std::move(init), ds.images, ds.texts, train_opts);
      if (!result.loss_trace.empty()) {
        spdlog::info("loss {:.4f} -> {:.4f} over {} epochs", result.loss_trace.front(),
                     result.loss_trace.back(), result.loss_trace.size());
      }
      toy::save_params(result.params, train_out);
      return 0;
    }
    if (*baseline) {
      const double analytic = random_baseline_analytic(rb_n, std::min(rb_k, rb_n));
      std::cout << "analytic " << format_percent(analytic) << '\n';
      if (rb_mc) {
        const auto est = random_baseline_monte_carlo(
            rb_n, rb_k, rb_queries ? rb_queries : rb_n, rb_trials,
            rb_seed ? *rb_seed : seed_from_env_or(0), rb_jobs);
        char buf[96];
        std::snprintf(buf, sizeof buf, "monte-carlo %.4f stderr %.4f", est.mean, est.std_error);
        std::cout << buf << '\n';
      }
      return 0;
    }
    if (*inspect) {
      const auto table = read_embeddings(inspect_path);
      double lo = 0.0, hi = 0.0, sum = 0.0;
      for (std::size_t i = 0; i < table.size(); ++i) {
        const double n = l2_norm(table[i].values);
        lo = i == 0 ? n : std::min(lo, n);
        hi = i == 0 ? n : std::max(hi, n);
        sum += n;
      }
      std::cout << "entries " << table.size() << "\ndim " << table.dim() << '\n';
      if (!table.empty()) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "norm min %.6g mean %.6g max %.6g", lo,
                      sum / static_cast<double>(table.size()), hi);
        std::cout << buf << '\n';
      }
      for (std::size_t i = 0; i < std::min(inspect_head, table.size()); ++i) {
        std::cout << "id " << table[i].id << '\n';
      }
      return 0;
    }
  } catch (const Error& e) {
    spdlog::error("{} error: {}", to_string(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    spdlog::error("internal error: {}", e.what());
    return exit_code_for(ErrorCode::kInternal);
  }
  return exit_code_for(ErrorCode::kUsage);
}

}  // namespace xmr::cli
