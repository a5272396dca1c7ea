// Reference embedder process for the stdin/stdout protocol. Used by the
// conformance tests and as a template for adapters around real models.

#include <unistd.h>

#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "xmrbench/embedder.hpp"
#include "xmrbench/error.hpp"

int main(int argc, char** argv) {
  using xmr::LoopbackHandler;
  CLI::App app{"Loopback embedder speaking the length-prefixed JSON protocol"};
  LoopbackHandler::Options opts;
  std::string mode = "random";
  std::string fault = "none";
  app.add_option("--mode", mode)->check(CLI::IsMember({"fixed", "random", "pixel-mean"}));
  app.add_option("--dim", opts.dim)->check(CLI::PositiveNumber);
  app.add_option("--vector", opts.fixed, "Fixed embedding (mode fixed)")->delimiter(',');
  app.add_option("--seed", opts.seed);
  app.add_option("--fault", fault)
      ->check(CLI::IsMember({"none", "bad-json", "wrong-dim", "wrong-id", "non-finite", "exit",
                             "hang", "error"}));
  app.add_option("--fault-after", opts.fault_after, "Embed requests answered before the fault");
  CLI11_PARSE(app, argc, argv);

  static const std::map<std::string, LoopbackHandler::Mode> modes = {
      {"fixed", LoopbackHandler::Mode::kFixed},
      {"random", LoopbackHandler::Mode::kRandom},
      {"pixel-mean", LoopbackHandler::Mode::kPixelMean}};
  static const std::map<std::string, LoopbackHandler::Fault> faults = {
      {"none", LoopbackHandler::Fault::kNone},       {"bad-json", LoopbackHandler::Fault::kBadJson},
      {"wrong-dim", LoopbackHandler::Fault::kWrongDim}, {"wrong-id", LoopbackHandler::Fault::kWrongId},
      {"non-finite", LoopbackHandler::Fault::kNonFinite}, {"exit", LoopbackHandler::Fault::kExit},
      {"hang", LoopbackHandler::Fault::kHang},       {"error", LoopbackHandler::Fault::kError}};
  opts.mode = modes.at(mode);
  opts.fault = faults.at(fault);
  if (opts.mode == LoopbackHandler::Mode::kFixed && opts.fixed.empty()) {
    std::cerr << "--mode fixed needs --vector\n";
    return 2;
  }
  try {
    LoopbackHandler handler(opts);
    return xmr::serve_loopback(handler, STDIN_FILENO, STDOUT_FILENO);
  } catch (const xmr::Error& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
}
