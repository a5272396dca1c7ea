#include "xmrbench/protocol.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <thread>

#include "xmrbench/byteio.hpp"

extern char** environ;

namespace xmr::protocol {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

std::vector<std::uint8_t> encode_frame(std::string_view payload) {
  if (payload.size() > kMaxFrameBytes) {
    throw Error(ErrorCode::kValidation, "protocol message exceeds frame limit");
  }
  byteio::Writer w;
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.text(payload);
  return w.take();
}

void write_frame(int fd, std::string_view payload) {
  const auto frame = encode_frame(payload);
  std::size_t off = 0;
  while (off < frame.size()) {
    const ssize_t n = ::write(fd, frame.data() + off, frame.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kProcessExited,
                  std::string("write to embedder failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

namespace {

// Returns bytes read (0 only at EOF).
std::size_t read_some(int fd, std::uint8_t* dst, std::size_t n,
                      std::optional<Clock::time_point> deadline) {
  for (;;) {
    if (deadline) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now());
      if (left.count() <= 0) throw Error(ErrorCode::kTimeout, "embedder response timed out");
      pollfd pfd{fd, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), INT32_MAX)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorCode::kIo, std::string("poll failed: ") + std::strerror(errno));
      }
      if (rc == 0) throw Error(ErrorCode::kTimeout, "embedder response timed out");
    }
    const ssize_t got = ::read(fd, dst, n);
    if (got < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIo, std::string("read failed: ") + std::strerror(errno));
    }
    return static_cast<std::size_t>(got);
  }
}

void read_exact(int fd, std::uint8_t* dst, std::size_t n,
                std::optional<Clock::time_point> deadline) {
  std::size_t off = 0;
  while (off < n) {
    const std::size_t got = read_some(fd, dst + off, n - off, deadline);
    if (got == 0) throw Error(ErrorCode::kProcessExited, "stream closed inside a frame");
    off += got;
  }
}

}  // namespace

std::optional<std::string> read_frame(int fd, std::optional<Clock::time_point> deadline) {
  std::uint8_t header[4];
  const std::size_t first = read_some(fd, header, 4, deadline);
  if (first == 0) return std::nullopt;
  read_exact(fd, header + first, 4 - first, deadline);
  std::uint32_t len;
  std::memcpy(&len, header, 4);
  if (len > kMaxFrameBytes) {
    throw Error(ErrorCode::kMalformedResponse,
                "frame length " + std::to_string(len) + " exceeds limit");
  }
  std::string payload(len, '\0');
  read_exact(fd, reinterpret_cast<std::uint8_t*>(payload.data()), len, deadline);
  return payload;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw Error(ErrorCode::kParse, "base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) throw Error(ErrorCode::kParse, "invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

json hello_request() { return {{"op", "hello"}}; }

json embed_image_request(std::string_view id, std::span<const std::uint8_t> png) {
  return {{"op", "embed_image"}, {"id", id}, {"png_b64", base64_encode(png)}};
}

json embed_text_request(std::string_view id, std::string_view text) {
  return {{"op", "embed_text"}, {"id", id}, {"text", text}};
}

json shutdown_request() { return {{"op", "shutdown"}}; }

// --- ChildProcess ---------------------------------------------------------

ChildProcess::ChildProcess(const std::vector<std::string>& argv) {
  if (argv.empty()) throw Error(ErrorCode::kUsage, "empty embedder command line");
  // Writes to a dead child must surface as EPIPE, not kill the harness.
  ::signal(SIGPIPE, SIG_IGN);

  int to_child[2];
  int from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) {
    throw Error(ErrorCode::kIo, std::string("pipe failed: ") + std::strerror(errno));
  }
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw Error(ErrorCode::kIo, std::string("pipe failed: ") + std::strerror(errno));
  }
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);
  const int rc = ::posix_spawnp(&pid_, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(to_child[0]);
  ::close(from_child[1]);
  if (rc != 0) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    pid_ = -1;
    throw Error(ErrorCode::kIo, "cannot spawn '" + argv[0] + "': " + std::strerror(rc));
  }
  in_fd_ = to_child[1];
  out_fd_ = from_child[0];
}

ChildProcess::~ChildProcess() {
  close_stdin();
  if (running() && !wait_for_exit(std::chrono::milliseconds(2000))) kill();
  if (out_fd_ >= 0) ::close(out_fd_);
}

void ChildProcess::close_stdin() {
  if (in_fd_ >= 0) {
    ::close(in_fd_);
    in_fd_ = -1;
  }
}

std::optional<int> ChildProcess::wait_for_exit(std::chrono::milliseconds timeout) {
  if (!running()) return status_;
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    int status = 0;
    const pid_t r = ::waitpid(pid_, &status, WNOHANG);
    if (r == pid_) {
      status_ = status;
      pid_ = -1;
      return status_;
    }
    if (r < 0 && errno != EINTR) {
      pid_ = -1;
      return std::nullopt;
    }
    if (Clock::now() >= deadline) return std::nullopt;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
}

void ChildProcess::kill() {
  if (!running()) return;
  ::kill(pid_, SIGKILL);
  int status = 0;
  while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
  }
  status_ = status;
  pid_ = -1;
}

std::string ChildProcess::describe_exit() {
  if (running()) wait_for_exit(std::chrono::milliseconds(200));
  if (running() || !status_) return {};
  if (WIFEXITED(*status_)) return "exited with status " + std::to_string(WEXITSTATUS(*status_));
  if (WIFSIGNALED(*status_)) return "killed by signal " + std::to_string(WTERMSIG(*status_));
  return "terminated";
}

// --- EmbedderClient -------------------------------------------------------

EmbedderClient::EmbedderClient(const std::vector<std::string>& argv,
                               std::chrono::milliseconds timeout)
    : child_(argv), timeout_(timeout) {}

EmbedderClient::~EmbedderClient() {
  if (!shut_down_ && !broken_) {
    try {
      shutdown();
    } catch (...) {
      child_.kill();
    }
  }
  if (broken_) child_.kill();
}

void EmbedderClient::fail(ErrorCode code, const std::string& message) {
  broken_ = true;
  std::string what = message;
  if (code == ErrorCode::kProcessExited) {
    const auto how = child_.describe_exit();
    if (!how.empty()) what += " (embedder " + how + ")";
  }
  throw Error(code, what);
}

json EmbedderClient::round_trip(const json& request) {
  if (broken_) throw Error(ErrorCode::kEmbedderFailure, "embedder client is in a failed state");
  std::optional<std::string> payload;
  try {
    write_frame(child_.stdin_fd(), request.dump());
    payload = read_frame(child_.stdout_fd(), Clock::now() + timeout_);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kTimeout) child_.kill();
    fail(e.code(), e.what());
  }
  if (!payload) fail(ErrorCode::kProcessExited, "embedder closed its output");
  json response;
  try {
    response = json::parse(*payload);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kMalformedResponse, std::string("response is not valid JSON: ") + e.what());
  }
  if (!response.is_object()) fail(ErrorCode::kMalformedResponse, "response is not a JSON object");
  if (response.contains("error")) {
    const auto& err = response["error"];
    fail(ErrorCode::kEmbedderFailure,
         "embedder reported: " + (err.is_string() ? err.get<std::string>() : err.dump()));
  }
  return response;
}

const HelloInfo& EmbedderClient::hello() {
  const json r = round_trip(hello_request());
  if (!r.contains("name") || !r["name"].is_string() || !r.contains("dim") ||
      !r["dim"].is_number_unsigned() || r["dim"].get<std::size_t>() == 0) {
    fail(ErrorCode::kMalformedResponse, "hello response must carry a name and a positive dim");
  }
  info_.name = r["name"].get<std::string>();
  info_.dim = r["dim"].get<std::size_t>();
  greeted_ = true;
  return info_;
}

std::vector<float> EmbedderClient::parse_embedding(const json& r, std::string_view id) {
  if (!r.contains("id") || !r["id"].is_string() || r["id"].get<std::string>() != id) {
    fail(ErrorCode::kMalformedResponse, "response id does not match request '" + std::string(id) + "'");
  }
  if (!r.contains("embedding") || !r["embedding"].is_array()) {
    fail(ErrorCode::kMalformedResponse, "response has no embedding array");
  }
  const auto& arr = r["embedding"];
  if (arr.size() != info_.dim) {
    fail(ErrorCode::kDimMismatch, "embedding for '" + std::string(id) + "' has length " +
                                      std::to_string(arr.size()) + ", advertised dim is " +
                                      std::to_string(info_.dim));
  }
  std::vector<float> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number() || !std::isfinite(v.get<double>())) {
      fail(ErrorCode::kMalformedResponse, "embedding contains a non-numeric or non-finite value");
    }
    out.push_back(v.get<float>());
  }
  return out;
}

std::vector<float> EmbedderClient::embed_image(std::string_view id,
                                               std::span<const std::uint8_t> png) {
  if (!greeted_) hello();
  return parse_embedding(round_trip(embed_image_request(id, png)), id);
}

std::vector<float> EmbedderClient::embed_text(std::string_view id, std::string_view text) {
  if (!greeted_) hello();
  return parse_embedding(round_trip(embed_text_request(id, text)), id);
}

void EmbedderClient::shutdown() {
  if (shut_down_) return;
  shut_down_ = true;
  try {
    write_frame(child_.stdin_fd(), shutdown_request().dump());
  } catch (const Error&) {
    // Already gone; the exit status below tells the story.
  }
  child_.close_stdin();
  const auto status = child_.wait_for_exit(timeout_);
  if (!status) {
    child_.kill();
    fail(ErrorCode::kTimeout, "embedder did not exit after shutdown");
  }
  if (!WIFEXITED(*status) || WEXITSTATUS(*status) != 0) {
    fail(ErrorCode::kProcessExited, "embedder did not exit cleanly after shutdown");
  }
}

// --- server ---------------------------------------------------------------

std::string handle_request(EmbedHandler& handler, std::string_view payload, bool& shutdown) {
  shutdown = false;
  auto error = [](const std::string& msg) { return json{{"error", msg}}.dump(); };
  json req;
  try {
    req = json::parse(payload);
  } catch (const json::parse_error& e) {
    return error(std::string("malformed request: ") + e.what());
  }
  if (!req.is_object() || !req.contains("op") || !req["op"].is_string()) {
    return error("malformed request: missing string field 'op'");
  }
  const auto op = req["op"].get<std::string>();
  try {
    if (op == "hello") {
      return json{{"name", handler.name()}, {"dim", handler.dim()}}.dump();
    }
    if (op == "shutdown") {
      shutdown = true;
      return {};
    }
    if (op == "embed_image" || op == "embed_text") {
      if (!req.contains("id") || !req["id"].is_string()) {
        return error("malformed request: missing string field 'id'");
      }
      const auto id = req["id"].get<std::string>();
      const char* field = op == "embed_image" ? "png_b64" : "text";
      if (!req.contains(field) || !req[field].is_string()) {
        return error(std::string("malformed request: missing string field '") + field + "'");
      }
      const auto value = req[field].get<std::string>();
      std::vector<float> embedding;
      if (op == "embed_image") {
        static constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
        const auto png = base64_decode(value);
        if (png.size() < 8 || !std::equal(kPngSignature, kPngSignature + 8, png.begin())) {
          return error("malformed request: png_b64 does not hold a PNG image");
        }
        embedding = handler.embed_image(id, png);
      } else {
        embedding = handler.embed_text(id, value);
      }
      return json{{"id", id}, {"embedding", embedding}}.dump();
    }
    return error("unknown op '" + op + "'");
  } catch (const std::exception& e) {
    return error(e.what());
  }
}

int serve(EmbedHandler& handler, int in_fd, int out_fd) {
  for (;;) {
    std::optional<std::string> payload;
    try {
      payload = read_frame(in_fd);
    } catch (const Error&) {
      return 1;
    }
    if (!payload) return 0;
    bool shutdown = false;
    const std::string response = handle_request(handler, *payload, shutdown);
    if (shutdown) return 0;
    try {
      write_frame(out_fd, response);
    } catch (const Error&) {
      return 1;
    }
  }
}

}  // namespace xmr::protocol
