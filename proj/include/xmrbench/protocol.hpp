#pragma once

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "xmrbench/error.hpp"

namespace xmr::protocol {

// Each message on the child's stdin/stdout is a u32 little-endian byte length
// followed by that many bytes of UTF-8 JSON.
//
//   {"op":"hello"}                               -> {"name":str,"dim":int}
//   {"op":"embed_image","id":str,"png_b64":str}  -> {"id":str,"embedding":[...]}
//   {"op":"embed_text","id":str,"text":str}      -> {"id":str,"embedding":[...]}
//   {"op":"shutdown"}                            -> process exits 0
//
// A server answers a request it cannot handle with {"error":str}.

inline constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

std::vector<std::uint8_t> encode_frame(std::string_view payload);

/// Writes the whole frame. Throws Error(kProcessExited) if the pipe closed.
void write_frame(int fd, std::string_view payload);

/// Reads one frame. Returns nullopt on a clean EOF before the first byte.
/// Throws Error(kTimeout) past the deadline, Error(kProcessExited) on EOF
/// inside a frame and Error(kMalformedResponse) for an oversized length.
std::optional<std::string> read_frame(
    int fd, std::optional<std::chrono::steady_clock::time_point> deadline = std::nullopt);

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws Error(kParse) on invalid input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

nlohmann::json hello_request();
nlohmann::json embed_image_request(std::string_view id, std::span<const std::uint8_t> png);
nlohmann::json embed_text_request(std::string_view id, std::string_view text);
nlohmann::json shutdown_request();

struct HelloInfo {
  std::string name;
  std::size_t dim = 0;
};

/// Child process with piped stdin/stdout; stderr is inherited.
class ChildProcess {
 public:
  /// Throws Error(kIo) if the executable cannot be spawned.
  explicit ChildProcess(const std::vector<std::string>& argv);
  ~ChildProcess();

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  int stdin_fd() const noexcept { return in_fd_; }
  int stdout_fd() const noexcept { return out_fd_; }
  pid_t pid() const noexcept { return pid_; }

  void close_stdin();
  /// Waits up to `timeout` for exit; returns the exit status if it exited.
  std::optional<int> wait_for_exit(std::chrono::milliseconds timeout);
  void kill();
  bool running() const noexcept { return pid_ > 0; }
  /// Description of how the child terminated, or empty while running.
  std::string describe_exit();

 private:
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::optional<int> status_;
};

/// Request/response client over a ChildProcess. Strictly serial: one request
/// in flight at a time. Any protocol failure leaves the client unusable.
class EmbedderClient {
 public:
  EmbedderClient(const std::vector<std::string>& argv,
                 std::chrono::milliseconds timeout = std::chrono::seconds(60));
  ~EmbedderClient();

  /// Performs the handshake and caches the advertised dimension.
  const HelloInfo& hello();
  const HelloInfo& info() const noexcept { return info_; }

  std::vector<float> embed_image(std::string_view id, std::span<const std::uint8_t> png);
  std::vector<float> embed_text(std::string_view id, std::string_view text);

  /// Sends shutdown and waits for a zero exit status.
  void shutdown();

 private:
  nlohmann::json round_trip(const nlohmann::json& request);
  std::vector<float> parse_embedding(const nlohmann::json& response, std::string_view id);
  [[noreturn]] void fail(ErrorCode code, const std::string& message);

  ChildProcess child_;
  std::chrono::milliseconds timeout_;
  HelloInfo info_;
  bool greeted_ = false;
  bool broken_ = false;
  bool shut_down_ = false;
};

/// Server-side behaviour for serve().
class EmbedHandler {
 public:
  virtual ~EmbedHandler() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<float> embed_image(std::string_view id,
                                         std::span<const std::uint8_t> png) = 0;
  virtual std::vector<float> embed_text(std::string_view id, std::string_view text) = 0;
};

/// Builds the response for one request payload. Sets `shutdown` when the
/// request asks the server to exit (no response is sent in that case).
std::string handle_request(EmbedHandler& handler, std::string_view payload, bool& shutdown);

/// Serves requests from in_fd until shutdown or EOF. Returns the process exit
/// code (0 on shutdown or clean EOF).
int serve(EmbedHandler& handler, int in_fd, int out_fd);

}  // namespace xmr::protocol
