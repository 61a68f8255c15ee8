// SPDX-License-Identifier: Apache-2.0
#include "cpl/encoders/remote.hpp"

#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <thread>

#include <json.hpp>

#include "cpl/common/error.hpp"

namespace cpl::enc {

using nlohmann::json;

namespace {

[[noreturn]] void transport_failure(const std::string& what) { raise(ErrorCode::transport, what); }

// A connected stream socket; for pipe endpoints it is one end of a
// socketpair wired to the child's stdin and stdout.
class SocketTransport final : public Transport {
 public:
  SocketTransport(int fd, pid_t child) : fd_(fd), child_(child) {}

  ~SocketTransport() override {
    ::close(fd_);
    if (child_ > 0) {
      int status = 0;
      if (::waitpid(child_, &status, WNOHANG) == 0) {
        ::kill(child_, SIGTERM);
        ::waitpid(child_, &status, 0);
      }
    }
  }

  void send_line(std::string_view line) override {
    std::string msg(line);
    msg.push_back('\n');
    std::size_t sent = 0;
    while (sent < msg.size()) {
      const ssize_t n = ::send(fd_, msg.data() + sent, msg.size() - sent, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        transport_failure(std::string("send failed: ") + std::strerror(errno));
      }
      sent += static_cast<std::size_t>(n);
    }
  }

  std::string read_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
      if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) transport_failure("timed out waiting for a reply");
      pollfd pfd{fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        transport_failure(std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) transport_failure("timed out waiting for a reply");
      char chunk[4096];
      const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
      if (n < 0) {
        if (errno == EINTR) continue;
        transport_failure(std::string("recv failed: ") + std::strerror(errno));
      }
      if (n == 0) transport_failure("server closed the connection");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  int fd_;
  pid_t child_;
  std::string buffer_;
};

std::unique_ptr<Transport> open_tcp(const std::string& address) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == address.size()) {
    raise(ErrorCode::contract, "tcp endpoint must be host:port, got '" + address + "'");
  }
  const std::string host = address.substr(0, colon);
  const std::string port = address.substr(colon + 1);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* found = nullptr;
  if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &found); rc != 0) {
    transport_failure("cannot resolve '" + address + "': " + ::gai_strerror(rc));
  }
  int fd = -1;
  std::string last = "no addresses";
  for (addrinfo* a = found; a != nullptr; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) {
      last = std::strerror(errno);
      continue;
    }
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    last = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(found);
  if (fd < 0) transport_failure("cannot connect to '" + address + "': " + last);
  return std::make_unique<SocketTransport>(fd, -1);
}

std::unique_ptr<Transport> open_pipe(const std::string& command) {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) != 0) {
    transport_failure(std::string("socketpair failed: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) {
    ::close(fds[0]);
    ::close(fds[1]);
    transport_failure(std::string("fork failed: ") + std::strerror(errno));
  }
  if (pid == 0) {
    ::close(fds[0]);
    ::dup2(fds[1], STDIN_FILENO);
    ::dup2(fds[1], STDOUT_FILENO);
    ::close(fds[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(fds[1]);
  return std::make_unique<SocketTransport>(fds[0], pid);
}

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

json parse_reply(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    transport_failure(std::string("malformed reply: ") + e.what());
  }
  if (!j.is_object()) transport_failure("malformed reply: not a JSON object");
  if (j.contains("error")) {
    transport_failure("server error: " + (j["error"].is_string() ? j["error"].get<std::string>() : j["error"].dump()));
  }
  return j;
}

}  // namespace

std::unique_ptr<Transport> open_transport(const std::string& endpoint) {
  if (starts_with(endpoint, "tcp://")) return open_tcp(endpoint.substr(6));
  if (starts_with(endpoint, "pipe:")) {
    require(endpoint.size() > 5, ErrorCode::contract, "pipe endpoint needs a command");
    return open_pipe(endpoint.substr(5));
  }
  raise(ErrorCode::contract, "unknown endpoint '" + endpoint + "' (expected tcp://host:port or pipe:<command>)");
}

std::string endpoint_from_environment() {
  const char* value = std::getenv(kEndpointEnvVar);
  return value == nullptr ? std::string{} : std::string(value);
}

std::string encode_request_json(std::uint64_t id, std::string_view text) {
  return json{{"id", id}, {"op", "encode_text"}, {"text", std::string(text)}}.dump();
}

std::string info_request_json() { return json{{"op", "info"}}.dump(); }

std::string encode_reply_json(std::uint64_t id, std::span<const double> vec) {
  json values = json::array();
  for (double v : vec) values.push_back(static_cast<float>(v));
  return json{{"id", id}, {"dim", vec.size()}, {"vec", std::move(values)}}.dump();
}

std::string info_reply_json(const EncoderInfo& info) {
  return json{{"d_t", info.text_dim},
              {"d_v", info.feature_dim},
              {"Q", info.level_count},
              {"channel_dims", info.channel_dims}}
      .dump();
}

std::string error_reply_json(std::string_view message) { return json{{"error", std::string(message)}}.dump(); }

EncoderInfo parse_info_reply(std::string_view line) {
  const json j = parse_reply(line);
  EncoderInfo info;
  try {
    info.text_dim = j.at("d_t").get<std::uint32_t>();
    info.feature_dim = j.at("d_v").get<std::uint32_t>();
    info.level_count = j.at("Q").get<std::uint32_t>();
    info.channel_dims = j.at("channel_dims").get<std::vector<std::uint32_t>>();
  } catch (const json::exception& e) {
    transport_failure(std::string("malformed info reply: ") + e.what());
  }
  if (info.text_dim == 0 || info.channel_dims.size() != info.level_count) {
    transport_failure("info reply declares inconsistent dims");
  }
  return info;
}

RemoteEncoderClient::RemoteEncoderClient(std::string endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {
  require(!endpoint_.empty(), ErrorCode::contract,
          std::string("remote encoder needs an endpoint (set ") + kEndpointEnvVar + ")");
  require(options_.retries >= 0, ErrorCode::contract, "retry count must be non-negative");
  require(starts_with(endpoint_, "tcp://") || starts_with(endpoint_, "pipe:"), ErrorCode::contract,
          "unknown endpoint '" + endpoint_ + "' (expected tcp://host:port or pipe:<command>)");
}

RemoteEncoderClient::~RemoteEncoderClient() = default;

std::string RemoteEncoderClient::round_trip(const std::string& request) const {
  if (!transport_) transport_ = open_transport(endpoint_);
  ++requests_;
  transport_->send_line(request);
  return transport_->read_line(options_.timeout);
}

template <typename Fn>
auto RemoteEncoderClient::with_retries(std::string_view what, Fn&& fn) const {
  const int attempts = options_.retries + 1;
  std::string last;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options_.backoff * (1 << (attempt - 1)));
    try {
      return fn();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::transport) throw;
      last = e.what();
      transport_.reset();
    }
  }
  raise(ErrorCode::transport, std::string(what) + " failed after " + std::to_string(attempts) + " attempts (" +
                                  std::to_string(options_.retries) + " retries): " + last);
}

EncoderInfo RemoteEncoderClient::info() const {
  std::lock_guard lock(io_mutex_);
  if (!info_) {
    info_ = with_retries("info", [&] { return parse_info_reply(round_trip(info_request_json())); });
  }
  return *info_;
}

std::size_t RemoteEncoderClient::dim() const { return info().text_dim; }

std::vector<double> RemoteEncoderClient::encode(std::string_view text) const {
  require(!text.empty(), ErrorCode::contract, "cannot encode an empty string");
  const std::string key(text);
  {
    std::lock_guard lock(memo_mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  std::lock_guard io(io_mutex_);
  {
    std::lock_guard lock(memo_mutex_);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  }
  auto vec = with_retries("encode_text", [&] {
    const std::uint64_t id = next_id_++;
    const json j = parse_reply(round_trip(encode_request_json(id, text)));
    std::vector<double> out;
    std::uint32_t dim = 0;
    try {
      if (j.at("id").get<std::uint64_t>() != id) transport_failure("reply id does not match request id");
      dim = j.at("dim").get<std::uint32_t>();
      for (const auto& v : j.at("vec")) out.push_back(static_cast<double>(v.get<float>()));
    } catch (const json::exception& e) {
      transport_failure(std::string("malformed encode reply: ") + e.what());
    }
    if (dim == 0 || out.size() != dim) transport_failure("reply dim disagrees with vector length");
    if (info_ && info_->text_dim != dim) transport_failure("reply dim disagrees with the server's info");
    double n = 0.0;
    for (double v : out) {
      if (!std::isfinite(v)) transport_failure("reply vector has non-finite values");
      n += v * v;
    }
    if (std::abs(std::sqrt(n) - 1.0) > 1e-5) transport_failure("reply vector is not unit norm");
    return out;
  });
  std::lock_guard lock(memo_mutex_);
  return memo_.emplace(key, std::move(vec)).first->second;
}

std::size_t RemoteEncoderClient::requests_sent() const {
  std::lock_guard lock(io_mutex_);
  return requests_;
}

}  // namespace cpl::enc
