// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cpl/encoders/text_encoder.hpp"

namespace cpl::enc {

// Reply to {"op":"info"}.
struct EncoderInfo {
  std::uint32_t text_dim = 0;
  std::uint32_t feature_dim = 0;
  std::uint32_t level_count = 0;
  std::vector<std::uint32_t> channel_dims;

  friend bool operator==(const EncoderInfo&, const EncoderInfo&) = default;
};

// Newline-delimited byte stream to an encoder server.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send_line(std::string_view line) = 0;
  // Next line without its terminator; raises a transport error on timeout or EOF.
  virtual std::string read_line(std::chrono::milliseconds timeout) = 0;
};

// "tcp://host:port" or "pipe:<shell command>" (the command speaks the
// protocol on its stdin/stdout).
std::unique_ptr<Transport> open_transport(const std::string& endpoint);

inline constexpr const char* kEndpointEnvVar = "CPL_ENCODER_ENDPOINT";

// Endpoint from the environment, empty when unset.
std::string endpoint_from_environment();

struct RemoteOptions {
  std::chrono::milliseconds timeout{10000};
  int retries = 2;
  std::chrono::milliseconds backoff{50};
};

// Protocol messages, exposed for servers and tests.
std::string encode_request_json(std::uint64_t id, std::string_view text);
std::string info_request_json();
std::string encode_reply_json(std::uint64_t id, std::span<const double> vec);
std::string info_reply_json(const EncoderInfo& info);
std::string error_reply_json(std::string_view message);
EncoderInfo parse_info_reply(std::string_view line);

class RemoteEncoderClient final : public TextEncoder {
 public:
  explicit RemoteEncoderClient(std::string endpoint, RemoteOptions options = {});
  ~RemoteEncoderClient() override;

  RemoteEncoderClient(const RemoteEncoderClient&) = delete;
  RemoteEncoderClient& operator=(const RemoteEncoderClient&) = delete;

  const std::string& endpoint() const noexcept { return endpoint_; }

  // Fetched once and cached.
  EncoderInfo info() const;
  std::size_t dim() const override;
  std::vector<double> encode(std::string_view text) const override;

  // Lines written to the server, retries included.
  std::size_t requests_sent() const;

 private:
  // One send and one reply line; connects on demand.
  std::string round_trip(const std::string& request) const;
  template <typename Fn>
  auto with_retries(std::string_view what, Fn&& fn) const;

  std::string endpoint_;
  RemoteOptions options_;

  mutable std::mutex io_mutex_;
  mutable std::unique_ptr<Transport> transport_;
  mutable std::optional<EncoderInfo> info_;
  mutable std::uint64_t next_id_ = 1;
  mutable std::size_t requests_ = 0;

  mutable std::mutex memo_mutex_;
  mutable std::unordered_map<std::string, std::vector<double>> memo_;
};

}  // namespace cpl::enc
