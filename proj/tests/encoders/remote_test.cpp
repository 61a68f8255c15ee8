// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <thread>

#include "cpl/common/error.hpp"
#include "cpl/encoders/factory.hpp"
#include "cpl/encoders/remote.hpp"
#include "support/mock_encoder.hpp"

namespace cpl::enc {
namespace {

using cpl::testing::MockEncoderServer;

RemoteOptions fast_options() {
  RemoteOptions o;
  o.timeout = std::chrono::milliseconds(300);
  o.backoff = std::chrono::milliseconds(5);
  return o;
}

TEST(RemoteEncoder, MatchesTheServerEncoderAtSinglePrecision) {
  MockEncoderServer server(16, 9);
  const RemoteEncoderClient client(server.endpoint(), fast_options());
  const ToyTextEncoder local(16, 9);
  EXPECT_EQ(client.encode("a photo of a cat."), local.encode("a photo of a cat."));
  EXPECT_EQ(client.info(), server.info());
  EXPECT_EQ(client.dim(), 16u);
}

TEST(RemoteEncoder, RepeatedTextIssuesOneRequest) {
  MockEncoderServer server(8, 1);
  const RemoteEncoderClient client(server.endpoint(), fast_options());
  const auto first = client.encode("The photo is red");
  for (int i = 0; i < 5; ++i) EXPECT_EQ(client.encode("The photo is red"), first);
  EXPECT_EQ(server.encode_requests(), 1u);
  client.encode("The photo is blue");
  EXPECT_EQ(server.encode_requests(), 2u);
}

TEST(RemoteEncoder, ConcurrentSameTextIssuesOneRequest) {
  MockEncoderServer server(8, 1);
  const RemoteEncoderClient client(server.endpoint(), fast_options());
  std::vector<std::thread> threads;
  for (int t = 0; t < 6; ++t) threads.emplace_back([&] { client.encode("shared prompt"); });
  for (auto& th : threads) th.join();
  EXPECT_EQ(server.encode_requests(), 1u);
}

TEST(RemoteEncoder, RecoversFromTransientFaults) {
  MockEncoderServer server(8, 2, [](std::size_t request, const std::string&) -> std::string {
    if (request == 0) return "<drop>";
    if (request == 1) return "{not json";
    return "";
  });
  const RemoteEncoderClient client(server.endpoint(), fast_options());
  EXPECT_EQ(client.encode("hello"), ToyTextEncoder(8, 2).encode("hello"));
  EXPECT_EQ(server.encode_requests(), 3u);
  EXPECT_EQ(client.requests_sent(), 3u);
}

TEST(RemoteEncoder, PersistentMalformedRepliesSurfaceWithRetryCount) {
  MockEncoderServer server(8, 2, [](std::size_t, const std::string&) -> std::string {
    return R"({"id": 0, "dim": 8, "vec": [1, 0]})";
  });
  const RemoteEncoderClient client(server.endpoint(), fast_options());
  try {
    client.encode("hello");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport);
    EXPECT_NE(std::string(e.what()).find("3 attempts (2 retries)"), std::string::npos) << e.what();
  }
  EXPECT_EQ(server.encode_requests(), 3u);
}

TEST(RemoteEncoder, TimeoutIsATransportError) {
  MockEncoderServer server(8, 2, [](std::size_t, const std::string&) -> std::string { return "<silent>"; });
  RemoteOptions o = fast_options();
  o.timeout = std::chrono::milliseconds(50);
  const RemoteEncoderClient client(server.endpoint(), o);
  try {
    client.encode("hello");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport);
    EXPECT_NE(std::string(e.what()).find("timed out"), std::string::npos);
  }
}

TEST(RemoteEncoder, ServerErrorsAndWrongDimsNeverYieldVectors) {
  MockEncoderServer server(8, 2, [](std::size_t request, const std::string&) -> std::string {
    if (request == 0) return "";  // info
    return R"({"error": "model not loaded"})";
  });
  const RemoteEncoderClient client(server.endpoint(), fast_options());
  EXPECT_EQ(client.dim(), 8u);
  try {
    client.encode("hello");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport);
    EXPECT_NE(std::string(e.what()).find("model not loaded"), std::string::npos);
  }
}

TEST(RemoteEncoder, UnreachableEndpointFails) {
  RemoteOptions o = fast_options();
  const RemoteEncoderClient client("tcp://127.0.0.1:1", o);
  EXPECT_THROW(client.encode("x"), Error);
  EXPECT_THROW(RemoteEncoderClient("ftp://nowhere"), Error);
  EXPECT_THROW(RemoteEncoderClient("ftp://nowhere").encode("x"), Error);
}

TEST(RemoteEncoder, PipeTransportSpeaksTheSameProtocol) {
  const RemoteEncoderClient client(std::string("pipe:") + CPL_MOCK_STDIO_SERVER + " 12 4", fast_options());
  EXPECT_EQ(client.dim(), 12u);
  EXPECT_EQ(client.encode("a photo of a dog."), ToyTextEncoder(12, 4).encode("a photo of a dog."));
}

TEST(RemoteEncoder, ProtocolMessagesHaveTheDocumentedShape) {
  const auto req = nlohmann::json::parse(encode_request_json(7, "hi"));
  EXPECT_EQ(req["id"], 7);
  EXPECT_EQ(req["op"], "encode_text");
  EXPECT_EQ(req["text"], "hi");
  EXPECT_EQ(nlohmann::json::parse(info_request_json()), nlohmann::json({{"op", "info"}}));
  const std::vector<double> v = {0.6, 0.8};
  const auto rep = nlohmann::json::parse(encode_reply_json(7, v));
  EXPECT_EQ(rep["dim"], 2);
  EXPECT_EQ(rep["vec"][0].get<float>(), 0.6f);
  const EncoderInfo info{4, 4, 2, {3, 5}};
  EXPECT_EQ(parse_info_reply(info_reply_json(info)), info);
  EXPECT_THROW(parse_info_reply(R"({"d_t": 4, "d_v": 4, "Q": 3, "channel_dims": [1]})"), Error);
}

TEST(EncoderFactory, EndpointFromEnvironment) {
  MockEncoderServer server(8, 3);
  ::setenv(kEndpointEnvVar, server.endpoint().c_str(), 1);
  const auto enc = make_text_encoder({"remote", 0, ""}, 8);
  ::unsetenv(kEndpointEnvVar);
  EXPECT_EQ(enc->encode("abc"), ToyTextEncoder(8, 3).encode("abc"));
  EXPECT_THROW(make_text_encoder({"remote", 0, server.endpoint()}, 9), Error);
  EXPECT_THROW(make_text_encoder({"magic", 0, ""}, 8), Error);
  EXPECT_EQ(make_text_encoder({"toy", 3, ""}, 8)->encode("abc"), ToyTextEncoder(8, 3).encode("abc"));
}

}  // namespace
}  // namespace cpl::enc
