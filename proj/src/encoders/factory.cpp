// SPDX-License-Identifier: Apache-2.0
#include "cpl/encoders/factory.hpp"

#include "cpl/common/error.hpp"
#include "cpl/encoders/remote.hpp"

namespace cpl::enc {

std::shared_ptr<const TextEncoder> make_text_encoder(const store::EncoderSpec& spec, std::size_t text_dim,
                                                     const std::string& endpoint_override) {
  std::shared_ptr<const TextEncoder> inner;
  if (spec.kind == "toy" && endpoint_override.empty()) {
    inner = std::make_shared<ToyTextEncoder>(text_dim, spec.seed);
  } else if (spec.kind == "remote" || !endpoint_override.empty()) {
    std::string endpoint = endpoint_override;
    if (endpoint.empty()) endpoint = spec.endpoint;
    if (endpoint.empty()) endpoint = endpoint_from_environment();
    auto remote = std::make_shared<RemoteEncoderClient>(endpoint);
    require(remote->dim() == text_dim, ErrorCode::dim_mismatch,
            "remote encoder reports d_t=" + std::to_string(remote->dim()) + " but the manifest declares " +
                std::to_string(text_dim));
    return remote;
  } else {
    raise(ErrorCode::contract, "unknown encoder kind '" + spec.kind + "'");
  }
  return std::make_shared<MemoizingEncoder>(std::move(inner));
}

}  // namespace cpl::enc
