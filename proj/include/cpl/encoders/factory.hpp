// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "cpl/encoders/text_encoder.hpp"
#include "cpl/feature_store/records.hpp"

namespace cpl::enc {

// Encoder named by a manifest, wrapped in a memo table. A remote spec with
// no endpoint falls back to the environment; `endpoint_override` wins over both.
std::shared_ptr<const TextEncoder> make_text_encoder(const store::EncoderSpec& spec, std::size_t text_dim,
                                                     const std::string& endpoint_override = {});

}  // namespace cpl::enc
