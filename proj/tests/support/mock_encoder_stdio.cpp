// SPDX-License-Identifier: Apache-2.0
// Protocol server on stdin/stdout backed by the toy encoder.
// Usage: mock_encoder_stdio <dim> <seed>
#include <cstdlib>
#include <iostream>
#include <string>

#include "support/mock_encoder.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: mock_encoder_stdio <dim> <seed>\n";
    return 2;
  }
  const auto dim = static_cast<std::size_t>(std::strtoul(argv[1], nullptr, 10));
  const auto seed = static_cast<std::uint64_t>(std::strtoull(argv[2], nullptr, 10));
  const cpl::enc::ToyTextEncoder encoder(dim, seed);
  const cpl::enc::EncoderInfo info{static_cast<std::uint32_t>(dim), static_cast<std::uint32_t>(dim), 1,
                                   {static_cast<std::uint32_t>(dim)}};
  std::string line;
  while (std::getline(std::cin, line)) {
    std::cout << cpl::testing::answer_line(line, encoder, info) << '\n' << std::flush;
  }
  return 0;
}
