// SPDX-License-Identifier: Apache-2.0
//
// Writes the deterministic synthetic English-like corpus used by the toy
// runs, so the example configs work without an external dataset.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "xatl/data.hpp"

int main(int argc, char** argv) {
  CLI::App app{"write a synthetic byte-level training corpus"};
  std::size_t bytes = 1u << 20;
  std::uint64_t seed = 1;
  std::string out;
  app.add_option("--bytes", bytes, "corpus size in bytes")->capture_default_str();
  app.add_option("--seed", seed, "generator seed")->capture_default_str();
  app.add_option("--out", out, "output file")->required();
  CLI11_PARSE(app, argc, argv);
  std::ofstream f(out, std::ios::binary);
  const std::string text = xatl::synthetic_corpus(bytes, seed);
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) {
    std::cerr << "error: cannot write " << out << '\n';
    return 2;
  }
  return 0;
}
