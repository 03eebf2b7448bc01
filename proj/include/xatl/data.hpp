// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "xatl/ops.hpp"

namespace xatl {

// Byte-level vocabulary: ids 0..255 are raw bytes, then three specials.
inline constexpr TokenId kBos = 256;
inline constexpr TokenId kEos = 257;
inline constexpr TokenId kPad = 258;
inline constexpr std::size_t kByteVocab = 259;

inline std::vector<TokenId> tokenize_bytes(std::string_view text) {
  std::vector<TokenId> out(text.size());
  std::transform(text.begin(), text.end(), out.begin(),
                 [](char c) { return TokenId(static_cast<unsigned char>(c)); });
  return out;
}

/// Token ids with a train/validation boundary: [0, split) trains,
/// [split, size) validates.
struct TokenStream {
  std::vector<TokenId> ids;
  std::size_t split = 0;

  std::span<const TokenId> train() const { return {ids.data(), split}; }
  std::span<const TokenId> validation() const { return {ids.data() + split, ids.size() - split}; }
};

/// The trailing 5% (rounded down) becomes the validation split.
inline TokenStream make_stream(std::vector<TokenId> ids) {
  if (ids.empty()) throw DomainError("corpus is empty");
  TokenStream s;
  const std::size_t n_val = ids.size() / 20;
  s.split = ids.size() - n_val;
  s.ids = std::move(ids);
  return s;
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Reads a file, or every regular file under a directory in sorted path
/// order, as raw bytes.
inline TokenStream ingest_corpus(const std::string& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::exists(path, ec)) throw ConfigError("corpus not found: " + path);
  std::string bytes;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) bytes += read_file_bytes(f);
  } else {
    bytes = read_file_bytes(path);
  }
  if (bytes.empty()) throw DomainError("corpus is empty: " + path);
  return make_stream(tokenize_bytes(bytes));
}

/// Throws unless the training split holds at least one [B, T+1] window set.
inline void require_window(const TokenStream& s, std::size_t batch, std::size_t seq_len) {
  if (s.train().size() < batch * seq_len + 1) {
    throw DomainError("corpus too small: " + std::to_string(s.train().size()) + " training tokens for batch " +
                      std::to_string(batch) + " x seq_len " + std::to_string(seq_len));
  }
}

struct Batch {
  TokenGrid inputs;
  TokenGrid targets;
  std::size_t cursor = 0;  // where the next batch starts
};

/// Row r reads tokens [cursor + r*T, cursor + (r+1)*T] (wrapping at the end of
/// the stream); targets are the inputs shifted left by one.
inline Batch next_batch(std::span<const TokenId> stream, std::size_t batch, std::size_t seq_len,
                        std::size_t cursor) {
  const std::size_t n = stream.size();
  if (n < 2 || batch == 0 || seq_len == 0) throw DomainError("next_batch: stream too short or empty batch");
  Batch b;
  b.inputs = {batch, seq_len, std::vector<TokenId>(batch * seq_len)};
  b.targets = {batch, seq_len, std::vector<TokenId>(batch * seq_len)};
  std::size_t pos = cursor % n;
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      b.inputs.ids[r * seq_len + t] = stream[(pos + t) % n];
      b.targets.ids[r * seq_len + t] = stream[(pos + t + 1) % n];
    }
    pos = (pos + seq_len) % n;
  }
  b.cursor = pos;
  return b;
}

// ---------------------------------------------------------------------------
// deterministic synthetic English-like corpus

namespace detail {
inline constexpr std::array kNames{"alice", "bruno", "clara", "dmitri", "elena", "farid",  "greta", "hiro",
                                   "ines",  "jonas", "kemal", "lucia",  "marta", "nikolai", "olga", "pablo",
                                   "quinn", "rosa",  "samir", "tomas",  "ulla",  "viktor", "wanda", "xavier",
                                   "yusuf", "zelda", "anya",  "boris",  "chloe", "dario"};
inline constexpr std::array kPlaces{"paris", "lisbon", "oslo",  "cairo",  "lima",   "quito", "delhi", "tokyo",
                                    "rome",  "vienna", "dakar", "hanoi",  "bogota", "perth", "tunis", "seoul"};
inline constexpr std::array kAnimals{"cat", "dog", "fox", "owl", "horse", "goat", "crow", "bear", "mouse", "wolf"};
inline constexpr std::array kAdjectives{"quick", "lazy", "small", "large", "red", "green", "old", "young",
                                        "quiet", "loud", "brave", "tired"};
inline constexpr std::array kVerbs{"jumps over", "runs past", "sleeps near", "looks at", "walks around",
                                   "hides under", "waits for", "sits beside"};
inline constexpr std::array kObjects{"fence", "river", "table", "house", "bridge", "garden", "tree", "wall",
                                     "boat", "stone"};
inline constexpr std::array kNumbers{"one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten"};
}  // namespace detail

/// Byte text of exactly `bytes` length built from a small grammar: fixed
/// person-to-city facts, descriptive sentences, counting runs and copy
/// phrases. Same (bytes, seed) gives the same text.
inline std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  using namespace detail;
  std::mt19937_64 rng(seed);
  auto pick = [&rng](const auto& arr) -> std::string {
    return arr[std::uniform_int_distribution<std::size_t>(0, arr.size() - 1)(rng)];
  };
  std::vector<std::size_t> home(kNames.size()), pet(kNames.size());
  for (std::size_t i = 0; i < kNames.size(); ++i) {
    home[i] = std::uniform_int_distribution<std::size_t>(0, kPlaces.size() - 1)(rng);
    pet[i] = std::uniform_int_distribution<std::size_t>(0, kAnimals.size() - 1)(rng);
  }
  std::string out;
  out.reserve(bytes + 256);
  std::uniform_int_distribution<int> kind(0, 6);
  std::size_t sentences = 0;
  while (out.size() < bytes) {
    const std::size_t who = std::uniform_int_distribution<std::size_t>(0, kNames.size() - 1)(rng);
    const std::string name = kNames[who];
    std::string s;
    switch (kind(rng)) {
      case 0: s = name + " lives in " + kPlaces[home[who]] + "."; break;
      case 1: s = "where does " + name + " live? " + name + " lives in " + kPlaces[home[who]] + "."; break;
      case 2: s = name + " has a " + pick(kAdjectives) + " " + kAnimals[pet[who]] + "."; break;
      case 3:
        s = "the " + pick(kAdjectives) + " " + pick(kAnimals) + " " + pick(kVerbs) + " the " + pick(kObjects) + ".";
        break;
      case 4: {
        std::size_t a = std::uniform_int_distribution<std::size_t>(0, 5)(rng);
        s = "count:";
        for (std::size_t k = a; k < a + 5; ++k) s += std::string(" ") + kNumbers[k];
        s += ".";
        break;
      }
      case 5: {
        const std::string w1 = pick(kObjects), w2 = pick(kAdjectives);
        s = "repeat " + w2 + " " + w1 + ": " + w2 + " " + w1 + ".";
        break;
      }
      default:
        s = "in " + std::string(kPlaces[home[who]]) + ", " + name + " " + pick(kVerbs) + " the " + pick(kObjects) +
            ".";
        break;
    }
    s[0] = char(std::toupper(static_cast<unsigned char>(s[0])));
    out += s;
    out += (++sentences % 8 == 0) ? "\n" : " ";
  }
  out.resize(bytes);
  return out;
}

}  // namespace xatl
