// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "xatl/xatl.hpp"

namespace xatl::testing {

/// Temporary directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "xatl-test") {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / (tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::string read_text(const std::string& path) { return read_file_bytes(path); }

template <Scalar T>
Tensor<T> uniform_tensor(Shape dims, std::mt19937_64& rng, double lo = -2.0, double hi = 2.0) {
  return Tensor<T>::uniform(std::move(dims), T(lo), T(hi), rng);
}

/// Weighted sum sum(x ⊙ r) so that every output element reaches the loss with
/// a distinct random weight.
template <Scalar T>
Var weighted_sum(BoundParams<T>& p, Var x, const std::string& weights) {
  return ops::sum(p.tape(), ops::mul(p.tape(), x, p(weights)));
}

}  // namespace xatl::testing
