#pragma once

#include <filesystem>
#include <string>

#include "svdscope/linalg.hpp"
#include "svdscope/rng.hpp"

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("svdscope_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

// Matrix with prescribed singular values: U diag(s) V^T with random
// orthonormal U (m x r) and V (n x r).
inline svdscope::Matrix with_spectrum(Eigen::Index m, Eigen::Index n, const svdscope::Vector& s,
                                      svdscope::Rng& rng) {
  const auto u = svdscope::random_orthonormal(m, s.size(), rng);
  const auto v = svdscope::random_orthonormal(n, s.size(), rng);
  return u * s.asDiagonal() * v.transpose();
}

}  // namespace testing_support
