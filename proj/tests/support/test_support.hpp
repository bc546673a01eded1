#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

#include "protoforge/linalg.hpp"

namespace protoforge::testing {

inline EmbeddingMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                     double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  EmbeddingMatrix m(rows, cols);
  for (double& v : m.mutable_data()) v = normal(rng);
  return m;
}

inline EmbeddingMatrix random_unit_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  return normalize_rows(random_matrix(rows, cols, seed));
}

// Rows orthonormalized by modified Gram-Schmidt (rows <= cols).
inline EmbeddingMatrix random_orthonormal_rows(std::size_t rows, std::size_t cols,
                                               std::uint64_t seed) {
  EmbeddingMatrix q = random_matrix(rows, cols, seed);
  for (std::size_t a = 0; a < rows; ++a) {
    for (std::size_t b = 0; b < a; ++b) {
      const double c = dot(q.row(b), q.row(a));
      for (std::size_t j = 0; j < cols; ++j) q(a, j) -= c * q(b, j);
    }
    const double n = norm(q.row(a));
    for (std::size_t j = 0; j < cols; ++j) q(a, j) /= n;
  }
  return q;
}

inline double max_abs_diff(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("protoforge-" + tag + "-" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace protoforge::testing
