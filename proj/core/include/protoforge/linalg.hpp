#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace protoforge {

/// Dense row-major matrix of doubles. Rows are embeddings (prototypes,
/// image features, encoder outputs); columns are embedding coordinates.
///
/// The `unit_rows` flag records that every row has been projected onto the
/// unit sphere. It is set by normalize_rows() or mark_unit_rows() and cleared
/// by any mutable access, so a flagged matrix is always actually normalized.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t cols);
  EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  EmbeddingMatrix(std::initializer_list<std::initializer_list<double>> rows);

  static EmbeddingMatrix identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool unit_rows() const noexcept { return unit_rows_; }

  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }
  double& operator()(std::size_t i, std::size_t j) {
    unit_rows_ = false;
    return data_[i * cols_ + j];
  }

  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> mutable_row(std::size_t i) {
    unit_rows_ = false;
    return {data_.data() + i * cols_, cols_};
  }

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() {
    unit_rows_ = false;
    return data_;
  }

  // Checks every row norm against 1 (tolerance 1e-9) before setting the flag;
  // throws NotNormalized otherwise.
  void mark_unit_rows();

  bool all_finite() const;

  friend bool operator==(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  friend EmbeddingMatrix normalize_rows(const EmbeddingMatrix& x);

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
  bool unit_rows_ = false;
};

inline constexpr double kUnitRowTolerance = 1e-9;
inline constexpr double kZeroRowThreshold = 1e-12;

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

double frobenius_sq(const EmbeddingMatrix& m);

/// X·Xᵀ. The upper triangle is computed once and mirrored, so the result is
/// symmetric bit for bit.
EmbeddingMatrix gram(const EmbeddingMatrix& x);

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& x);
bool rows_are_unit(const EmbeddingMatrix& x, double tol = kUnitRowTolerance);
std::vector<double> row_norms(const EmbeddingMatrix& x);

EmbeddingMatrix transpose(const EmbeddingMatrix& a);
EmbeddingMatrix matmul(const EmbeddingMatrix& a, const EmbeddingMatrix& b);
// a·bᵀ without forming the transpose.
EmbeddingMatrix matmul_nt(const EmbeddingMatrix& a, const EmbeddingMatrix& b);
EmbeddingMatrix operator+(const EmbeddingMatrix& a, const EmbeddingMatrix& b);
EmbeddingMatrix operator-(const EmbeddingMatrix& a, const EmbeddingMatrix& b);
EmbeddingMatrix operator*(double s, const EmbeddingMatrix& a);

// Largest |G_ij| over i != j of a square matrix.
double max_offdiag_abs(const EmbeddingMatrix& g);

struct SvdFactors {
  EmbeddingMatrix u;          // K×K orthogonal
  std::vector<double> sigma;  // descending, length K
  EmbeddingMatrix r;          // d×K, orthonormal columns
};

struct SvdOptions {
  int max_sweeps = 60;
  double tolerance = 1e-15;
};

/// Thin SVD V = U·diag(σ)·Rᵀ of a K×d matrix with K ≤ d, by one-sided
/// (Hestenes) Jacobi rotations on the rows of V. Each column of U has its
/// first nonzero entry nonnegative, which makes the factors deterministic.
SvdFactors svd(const EmbeddingMatrix& v, const SvdOptions& options = {});

EmbeddingMatrix reconstruct(const SvdFactors& f);

struct SymmetricEigen {
  std::vector<double> values;  // descending
  EmbeddingMatrix vectors;     // columns are eigenvectors
};

// Cyclic two-sided Jacobi for a small symmetric matrix.
SymmetricEigen symmetric_eigen(const EmbeddingMatrix& a, int max_sweeps = 100);

}  // namespace protoforge
