#include "protoforge/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>

#include "protoforge/error.hpp"

namespace protoforge {

namespace {

void require_shape(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    fail(ErrorCode::kInvalidArgument, "matrix dimensions must be positive");
  }
}

void require_same_shape(const EmbeddingMatrix& a, const EmbeddingMatrix& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::kShapeMismatch,
         std::string(what) + ": " + std::to_string(a.rows()) + "x" +
             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
             "x" + std::to_string(b.cols()));
  }
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {
  require_shape(rows, cols);
}

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t cols,
                                 std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_shape(rows, cols);
  if (data_.size() != rows * cols) {
    fail(ErrorCode::kShapeMismatch, "data length " +
                                        std::to_string(data_.size()) +
                                        " != rows*cols");
  }
}

EmbeddingMatrix::EmbeddingMatrix(
    std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  require_shape(rows_, cols_);
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) {
      fail(ErrorCode::kShapeMismatch, "ragged initializer list");
    }
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

EmbeddingMatrix EmbeddingMatrix::identity(std::size_t n) {
  EmbeddingMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m.data_[i * n + i] = 1.0;
  return m;
}

void EmbeddingMatrix::mark_unit_rows() {
  if (!rows_are_unit(*this)) {
    fail(ErrorCode::kNotNormalized, "rows are not unit norm within 1e-9");
  }
  unit_rows_ = true;
}

bool EmbeddingMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double frobenius_sq(const EmbeddingMatrix& m) {
  double s = 0.0;
  for (double v : m.data()) s += v * v;
  return s;
}

EmbeddingMatrix gram(const EmbeddingMatrix& x) {
  const std::size_t k = x.rows();
  EmbeddingMatrix g(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      const double v = dot(x.row(i), x.row(j));
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

EmbeddingMatrix normalize_rows(const EmbeddingMatrix& x) {
  EmbeddingMatrix out = x;
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto r = out.mutable_row(i);
    const double n = norm(r);
    if (!(n > kZeroRowThreshold)) {
      fail(ErrorCode::kZeroRow, "row " + std::to_string(i) +
                                    " has norm <= 1e-12 and cannot be "
                                    "normalized");
    }
    for (double& v : r) v /= n;
  }
  out.unit_rows_ = true;
  return out;
}

bool rows_are_unit(const EmbeddingMatrix& x, double tol) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (std::abs(norm(x.row(i)) - 1.0) > tol) return false;
  }
  return true;
}

std::vector<double> row_norms(const EmbeddingMatrix& x) {
  std::vector<double> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) out[i] = norm(x.row(i));
  return out;
}

EmbeddingMatrix transpose(const EmbeddingMatrix& a) {
  EmbeddingMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

EmbeddingMatrix matmul(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kShapeMismatch, "matmul inner dimensions differ");
  }
  EmbeddingMatrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.mutable_row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto bk = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

EmbeddingMatrix matmul_nt(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  if (a.cols() != b.cols()) {
    fail(ErrorCode::kShapeMismatch, "matmul_nt column counts differ");
  }
  EmbeddingMatrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = dot(a.row(i), b.row(j));
  }
  return c;
}

EmbeddingMatrix operator+(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  require_same_shape(a, b, "operator+");
  EmbeddingMatrix c = a;
  auto cd = c.mutable_data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[i];
  return c;
}

EmbeddingMatrix operator-(const EmbeddingMatrix& a, const EmbeddingMatrix& b) {
  require_same_shape(a, b, "operator-");
  EmbeddingMatrix c = a;
  auto cd = c.mutable_data();
  auto bd = b.data();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] -= bd[i];
  return c;
}

EmbeddingMatrix operator*(double s, const EmbeddingMatrix& a) {
  EmbeddingMatrix c = a;
  for (double& v : c.mutable_data()) v *= s;
  return c;
}

double max_offdiag_abs(const EmbeddingMatrix& g) {
  double m = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < g.cols(); ++j) {
      if (i != j) m = std::max(m, std::abs(g(i, j)));
    }
  }
  return m;
}

SvdFactors svd(const EmbeddingMatrix& v, const SvdOptions& options) {
  const std::size_t k = v.rows();
  const std::size_t d = v.cols();
  if (k > d) {
    fail(ErrorCode::kShapeMismatch,
         "svd expects rows <= cols, got " + std::to_string(k) + "x" +
             std::to_string(d));
  }
  if (!v.all_finite()) fail(ErrorCode::kNonFinite, "svd input not finite");

  // Invariant throughout: v == q · w, with q orthogonal. Rotations make the
  // rows of w mutually orthogonal; then w = diag(σ)·Rᵀ.
  EmbeddingMatrix w = v;
  EmbeddingMatrix q = EmbeddingMatrix::identity(k);

  bool converged = false;
  double residual = 0.0;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    converged = true;
    residual = 0.0;
    for (std::size_t p = 0; p + 1 < k; ++p) {
      for (std::size_t r = p + 1; r < k; ++r) {
        auto wp = w.mutable_row(p);
        auto wr = w.mutable_row(r);
        const double alpha = dot(wp, wp);
        const double beta = dot(wr, wr);
        const double gamma = dot(wp, wr);
        if (alpha == 0.0 || beta == 0.0) continue;
        const double rel = std::abs(gamma) / std::sqrt(alpha * beta);
        residual = std::max(residual, rel);
        if (rel <= options.tolerance) continue;
        converged = false;

        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t j = 0; j < d; ++j) {
          const double a = wp[j];
          const double b = wr[j];
          wp[j] = c * a - s * b;
          wr[j] = s * a + c * b;
        }
        for (std::size_t i = 0; i < k; ++i) {
          const double a = q(i, p);
          const double b = q(i, r);
          q(i, p) = c * a - s * b;
          q(i, r) = s * a + c * b;
        }
      }
    }
  }
  if (!converged && residual > 1e-12) {
    fail(ErrorCode::kNoConvergence,
         "Jacobi SVD exhausted " + std::to_string(options.max_sweeps) +
             " sweeps, residual " + std::to_string(residual));
  }

  std::vector<double> norms = row_norms(w);
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return norms[a] > norms[b];
  });

  SvdFactors f{EmbeddingMatrix(k, k), std::vector<double>(k), EmbeddingMatrix(d, k)};
  const double sigma_max = norms[order[0]];
  const double null_threshold =
      std::max(sigma_max, 1.0) * static_cast<double>(d) * 1e-15;
  std::vector<bool> filled(k, false);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t src = order[c];
    f.sigma[c] = norms[src];
    for (std::size_t i = 0; i < k; ++i) f.u(i, c) = q(i, src);
    if (norms[src] > null_threshold) {
      for (std::size_t j = 0; j < d; ++j) f.r(j, c) = w(src, j) / norms[src];
      filled[c] = true;
    } else {
      f.sigma[c] = 0.0;
    }
  }

  // Null directions: complete R with orthonormal vectors (Gram-Schmidt over
  // the standard basis) so its columns stay orthonormal.
  std::size_t basis = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (filled[c]) continue;
    while (basis < d) {
      std::vector<double> cand(d, 0.0);
      cand[basis++] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < k; ++o) {
          if (!filled[o]) continue;
          double proj = 0.0;
          for (std::size_t j = 0; j < d; ++j) proj += cand[j] * f.r(j, o);
          for (std::size_t j = 0; j < d; ++j) cand[j] -= proj * f.r(j, o);
        }
      }
      const double n = norm(cand);
      if (n > 1e-8) {
        for (std::size_t j = 0; j < d; ++j) f.r(j, c) = cand[j] / n;
        filled[c] = true;
        break;
      }
    }
  }

  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < k; ++i) {
      const double val = f.u(i, c);
      if (std::abs(val) <= 1e-12) continue;
      if (val < 0.0) {
        for (std::size_t ii = 0; ii < k; ++ii) f.u(ii, c) = -f.u(ii, c);
        for (std::size_t j = 0; j < d; ++j) f.r(j, c) = -f.r(j, c);
      }
      break;
    }
  }
  return f;
}

EmbeddingMatrix reconstruct(const SvdFactors& f) {
  const std::size_t k = f.u.rows();
  const std::size_t d = f.r.rows();
  EmbeddingMatrix out(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t c = 0; c < f.sigma.size(); ++c) {
      const double s = f.u(i, c) * f.sigma[c];
      if (s == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) out(i, j) += s * f.r(j, c);
    }
  }
  return out;
}

SymmetricEigen symmetric_eigen(const EmbeddingMatrix& a, int max_sweeps) {
  const std::size_t n = a.rows();
  if (a.cols() != n) fail(ErrorCode::kShapeMismatch, "eigen input not square");
  EmbeddingMatrix m = a;
  EmbeddingMatrix vec = EmbeddingMatrix::identity(n);
  double scale = 0.0;
  for (double v : a.data()) scale = std::max(scale, std::abs(v));
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(m(p, q)));
    }
    if (off <= 1e-15 * std::max(scale, 1e-300)) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = std::copysign(1.0, theta) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p);
          const double mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k);
          const double mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vec(k, p);
          const double vkq = vec(k, q);
          vec(k, p) = c * vkp - s * vkq;
          vec(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return m(x, x) > m(y, y);
  });
  SymmetricEigen out{std::vector<double>(n), EmbeddingMatrix(n, n)};
  for (std::size_t c = 0; c < n; ++c) {
    out.values[c] = std::as_const(m)(order[c], order[c]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, c) = std::as_const(vec)(k, order[c]);
  }
  return out;
}

}  // namespace protoforge
