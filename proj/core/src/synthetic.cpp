#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <utility>

#include "protoforge/error.hpp"
#include "protoforge/evalharness.hpp"
#include "protoforge/diagnostics.hpp"

namespace protoforge {

namespace {

// Independent engines for directions, bias and features, so changing
// n_per_class leaves the class geometry untouched.
std::mt19937_64 engine(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

EmbeddingMatrix gaussian_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  EmbeddingMatrix m(rows, cols);
  for (double& v : m.mutable_data()) v = normal(rng);
  return m;
}

std::vector<double> unit_vector(std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  double n = 0.0;
  while (n < 1e-6) {
    for (double& x : v) x = normal(rng);
    n = norm(v);
  }
  for (double& x : v) x /= n;
  return v;
}

double max_violation(const EmbeddingMatrix& g, std::span<const ConfusionPair> pairs) {
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) worst = std::max(worst, std::abs(g(i, i) - 1.0));
  for (const auto& p : pairs) worst = std::max(worst, std::abs(g(p.i, p.j) - p.rho));
  return worst;
}

// Rotates the second member of each pair inside the plane it spans with the
// first, which is exact whenever the pairs do not share classes.
void rotate_pairs(EmbeddingMatrix& dirs, std::span<const ConfusionPair> pairs) {
  const std::size_t d = dirs.cols();
  for (const auto& p : pairs) {
    std::vector<double> u(dirs.row(p.i).begin(), dirs.row(p.i).end());
    std::vector<double> w(dirs.row(p.j).begin(), dirs.row(p.j).end());
    const double c = dot(w, u);
    for (std::size_t t = 0; t < d; ++t) w[t] -= c * u[t];
    const double wn = norm(w);
    if (wn < 1e-9) continue;  // parallel already; left to the Gram path
    const double s = std::sqrt(1.0 - p.rho * p.rho);
    auto row = dirs.mutable_row(p.j);
    for (std::size_t t = 0; t < d; ++t) row[t] = p.rho * u[t] + s * w[t] / wn;
  }
}

// Alternates between the affine set {unit diagonal, prescribed pair cosines}
// and PSD matrices of rank ≤ d. Returns the last PSD iterate; the caller
// decides feasibility from its constraint violation.
EmbeddingMatrix complete_gram(EmbeddingMatrix g, std::size_t d,
                              std::span<const ConfusionPair> pairs) {
  const std::size_t k = g.rows();
  for (int iter = 0; iter < 5000; ++iter) {
    for (std::size_t i = 0; i < k; ++i) g(i, i) = 1.0;
    for (const auto& p : pairs) {
      g(p.i, p.j) = p.rho;
      g(p.j, p.i) = p.rho;
    }
    const SymmetricEigen e = symmetric_eigen(g);
    EmbeddingMatrix next(k, k);
    for (std::size_t c = 0; c < std::min(d, k); ++c) {
      const double lam = e.values[c];
      if (lam <= 0.0) break;
      for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = 0; b < k; ++b) {
          next(a, b) += lam * e.vectors(a, c) * e.vectors(b, c);
        }
      }
    }
    g = std::move(next);
    if (max_violation(g, pairs) < 1e-12) break;
  }
  return g;
}

// K×d unit rows whose Gram matrix is (approximately) g, placed in a random
// subspace of R^d.
EmbeddingMatrix realize_gram(const EmbeddingMatrix& g, std::size_t d, std::mt19937_64& rng) {
  const std::size_t k = g.rows();
  const SymmetricEigen e = symmetric_eigen(g);
  const std::size_t r = std::min(d, k);
  EmbeddingMatrix y(k, r);
  for (std::size_t c = 0; c < r; ++c) {
    const double s = std::sqrt(std::max(e.values[c], 0.0));
    for (std::size_t a = 0; a < k; ++a) y(a, c) = e.vectors(a, c) * s;
  }
  // Random orthonormal r×d frame by Gram-Schmidt on Gaussian rows.
  EmbeddingMatrix q = gaussian_matrix(r, d, rng);
  for (std::size_t a = 0; a < r; ++a) {
    auto qa = q.mutable_row(a);
    for (std::size_t b = 0; b < a; ++b) {
      const double c = dot(q.row(b), qa);
      const auto qb = q.row(b);
      for (std::size_t t = 0; t < d; ++t) qa[t] -= c * qb[t];
    }
    const double n = norm(qa);
    for (double& v : qa) v /= n;
  }
  return normalize_rows(matmul(y, q));
}

}  // namespace

void SyntheticSpec::validate() const {
  if (k == 0 || d == 0 || n_per_class == 0) {
    fail(ErrorCode::kInvalidArgument, "classes, dim and per-class count must be positive");
  }
  if (!std::isfinite(noise_sigma) || noise_sigma < 0.0) {
    fail(ErrorCode::kInvalidArgument, "noise sigma must be finite and >= 0");
  }
  if (!std::isfinite(bias_strength) || !std::isfinite(pair_bias_extra)) {
    fail(ErrorCode::kInvalidArgument, "bias strengths must be finite");
  }
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& p : confusion_pairs) {
    if (p.i == p.j) {
      fail(ErrorCode::kInvalidArgument,
           "confusion pair " + std::to_string(p.i) + ":" + std::to_string(p.j) +
               " must name two different classes");
    }
    if (p.i >= k || p.j >= k) {
      fail(ErrorCode::kInvalidArgument, "confusion pair " + std::to_string(p.i) + ":" +
                                            std::to_string(p.j) + " out of range for " +
                                            std::to_string(k) + " classes");
    }
    if (!(p.rho >= 0.0 && p.rho < 1.0)) {
      fail(ErrorCode::kInvalidArgument, "confusion cosine must lie in [0, 1)");
    }
    if (!seen.emplace(std::min(p.i, p.j), std::max(p.i, p.j)).second) {
      fail(ErrorCode::kInvalidArgument, "confusion pair " + std::to_string(p.i) + ":" +
                                            std::to_string(p.j) + " listed twice");
    }
  }
}

SyntheticSpec default_benchmark_spec(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.k = 10;
  spec.d = 64;
  spec.n_per_class = 50;
  spec.noise_sigma = 0.25;
  spec.confusion_pairs = {{0, 1, 0.9}, {2, 3, 0.9}, {4, 5, 0.9}};
  spec.seed = seed;
  return spec;
}

std::vector<std::string> benchmark_class_names(std::size_t k) {
  static const std::vector<std::string> kLandCover = {
      "annual crop land", "forest", "herbaceous vegetation", "highway", "industrial buildings",
      "pasture land", "permanent crop land", "residential buildings", "river", "sea or lake"};
  if (k == kLandCover.size()) return kLandCover;
  std::vector<std::string> names(k);
  for (std::size_t i = 0; i < k; ++i) names[i] = "class " + std::to_string(i);
  return names;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t k = spec.k;
  const std::size_t d = spec.d;

  auto dir_rng = engine(spec.seed, 1);
  EmbeddingMatrix dirs = normalize_rows(gaussian_matrix(k, d, dir_rng));
  if (!spec.confusion_pairs.empty()) {
    rotate_pairs(dirs, spec.confusion_pairs);
    if (max_violation(gram(dirs), spec.confusion_pairs) > 1e-9) {
      // Pairs share classes or collapsed: solve for a Gram matrix instead.
      const EmbeddingMatrix g = complete_gram(gram(dirs), d, spec.confusion_pairs);
      const double viol = max_violation(g, spec.confusion_pairs);
      if (viol > 1e-8) {
        fail(ErrorCode::kInfeasibleConfusion,
             "no positive-semidefinite Gram matrix of rank <= " + std::to_string(d) +
                 " matches the requested cosines (violation " + std::to_string(viol) + ")");
      }
      dirs = realize_gram(g, d, dir_rng);
      if (max_violation(gram(dirs), spec.confusion_pairs) > 1e-6) {
        fail(ErrorCode::kInfeasibleConfusion, "requested cosines could not be realized");
      }
    }
  }
  dirs.mark_unit_rows();

  auto bias_rng = engine(spec.seed, 2);
  const std::vector<double> h = unit_vector(d, bias_rng);
  std::vector<double> strength(k, spec.bias_strength);
  for (const auto& p : spec.confusion_pairs) strength[p.i] += spec.pair_bias_extra;
  EmbeddingMatrix protos(k, d);
  for (std::size_t c = 0; c < k; ++c) {
    auto row = protos.mutable_row(c);
    const auto src = dirs.row(c);
    for (std::size_t t = 0; t < d; ++t) row[t] = src[t] + strength[c] * h[t];
  }

  auto feat_rng = engine(spec.seed, 3);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = k * spec.n_per_class;
  EmbeddingMatrix features(n, d);
  std::vector<std::size_t> labels(n);
  for (std::size_t c = 0; c < k; ++c) {
    const auto src = dirs.row(c);
    for (std::size_t s = 0; s < spec.n_per_class; ++s) {
      const std::size_t i = c * spec.n_per_class + s;
      labels[i] = c;
      auto row = features.mutable_row(i);
      for (std::size_t t = 0; t < d; ++t) row[t] = src[t] + spec.noise_sigma * normal(feat_rng);
    }
  }
  return SyntheticData{normalize_rows(features), std::move(labels), std::move(dirs),
                       normalize_rows(protos)};
}

double zero_shot_accuracy(const EmbeddingMatrix& features,
                          std::span<const std::size_t> labels,
                          const EmbeddingMatrix& prototypes) {
  if (labels.size() != features.rows()) {
    fail(ErrorCode::kShapeMismatch, std::to_string(labels.size()) + " labels for " +
                                        std::to_string(features.rows()) + " features");
  }
  for (std::size_t l : labels) {
    if (l >= prototypes.rows()) {
      fail(ErrorCode::kShapeMismatch, "label " + std::to_string(l) + " has no prototype");
    }
  }
  if (labels.empty()) return 0.0;
  const AssignmentMatrix a = cosine_assign(features, prototypes);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += a.label(i) == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace protoforge
