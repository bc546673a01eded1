#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "protoforge/linalg.hpp"

namespace protoforge {

/// Hard assignment of N samples to K classes. Stored as one class index per
/// sample, which makes the one-hot/column-stochastic invariant structural;
/// operator() exposes the K×N indicator view.
class AssignmentMatrix {
 public:
  AssignmentMatrix() = default;
  // Throws InvalidArgument if a label is >= num_classes.
  AssignmentMatrix(std::size_t num_classes, std::vector<std::size_t> labels);

  // Builds from an explicit K×N indicator matrix. A column with no 1 raises
  // EmptyAssignment; any other entry outside {0,1} or a column with several
  // 1s raises InvalidArgument.
  static AssignmentMatrix from_indicators(const EmbeddingMatrix& u);

  std::size_t num_classes() const { return num_classes_; }
  std::size_t num_samples() const { return labels_.size(); }
  const std::vector<std::size_t>& labels() const { return labels_; }
  std::size_t label(std::size_t i) const { return labels_[i]; }

  double operator()(std::size_t k, std::size_t i) const {
    return labels_[i] == k ? 1.0 : 0.0;
  }
  EmbeddingMatrix indicators() const;
  std::vector<std::size_t> counts() const;

  friend bool operator==(const AssignmentMatrix&, const AssignmentMatrix&) = default;

 private:
  std::size_t num_classes_ = 0;
  std::vector<std::size_t> labels_;
};

// ½ Σ_{i,k} u_ik ‖f_i − x_k‖² + N·(d/2)·log(2π): the negative log-likelihood
// of the features under unit-variance Gaussians centred at the prototypes.
double gaussian_nll(const EmbeddingMatrix& features, const AssignmentMatrix& u,
                    const EmbeddingMatrix& centers);

// Argmax of fᵢᵀx_k, ties to the lowest k. Both inputs must carry the
// unit_rows flag (NotNormalized otherwise).
AssignmentMatrix cosine_assign(const EmbeddingMatrix& features,
                               const EmbeddingMatrix& prototypes);

// Index of the largest score; the earliest one wins a tie.
std::size_t argmax_lowest(std::span<const double> scores);

struct ScatterReport {
  double within = 0.0;
  double total = 0.0;
  double between = 0.0;
  std::vector<double> global_mean;
  std::vector<std::size_t> class_counts;
  EmbeddingMatrix class_means;  // K×d, zero rows for empty classes
  std::vector<std::size_t> empty_classes;
  // |within − (total − between)| / max(total, 1)
  double residual = 0.0;
};

inline constexpr double kIdentityTolerance = 1e-9;

/// Within, total and between scatter with x_k taken as the within-class
/// means. All three are accumulated independently so the residual is a real
/// check of the decomposition rather than a tautology.
ScatterReport huygens(const EmbeddingMatrix& features, const AssignmentMatrix& u);

struct BetweenOffdiag {
  double between_term = 0.0;     // Σ_k N_k ‖x_k − f̄‖², f̄ = Σ N_k x_k / N
  double weighted_offdiag = 0.0; // Σ_{k≠k'} N_k N_k' x_kᵀx_k' / N
  double constant = 0.0;         // N − Σ N_k² / N
  double residual = 0.0;         // |between + offdiag − constant| / max(N, 1)
};

BetweenOffdiag between_vs_offdiag(const EmbeddingMatrix& prototypes,
                                  std::span<const std::size_t> counts);

struct GeometryMetrics {
  double displacement_mean = 0.0;
  double displacement_median = 0.0;
  double dispersion = 0.0;        // mean over non-empty classes
  double max_offdiag_gram = 0.0;  // of x as given
  std::vector<double> displacements;
  std::vector<double> class_dispersion;  // 0 for empty classes
  // cos(x_k, f̄_k) per class; NaN for empty classes
  std::vector<double> alignment;
  double mean_alignment = 0.0;
};

GeometryMetrics geometry_metrics(const EmbeddingMatrix& x, const EmbeddingMatrix& v,
                                 const EmbeddingMatrix& features,
                                 std::span<const std::size_t> labels);

}  // namespace protoforge
