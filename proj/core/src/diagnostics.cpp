#include "protoforge/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "protoforge/error.hpp"

namespace protoforge {

AssignmentMatrix::AssignmentMatrix(std::size_t num_classes,
                                   std::vector<std::size_t> labels)
    : num_classes_(num_classes), labels_(std::move(labels)) {
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] >= num_classes_) {
      fail(ErrorCode::kInvalidArgument,
           "sample " + std::to_string(i) + " assigned to class " +
               std::to_string(labels_[i]) + " of " + std::to_string(num_classes_));
    }
  }
}

AssignmentMatrix AssignmentMatrix::from_indicators(const EmbeddingMatrix& u) {
  std::vector<std::size_t> labels(u.cols());
  for (std::size_t i = 0; i < u.cols(); ++i) {
    std::size_t ones = 0;
    for (std::size_t k = 0; k < u.rows(); ++k) {
      const double e = u(k, i);
      if (e == 1.0) {
        labels[i] = k;
        ++ones;
      } else if (e != 0.0) {
        fail(ErrorCode::kInvalidArgument,
             "assignment entry (" + std::to_string(k) + "," + std::to_string(i) +
                 ") is not 0 or 1");
      }
    }
    if (ones == 0) {
      fail(ErrorCode::kEmptyAssignment,
           "sample " + std::to_string(i) + " is assigned to no class");
    }
    if (ones > 1) {
      fail(ErrorCode::kInvalidArgument,
           "sample " + std::to_string(i) + " is assigned to several classes");
    }
  }
  return AssignmentMatrix(u.rows(), std::move(labels));
}

EmbeddingMatrix AssignmentMatrix::indicators() const {
  EmbeddingMatrix u(num_classes_, labels_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) u(labels_[i], i) = 1.0;
  return u;
}

std::vector<std::size_t> AssignmentMatrix::counts() const {
  std::vector<std::size_t> c(num_classes_, 0);
  for (std::size_t l : labels_) ++c[l];
  return c;
}

double gaussian_nll(const EmbeddingMatrix& features, const AssignmentMatrix& u,
                    const EmbeddingMatrix& centers) {
  if (features.rows() != u.num_samples() || centers.rows() != u.num_classes() ||
      features.cols() != centers.cols()) {
    fail(ErrorCode::kShapeMismatch, "gaussian_nll: features, assignment and centers disagree");
  }
  const std::size_t d = features.cols();
  double quad = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto f = features.row(i);
    const auto x = centers.row(u.label(i));
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = f[j] - x[j];
      quad += diff * diff;
    }
  }
  const double n = static_cast<double>(features.rows());
  return 0.5 * quad + n * (static_cast<double>(d) / 2.0) * std::log(2.0 * std::numbers::pi);
}

std::size_t argmax_lowest(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

AssignmentMatrix cosine_assign(const EmbeddingMatrix& features,
                               const EmbeddingMatrix& prototypes) {
  if (!features.unit_rows()) fail(ErrorCode::kNotNormalized, "features are not unit-row");
  if (!prototypes.unit_rows()) fail(ErrorCode::kNotNormalized, "prototypes are not unit-row");
  if (features.cols() != prototypes.cols()) {
    fail(ErrorCode::kShapeMismatch,
         "feature dim " + std::to_string(features.cols()) + " vs prototype dim " +
             std::to_string(prototypes.cols()));
  }
  const std::size_t k = prototypes.rows();
  std::vector<std::size_t> labels(features.rows());
  std::vector<double> scores(k);
  for (std::size_t i = 0; i < features.rows(); ++i) {
    for (std::size_t c = 0; c < k; ++c) scores[c] = dot(features.row(i), prototypes.row(c));
    labels[i] = argmax_lowest(scores);
  }
  return AssignmentMatrix(k, std::move(labels));
}

ScatterReport huygens(const EmbeddingMatrix& features, const AssignmentMatrix& u) {
  if (features.rows() != u.num_samples()) {
    fail(ErrorCode::kShapeMismatch, "huygens: " + std::to_string(features.rows()) +
                                        " features vs " + std::to_string(u.num_samples()) +
                                        " assignments");
  }
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  const std::size_t k = u.num_classes();
  if (n == 0) fail(ErrorCode::kEmptyAssignment, "huygens needs at least one sample");

  ScatterReport r;
  r.class_counts = u.counts();
  r.global_mean.assign(d, 0.0);
  r.class_means = EmbeddingMatrix(k, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = features.row(i);
    auto m = r.class_means.mutable_row(u.label(i));
    for (std::size_t j = 0; j < d; ++j) {
      r.global_mean[j] += f[j];
      m[j] += f[j];
    }
  }
  for (double& g : r.global_mean) g /= static_cast<double>(n);
  for (std::size_t c = 0; c < k; ++c) {
    if (r.class_counts[c] == 0) {
      r.empty_classes.push_back(c);
      continue;
    }
    for (double& m : r.class_means.mutable_row(c)) m /= static_cast<double>(r.class_counts[c]);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const auto f = features.row(i);
    const auto m = r.class_means.row(u.label(i));
    for (std::size_t j = 0; j < d; ++j) {
      const double w = f[j] - m[j];
      const double t = f[j] - r.global_mean[j];
      r.within += w * w;
      r.total += t * t;
    }
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (r.class_counts[c] == 0) continue;
    const auto m = r.class_means.row(c);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double b = m[j] - r.global_mean[j];
      s += b * b;
    }
    r.between += static_cast<double>(r.class_counts[c]) * s;
  }
  r.residual = std::abs(r.within - (r.total - r.between)) / std::max(r.total, 1.0);
  return r;
}

BetweenOffdiag between_vs_offdiag(const EmbeddingMatrix& prototypes,
                                  std::span<const std::size_t> counts) {
  if (!prototypes.unit_rows()) fail(ErrorCode::kNotNormalized, "prototypes are not unit-row");
  const std::size_t k = prototypes.rows();
  const std::size_t d = prototypes.cols();
  if (counts.size() != k) {
    fail(ErrorCode::kShapeMismatch, std::to_string(counts.size()) + " counts for " +
                                        std::to_string(k) + " prototypes");
  }
  double n = 0.0;
  double sum_sq = 0.0;
  for (std::size_t c : counts) {
    if (c == 0) fail(ErrorCode::kInvalidArgument, "class counts must be positive");
    n += static_cast<double>(c);
    sum_sq += static_cast<double>(c) * static_cast<double>(c);
  }

  std::vector<double> fbar(d, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    const auto x = prototypes.row(c);
    for (std::size_t j = 0; j < d; ++j) fbar[j] += static_cast<double>(counts[c]) * x[j];
  }
  for (double& f : fbar) f /= n;

  BetweenOffdiag out;
  for (std::size_t c = 0; c < k; ++c) {
    const auto x = prototypes.row(c);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double b = x[j] - fbar[j];
      s += b * b;
    }
    out.between_term += static_cast<double>(counts[c]) * s;
  }
  const EmbeddingMatrix g = gram(prototypes);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      if (a == b) continue;
      out.weighted_offdiag += static_cast<double>(counts[a]) *
                              static_cast<double>(counts[b]) * g(a, b) / n;
    }
  }
  out.constant = n - sum_sq / n;
  out.residual =
      std::abs(out.between_term + out.weighted_offdiag - out.constant) / std::max(n, 1.0);
  return out;
}

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t m = values.size() / 2;
  if (values.size() % 2 == 1) return values[m];
  return 0.5 * (values[m - 1] + values[m]);
}

}  // namespace

GeometryMetrics geometry_metrics(const EmbeddingMatrix& x, const EmbeddingMatrix& v,
                                 const EmbeddingMatrix& features,
                                 std::span<const std::size_t> labels) {
  if (x.rows() != v.rows() || x.cols() != v.cols()) {
    fail(ErrorCode::kShapeMismatch, "geometry_metrics: x and v shapes differ");
  }
  if (features.rows() != labels.size() || (features.rows() > 0 && features.cols() != x.cols())) {
    fail(ErrorCode::kShapeMismatch, "geometry_metrics: features, labels and x disagree");
  }
  const std::size_t k = x.rows();
  const std::size_t d = x.cols();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k) {
      fail(ErrorCode::kShapeMismatch, "label " + std::to_string(labels[i]) + " at sample " +
                                          std::to_string(i) + " is out of range");
    }
  }

  GeometryMetrics m;
  m.displacements.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x(c, j) - v(c, j);
      s += diff * diff;
    }
    m.displacements[c] = std::sqrt(s);
  }
  double total = 0.0;
  for (double disp : m.displacements) total += disp;
  m.displacement_mean = k > 0 ? total / static_cast<double>(k) : 0.0;
  m.displacement_median = median(m.displacements);

  // Dispersion and alignment are measured on unit features.
  EmbeddingMatrix unit = features.rows() > 0 ? normalize_rows(features) : features;
  EmbeddingMatrix sums(k, d);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto s = sums.mutable_row(labels[i]);
    const auto f = unit.row(i);
    for (std::size_t j = 0; j < d; ++j) s[j] += f[j];
    ++counts[labels[i]];
  }
  m.class_dispersion.assign(k, 0.0);
  m.alignment.assign(k, std::nan(""));
  double disp_sum = 0.0;
  double align_sum = 0.0;
  std::size_t nonempty = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    const double mean_norm = norm(sums.row(c));
    double acc = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != c) continue;
      acc += 1.0 - (mean_norm > 0.0 ? dot(sums.row(c), unit.row(i)) / mean_norm : 0.0);
    }
    m.class_dispersion[c] = acc / static_cast<double>(counts[c]);
    const double xn = norm(x.row(c));
    m.alignment[c] =
        (mean_norm > 0.0 && xn > 0.0) ? dot(sums.row(c), x.row(c)) / (mean_norm * xn) : 0.0;
    disp_sum += m.class_dispersion[c];
    align_sum += m.alignment[c];
    ++nonempty;
  }
  if (nonempty > 0) {
    m.dispersion = disp_sum / static_cast<double>(nonempty);
    m.mean_alignment = align_sum / static_cast<double>(nonempty);
  }
  m.max_offdiag_gram = k > 1 ? max_offdiag_abs(gram(x)) : 0.0;
  return m;
}

}  // namespace protoforge
