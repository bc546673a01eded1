#include "protoforge/objective.hpp"

#include <algorithm>
#include <cmath>

#include "protoforge/error.hpp"

namespace protoforge {

namespace {

void require_same_shape(const EmbeddingMatrix& x, const EmbeddingMatrix& v) {
  if (x.rows() != v.rows() || x.cols() != v.cols()) {
    fail(ErrorCode::kShapeMismatch,
         "X is " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
             " but V is " + std::to_string(v.rows()) + "x" +
             std::to_string(v.cols()));
  }
}

// XXᵀ − I
EmbeddingMatrix gram_residual(const EmbeddingMatrix& x) {
  EmbeddingMatrix g = gram(x);
  for (std::size_t i = 0; i < g.rows(); ++i) g(i, i) -= 1.0;
  return g;
}

}  // namespace

std::string to_string(XMode mode) {
  return mode == XMode::kBare ? "bare" : "averaged";
}

XMode x_mode_from_string(const std::string& name) {
  if (name == "bare") return XMode::kBare;
  if (name == "averaged") return XMode::kAveraged;
  fail(ErrorCode::kInvalidArgument, "x_mode must be bare or averaged, got " + name);
}

void ObjectiveConfig::validate() const {
  if (!(lambda0 >= 0.0) || !std::isfinite(lambda0)) {
    fail(ErrorCode::kInvalidArgument, "lambda0 must be finite and >= 0");
  }
  if (!(lambda_growth >= 1.0) || !std::isfinite(lambda_growth)) {
    fail(ErrorCode::kInvalidArgument, "lambda_growth must be finite and >= 1");
  }
}

LossReport loss(const EmbeddingMatrix& x, const EmbeddingMatrix& v, double lambda) {
  require_same_shape(x, v);
  LossReport r;
  r.fidelity = frobenius_sq(x - v);
  r.penalty = frobenius_sq(gram_residual(x));
  r.lambda = lambda;
  r.total = r.fidelity + lambda * r.penalty;
  return r;
}

EmbeddingMatrix loss_grad_x(const EmbeddingMatrix& x, const EmbeddingMatrix& v,
                            double lambda) {
  require_same_shape(x, v);
  EmbeddingMatrix g = 2.0 * (x - v);
  if (lambda != 0.0) {
    const EmbeddingMatrix orth = matmul(gram_residual(x), x);
    auto gd = g.mutable_data();
    auto od = orth.data();
    for (std::size_t i = 0; i < gd.size(); ++i) gd[i] += 4.0 * lambda * od[i];
  }
  return g;
}

double lambda_at(const ObjectiveConfig& config, std::size_t epoch) {
  return config.lambda0 *
         std::pow(config.lambda_growth, static_cast<double>(epoch));
}

double grad_check(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> analytic, double step) {
  if (!(step > 0.0)) fail(ErrorCode::kInvalidArgument, "step must be > 0");
  if (analytic.size() != point.size()) {
    fail(ErrorCode::kShapeMismatch, "analytic gradient length differs from point");
  }
  std::vector<double> p(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double saved = p[i];
    p[i] = saved + step;
    const double plus = f(p);
    p[i] = saved - step;
    const double minus = f(p);
    p[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      fail(ErrorCode::kNonFinite,
           "function not finite near coordinate " + std::to_string(i));
    }
    const double numeric = (plus - minus) / (2.0 * step);
    const double denom =
        std::max({std::abs(analytic[i]), std::abs(numeric), kGradCheckFloor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

ClassTokens make_class_tokens(std::span<const std::string> names,
                              const TemplateSet& templates, XMode mode,
                              std::size_t vocab_size) {
  validate_class_names(names);
  ClassTokens tokens;
  for (const auto& name : names) {
    std::vector<TokenSequence> seqs;
    if (mode == XMode::kBare) {
      seqs.push_back(tokenize(name, vocab_size));
    } else {
      for (std::size_t t = 0; t < templates.size(); ++t) {
        seqs.push_back(tokenize(templates.instantiate(t, name), vocab_size));
      }
    }
    tokens.per_class.push_back(std::move(seqs));
  }
  return tokens;
}

namespace {

struct ClassForward {
  std::vector<std::vector<EncodeTrace>> traces;
  EmbeddingMatrix raw;  // template means, before projection
  EmbeddingMatrix x;
};

ClassForward forward_classes(const EncoderParams& params,
                             std::span<const LoraAdapter> adapters,
                             const ClassTokens& tokens, bool normalize_x) {
  const std::size_t k = tokens.per_class.size();
  if (k == 0) fail(ErrorCode::kInvalidArgument, "no classes to encode");
  ClassForward fw;
  fw.raw = EmbeddingMatrix(k, params.dims.out_dim);
  fw.traces.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& seqs = tokens.per_class[i];
    auto row = fw.raw.mutable_row(i);
    for (const auto& seq : seqs) {
      fw.traces[i].push_back(encode_traced(params, adapters, seq));
      const auto& y = fw.traces[i].back().output;
      for (std::size_t j = 0; j < y.size(); ++j) row[j] += y[j];
    }
    for (double& val : row) val /= static_cast<double>(seqs.size());
  }
  fw.x = normalize_x ? normalize_rows(fw.raw) : fw.raw;
  return fw;
}

}  // namespace

EmbeddingMatrix encode_classes(const EncoderParams& params,
                               std::span<const LoraAdapter> adapters,
                               const ClassTokens& tokens, bool normalize_x) {
  return forward_classes(params, adapters, tokens, normalize_x).x;
}

LoraEvaluation lora_loss_and_grad(const EncoderParams& params,
                                  std::span<const LoraAdapter> adapters,
                                  const ClassTokens& tokens,
                                  const EmbeddingMatrix& v, double lambda,
                                  bool normalize_x) {
  ClassForward fw = forward_classes(params, adapters, tokens, normalize_x);
  LoraEvaluation ev;
  ev.report = loss(fw.x, v, lambda);
  const EmbeddingMatrix grad_x = loss_grad_x(fw.x, v, lambda);
  ev.grads = AdapterGrads::zeros_like(adapters);

  const std::size_t d = params.dims.out_dim;
  std::vector<double> grad_raw(d);
  for (std::size_t i = 0; i < fw.traces.size(); ++i) {
    auto gx = grad_x.row(i);
    if (normalize_x) {
      // x = r/‖r‖  ⇒  ∂L/∂r = (g − (g·x) x) / ‖r‖
      auto xi = fw.x.row(i);
      const double n = norm(fw.raw.row(i));
      const double gdotx = dot(gx, xi);
      for (std::size_t j = 0; j < d; ++j) grad_raw[j] = (gx[j] - gdotx * xi[j]) / n;
    } else {
      std::copy(gx.begin(), gx.end(), grad_raw.begin());
    }
    const double inv_t = 1.0 / static_cast<double>(fw.traces[i].size());
    for (double& g : grad_raw) g *= inv_t;
    for (const auto& trace : fw.traces[i]) {
      backpropagate(params, adapters, trace, grad_raw, ev.grads);
    }
  }
  ev.x = std::move(fw.x);
  return ev;
}

std::vector<double> flatten_adapters(std::span<const LoraAdapter> adapters) {
  std::vector<double> flat;
  for (const auto& ad : adapters) {
    flat.insert(flat.end(), ad.a.data().begin(), ad.a.data().end());
    flat.insert(flat.end(), ad.b.data().begin(), ad.b.data().end());
  }
  return flat;
}

void unflatten_adapters(std::span<const double> flat,
                        std::span<LoraAdapter> adapters) {
  std::size_t total = 0;
  for (const auto& ad : adapters) total += ad.parameter_count();
  if (flat.size() != total) {
    fail(ErrorCode::kShapeMismatch, "flat adapter vector has wrong length");
  }
  std::size_t off = 0;
  for (auto& ad : adapters) {
    auto a = ad.a.mutable_data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), a.size(), a.begin());
    off += a.size();
    auto b = ad.b.mutable_data();
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), b.size(), b.begin());
    off += b.size();
  }
}

std::vector<double> flatten_grads(const AdapterGrads& grads) {
  std::vector<double> flat;
  for (std::size_t n = 0; n < grads.a.size(); ++n) {
    flat.insert(flat.end(), grads.a[n].data().begin(), grads.a[n].data().end());
    flat.insert(flat.end(), grads.b[n].data().begin(), grads.b[n].data().end());
  }
  return flat;
}

}  // namespace protoforge
