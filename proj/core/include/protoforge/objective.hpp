#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protoforge/encoder.hpp"
#include "protoforge/linalg.hpp"
#include "protoforge/prototype.hpp"

namespace protoforge {

// How encoder-produced rows of X are formed: the bare class name, or the mean
// over the prompt templates (same pipeline as the initial prototypes).
enum class XMode { kBare, kAveraged };

std::string to_string(XMode mode);
XMode x_mode_from_string(const std::string& name);

struct ObjectiveConfig {
  double lambda0 = 2.0;
  double lambda_growth = 1.15;
  bool normalize_x = false;
  XMode x_mode = XMode::kAveraged;

  void validate() const;
};

struct LossReport {
  double fidelity = 0.0;  // ‖X − V‖_F²
  double penalty = 0.0;   // ‖XXᵀ − I‖_F²
  double lambda = 0.0;
  double total = 0.0;     // fidelity + lambda·penalty
};

LossReport loss(const EmbeddingMatrix& x, const EmbeddingMatrix& v, double lambda);

// ∇_X = 2(X − V) + 4λ(XXᵀ − I)X
EmbeddingMatrix loss_grad_x(const EmbeddingMatrix& x, const EmbeddingMatrix& v,
                            double lambda);

// lambda0 · growth^epoch; the same value is used for every step of an epoch.
double lambda_at(const ObjectiveConfig& config, std::size_t epoch);

using ScalarFunction = std::function<double(std::span<const double>)>;

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckFloor = 1e-10;

// Central-difference check of `analytic` against f at `point`. Returns the
// largest |analytic − numeric| / max(|analytic|, |numeric|, 1e-10) over all
// coordinates. NonFinite if f returns NaN or ±Inf.
double grad_check(const ScalarFunction& f, std::span<const double> point,
                  std::span<const double> analytic, double step = kGradCheckStep);

// --- Loss through the encoder -------------------------------------------

// Token sequences that produce each class row: one (bare) or T (averaged).
struct ClassTokens {
  std::vector<std::vector<TokenSequence>> per_class;
};

ClassTokens make_class_tokens(std::span<const std::string> names,
                              const TemplateSet& templates, XMode mode,
                              std::size_t vocab_size);

// X(θ): mean encoder output over each class's sequences, optionally projected
// onto the unit sphere.
EmbeddingMatrix encode_classes(const EncoderParams& params,
                               std::span<const LoraAdapter> adapters,
                               const ClassTokens& tokens, bool normalize_x);

struct LoraEvaluation {
  EmbeddingMatrix x;
  LossReport report;
  AdapterGrads grads;
};

// Loss at the current adapters and its gradient w.r.t. every adapter A and B,
// chained through the optional sphere projection and template averaging.
LoraEvaluation lora_loss_and_grad(const EncoderParams& params,
                                  std::span<const LoraAdapter> adapters,
                                  const ClassTokens& tokens,
                                  const EmbeddingMatrix& v, double lambda,
                                  bool normalize_x);

// Flat parameter views over adapters: for each adapter, A then B, row-major.
std::vector<double> flatten_adapters(std::span<const LoraAdapter> adapters);
void unflatten_adapters(std::span<const double> flat,
                        std::span<LoraAdapter> adapters);
std::vector<double> flatten_grads(const AdapterGrads& grads);

}  // namespace protoforge
