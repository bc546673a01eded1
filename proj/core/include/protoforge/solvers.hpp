#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "protoforge/encoder.hpp"
#include "protoforge/linalg.hpp"
#include "protoforge/objective.hpp"
#include "protoforge/optim.hpp"
#include "protoforge/prototype.hpp"

namespace protoforge {

enum class TrainMode { kDirectX, kLoraEncoder };

inline constexpr double kDeskLearningRate = 1e-3;
inline constexpr double kPretrainedLearningRate = 5e-6;
inline constexpr double kDivergenceThreshold = 1e6;

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t steps_per_epoch = 50;
  double learning_rate = kDeskLearningRate;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kDirectX;
  // Echoed into logs only; every step is full-batch over the K classes.
  std::size_t batch_size = 64;

  void validate() const;
  AdamWConfig optimizer() const;
};

// Same settings with the learning rate used for a pretrained text tower.
TrainConfig with_pretrained_hparams(TrainConfig config);

enum class Method { kMean, kSvd, kSoftDirect, kSoftLora };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct TrainingStep {
  std::size_t epoch = 0;
  std::size_t step = 0;  // global step index
  LossReport report;     // evaluated before the update of this step
};

struct RefinementResult {
  EmbeddingMatrix x;
  std::vector<TrainingStep> history;  // empty for closed forms
  LossReport final_report;            // at the returned x, last epoch's λ
  Method method = Method::kMean;
};

// Mean of epoch-level total losses, one entry per epoch.
std::vector<double> epoch_mean_totals(const std::vector<TrainingStep>& history);

using StepObserver = std::function<void(const TrainingStep&)>;

/// λ = 0 closed form: the template-averaged prototypes themselves.
RefinementResult solve_mean(const PrototypeSet& prototypes);

/// Hard-orthonormality closed form: X = U·Rᵀ from V = U·Σ·Rᵀ, the nearest
/// row-orthonormal matrix to V in Frobenius norm. RankDeficient when
/// σ_min ≤ 1e-10, since the nearest point is then not unique.
RefinementResult solve_procrustes(const PrototypeSet& prototypes);

inline constexpr double kRankTolerance = 1e-10;

/// Adaptive-moment descent on the soft objective directly over X, starting
/// at V. Weight decay pulls X toward V (its initialization), so V remains a
/// fixed point whenever it is stationary.
RefinementResult solve_soft_direct(const PrototypeSet& prototypes,
                                   const ObjectiveConfig& objective,
                                   const TrainConfig& train,
                                   const StepObserver& observer = {});

struct LoraRefinement {
  RefinementResult result;
  PrototypeSet initial;               // V from the frozen encoder, computed once
  std::vector<LoraAdapter> adapters;  // trained adapters
};

/// Soft objective minimized through the encoder: only the LoRA A/B matrices
/// are updated, base weights are never written. V is built once from the
/// unadapted encoder (template mean, projected to the sphere exactly when
/// objective.normalize_x is set, so that X(θ₀) = V in averaged mode).
LoraRefinement solve_soft_lora(std::span<const std::string> class_names,
                               const TemplateSet& templates,
                               const EncoderParams& params,
                               std::vector<LoraAdapter> adapters,
                               const ObjectiveConfig& objective,
                               const TrainConfig& train,
                               const StepObserver& observer = {});

}  // namespace protoforge
