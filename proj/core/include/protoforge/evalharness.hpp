#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "protoforge/linalg.hpp"

namespace protoforge {

struct ConfusionPair {
  std::size_t i = 0;
  std::size_t j = 0;
  double rho = 0.0;  // target cosine between the two class directions
};

/// Desk-scale stand-in for frozen image features: K class directions on the
/// unit sphere, some pairs pulled to a fixed cosine, noisy unit features
/// around each, and deliberately misaligned starting prototypes.
struct SyntheticSpec {
  std::size_t k = 10;
  std::size_t d = 64;
  std::size_t n_per_class = 50;
  std::vector<ConfusionPair> confusion_pairs;
  double noise_sigma = 0.25;  // per coordinate
  std::uint64_t seed = 0;
  // Misalignment model: every prototype is pushed along one shared random
  // direction h by bias_strength, and the first-listed member of each
  // confusion pair by an extra pair_bias_extra, which drags it toward its
  // partner's side of the boundary.
  double bias_strength = 0.6;
  double pair_bias_extra = 0.5;

  void validate() const;
};

// K=10, d=64, pairs (0,1), (2,3), (4,5) at ρ=0.9, σ=0.25, 50 per class.
SyntheticSpec default_benchmark_spec(std::uint64_t seed);

// Names for the benchmark classes (land-cover categories for K = 10,
// "class <i>" otherwise), used when prototypes come from the toy encoder.
std::vector<std::string> benchmark_class_names(std::size_t k);

struct SyntheticData {
  EmbeddingMatrix features;  // N×d unit rows, class-major order
  std::vector<std::size_t> labels;
  EmbeddingMatrix true_directions;     // K×d unit rows
  EmbeddingMatrix initial_prototypes;  // K×d unit rows
};

/// Throws InfeasibleConfusion when the requested cosines cannot be realized
/// by K unit vectors in d dimensions.
SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Fraction of samples whose cosine argmax equals their label.
double zero_shot_accuracy(const EmbeddingMatrix& features,
                          std::span<const std::size_t> labels,
                          const EmbeddingMatrix& prototypes);

enum class StreamMode { kBatchRealistic, kOnlineDirichlet, kSeparate };
std::string to_string(StreamMode mode);

struct StreamConfig {
  StreamMode mode = StreamMode::kBatchRealistic;
  std::size_t batch_size = 64;
  std::size_t n_tasks = 1000;  // tasks in batch mode, streams otherwise
  std::size_t keff_low = 1;
  std::size_t keff_high = 4;
  double gamma = 0.01;
  std::uint64_t seed = 0;
  // Online only: draw fresh proportions for every batch.
  bool per_batch_resample = false;
  // Online only: samples per stream; 0 means one pass over the dataset size.
  std::size_t stream_length = 0;

  // `num_classes` bounds keff_high in batch mode.
  void validate(std::size_t num_classes) const;
};

struct StreamTask {
  std::size_t task_id = 0;
  std::size_t stream_id = 0;  // equals task_id in batch mode
  std::size_t k_eff = 0;      // batch mode: the drawn effective class count
  std::vector<std::size_t> indices;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> present_classes;  // sorted, distinct
  // Some pool ran dry and samples were drawn with replacement, or
  // the requested K_eff was clamped to the batch size.
  bool resampled = false;
  bool clamped = false;
};

/// Dirichlet(γ·1_K) draws computed in log space, so tiny concentrations do
/// not underflow every gamma variate to zero.
class DirichletSampler {
 public:
  DirichletSampler(std::size_t k, double gamma);
  std::vector<double> operator()(std::mt19937_64& rng) const;
  std::size_t k() const { return k_; }
  double gamma() const { return gamma_; }

 private:
  std::size_t k_;
  double gamma_;
};

// Largest-remainder apportionment of `total` items to the proportions.
std::vector<std::size_t> apportion(std::span<const double> proportions, std::size_t total);

std::vector<StreamTask> sample_batch_tasks(std::span<const std::size_t> labels,
                                           std::size_t num_classes,
                                           const StreamConfig& cfg);

/// Ordered batches for cfg.n_tasks streams, concatenated stream by stream;
/// StreamTask::stream_id tells them apart.
std::vector<StreamTask> sample_online_stream(std::span<const std::size_t> labels,
                                             std::size_t num_classes,
                                             const StreamConfig& cfg);

struct TaskEvaluation {
  double mean_accuracy = 0.0;
  std::vector<double> per_task;
  std::vector<std::size_t> per_task_correct;
};

/// Per-task accuracy with the argmax restricted to each task's present
/// classes (or over all classes when `restrict_to_present` is false).
TaskEvaluation evaluate_over_tasks(std::span<const StreamTask> tasks,
                                   const EmbeddingMatrix& features,
                                   const EmbeddingMatrix& prototypes,
                                   bool restrict_to_present = true);

struct StreamSummary {
  std::size_t stream_id = 0;
  std::size_t batches = 0;
  std::size_t samples = 0;
  double accuracy = 0.0;  // pooled over the stream's samples
};

std::vector<StreamSummary> summarize_streams(std::span<const StreamTask> tasks,
                                             const TaskEvaluation& evaluation);

// features.csv, labels.txt and dataset.json inside `dir`.
struct DatasetBundle {
  EmbeddingMatrix features;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string spec_json;  // echo of the generating spec, "{}" if unknown
};

inline constexpr const char* kFeaturesFile = "features.csv";
inline constexpr const char* kLabelsFile = "labels.txt";
inline constexpr const char* kDatasetFile = "dataset.json";
inline constexpr const char* kDirectionsFile = "directions.csv";
inline constexpr const char* kInitialPrototypesFile = "initial_prototypes.csv";

std::string spec_to_json(const SyntheticSpec& spec);
SyntheticSpec spec_from_json(const std::string& text);

// Writes the features, labels, true directions, initial prototypes and a
// dataset.json with K, d, N, seed and the spec. Returns the written paths.
std::vector<std::filesystem::path> save_synthetic_bundle(const std::filesystem::path& dir,
                                                         const SyntheticSpec& spec,
                                                         const SyntheticData& data);
DatasetBundle load_dataset_bundle(const std::filesystem::path& dir);

}  // namespace protoforge
