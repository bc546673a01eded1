#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <string>

#include <json.hpp>

#include "protoforge/diagnostics.hpp"
#include "protoforge/error.hpp"
#include "protoforge/evalharness.hpp"
#include "protoforge/io.hpp"
#include "protoforge/parallel.hpp"

namespace protoforge {

namespace {

using json = nlohmann::json;

std::mt19937_64 task_engine(std::uint64_t seed, std::uint64_t task) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(task), static_cast<std::uint32_t>(task >> 32),
                    0x5eedu};
  return std::mt19937_64(seq);
}

std::vector<std::vector<std::size_t>> class_pools(std::span<const std::size_t> labels,
                                                  std::size_t num_classes) {
  std::vector<std::vector<std::size_t>> pools(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      fail(ErrorCode::kShapeMismatch, "label " + std::to_string(labels[i]) + " at sample " +
                                          std::to_string(i) + " exceeds the class count");
    }
    pools[labels[i]].push_back(i);
  }
  return pools;
}

std::size_t uniform_index(std::size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

void finish_task(StreamTask& task, std::span<const std::size_t> labels) {
  task.labels.clear();
  task.labels.reserve(task.indices.size());
  for (std::size_t i : task.indices) task.labels.push_back(labels[i]);
  task.present_classes = task.labels;
  std::sort(task.present_classes.begin(), task.present_classes.end());
  task.present_classes.erase(
      std::unique(task.present_classes.begin(), task.present_classes.end()),
      task.present_classes.end());
}

// Per-class draw order: a shuffled pass without replacement, then uniform
// draws with replacement once the pass is used up.
class PoolCursor {
 public:
  PoolCursor(std::vector<std::size_t> pool, std::mt19937_64& rng) : pool_(std::move(pool)) {
    std::shuffle(pool_.begin(), pool_.end(), rng);
  }
  bool exhausted() const { return next_ >= pool_.size(); }
  std::size_t draw(std::mt19937_64& rng, bool& resampled) {
    if (next_ < pool_.size()) return pool_[next_++];
    resampled = true;
    return pool_[uniform_index(pool_.size(), rng)];
  }

 private:
  std::vector<std::size_t> pool_;
  std::size_t next_ = 0;
};

}  // namespace

std::string to_string(StreamMode mode) {
  switch (mode) {
    case StreamMode::kBatchRealistic: return "batch";
    case StreamMode::kOnlineDirichlet: return "online";
    case StreamMode::kSeparate: return "separate";
  }
  return "unknown";
}

void StreamConfig::validate(std::size_t num_classes) const {
  if (batch_size == 0) fail(ErrorCode::kInvalidArgument, "batch size must be >= 1");
  if (n_tasks == 0) fail(ErrorCode::kInvalidArgument, "task count must be >= 1");
  if (mode == StreamMode::kBatchRealistic) {
    if (keff_low < 1 || keff_low > keff_high || keff_high > num_classes) {
      fail(ErrorCode::kInvalidArgument,
           "effective-class range " + std::to_string(keff_low) + ":" +
               std::to_string(keff_high) + " must satisfy 1 <= low <= high <= " +
               std::to_string(num_classes));
    }
    if (keff_low > batch_size) {
      fail(ErrorCode::kInvalidArgument, "a batch of " + std::to_string(batch_size) +
                                            " cannot hold " + std::to_string(keff_low) +
                                            " classes");
    }
  }
  if (mode == StreamMode::kOnlineDirichlet && !(std::isfinite(gamma) && gamma > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "Dirichlet concentration must be > 0");
  }
}

DirichletSampler::DirichletSampler(std::size_t k, double gamma) : k_(k), gamma_(gamma) {
  if (k == 0) fail(ErrorCode::kInvalidArgument, "Dirichlet needs at least one class");
  if (!(std::isfinite(gamma) && gamma > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "Dirichlet concentration must be > 0");
  }
}

std::vector<double> DirichletSampler::operator()(std::mt19937_64& rng) const {
  // For α < 1, G = G' · U^(1/α) with G' ~ Gamma(α+1) keeps log G finite even
  // when G itself would underflow.
  std::vector<double> logs(k_);
  const bool boost = gamma_ < 1.0;
  std::gamma_distribution<double> gamma_dist(boost ? gamma_ + 1.0 : gamma_, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (double& l : logs) {
    double g = 0.0;
    while (g <= 0.0) g = gamma_dist(rng);
    l = std::log(g);
    if (boost) {
      double u = 0.0;
      while (u <= 0.0) u = unif(rng);
      l += std::log(u) / gamma_;
    }
  }
  const double mx = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (double& l : logs) {
    l = std::exp(l - mx);
    sum += l;
  }
  for (double& l : logs) l /= sum;
  return logs;
}

std::vector<std::size_t> apportion(std::span<const double> proportions, std::size_t total) {
  double sum = 0.0;
  for (double p : proportions) {
    if (!(std::isfinite(p) && p >= 0.0)) {
      fail(ErrorCode::kInvalidArgument, "proportions must be finite and non-negative");
    }
    sum += p;
  }
  if (sum <= 0.0) fail(ErrorCode::kInvalidArgument, "proportions sum to zero");
  std::vector<std::size_t> counts(proportions.size());
  std::vector<double> rem(proportions.size());
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < proportions.size(); ++c) {
    const double exact = proportions[c] / sum * static_cast<double>(total);
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    rem[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  std::vector<std::size_t> order(proportions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  // Floating rounding can leave assigned a hair above total only if every
  // floor was exact, in which case nothing is added below.
  for (std::size_t r = 0; assigned < total; ++r) {
    ++counts[order[r % order.size()]];
    ++assigned;
  }
  return counts;
}

std::vector<StreamTask> sample_batch_tasks(std::span<const std::size_t> labels,
                                           std::size_t num_classes,
                                           const StreamConfig& cfg) {
  if (cfg.mode != StreamMode::kBatchRealistic) {
    fail(ErrorCode::kInvalidArgument, "sample_batch_tasks needs batch mode");
  }
  cfg.validate(num_classes);
  const auto pools = class_pools(labels, num_classes);
  std::vector<std::size_t> eligible;
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (!pools[c].empty()) eligible.push_back(c);
  }
  if (eligible.size() < cfg.keff_low) {
    fail(ErrorCode::kEmptyClassPool,
         std::to_string(eligible.size()) + " classes have samples but tasks need at least " +
             std::to_string(cfg.keff_low));
  }
  const std::size_t high = std::min({cfg.keff_high, eligible.size(), cfg.batch_size});

  std::vector<StreamTask> tasks(cfg.n_tasks);
  for (std::size_t t = 0; t < cfg.n_tasks; ++t) {
    auto rng = task_engine(cfg.seed, t);
    StreamTask& task = tasks[t];
    task.task_id = t;
    task.stream_id = t;
    task.clamped = high < cfg.keff_high;
    task.k_eff = std::uniform_int_distribution<std::size_t>(cfg.keff_low, high)(rng);

    std::vector<std::size_t> classes = eligible;
    for (std::size_t i = 0; i < task.k_eff; ++i) {
      std::swap(classes[i], classes[i + uniform_index(classes.size() - i, rng)]);
    }
    classes.resize(task.k_eff);

    // One sample per drawn class first, so exactly k_eff classes appear.
    std::vector<std::size_t> rest;
    for (std::size_t c : classes) {
      const auto& pool = pools[c];
      const std::size_t pick = uniform_index(pool.size(), rng);
      task.indices.push_back(pool[pick]);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (i != pick) rest.push_back(pool[i]);
      }
    }
    const std::size_t need = cfg.batch_size - task.k_eff;
    const std::size_t take = std::min(need, rest.size());
    for (std::size_t i = 0; i < take; ++i) {
      std::swap(rest[i], rest[i + uniform_index(rest.size() - i, rng)]);
      task.indices.push_back(rest[i]);
    }
    if (take < need) {
      task.resampled = true;
      std::vector<std::size_t> all;
      for (std::size_t c : classes) all.insert(all.end(), pools[c].begin(), pools[c].end());
      for (std::size_t i = take; i < need; ++i) task.indices.push_back(all[uniform_index(all.size(), rng)]);
    }
    finish_task(task, labels);
  }
  return tasks;
}

std::vector<StreamTask> sample_online_stream(std::span<const std::size_t> labels,
                                             std::size_t num_classes,
                                             const StreamConfig& cfg) {
  if (cfg.mode == StreamMode::kBatchRealistic) {
    fail(ErrorCode::kInvalidArgument, "sample_online_stream needs online or separate mode");
  }
  cfg.validate(num_classes);
  const auto pools = class_pools(labels, num_classes);
  if (labels.empty()) fail(ErrorCode::kEmptyClassPool, "no samples to stream");
  const std::size_t length = cfg.stream_length > 0 ? cfg.stream_length : labels.size();

  std::vector<std::vector<StreamTask>> per_stream(cfg.n_tasks);
  parallel_for(cfg.n_tasks, [&](std::size_t s) {
    auto rng = task_engine(cfg.seed, s);
    auto& out = per_stream[s];

    if (cfg.mode == StreamMode::kSeparate) {
      std::vector<std::size_t> order;
      for (std::size_t c = 0; c < num_classes; ++c) {
        if (!pools[c].empty()) order.push_back(c);
      }
      std::shuffle(order.begin(), order.end(), rng);
      // Each class holds the stream until its pool is empty. Streams longer
      // than the dataset start another pass, which repeats samples.
      std::size_t emitted = 0;
      for (std::size_t pass = 0; emitted < length; ++pass) {
        for (std::size_t c : order) {
          if (emitted >= length) break;
          std::vector<std::size_t> pool = pools[c];
          std::shuffle(pool.begin(), pool.end(), rng);
          std::size_t pos = 0;
          while (pos < pool.size() && emitted < length) {
            StreamTask task;
            task.stream_id = s;
            task.resampled = pass > 0;
            while (pos < pool.size() && task.indices.size() < cfg.batch_size && emitted < length) {
              task.indices.push_back(pool[pos++]);
              ++emitted;
            }
            finish_task(task, labels);
            out.push_back(std::move(task));
          }
        }
      }
      return;
    }

    std::vector<PoolCursor> cursors;
    cursors.reserve(num_classes);
    for (const auto& pool : pools) cursors.emplace_back(pool, rng);
    // Proportions are drawn over the classes that have samples.
    std::vector<std::size_t> present;
    for (std::size_t c = 0; c < num_classes; ++c) {
      if (!pools[c].empty()) present.push_back(c);
    }
    const DirichletSampler sampler(present.size(), cfg.gamma);
    auto draw_proportions = [&] {
      const std::vector<double> q = sampler(rng);
      std::vector<double> p(num_classes, 0.0);
      for (std::size_t i = 0; i < present.size(); ++i) p[present[i]] = q[i];
      return p;
    };
    std::vector<double> p = draw_proportions();
    std::size_t emitted = 0;
    for (std::size_t b = 0; emitted < length; ++b) {
      if (b > 0 && cfg.per_batch_resample) p = draw_proportions();
      const std::size_t size = std::min(cfg.batch_size, length - emitted);
      const auto counts = apportion(p, size);
      StreamTask task;
      task.stream_id = s;
      for (std::size_t c = 0; c < num_classes; ++c) {
        for (std::size_t i = 0; i < counts[c]; ++i) {
          task.indices.push_back(cursors[c].draw(rng, task.resampled));
        }
      }
      emitted += size;
      finish_task(task, labels);
      out.push_back(std::move(task));
    }
  });

  std::vector<StreamTask> tasks;
  for (auto& stream : per_stream) {
    for (auto& task : stream) {
      task.task_id = tasks.size();
      tasks.push_back(std::move(task));
    }
  }
  return tasks;
}

TaskEvaluation evaluate_over_tasks(std::span<const StreamTask> tasks,
                                   const EmbeddingMatrix& features,
                                   const EmbeddingMatrix& prototypes,
                                   bool restrict_to_present) {
  if (tasks.empty()) fail(ErrorCode::kInvalidArgument, "no tasks to evaluate");
  if (!features.unit_rows()) fail(ErrorCode::kNotNormalized, "features are not unit-row");
  if (!prototypes.unit_rows()) fail(ErrorCode::kNotNormalized, "prototypes are not unit-row");
  if (features.cols() != prototypes.cols()) {
    fail(ErrorCode::kShapeMismatch,
         "feature dim " + std::to_string(features.cols()) + " vs prototype dim " +
             std::to_string(prototypes.cols()));
  }
  const std::size_t k = prototypes.rows();
  for (const auto& task : tasks) {
    if (task.indices.empty() || task.indices.size() != task.labels.size()) {
      fail(ErrorCode::kShapeMismatch, "task " + std::to_string(task.task_id) +
                                          " has no samples or mismatched labels");
    }
    for (std::size_t i : task.indices) {
      if (i >= features.rows()) {
        fail(ErrorCode::kShapeMismatch, "task index " + std::to_string(i) + " beyond " +
                                            std::to_string(features.rows()) + " features");
      }
    }
    for (std::size_t l : task.labels) {
      if (l >= k) fail(ErrorCode::kShapeMismatch, "label " + std::to_string(l) + " has no prototype");
    }
  }

  TaskEvaluation ev;
  ev.per_task.resize(tasks.size());
  ev.per_task_correct.resize(tasks.size());
  parallel_for(tasks.size(), [&](std::size_t t) {
    const StreamTask& task = tasks[t];
    std::vector<std::size_t> candidates;
    if (restrict_to_present) {
      candidates = task.present_classes;
    } else {
      candidates.resize(k);
      std::iota(candidates.begin(), candidates.end(), std::size_t{0});
    }
    std::vector<double> scores(candidates.size());
    std::size_t correct = 0;
    for (std::size_t s = 0; s < task.indices.size(); ++s) {
      const auto f = features.row(task.indices[s]);
      for (std::size_t c = 0; c < candidates.size(); ++c) {
        scores[c] = dot(f, prototypes.row(candidates[c]));
      }
      correct += candidates[argmax_lowest(scores)] == task.labels[s];
    }
    ev.per_task_correct[t] = correct;
    ev.per_task[t] = static_cast<double>(correct) / static_cast<double>(task.indices.size());
  });
  double sum = 0.0;
  for (double a : ev.per_task) sum += a;
  ev.mean_accuracy = sum / static_cast<double>(tasks.size());
  return ev;
}

std::vector<StreamSummary> summarize_streams(std::span<const StreamTask> tasks,
                                             const TaskEvaluation& evaluation) {
  if (evaluation.per_task_correct.size() != tasks.size()) {
    fail(ErrorCode::kShapeMismatch, "evaluation does not match the task list");
  }
  std::map<std::size_t, StreamSummary> by_stream;
  std::map<std::size_t, std::size_t> correct;
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    auto& s = by_stream[tasks[t].stream_id];
    s.stream_id = tasks[t].stream_id;
    ++s.batches;
    s.samples += tasks[t].indices.size();
    correct[tasks[t].stream_id] += evaluation.per_task_correct[t];
  }
  std::vector<StreamSummary> out;
  for (auto& [id, s] : by_stream) {
    s.accuracy = static_cast<double>(correct[id]) / static_cast<double>(s.samples);
    out.push_back(s);
  }
  return out;
}

std::string spec_to_json(const SyntheticSpec& spec) {
  json pairs = json::array();
  for (const auto& p : spec.confusion_pairs) pairs.push_back({{"i", p.i}, {"j", p.j}, {"rho", p.rho}});
  json j{{"classes", spec.k},
         {"dim", spec.d},
         {"per_class", spec.n_per_class},
         {"confusion_pairs", pairs},
         {"sigma", spec.noise_sigma},
         {"seed", spec.seed},
         {"bias_strength", spec.bias_strength},
         {"pair_bias_extra", spec.pair_bias_extra}};
  return j.dump();
}

SyntheticSpec spec_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    SyntheticSpec spec;
    spec.k = j.at("classes").get<std::size_t>();
    spec.d = j.at("dim").get<std::size_t>();
    spec.n_per_class = j.at("per_class").get<std::size_t>();
    spec.noise_sigma = j.at("sigma").get<double>();
    spec.seed = j.at("seed").get<std::uint64_t>();
    spec.bias_strength = j.value("bias_strength", spec.bias_strength);
    spec.pair_bias_extra = j.value("pair_bias_extra", spec.pair_bias_extra);
    for (const auto& p : j.at("confusion_pairs")) {
      spec.confusion_pairs.push_back(
          {p.at("i").get<std::size_t>(), p.at("j").get<std::size_t>(), p.at("rho").get<double>()});
    }
    return spec;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("synthetic spec: ") + e.what());
  }
}

std::vector<std::filesystem::path> save_synthetic_bundle(const std::filesystem::path& dir,
                                                         const SyntheticSpec& spec,
                                                         const SyntheticData& data) {
  std::vector<std::filesystem::path> written{dir / kFeaturesFile, dir / kLabelsFile,
                                             dir / kDirectionsFile, dir / kInitialPrototypesFile,
                                             dir / kDatasetFile};
  save_matrix(written[0], data.features);
  save_labels(written[1], data.labels);
  save_matrix(written[2], data.true_directions);
  save_matrix(written[3], data.initial_prototypes);
  const json meta{{"format", "protoforge-dataset"},
                  {"version", 1},
                  {"classes", spec.k},
                  {"dim", spec.d},
                  {"samples", data.features.rows()},
                  {"seed", spec.seed},
                  {"spec", json::parse(spec_to_json(spec))}};
  write_file_atomic(written[4], meta.dump(2) + "\n");
  return written;
}

DatasetBundle load_dataset_bundle(const std::filesystem::path& dir) {
  DatasetBundle b;
  b.features = load_matrix(dir / kFeaturesFile);
  b.labels = load_labels(dir / kLabelsFile);
  std::size_t max_label = 0;
  for (std::size_t l : b.labels) max_label = std::max(max_label, l);
  b.num_classes = b.labels.empty() ? 0 : max_label + 1;
  b.spec_json = "{}";
  const auto meta_path = dir / kDatasetFile;
  if (std::filesystem::exists(meta_path)) {
    try {
      const json meta = json::parse(read_file(meta_path));
      b.num_classes = std::max(b.num_classes, meta.at("classes").get<std::size_t>());
      if (meta.contains("spec")) b.spec_json = meta.at("spec").dump();
    } catch (const json::exception& e) {
      fail(ErrorCode::kParse, meta_path.string() + ": " + e.what());
    }
  }
  if (b.labels.size() != b.features.rows()) {
    fail(ErrorCode::kShapeMismatch, std::to_string(b.labels.size()) + " labels for " +
                                        std::to_string(b.features.rows()) + " feature rows");
  }
  return b;
}

}  // namespace protoforge
