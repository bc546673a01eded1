#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "expect_error.hpp"
#include "protoforge/evalharness.hpp"
#include "test_support.hpp"

namespace protoforge {
namespace {

SyntheticSpec small_spec(std::uint64_t seed) {
  SyntheticSpec s;
  s.k = 6;
  s.d = 16;
  s.n_per_class = 20;
  s.confusion_pairs = {{0, 1, 0.9}, {2, 3, 0.8}};
  s.seed = seed;
  return s;
}

TEST(Synthetic, PairCosinesAreExact) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(4));
  const EmbeddingMatrix g = gram(d.true_directions);
  EXPECT_NEAR(g(0, 1), 0.9, 1e-6);
  EXPECT_NEAR(g(2, 3), 0.9, 1e-6);
  EXPECT_NEAR(g(4, 5), 0.9, 1e-6);
  EXPECT_EQ(d.features.rows(), 500u);
  EXPECT_TRUE(d.features.unit_rows());
  EXPECT_TRUE(d.initial_prototypes.unit_rows());
}

TEST(Synthetic, OverlappingPairsUseGramCompletion) {
  SyntheticSpec s = small_spec(1);
  s.confusion_pairs = {{0, 1, 0.9}, {1, 2, 0.85}, {0, 2, 0.7}};
  const EmbeddingMatrix g = gram(generate_synthetic(s).true_directions);
  EXPECT_NEAR(g(0, 1), 0.9, 1e-6);
  EXPECT_NEAR(g(1, 2), 0.85, 1e-6);
  EXPECT_NEAR(g(0, 2), 0.7, 1e-6);
}

TEST(Synthetic, InfeasiblePatternRejected) {
  SyntheticSpec s;
  s.k = 3;
  s.d = 2;
  s.n_per_class = 2;
  s.confusion_pairs = {{0, 1, 0.0}, {1, 2, 0.0}, {0, 2, 0.0}};
  EXPECT_PF_ERROR(generate_synthetic(s), ErrorCode::kInfeasibleConfusion);
}

TEST(Synthetic, InvalidSpecs) {
  SyntheticSpec s = small_spec(0);
  s.confusion_pairs = {{1, 1, 0.5}};
  EXPECT_PF_ERROR(generate_synthetic(s), ErrorCode::kInvalidArgument);
  s.confusion_pairs = {{0, 9, 0.5}};
  EXPECT_PF_ERROR(generate_synthetic(s), ErrorCode::kInvalidArgument);
  s.confusion_pairs = {{0, 1, 1.0}};
  EXPECT_PF_ERROR(generate_synthetic(s), ErrorCode::kInvalidArgument);
}

TEST(Synthetic, NoiselessFeaturesAreClassifiedPerfectly) {
  SyntheticSpec s = small_spec(2);
  s.noise_sigma = 0.0;
  const SyntheticData d = generate_synthetic(s);
  EXPECT_EQ(zero_shot_accuracy(d.features, d.labels, d.true_directions), 1.0);
}

TEST(Synthetic, SeededAndStreamsIndependent) {
  const SyntheticData a = generate_synthetic(small_spec(3));
  const SyntheticData b = generate_synthetic(small_spec(3));
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.initial_prototypes, b.initial_prototypes);
  // Noise level does not change the directions or the prototypes.
  SyntheticSpec noisier = small_spec(3);
  noisier.noise_sigma = 0.5;
  const SyntheticData c = generate_synthetic(noisier);
  EXPECT_EQ(c.true_directions, a.true_directions);
  EXPECT_EQ(c.initial_prototypes, a.initial_prototypes);
  EXPECT_NE(c.features, a.features);
  EXPECT_NE(generate_synthetic(small_spec(4)).features, a.features);
}

TEST(Accuracy, RepeatedPrototypeFavoursClassZero) {
  const SyntheticData d = generate_synthetic(small_spec(5));
  EmbeddingMatrix same(6, 16);
  for (std::size_t k = 0; k < 6; ++k) same(k, 0) = 1.0;
  same.mark_unit_rows();
  EXPECT_DOUBLE_EQ(zero_shot_accuracy(d.features, d.labels, same), 1.0 / 6.0);
}

TEST(Accuracy, ClassMeansClassifyNoiselessData) {
  SyntheticSpec s = small_spec(6);
  s.noise_sigma = 0.0;
  const SyntheticData d = generate_synthetic(s);
  EmbeddingMatrix means(6, 16);
  for (std::size_t i = 0; i < d.features.rows(); ++i) {
    for (std::size_t j = 0; j < 16; ++j) means(d.labels[i], j) += d.features(i, j);
  }
  EXPECT_EQ(zero_shot_accuracy(d.features, d.labels, normalize_rows(means)), 1.0);
  EXPECT_PF_ERROR(zero_shot_accuracy(d.features, d.labels, means), ErrorCode::kNotNormalized);
}

// --- Dirichlet ---------------------------------------------------------------

struct Moments {
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<double> max_share;
};

Moments dirichlet_moments(double gamma, std::size_t draws, std::uint64_t seed) {
  const DirichletSampler sampler(10, gamma);
  std::mt19937_64 rng(seed);
  Moments m{std::vector<double>(10, 0.0), std::vector<double>(10, 0.0), {}};
  std::vector<std::vector<double>> all;
  for (std::size_t n = 0; n < draws; ++n) {
    all.push_back(sampler(rng));
    m.max_share.push_back(*std::max_element(all.back().begin(), all.back().end()));
    for (std::size_t c = 0; c < 10; ++c) m.mean[c] += all.back()[c];
  }
  for (auto& v : m.mean) v /= static_cast<double>(draws);
  for (const auto& p : all) {
    for (std::size_t c = 0; c < 10; ++c) m.var[c] += std::pow(p[c] - m.mean[c], 2);
  }
  for (auto& v : m.var) v /= static_cast<double>(draws - 1);
  return m;
}

TEST(Dirichlet, DrawsLieOnTheSimplex) {
  const DirichletSampler sampler(10, 1e-4);
  std::mt19937_64 rng(1);
  for (int n = 0; n < 1000; ++n) {
    const auto p = sampler(rng);
    double sum = 0.0;
    for (double v : p) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, 0.0);
      sum += v;
    }
    ASSERT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Dirichlet, MeanIsUniformAndVarianceGrowsAsGammaShrinks) {
  const std::size_t draws = 10000;
  double previous_var = 0.0;
  for (double gamma : {0.1, 0.01, 0.001}) {
    const Moments m = dirichlet_moments(gamma, draws, 17);
    double avg_var = 0.0;
    for (std::size_t c = 0; c < 10; ++c) {
      const double se = std::sqrt(m.var[c] / static_cast<double>(draws));
      EXPECT_LT(std::abs(m.mean[c] - 0.1), 3.0 * se) << "gamma " << gamma << " class " << c;
      avg_var += m.var[c] / 10.0;
    }
    EXPECT_GT(avg_var, previous_var) << "gamma " << gamma;
    previous_var = avg_var;
  }
}

TEST(Dirichlet, ConcentrationExtremes) {
  const Moments flat = dirichlet_moments(1e6, 10000, 3);
  for (double s : flat.max_share) ASSERT_NEAR(s, 0.1, 0.05);

  const Moments peaked = dirichlet_moments(1e-3, 10000, 4);
  const auto dominant = std::count_if(peaked.max_share.begin(), peaked.max_share.end(),
                                      [](double s) { return s > 0.9; });
  EXPECT_GT(dominant, 5000);
}

TEST(Apportion, LargestRemainder) {
  const std::vector<double> p{0.5, 0.3, 0.2};
  EXPECT_EQ(apportion(p, 10), (std::vector<std::size_t>{5, 3, 2}));
  const std::vector<double> q{1.0, 1.0, 1.0};
  EXPECT_EQ(apportion(q, 4), (std::vector<std::size_t>{2, 1, 1}));
  const std::vector<double> r{0.64, 0.26, 0.10};
  EXPECT_EQ(apportion(r, 5), (std::vector<std::size_t>{3, 1, 1}));
  const std::vector<double> zero{0.0, 0.0};
  EXPECT_PF_ERROR(apportion(zero, 3), ErrorCode::kInvalidArgument);
}

// --- streams -----------------------------------------------------------------

StreamConfig batch_config(std::size_t lo, std::size_t hi) {
  StreamConfig c;
  c.keff_low = lo;
  c.keff_high = hi;
  c.seed = 9;
  return c;
}

TEST(BatchTasks, ThousandTasksRespectTheRange) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(0));
  const auto tasks = sample_batch_tasks(d.labels, 10, batch_config(1, 4));
  ASSERT_EQ(tasks.size(), 1000u);
  std::set<std::size_t> seen_keff;
  for (const auto& t : tasks) {
    ASSERT_EQ(t.indices.size(), 64u);
    ASSERT_GE(t.present_classes.size(), 1u);
    ASSERT_LE(t.present_classes.size(), 4u);
    ASSERT_EQ(t.present_classes.size(), t.k_eff);
    for (std::size_t i = 0; i < t.indices.size(); ++i) ASSERT_EQ(t.labels[i], d.labels[t.indices[i]]);
    seen_keff.insert(t.k_eff);
  }
  EXPECT_EQ(seen_keff, (std::set<std::size_t>{1, 2, 3, 4}));
}

TEST(BatchTasks, AllRegimeUsesEveryClass) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(0));
  for (const auto& t : sample_batch_tasks(d.labels, 10, batch_config(10, 10))) {
    ASSERT_EQ(t.present_classes.size(), 10u);
  }
}

TEST(BatchTasks, SmallPoolsAreFlagged) {
  const std::vector<std::size_t> labels{0, 0, 1, 1, 2};
  StreamConfig c = batch_config(1, 2);
  c.batch_size = 8;
  c.n_tasks = 20;
  for (const auto& t : sample_batch_tasks(labels, 3, c)) {
    EXPECT_TRUE(t.resampled);
    EXPECT_EQ(t.indices.size(), 8u);
  }
  c.batch_size = 2;
  c.keff_high = 3;
  c.keff_low = 1;
  for (const auto& t : sample_batch_tasks(labels, 3, c)) EXPECT_LE(t.k_eff, 2u);
  EXPECT_TRUE(sample_batch_tasks(labels, 3, c).front().clamped);
}

TEST(BatchTasks, ConfigErrors) {
  const std::vector<std::size_t> labels{0, 1, 2};
  EXPECT_PF_ERROR(sample_batch_tasks(labels, 3, batch_config(0, 2)), ErrorCode::kInvalidArgument);
  EXPECT_PF_ERROR(sample_batch_tasks(labels, 3, batch_config(2, 4)), ErrorCode::kInvalidArgument);
  const std::vector<std::size_t> one_class{0, 0};
  EXPECT_PF_ERROR(sample_batch_tasks(one_class, 3, batch_config(2, 3)),
                  ErrorCode::kEmptyClassPool);
}

TEST(OnlineStream, BatchesCoverTheStream) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(1));
  StreamConfig c;
  c.mode = StreamMode::kOnlineDirichlet;
  c.n_tasks = 5;
  c.gamma = 0.1;
  const auto tasks = sample_online_stream(d.labels, 10, c);
  std::vector<std::size_t> per_stream(5, 0);
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    EXPECT_EQ(tasks[i].task_id, i);
    EXPECT_LE(tasks[i].indices.size(), 64u);
    per_stream[tasks[i].stream_id] += tasks[i].indices.size();
  }
  for (auto n : per_stream) EXPECT_EQ(n, 500u);
}

TEST(OnlineStream, SmallGammaConcentratesBatches) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(1));
  StreamConfig c;
  c.mode = StreamMode::kOnlineDirichlet;
  c.n_tasks = 20;
  c.gamma = 1e-3;
  c.stream_length = 128;
  std::size_t single = 0;
  std::size_t batches = 0;
  for (const auto& t : sample_online_stream(d.labels, 10, c)) {
    ++batches;
    single += t.present_classes.size() == 1;
  }
  EXPECT_GT(single * 2, batches);
}

TEST(OnlineStream, SeparateModeShowsOneClassPerBatch) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(2));
  StreamConfig c;
  c.mode = StreamMode::kSeparate;
  c.n_tasks = 3;
  const auto tasks = sample_online_stream(d.labels, 10, c);
  std::vector<std::set<std::size_t>> finished(3);
  std::vector<std::size_t> current(3, 99);
  for (const auto& t : tasks) {
    ASSERT_EQ(t.present_classes.size(), 1u);
    EXPECT_FALSE(t.resampled);
    const std::size_t cls = t.present_classes.front();
    if (cls != current[t.stream_id]) {
      // A class never comes back once the stream moves on.
      EXPECT_TRUE(finished[t.stream_id].insert(cls).second);
      current[t.stream_id] = cls;
    }
  }
  for (const auto& f : finished) EXPECT_EQ(f.size(), 10u);
}

TEST(OnlineStream, LongStreamsResampleWithFlag) {
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  StreamConfig c;
  c.mode = StreamMode::kOnlineDirichlet;
  c.n_tasks = 1;
  c.batch_size = 4;
  c.stream_length = 40;
  const auto tasks = sample_online_stream(labels, 2, c);
  EXPECT_TRUE(std::any_of(tasks.begin(), tasks.end(), [](const auto& t) { return t.resampled; }));
}

TEST(OnlineStream, PerBatchResampleChangesComposition) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(3));
  StreamConfig c;
  c.mode = StreamMode::kOnlineDirichlet;
  c.n_tasks = 1;
  c.gamma = 1e-3;
  c.per_batch_resample = true;
  std::set<std::size_t> dominant;
  for (const auto& t : sample_online_stream(d.labels, 10, c)) dominant.insert(t.labels.front());
  EXPECT_GT(dominant.size(), 1u);
}

// --- evaluation ----------------------------------------------------------------

TEST(Evaluate, SingleGlobalTaskMatchesZeroShot) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(5));
  StreamTask all;
  for (std::size_t i = 0; i < d.labels.size(); ++i) all.indices.push_back(i);
  all.labels = d.labels;
  for (std::size_t c = 0; c < 10; ++c) all.present_classes.push_back(c);
  const std::vector<StreamTask> tasks{all};
  EXPECT_DOUBLE_EQ(evaluate_over_tasks(tasks, d.features, d.initial_prototypes).mean_accuracy,
                   zero_shot_accuracy(d.features, d.labels, d.initial_prototypes));
}

TEST(Evaluate, SingletonTaskIsPerfectWhenRestricted) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(5));
  StreamTask one;
  one.indices = {50, 51, 52};
  one.labels = {1, 1, 1};
  one.present_classes = {1};
  const std::vector<StreamTask> tasks{one};
  EXPECT_EQ(evaluate_over_tasks(tasks, d.features, d.initial_prototypes).mean_accuracy, 1.0);
}

TEST(Evaluate, RestrictionNeverHurts) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(6));
  const auto tasks = sample_batch_tasks(d.labels, 10, batch_config(1, 4));
  const TaskEvaluation restricted = evaluate_over_tasks(tasks, d.features, d.initial_prototypes);
  const TaskEvaluation open = evaluate_over_tasks(tasks, d.features, d.initial_prototypes, false);
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    ASSERT_GE(restricted.per_task[t], open.per_task[t]) << "task " << t;
  }
}

TEST(Evaluate, ThousandTaskRunIsReproducible) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(7));
  const auto a = sample_batch_tasks(d.labels, 10, batch_config(1, 4));
  const auto b = sample_batch_tasks(d.labels, 10, batch_config(1, 4));
  for (std::size_t t = 0; t < a.size(); ++t) ASSERT_EQ(a[t].indices, b[t].indices);
  const TaskEvaluation ea = evaluate_over_tasks(a, d.features, d.initial_prototypes);
  const TaskEvaluation eb = evaluate_over_tasks(b, d.features, d.initial_prototypes);
  EXPECT_EQ(ea.per_task, eb.per_task);
  EXPECT_EQ(ea.mean_accuracy, eb.mean_accuracy);
}

TEST(Evaluate, StreamSummaryPoolsSamples) {
  const SyntheticData d = generate_synthetic(default_benchmark_spec(8));
  StreamConfig c;
  c.mode = StreamMode::kOnlineDirichlet;
  c.n_tasks = 4;
  const auto tasks = sample_online_stream(d.labels, 10, c);
  const TaskEvaluation ev = evaluate_over_tasks(tasks, d.features, d.initial_prototypes);
  const auto summary = summarize_streams(tasks, ev);
  ASSERT_EQ(summary.size(), 4u);
  for (const auto& s : summary) {
    EXPECT_EQ(s.samples, 500u);
    EXPECT_GE(s.accuracy, 0.0);
    EXPECT_LE(s.accuracy, 1.0);
  }
}

TEST(Bundle, RoundTrip) {
  const SyntheticSpec spec = small_spec(11);
  const SyntheticData d = generate_synthetic(spec);
  testing::TempDir dir("bundle");
  const auto written = save_synthetic_bundle(dir.path(), spec, d);
  EXPECT_EQ(written.size(), 5u);
  const DatasetBundle b = load_dataset_bundle(dir.path());
  EXPECT_EQ(b.features, d.features);
  EXPECT_EQ(b.labels, d.labels);
  EXPECT_EQ(b.num_classes, 6u);
  const SyntheticSpec back = spec_from_json(b.spec_json);
  EXPECT_EQ(back.k, spec.k);
  EXPECT_EQ(back.seed, spec.seed);
  ASSERT_EQ(back.confusion_pairs.size(), 2u);
  EXPECT_EQ(back.confusion_pairs[1].rho, 0.8);
  EXPECT_EQ(generate_synthetic(back).features, d.features);
}

}  // namespace
}  // namespace protoforge
