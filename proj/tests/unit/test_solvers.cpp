#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "expect_error.hpp"
#include "protoforge/solvers.hpp"
#include "test_support.hpp"

namespace protoforge {
namespace {

using testing::max_abs_diff;

PrototypeSet as_prototypes(EmbeddingMatrix v) {
  PrototypeSet p;
  for (std::size_t i = 0; i < v.rows(); ++i) p.class_names.push_back("c" + std::to_string(i));
  p.normalized = v.unit_rows();
  p.template_count = 1;
  p.raw_mean = v;
  p.v = std::move(v);
  return p;
}

EmbeddingMatrix padded(std::initializer_list<std::initializer_list<double>> rows, std::size_t d) {
  const EmbeddingMatrix small(rows);
  EmbeddingMatrix m(small.rows(), d);
  for (std::size_t i = 0; i < small.rows(); ++i) {
    for (std::size_t j = 0; j < small.cols(); ++j) m(i, j) = small(i, j);
  }
  return m;
}

std::vector<double> epoch_mean_penalties(const std::vector<TrainingStep>& history) {
  std::vector<double> sums;
  std::vector<double> counts;
  for (const auto& s : history) {
    if (s.epoch >= sums.size()) {
      sums.resize(s.epoch + 1, 0.0);
      counts.resize(s.epoch + 1, 0.0);
    }
    sums[s.epoch] += s.report.penalty;
    counts[s.epoch] += 1.0;
  }
  for (std::size_t e = 0; e < sums.size(); ++e) sums[e] /= counts[e];
  return sums;
}

TEST(Mean, ReturnsPrototypesVerbatim) {
  const EmbeddingMatrix v = testing::random_unit_rows(4, 6, 1);
  const RefinementResult r = solve_mean(as_prototypes(v));
  EXPECT_EQ(r.x, v);
  EXPECT_TRUE(r.history.empty());
  EXPECT_EQ(r.method, Method::kMean);

  const EmbeddingMatrix q = testing::random_orthonormal_rows(3, 5, 2);
  EXPECT_LT(loss(solve_mean(as_prototypes(q)).x, q, 1.0).penalty, 1e-28);

  const EmbeddingMatrix twins{{1.0, 0.0}, {1.0, 0.0}};
  EXPECT_EQ(loss(solve_mean(as_prototypes(twins)).x, twins, 1.0).penalty, 2.0);
}

TEST(Procrustes, Examples) {
  const RefinementResult r = solve_procrustes(as_prototypes(padded({{1.0, 0.0}, {0.0, 2.0}}, 5)));
  EXPECT_LT(max_abs_diff(r.x, padded({{1.0, 0.0}, {0.0, 1.0}}, 5)), 1e-15);
  EXPECT_TRUE(r.history.empty());

  const EmbeddingMatrix q = testing::random_orthonormal_rows(4, 9, 3);
  EXPECT_LT(max_abs_diff(solve_procrustes(as_prototypes(q)).x, q), 1e-10);

  EXPECT_PF_ERROR(solve_procrustes(as_prototypes(EmbeddingMatrix{{1.0, 0.0}, {1.0, 0.0}})),
                  ErrorCode::kRankDeficient);
  EXPECT_PF_ERROR(solve_procrustes(as_prototypes(testing::random_matrix(4, 3, 1))),
                  ErrorCode::kRankDeficient);
}

TEST(Procrustes, BeatsRandomOrthonormalCompetitors) {
  const EmbeddingMatrix v = testing::random_unit_rows(5, 12, 10);
  const RefinementResult r = solve_procrustes(as_prototypes(v));
  EXPECT_LT(std::sqrt(frobenius_sq(gram(r.x) - EmbeddingMatrix::identity(5))), 1e-8);
  const double best = std::sqrt(frobenius_sq(r.x - v));
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const EmbeddingMatrix q = testing::random_orthonormal_rows(5, 12, 5000 + seed);
    ASSERT_LE(best, std::sqrt(frobenius_sq(q - v)) + 1e-9) << "competitor " << seed;
  }
  // Small perturbations of the optimum along the manifold cannot do better.
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const EmbeddingMatrix nudged =
        solve_procrustes(as_prototypes(r.x + testing::random_matrix(5, 12, seed, 1e-3))).x;
    ASSERT_LE(best, std::sqrt(frobenius_sq(nudged - v)) + 1e-9);
  }
}

TEST(SoftDirect, OrthonormalVStays) {
  const EmbeddingMatrix q = padded({{0.0, -1.0, 0.0}, {1.0, 0.0, 0.0}, {0.0, 0.0, 1.0}}, 6);
  const RefinementResult r = solve_soft_direct(as_prototypes(q), ObjectiveConfig{}, TrainConfig{});
  EXPECT_LT(max_abs_diff(r.x, q), 1e-6);
  EXPECT_EQ(r.history.size(), 20u * 50u);

  // With rounding-level gradients the moment normalization turns 1e-13
  // residuals into small steps, so a numerically orthonormal V drifts a bit.
  const EmbeddingMatrix g = testing::random_orthonormal_rows(3, 6, 4);
  EXPECT_LT(max_abs_diff(solve_soft_direct(as_prototypes(g), ObjectiveConfig{}, TrainConfig{}).x, g),
            1e-3);
}

TEST(SoftDirect, ZeroLambdaKeepsV) {
  const EmbeddingMatrix v = testing::random_unit_rows(4, 8, 5);
  ObjectiveConfig obj;
  obj.lambda0 = 0.0;
  const RefinementResult r = solve_soft_direct(as_prototypes(v), obj, TrainConfig{});
  EXPECT_LT(max_abs_diff(r.x, v), 1e-9);
}

// Loss over symmetric configurations: rows at ±a around the bisector of the
// 60° pair, with common norm s. By the reflection symmetry of the problem
// the minimizer lies in this family.
double symmetric_loss(double a, double s, const EmbeddingMatrix& v, double lambda) {
  const double mid = std::numbers::pi / 6.0;
  EmbeddingMatrix x(2, v.cols());
  x(0, 0) = s * std::cos(mid - a);
  x(0, 1) = s * std::sin(mid - a);
  x(1, 0) = s * std::cos(mid + a);
  x(1, 1) = s * std::sin(mid + a);
  return loss(x, v, lambda).total;
}

TEST(SoftDirect, SixtyDegreePairSeparates) {
  const double c60 = 0.5;
  const double s60 = std::sqrt(3.0) / 2.0;
  const EmbeddingMatrix v = normalize_rows(padded({{1.0, 0.0}, {c60, s60}}, 4));
  ObjectiveConfig obj;
  obj.lambda0 = 2.0;
  obj.lambda_growth = 1.0;
  TrainConfig train;
  train.epochs = 40;
  const RefinementResult r = solve_soft_direct(as_prototypes(v), obj, train);
  const EmbeddingMatrix xn = normalize_rows(r.x);
  const double cosine = dot(xn.row(0), xn.row(1));
  EXPECT_LT(std::abs(cosine), 0.5);

  // Dense grid over the symmetric family as an oracle for the optimum.
  double best = 1e300;
  double best_a = 0.0;
  for (int i = 0; i <= 900; ++i) {
    const double a = std::numbers::pi / 6.0 + (std::numbers::pi / 4.0 - std::numbers::pi / 6.0) *
                                                  static_cast<double>(i) / 900.0;
    for (int j = 0; j <= 400; ++j) {
      const double s = 0.8 + 0.4 * static_cast<double>(j) / 400.0;
      const double l = symmetric_loss(a, s, v, 2.0);
      if (l < best) {
        best = l;
        best_a = a;
      }
    }
  }
  EXPECT_NEAR(r.final_report.total, best, 1e-4);
  EXPECT_NEAR(cosine, std::cos(2.0 * best_a), 5e-3);
}

TEST(SoftDirect, LargeLambdaReachesNearOrthogonality) {
  const EmbeddingMatrix v = testing::random_unit_rows(8, 32, 6);
  ObjectiveConfig obj;
  obj.lambda0 = 100.0;
  obj.lambda_growth = 1.0;
  TrainConfig train;
  train.epochs = 40;
  const RefinementResult r = solve_soft_direct(as_prototypes(v), obj, train);
  EXPECT_LT(max_offdiag_abs(gram(r.x)), 0.05);
  EXPECT_GT(max_offdiag_abs(gram(v)), 0.05);
}

TEST(SoftDirect, FinalNotAboveInitial) {
  const EmbeddingMatrix v = testing::random_unit_rows(6, 10, 8);
  const RefinementResult r = solve_soft_direct(as_prototypes(v), ObjectiveConfig{}, TrainConfig{});
  EXPECT_LE(r.final_report.total, r.history.front().report.total);
  EXPECT_LT(r.final_report.penalty, r.history.front().report.penalty);
}

TEST(SoftDirect, ObserverSeesEveryStep) {
  TrainConfig train;
  train.epochs = 3;
  train.steps_per_epoch = 7;
  std::size_t seen = 0;
  const RefinementResult r =
      solve_soft_direct(as_prototypes(testing::random_unit_rows(3, 5, 1)), ObjectiveConfig{},
                        train, [&](const TrainingStep& s) { EXPECT_EQ(s.step, seen++); });
  EXPECT_EQ(seen, 21u);
  EXPECT_EQ(epoch_mean_totals(r.history).size(), 3u);
}

TEST(SoftDirect, DivergenceIsReported) {
  ObjectiveConfig obj;
  obj.lambda0 = 1e7;
  EXPECT_PF_ERROR(solve_soft_direct(as_prototypes(EmbeddingMatrix{{1.0, 0.0}, {1.0, 0.0}}), obj,
                                    TrainConfig{}),
                  ErrorCode::kDivergedLoss);
}

TEST(TrainConfigTest, ValidationAndPretrainedHparams) {
  TrainConfig t;
  t.learning_rate = 0.0;
  EXPECT_PF_ERROR(t.validate(), ErrorCode::kInvalidArgument);
  t = TrainConfig{};
  t.beta2 = 1.0;
  EXPECT_PF_ERROR(t.validate(), ErrorCode::kInvalidArgument);
  EXPECT_EQ(with_pretrained_hparams(TrainConfig{}).learning_rate, 5e-6);
  EXPECT_EQ(method_from_string(to_string(Method::kSoftLora)), Method::kSoftLora);
  EXPECT_PF_ERROR(method_from_string("adam"), ErrorCode::kInvalidArgument);
}

// --- through the encoder ----------------------------------------------------

const std::vector<std::string> kFiveClasses{"forest", "river", "highway", "pasture", "sea lake"};

TEST(SoftLora, NoStepsGivesV) {
  const EncoderParams params = make_encoder(EncoderDims{}, 3);
  TrainConfig train;
  train.epochs = 1;
  train.steps_per_epoch = 0;
  for (bool normalize : {false, true}) {
    ObjectiveConfig obj;
    obj.normalize_x = normalize;
    const LoraRefinement r = solve_soft_lora(kFiveClasses, default_templates(), params,
                                             make_adapters(params, 8, 4), obj, train);
    EXPECT_EQ(r.result.x, r.initial.v);
    EXPECT_TRUE(r.result.history.empty());
  }
}

TEST(SoftLora, BaseStaysFrozenAndPenaltyFalls) {
  const EncoderParams params = make_encoder(EncoderDims{}, 11);
  const EncoderParams before = params;
  const auto adapters = make_adapters(params, 8, 12);
  const LoraRefinement r = solve_soft_lora(kFiveClasses, default_templates(), params, adapters,
                                           ObjectiveConfig{}, TrainConfig{});
  EXPECT_EQ(params.token_table, before.token_table);
  EXPECT_EQ(params.w1, before.w1);
  EXPECT_EQ(params.b1, before.b1);
  EXPECT_EQ(params.w2, before.w2);
  EXPECT_EQ(params.b2, before.b2);
  EXPECT_NE(r.adapters[0].b, adapters[0].b);
  EXPECT_NE(r.adapters[1].a, adapters[1].a);

  const std::vector<double> penalties = epoch_mean_penalties(r.result.history);
  ASSERT_EQ(penalties.size(), 20u);
  for (std::size_t e = 1; e < penalties.size(); ++e) {
    EXPECT_LT(penalties[e], penalties[0]) << "epoch " << e;
  }
  // Early epochs shrink the penalty steadily; late epochs jitter around the
  // optimum at this learning rate, so only the first stretch is checked here.
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(penalties[e], penalties[e - 1]) << "epoch " << e;
  EXPECT_LE(r.result.final_report.total, r.result.history.front().report.total);
}

TEST(SoftLora, VIsComputedFromTheBaseEncoder) {
  const EncoderParams params = make_encoder(EncoderDims{}, 5);
  TrainConfig train;
  train.epochs = 2;
  train.steps_per_epoch = 5;
  const LoraRefinement r = solve_soft_lora(kFiveClasses, default_templates(), params,
                                           make_adapters(params, 8, 6), ObjectiveConfig{}, train);
  const ToyEncoderSource base(params);
  EXPECT_EQ(r.initial.v, build_prototypes(kFiveClasses, default_templates(), base, false).v);
}

TEST(SoftLora, RequiresAdaptersAndFrozenBase) {
  EncoderParams params = make_encoder(EncoderDims{}, 5);
  EXPECT_PF_ERROR(solve_soft_lora(kFiveClasses, default_templates(), params, {},
                                  ObjectiveConfig{}, TrainConfig{}),
                  ErrorCode::kInvalidArgument);
  params.frozen = false;
  EXPECT_PF_ERROR(solve_soft_lora(kFiveClasses, default_templates(), params,
                                  make_adapters(params, 8, 1), ObjectiveConfig{}, TrainConfig{}),
                  ErrorCode::kInvalidArgument);
}

}  // namespace
}  // namespace protoforge
