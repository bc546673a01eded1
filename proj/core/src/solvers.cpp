#include "protoforge/solvers.hpp"

#include <cmath>

#include "protoforge/error.hpp"

namespace protoforge {

namespace {

void check_divergence(const LossReport& r, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(r.total) || r.total > kDivergenceThreshold) {
    fail(ErrorCode::kDivergedLoss,
         "total loss " + std::to_string(r.total) + " at epoch " +
             std::to_string(epoch) + ", step " + std::to_string(step) +
             " (learning rate too large?)");
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::kInvalidArgument, "epochs must be >= 1");
  if (!(learning_rate > 0.0)) {
    fail(ErrorCode::kInvalidArgument, "learning_rate must be > 0");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail(ErrorCode::kInvalidArgument, "betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidArgument, "eps must be > 0");
  if (!(weight_decay >= 0.0)) {
    fail(ErrorCode::kInvalidArgument, "weight_decay must be >= 0");
  }
}

AdamWConfig TrainConfig::optimizer() const {
  return AdamWConfig{learning_rate, beta1, beta2, eps, weight_decay};
}

TrainConfig with_pretrained_hparams(TrainConfig config) {
  config.learning_rate = kPretrainedLearningRate;
  config.weight_decay = 0.01;
  config.epochs = 20;
  config.batch_size = 64;
  return config;
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kMean: return "mean";
    case Method::kSvd: return "svd";
    case Method::kSoftDirect: return "soft-direct";
    case Method::kSoftLora: return "soft-lora";
  }
  return "unknown";
}

Method method_from_string(const std::string& name) {
  if (name == "mean") return Method::kMean;
  if (name == "svd") return Method::kSvd;
  if (name == "soft-direct") return Method::kSoftDirect;
  if (name == "soft-lora") return Method::kSoftLora;
  fail(ErrorCode::kInvalidArgument, "unknown method \"" + name + "\"");
}

std::vector<double> epoch_mean_totals(const std::vector<TrainingStep>& history) {
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (const auto& s : history) {
    if (s.epoch >= sums.size()) {
      sums.resize(s.epoch + 1, 0.0);
      counts.resize(s.epoch + 1, 0);
    }
    sums[s.epoch] += s.report.total;
    ++counts[s.epoch];
  }
  for (std::size_t e = 0; e < sums.size(); ++e) {
    if (counts[e]) sums[e] /= static_cast<double>(counts[e]);
  }
  return sums;
}

RefinementResult solve_mean(const PrototypeSet& prototypes) {
  RefinementResult r;
  r.x = prototypes.v;
  r.final_report = loss(r.x, prototypes.v, 0.0);
  r.method = Method::kMean;
  return r;
}

RefinementResult solve_procrustes(const PrototypeSet& prototypes) {
  const EmbeddingMatrix& v = prototypes.v;
  if (v.rows() > v.cols()) {
    fail(ErrorCode::kRankDeficient,
         "K > d: no row-orthonormal K×d matrix exists");
  }
  const SvdFactors f = svd(v);
  const double sigma_min = f.sigma.back();
  if (!(sigma_min > kRankTolerance)) {
    fail(ErrorCode::kRankDeficient,
         "smallest singular value " + std::to_string(sigma_min) +
             " <= 1e-10; the nearest orthonormal matrix is not unique");
  }
  const std::size_t k = v.rows();
  const std::size_t d = v.cols();
  EmbeddingMatrix x(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    auto xi = x.mutable_row(i);
    for (std::size_t c = 0; c < k; ++c) {
      const double u = f.u(i, c);
      for (std::size_t j = 0; j < d; ++j) xi[j] += u * f.r(j, c);
    }
  }
  RefinementResult r;
  r.x = std::move(x);
  r.final_report = loss(r.x, v, 0.0);
  r.method = Method::kSvd;
  return r;
}

RefinementResult solve_soft_direct(const PrototypeSet& prototypes,
                                   const ObjectiveConfig& objective,
                                   const TrainConfig& train,
                                   const StepObserver& observer) {
  objective.validate();
  train.validate();
  const EmbeddingMatrix& v = prototypes.v;
  RefinementResult r;
  r.method = Method::kSoftDirect;
  r.x = v;
  r.history.reserve(train.epochs * train.steps_per_epoch);

  AdamW opt(v.size(), train.optimizer());
  std::size_t global = 0;
  double lambda = objective.lambda0;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    lambda = lambda_at(objective, epoch);
    for (std::size_t s = 0; s < train.steps_per_epoch; ++s, ++global) {
      TrainingStep rec{epoch, global, loss(r.x, v, lambda)};
      check_divergence(rec.report, epoch, global);
      r.history.push_back(rec);
      if (observer) observer(rec);
      const EmbeddingMatrix g = loss_grad_x(r.x, v, lambda);
      opt.step(r.x.mutable_data(), g.data(), v.data());
    }
  }
  r.final_report = loss(r.x, v, lambda);
  check_divergence(r.final_report, train.epochs, global);
  return r;
}

LoraRefinement solve_soft_lora(std::span<const std::string> class_names,
                               const TemplateSet& templates,
                               const EncoderParams& params,
                               std::vector<LoraAdapter> adapters,
                               const ObjectiveConfig& objective,
                               const TrainConfig& train,
                               const StepObserver& observer) {
  objective.validate();
  train.validate();
  params.validate();
  if (!params.frozen) {
    fail(ErrorCode::kInvalidArgument, "LoRA training requires a frozen base encoder");
  }
  if (adapters.empty()) fail(ErrorCode::kInvalidArgument, "no LoRA adapters to train");

  LoraRefinement out;
  {
    const ToyEncoderSource base(params);
    out.initial = build_prototypes(class_names, templates, base, objective.normalize_x);
  }
  const EmbeddingMatrix& v = out.initial.v;
  const ClassTokens tokens = make_class_tokens(class_names, templates,
                                               objective.x_mode, params.dims.vocab_size);

  std::vector<double> flat = flatten_adapters(adapters);
  AdamW opt(flat.size(), train.optimizer());
  RefinementResult& r = out.result;
  r.method = Method::kSoftLora;
  r.history.reserve(train.epochs * train.steps_per_epoch);

  std::size_t global = 0;
  double lambda = objective.lambda0;
  for (std::size_t epoch = 0; epoch < train.epochs; ++epoch) {
    lambda = lambda_at(objective, epoch);
    for (std::size_t s = 0; s < train.steps_per_epoch; ++s, ++global) {
      LoraEvaluation ev = lora_loss_and_grad(params, adapters, tokens, v, lambda,
                                             objective.normalize_x);
      TrainingStep rec{epoch, global, ev.report};
      check_divergence(rec.report, epoch, global);
      r.history.push_back(rec);
      if (observer) observer(rec);
      const std::vector<double> g = flatten_grads(ev.grads);
      opt.step(flat, g);
      unflatten_adapters(flat, adapters);
    }
  }
  r.x = encode_classes(params, adapters, tokens, objective.normalize_x);
  r.final_report = loss(r.x, v, lambda);
  check_divergence(r.final_report, train.epochs, global);
  out.adapters = std::move(adapters);
  return out;
}

}  // namespace protoforge
