#include "protoforge_tools/cli.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "protoforge/diagnostics.hpp"
#include "protoforge/encoder.hpp"
#include "protoforge/evalharness.hpp"
#include "protoforge/io.hpp"
#include "protoforge/objective.hpp"
#include "protoforge/parallel.hpp"
#include "protoforge/prototype.hpp"
#include "protoforge/solvers.hpp"
#include "protoforge_tools/manifest.hpp"

namespace protoforge::tools {

namespace fs = std::filesystem;
using json = nlohmann::json;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kRankDeficient:
    case ErrorCode::kInfeasibleConfusion:
    case ErrorCode::kNoConvergence:
      return kExitInfeasible;
    case ErrorCode::kDivergedLoss:
      return kExitDiverged;
    default:
      return kExitUsage;
  }
}

namespace {

// Options that may also come from a --config JSON file. Keys are the long
// flag names without dashes; underscores are accepted in place of hyphens.
class ConfigBinder {
 public:
  template <typename T>
  CLI::Option* option(CLI::App* app, const std::string& flag, T& var, const std::string& help) {
    CLI::Option* opt = app->add_option(flag, var, help)->capture_default_str();
    bind(flag, opt, var);
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& flag, bool& var, const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, var, help);
    bind(flag, opt, var);
    return opt;
  }

  void apply(const json& config) {
    if (!config.is_object()) fail(ErrorCode::kParse, "config file must hold a JSON object");
    for (const auto& [raw, value] : config.items()) {
      std::string key = raw;
      std::replace(key.begin(), key.end(), '_', '-');
      const auto it = entries_.find(key);
      if (it == entries_.end()) {
        fail(ErrorCode::kInvalidArgument, "unknown config key \"" + raw + "\"");
      }
      if (it->second.opt->count() > 0) continue;  // the flag wins
      try {
        it->second.set(value);
      } catch (const json::exception& e) {
        fail(ErrorCode::kParse, "config key \"" + raw + "\": " + e.what());
      }
      it->second.from_config = true;
    }
  }

  // True when the value came from the command line or the config file.
  bool explicitly_set(const std::string& key) const {
    const auto& e = entries_.at(key);
    return e.opt->count() > 0 || e.from_config;
  }

  json echo() const {
    json j = json::object();
    for (const auto& [key, e] : entries_) j[key] = e.get();
    return j;
  }

 private:
  struct Entry {
    CLI::Option* opt = nullptr;
    std::function<void(const json&)> set;
    std::function<json()> get;
    bool from_config = false;
  };

  template <typename T>
  void bind(const std::string& flag, CLI::Option* opt, T& var) {
    const std::string key = flag.substr(2);
    entries_[key] = Entry{opt, [&var](const json& j) { var = j.get<T>(); },
                          [&var] { return json(var); }, false};
  }

  std::map<std::string, Entry> entries_;
};

struct Context {
  std::ostream& out;
  std::ostream& err;
};

json report_json(const LossReport& r) {
  return json{{"fidelity", r.fidelity}, {"penalty", r.penalty}, {"lambda", r.lambda}, {"total", r.total}};
}

std::string step_line(const TrainingStep& s) {
  json j{{"epoch", s.epoch},
         {"step", s.step},
         {"fidelity", s.report.fidelity},
         {"penalty", s.report.penalty},
         {"lambda", s.report.lambda},
         {"total", s.report.total}};
  return j.dump() + "\n";
}

std::size_t parse_count(std::string_view text, const std::string& what) {
  std::size_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
    fail(ErrorCode::kInvalidArgument, "bad " + what + " \"" + std::string(text) + "\"");
  }
  return v;
}

double parse_real(std::string_view text, const std::string& what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || text.empty() || !std::isfinite(v)) {
    fail(ErrorCode::kInvalidArgument, "bad " + what + " \"" + std::string(text) + "\"");
  }
  return v;
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.emplace_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

ConfusionPair parse_confusion(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.size() != 3) {
    fail(ErrorCode::kInvalidArgument, "--confuse expects i:j:rho, got \"" + text + "\"");
  }
  return ConfusionPair{parse_count(parts[0], "class index"), parse_count(parts[1], "class index"),
                       parse_real(parts[2], "cosine")};
}

std::vector<std::string> resolve_class_names(const std::string& file, std::size_t count) {
  if (!file.empty()) return read_class_names_file(file);
  if (count == 0) fail(ErrorCode::kInvalidArgument, "need --classes-file or --class-count >= 1");
  return benchmark_class_names(count);
}

TemplateSet resolve_templates(const std::string& file) {
  return file.empty() ? default_templates() : read_template_file(file);
}

EmbeddingMatrix unit_or_normalized(EmbeddingMatrix m) {
  return m.unit_rows() ? m : normalize_rows(m);
}

void load_json_config(const std::string& path, ConfigBinder& binder) {
  if (path.empty()) return;
  json config;
  try {
    config = json::parse(read_file(path));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, path + ": " + e.what());
  }
  binder.apply(config);
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::size_t classes = 10;
  std::size_t dim = 64;
  std::size_t per_class = 50;
  std::vector<std::string> confuse;
  double sigma = 0.25;
  std::uint64_t seed = 0;
  double bias_strength = SyntheticSpec{}.bias_strength;
  double pair_bias = SyntheticSpec{}.pair_bias_extra;
  std::string out;
};

int cmd_gen(const GenArgs& a, const json& config, Context& ctx) {
  SyntheticSpec spec;
  spec.k = a.classes;
  spec.d = a.dim;
  spec.n_per_class = a.per_class;
  spec.noise_sigma = a.sigma;
  spec.seed = a.seed;
  spec.bias_strength = a.bias_strength;
  spec.pair_bias_extra = a.pair_bias;
  if (a.confuse.empty()) {
    if (a.classes >= 6) spec.confusion_pairs = default_benchmark_spec(a.seed).confusion_pairs;
  } else {
    for (const auto& c : a.confuse) spec.confusion_pairs.push_back(parse_confusion(c));
  }
  spec.validate();
  const SyntheticData data = generate_synthetic(spec);
  const fs::path dir = a.out;
  const auto written = save_synthetic_bundle(dir, spec, data);
  json echo = config;
  echo["spec"] = json::parse(spec_to_json(spec));
  write_manifest(dir / kManifestFile, make_manifest("gen", echo, a.seed, {}, written, dir));
  ctx.out << json{{"command", "gen"},
                  {"out", dir.string()},
                  {"classes", spec.k},
                  {"dim", spec.d},
                  {"samples", data.features.rows()}}
                 .dump()
          << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- protos

struct EncoderArgs {
  std::string encoder;  // checkpoint path; empty builds a fresh encoder
  std::uint64_t encoder_seed = 0;
  std::size_t vocab = EncoderDims{}.vocab_size;
  std::size_t embed_dim = EncoderDims{}.embed_dim;
  std::size_t hidden_dim = EncoderDims{}.hidden_dim;
  std::size_t out_dim = EncoderDims{}.out_dim;

  void add(CLI::App* app, ConfigBinder& b) {
    b.option(app, "--encoder", encoder, "Encoder checkpoint (JSON); default builds one from --encoder-seed");
    b.option(app, "--encoder-seed", encoder_seed, "Seed for a freshly built toy encoder");
    b.option(app, "--vocab", vocab, "Toy encoder vocabulary size");
    b.option(app, "--embed-dim", embed_dim, "Toy encoder token embedding width");
    b.option(app, "--hidden-dim", hidden_dim, "Toy encoder hidden width");
    b.option(app, "--out-dim", out_dim, "Toy encoder output dimension d");
  }

  Checkpoint load() const {
    if (!encoder.empty()) return load_checkpoint(encoder);
    EncoderDims dims{vocab, embed_dim, hidden_dim, out_dim};
    return Checkpoint{make_encoder(dims, encoder_seed), {}};
  }
};

struct ProtosArgs {
  std::string classes_file;
  std::size_t class_count = 10;
  std::string templates;
  std::string embeddings;
  bool no_normalize = false;
  EncoderArgs enc;
  std::string out;
};

int cmd_protos(const ProtosArgs& a, const json& config, Context& ctx) {
  const auto names = resolve_class_names(a.classes_file, a.class_count);
  const TemplateSet templates = resolve_templates(a.templates);
  for (const auto& w : templates.warnings()) ctx.err << "warning: " << w << "\n";
  const fs::path dir = a.out;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  if (!a.classes_file.empty()) inputs.emplace_back(a.classes_file);
  if (!a.templates.empty()) inputs.emplace_back(a.templates);

  PrototypeSet protos;
  if (!a.embeddings.empty()) {
    inputs.emplace_back(a.embeddings);
    const PrecomputedEmbeddings source(load_matrix(a.embeddings));
    protos = build_prototypes(names, templates, source, !a.no_normalize);
  } else {
    if (!a.enc.encoder.empty()) inputs.emplace_back(a.enc.encoder);
    const Checkpoint ckpt = a.enc.load();
    const ToyEncoderSource source(ckpt.params, ckpt.adapters);
    protos = build_prototypes(names, templates, source, !a.no_normalize);
    outputs.push_back(dir / "encoder.json");
    save_checkpoint(outputs.back(), ckpt);
  }
  outputs.push_back(dir / "prototypes.csv");
  save_matrix(outputs.back(), protos.v);
  outputs.push_back(dir / "raw_mean.csv");
  save_matrix(outputs.back(), protos.raw_mean);
  std::string listing;
  for (const auto& n : names) listing += n + "\n";
  outputs.push_back(dir / "classes.txt");
  write_file_atomic(outputs.back(), listing);
  write_manifest(dir / kManifestFile,
                 make_manifest("protos", config, a.enc.encoder_seed, inputs, outputs, dir));
  ctx.out << json{{"command", "protos"},
                  {"classes", protos.num_classes()},
                  {"dim", protos.dim()},
                  {"templates", protos.template_count},
                  {"normalized", protos.normalized}}
                 .dump()
          << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- refine

struct TrainArgs {
  double lambda0 = ObjectiveConfig{}.lambda0;
  double lambda_growth = ObjectiveConfig{}.lambda_growth;
  std::size_t epochs = TrainConfig{}.epochs;
  std::size_t steps_per_epoch = TrainConfig{}.steps_per_epoch;
  double lr = kDeskLearningRate;
  double weight_decay = TrainConfig{}.weight_decay;
  double beta1 = TrainConfig{}.beta1;
  double beta2 = TrainConfig{}.beta2;
  std::uint64_t seed = 0;
  bool pretrained_hparams = false;

  void add(CLI::App* app, ConfigBinder& b) {
    b.option(app, "--lambda0", lambda0, "Initial penalty weight");
    b.option(app, "--lambda-growth", lambda_growth, "Per-epoch multiplier of the penalty weight");
    b.option(app, "--epochs", epochs, "Training epochs");
    b.option(app, "--steps-per-epoch", steps_per_epoch, "Full-batch steps per epoch");
    b.option(app, "--lr", lr, "AdamW learning rate");
    b.option(app, "--weight-decay", weight_decay, "AdamW decoupled weight decay");
    b.option(app, "--beta1", beta1, "AdamW first-moment decay");
    b.option(app, "--beta2", beta2, "AdamW second-moment decay");
    b.option(app, "--seed", seed, "Seed for every random choice");
    b.flag(app, "--paper-hparams", pretrained_hparams,
           "Use the pretrained-tower settings (lr 5e-6) unless --lr is given");
  }

  void resolve(const ConfigBinder& b) {
    if (pretrained_hparams && !b.explicitly_set("lr")) lr = kPretrainedLearningRate;
  }

  ObjectiveConfig objective() const {
    ObjectiveConfig o;
    o.lambda0 = lambda0;
    o.lambda_growth = lambda_growth;
    return o;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.epochs = epochs;
    t.steps_per_epoch = steps_per_epoch;
    t.learning_rate = lr;
    t.weight_decay = weight_decay;
    t.beta1 = beta1;
    t.beta2 = beta2;
    t.seed = seed;
    return t;
  }
};

struct RefineArgs {
  std::string method;
  std::string protos;
  TrainArgs train;
  std::size_t rank = 8;
  bool normalize_x = false;
  std::string x_mode = "averaged";
  std::string classes_file;
  std::size_t class_count = 10;
  std::string templates;
  EncoderArgs enc;
  std::string out;
};

PrototypeSet prototypes_from_file(const std::string& path) {
  if (path.empty()) fail(ErrorCode::kInvalidArgument, "--protos is required for this method");
  PrototypeSet p;
  p.v = load_matrix(path);
  p.raw_mean = p.v;
  p.normalized = p.v.unit_rows();
  p.template_count = 1;
  return p;
}

int cmd_refine(const RefineArgs& a, json config, Context& ctx) {
  const Method method = method_from_string(a.method);
  const fs::path dir = a.out;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::string log;
  auto observer = [&log](const TrainingStep& s) { log += step_line(s); };
  ObjectiveConfig objective = a.train.objective();
  objective.normalize_x = a.normalize_x;
  objective.x_mode = x_mode_from_string(a.x_mode);
  TrainConfig train = a.train.train();
  config["lr"] = train.learning_rate;
  config["batch-size-echo"] = train.batch_size;

  RefinementResult result;
  json extra = json::object();
  if (method == Method::kSoftLora) {
    train.mode = TrainMode::kLoraEncoder;
    const auto names = resolve_class_names(a.classes_file, a.class_count);
    const TemplateSet templates = resolve_templates(a.templates);
    if (!a.classes_file.empty()) inputs.emplace_back(a.classes_file);
    if (!a.templates.empty()) inputs.emplace_back(a.templates);
    if (!a.enc.encoder.empty()) inputs.emplace_back(a.enc.encoder);
    Checkpoint ckpt = a.enc.load();
    if (ckpt.adapters.empty()) ckpt.adapters = make_adapters(ckpt.params, a.rank, a.train.seed);
    LoraRefinement lr = solve_soft_lora(names, templates, ckpt.params, ckpt.adapters,
                                        objective, train, observer);
    result = std::move(lr.result);
    extra["trainable_fraction"] = trainable_fraction(ckpt.params, lr.adapters);
    outputs.push_back(dir / "initial.csv");
    save_matrix(outputs.back(), lr.initial.v);
    outputs.push_back(dir / "encoder.json");
    save_checkpoint(outputs.back(), Checkpoint{ckpt.params, lr.adapters});
  } else {
    inputs.emplace_back(a.protos);
    const PrototypeSet protos = prototypes_from_file(a.protos);
    switch (method) {
      case Method::kMean: result = solve_mean(protos); break;
      case Method::kSvd: result = solve_procrustes(protos); break;
      default: result = solve_soft_direct(protos, objective, train, observer); break;
    }
  }

  outputs.push_back(dir / "prototypes.csv");
  save_matrix(outputs.back(), result.x);
  if (!result.history.empty()) {
    outputs.push_back(dir / "log.jsonl");
    write_file_atomic(outputs.back(), log);
  }
  write_manifest(dir / kManifestFile,
                 make_manifest("refine", config, a.train.seed, inputs, outputs, dir));

  json summary{{"command", "refine"},
               {"method", to_string(method)},
               {"final", report_json(result.final_report)},
               {"max_offdiag_gram", result.x.rows() > 1 ? max_offdiag_abs(gram(result.x)) : 0.0},
               {"learning_rate", train.learning_rate}};
  if (!result.history.empty()) summary["initial"] = report_json(result.history.front().report);
  summary.update(extra);
  ctx.out << summary.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string data;
  std::string protos;
  std::string stream = "none";
  std::string keff = "1:4";
  double gamma = 0.01;
  std::size_t tasks = 1000;
  std::size_t batch = 64;
  std::size_t stream_length = 0;
  bool per_batch_resample = false;
  bool unrestricted = false;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_eval(const EvalArgs& a, const json& config, Context& ctx) {
  const DatasetBundle data = load_dataset_bundle(a.data);
  const EmbeddingMatrix protos = unit_or_normalized(load_matrix(a.protos));
  const EmbeddingMatrix features = unit_or_normalized(data.features);
  if (features.cols() != protos.cols()) {
    fail(ErrorCode::kShapeMismatch, "features have " + std::to_string(features.cols()) +
                                        " columns but prototypes have " +
                                        std::to_string(protos.cols()));
  }
  const std::size_t k = std::max(data.num_classes, protos.rows());
  if (data.num_classes > protos.rows()) {
    fail(ErrorCode::kShapeMismatch, "dataset has " + std::to_string(data.num_classes) +
                                        " classes but only " + std::to_string(protos.rows()) +
                                        " prototypes");
  }

  json summary{{"command", "eval"}, {"stream", a.stream}};
  std::string lines;
  if (a.stream == "none") {
    summary["accuracy"] = zero_shot_accuracy(features, data.labels, protos);
  } else {
    StreamConfig cfg;
    cfg.batch_size = a.batch;
    cfg.n_tasks = a.tasks;
    cfg.seed = a.seed;
    cfg.gamma = a.gamma;
    cfg.per_batch_resample = a.per_batch_resample;
    cfg.stream_length = a.stream_length;
    std::vector<StreamTask> tasks;
    if (a.stream == "batch") {
      cfg.mode = StreamMode::kBatchRealistic;
      if (a.keff == "all") {
        cfg.keff_low = cfg.keff_high = k;
      } else {
        const auto parts = split(a.keff, ':');
        if (parts.size() != 2) fail(ErrorCode::kInvalidArgument, "--keff expects lo:hi or all");
        cfg.keff_low = parse_count(parts[0], "--keff low");
        cfg.keff_high = parse_count(parts[1], "--keff high");
      }
      tasks = sample_batch_tasks(data.labels, k, cfg);
    } else if (a.stream == "online" || a.stream == "separate") {
      cfg.mode = a.stream == "online" ? StreamMode::kOnlineDirichlet : StreamMode::kSeparate;
      tasks = sample_online_stream(data.labels, k, cfg);
    } else {
      fail(ErrorCode::kInvalidArgument, "--stream must be none, batch, online or separate");
    }
    const TaskEvaluation ev = evaluate_over_tasks(tasks, features, protos, !a.unrestricted);
    std::size_t resampled = 0;
    for (const auto& t : tasks) resampled += t.resampled;
    if (cfg.mode == StreamMode::kBatchRealistic) {
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        lines += json{{"task_id", tasks[t].task_id},
                      {"k_eff", tasks[t].k_eff},
                      {"samples", tasks[t].indices.size()},
                      {"accuracy", ev.per_task[t]}}
                     .dump() +
                 "\n";
      }
      summary["accuracy"] = ev.mean_accuracy;
      summary["tasks"] = tasks.size();
    } else {
      const auto streams = summarize_streams(tasks, ev);
      double sum = 0.0;
      for (const auto& s : streams) {
        json rec{{"task_id", s.stream_id},
                 {"batches", s.batches},
                 {"samples", s.samples},
                 {"accuracy", s.accuracy}};
        if (cfg.mode == StreamMode::kOnlineDirichlet) rec["gamma"] = a.gamma;
        lines += rec.dump() + "\n";
        sum += s.accuracy;
      }
      summary["accuracy"] = sum / static_cast<double>(streams.size());
      summary["tasks"] = streams.size();
      summary["batches"] = tasks.size();
    }
    if (resampled > 0) {
      ctx.err << "warning: " << resampled
              << " batches drew samples with replacement after a class pool ran dry\n";
      summary["batches_with_replacement"] = resampled;
    }
  }

  if (!a.out.empty()) {
    const fs::path dir = a.out;
    std::vector<fs::path> outputs;
    if (!lines.empty()) {
      outputs.push_back(dir / "tasks.jsonl");
      write_file_atomic(outputs.back(), lines);
    }
    outputs.push_back(dir / "summary.json");
    write_file_atomic(outputs.back(), summary.dump(2) + "\n");
    const fs::path data_dir = a.data;
    write_manifest(dir / kManifestFile,
                   make_manifest("eval", config, a.seed,
                                 {data_dir / kFeaturesFile, data_dir / kLabelsFile, a.protos},
                                 outputs, dir));
  }
  ctx.out << summary.dump() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
  std::string data;
  std::string protos;
  std::string initial;
  double lambda = ObjectiveConfig{}.lambda0;
  std::uint64_t seed = 0;
  std::string out;
};

inline constexpr double kGradCheckTolerance = 1e-5;

int cmd_diagnose(const DiagnoseArgs& a, const json& config, Context& ctx) {
  const DatasetBundle data = load_dataset_bundle(a.data);
  const EmbeddingMatrix x = load_matrix(a.protos);
  const EmbeddingMatrix v = a.initial.empty() ? x : load_matrix(a.initial);
  if (data.features.cols() != x.cols()) {
    fail(ErrorCode::kShapeMismatch, "features have " + std::to_string(data.features.cols()) +
                                        " columns but prototypes have " + std::to_string(x.cols()));
  }
  if (x.rows() != v.rows() || x.cols() != v.cols()) {
    fail(ErrorCode::kShapeMismatch, "prototype and initial-prototype shapes differ");
  }
  if (data.num_classes > x.rows()) {
    fail(ErrorCode::kShapeMismatch, "dataset has more classes than prototypes");
  }
  const EmbeddingMatrix features = unit_or_normalized(data.features);
  const EmbeddingMatrix unit_x = unit_or_normalized(x);

  const AssignmentMatrix assign = cosine_assign(features, unit_x);
  const ScatterReport scatter = huygens(features, assign);
  std::vector<std::size_t> counts(x.rows(), 0);
  for (std::size_t l : data.labels) ++counts[l];
  bool counts_positive = std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
  json eq8 = json::object();
  bool eq8_pass = true;
  if (counts_positive) {
    const BetweenOffdiag b = between_vs_offdiag(unit_x, counts);
    eq8 = {{"between_term", b.between_term},
           {"weighted_offdiag", b.weighted_offdiag},
           {"constant", b.constant},
           {"residual", b.residual}};
    eq8_pass = b.residual < kIdentityTolerance;
  } else {
    eq8 = {{"skipped", "some class has no samples"}};
  }

  const GeometryMetrics geo = geometry_metrics(x, v, data.features, data.labels);

  // The gradient check runs at a seeded perturbation of X so that it also
  // exercises points where the gradient is far from zero.
  std::mt19937_64 rng(a.seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  EmbeddingMatrix probe = x;
  for (double& e : probe.mutable_data()) e += normal(rng);
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  const EmbeddingMatrix analytic = loss_grad_x(probe, v, a.lambda);
  const double grad_err = grad_check(
      [&](std::span<const double> p) {
        return loss(EmbeddingMatrix(rows, cols, std::vector<double>(p.begin(), p.end())), v,
                    a.lambda)
            .total;
      },
      probe.data(), analytic.data());

  const bool huygens_pass = scatter.residual < kIdentityTolerance;
  const bool grad_pass = grad_err < kGradCheckTolerance;
  json record{{"displacement_mean", geo.displacement_mean},
              {"displacement_median", geo.displacement_median},
              {"dispersion", geo.dispersion},
              {"max_offdiag_gram", geo.max_offdiag_gram},
              {"mean_alignment", geo.mean_alignment},
              {"within", scatter.within},
              {"total", scatter.total},
              {"between", scatter.between},
              {"empty_classes", scatter.empty_classes},
              {"huygens_residual", scatter.residual},
              {"huygens_pass", huygens_pass},
              {"offdiag_identity", eq8},
              {"offdiag_identity_pass", eq8_pass},
              {"grad_check", grad_err},
              {"grad_check_pass", grad_pass},
              {"accuracy", zero_shot_accuracy(features, data.labels, unit_x)}};

  if (!a.out.empty()) {
    const fs::path dir = a.out;
    const fs::path target = dir / "diagnostics.json";
    write_file_atomic(target, record.dump(2) + "\n");
    std::vector<fs::path> inputs{fs::path(a.data) / kFeaturesFile,
                                 fs::path(a.data) / kLabelsFile, a.protos};
    if (!a.initial.empty()) inputs.emplace_back(a.initial);
    write_manifest(dir / kManifestFile,
                   make_manifest("diagnose", config, a.seed, inputs, {target}, dir));
  }
  ctx.out << record.dump() << "\n";
  if (!(huygens_pass && eq8_pass && grad_pass)) {
    ctx.err << "error: identity check failed (huygens " << scatter.residual << ", grad "
            << grad_err << ")\n";
    return kExitIdentity;
  }
  return kExitOk;
}

// ---------------------------------------------------------------- sweep

struct SweepArgs {
  std::string data;
  std::string protos;
  std::string lambdas = "0,0.1,1,10,100,1000,10000";
  TrainArgs train;
  std::string out;
};

int cmd_sweep(const SweepArgs& a, const json& config, Context& ctx) {
  const DatasetBundle data = load_dataset_bundle(a.data);
  const fs::path proto_path =
      a.protos.empty() ? fs::path(a.data) / kInitialPrototypesFile : fs::path(a.protos);
  const PrototypeSet protos = prototypes_from_file(proto_path.string());
  const EmbeddingMatrix features = unit_or_normalized(data.features);
  if (features.cols() != protos.dim()) {
    fail(ErrorCode::kShapeMismatch, "features and prototypes differ in dimension");
  }
  std::vector<double> lambdas;
  for (const auto& s : split(a.lambdas, ',')) {
    const double l = parse_real(s, "lambda");
    if (l < 0.0) fail(ErrorCode::kInvalidArgument, "lambdas must be >= 0");
    lambdas.push_back(l);
  }

  struct Cell {
    double accuracy = std::nan("");
    LossReport report;
    std::string status = "ok";
  };
  std::vector<Cell> cells(lambdas.size());
  const TrainConfig train = a.train.train();
  parallel_for(lambdas.size(), [&](std::size_t i) {
    ObjectiveConfig obj = a.train.objective();
    obj.lambda0 = lambdas[i];
    try {
      const RefinementResult r = solve_soft_direct(protos, obj, train);
      cells[i].report = r.final_report;
      cells[i].accuracy = zero_shot_accuracy(features, data.labels, normalize_rows(r.x));
    } catch (const Error& e) {
      cells[i].status = to_string(e.code());
    }
  });

  std::ostringstream csv;
  csv << "lambda,accuracy,final_penalty,final_fidelity,status\n";
  std::size_t failed = 0;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    const Cell& c = cells[i];
    csv << format_double(lambdas[i]) << ",";
    if (c.status == "ok") {
      csv << format_double(c.accuracy) << "," << format_double(c.report.penalty) << ","
          << format_double(c.report.fidelity);
    } else {
      ++failed;
      csv << ",,";
    }
    csv << "," << c.status << "\n";
  }
  if (!a.out.empty()) {
    const fs::path dir = a.out;
    const fs::path table = dir / "sweep.csv";
    write_file_atomic(table, csv.str());
    write_manifest(dir / kManifestFile,
                   make_manifest("sweep", config, a.train.seed,
                                 {fs::path(a.data) / kFeaturesFile,
                                  fs::path(a.data) / kLabelsFile, proto_path},
                                 {table}, dir));
  }
  ctx.out << csv.str();
  if (failed > 0) ctx.err << "warning: " << failed << " sweep cells failed\n";
  return kExitOk;
}

// ---------------------------------------------------------------- verify

int cmd_verify(const std::string& manifest, Context& ctx) {
  const ManifestCheck check = verify_manifest(manifest);
  for (const auto& p : check.problems) ctx.err << p << "\n";
  ctx.out << json{{"command", "verify"}, {"ok", check.ok}}.dump() << "\n";
  return check.ok ? kExitOk : kExitUsage;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  CLI::App app{"protoforge: refine class-prototype embeddings and evaluate them"};
  app.require_subcommand(1);
  app.set_version_flag("--version", tool_version());

  std::map<CLI::App*, ConfigBinder> binders;
  std::map<CLI::App*, std::string> configs;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", configs[sub], "JSON file of option values; flags take precedence");
    return &binders[sub];
  };

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen", "Generate a synthetic confounded dataset bundle");
  {
    ConfigBinder& b = *add_config(gen_cmd);
    b.option(gen_cmd, "--classes", gen.classes, "Number of classes K");
    b.option(gen_cmd, "--dim", gen.dim, "Embedding dimension d");
    b.option(gen_cmd, "--per-class", gen.per_class, "Samples per class");
    b.option(gen_cmd, "--confuse", gen.confuse,
             "Confusion pair i:j:rho (repeatable; default 0:1, 2:3, 4:5 at 0.9 when K >= 6)");
    b.option(gen_cmd, "--sigma", gen.sigma, "Per-coordinate feature noise");
    b.option(gen_cmd, "--seed", gen.seed, "Generator seed");
    b.option(gen_cmd, "--bias-strength", gen.bias_strength, "Shared prototype bias");
    b.option(gen_cmd, "--pair-bias", gen.pair_bias, "Extra bias on the first class of each pair");
    b.option(gen_cmd, "--out", gen.out, "Output directory")->required();
  }

  ProtosArgs protos;
  CLI::App* protos_cmd =
      app.add_subcommand("protos", "Build template-averaged prototypes V from class names");
  {
    ConfigBinder& b = *add_config(protos_cmd);
    b.option(protos_cmd, "--classes-file", protos.classes_file, "Class names, one per line");
    b.option(protos_cmd, "--class-count", protos.class_count,
             "Use built-in benchmark names for this many classes");
    b.option(protos_cmd, "--templates", protos.templates,
             "Template file; default: three photo templates");
    b.option(protos_cmd, "--embeddings", protos.embeddings,
             "Precomputed per-template embeddings instead of the toy encoder");
    b.flag(protos_cmd, "--no-normalize", protos.no_normalize, "Keep the raw template mean");
    protos.enc.add(protos_cmd, b);
    b.option(protos_cmd, "--out", protos.out, "Output directory")->required();
  }

  RefineArgs refine;
  CLI::App* refine_cmd = app.add_subcommand("refine", "Refine prototypes by one of four methods");
  {
    ConfigBinder& b = *add_config(refine_cmd);
    b.option(refine_cmd, "--method", refine.method, "mean | svd | soft-direct | soft-lora")
        ->required()
        ->check(CLI::IsMember({"mean", "svd", "soft-direct", "soft-lora"}));
    b.option(refine_cmd, "--protos", refine.protos, "Prototype file V (mean, svd, soft-direct)");
    refine.train.add(refine_cmd, b);
    b.option(refine_cmd, "--rank", refine.rank, "LoRA rank");
    b.flag(refine_cmd, "--normalize-x", refine.normalize_x,
           "Project encoder outputs to the unit sphere before the loss");
    b.option(refine_cmd, "--x-mode", refine.x_mode, "bare | averaged")
        ->check(CLI::IsMember({"bare", "averaged"}));
    b.option(refine_cmd, "--classes-file", refine.classes_file, "Class names (soft-lora)");
    b.option(refine_cmd, "--class-count", refine.class_count, "Built-in benchmark names (soft-lora)");
    b.option(refine_cmd, "--templates", refine.templates, "Template file (soft-lora)");
    refine.enc.add(refine_cmd, b);
    b.option(refine_cmd, "--out", refine.out, "Output directory")->required();
  }

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Zero-shot accuracy, globally or over task streams");
  {
    ConfigBinder& b = *add_config(eval_cmd);
    b.option(eval_cmd, "--data", eval.data, "Dataset bundle directory")->required();
    b.option(eval_cmd, "--protos", eval.protos, "Prototype file")->required();
    b.option(eval_cmd, "--stream", eval.stream, "none | batch | online | separate")
        ->check(CLI::IsMember({"none", "batch", "online", "separate"}));
    b.option(eval_cmd, "--keff", eval.keff, "Effective-class range lo:hi, or all");
    b.option(eval_cmd, "--gamma", eval.gamma, "Dirichlet concentration for online streams");
    b.option(eval_cmd, "--tasks", eval.tasks, "Tasks (batch) or streams (online)");
    b.option(eval_cmd, "--batch", eval.batch, "Batch size");
    b.option(eval_cmd, "--stream-length", eval.stream_length,
             "Samples per online stream; 0 means the dataset size");
    b.flag(eval_cmd, "--per-batch-resample", eval.per_batch_resample,
           "Redraw Dirichlet proportions for every batch");
    b.flag(eval_cmd, "--unrestricted", eval.unrestricted,
           "Predict over all classes instead of the task's present classes");
    b.option(eval_cmd, "--seed", eval.seed, "Sampling seed");
    b.option(eval_cmd, "--out", eval.out, "Directory for per-task records and a manifest");
  }

  DiagnoseArgs diag;
  CLI::App* diag_cmd =
      app.add_subcommand("diagnose", "Scatter identities, geometry metrics and a gradient check");
  {
    ConfigBinder& b = *add_config(diag_cmd);
    b.option(diag_cmd, "--data", diag.data, "Dataset bundle directory")->required();
    b.option(diag_cmd, "--protos", diag.protos, "Refined prototype file X")->required();
    b.option(diag_cmd, "--initial", diag.initial, "Initial prototype file V for displacement");
    b.option(diag_cmd, "--lambda", diag.lambda, "Penalty weight used by the gradient check");
    b.option(diag_cmd, "--seed", diag.seed, "Seed of the gradient-check probe point");
    b.option(diag_cmd, "--out", diag.out, "Directory for diagnostics.json and a manifest");
  }

  SweepArgs sweep;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "Accuracy of soft-direct refinement over lambda");
  {
    ConfigBinder& b = *add_config(sweep_cmd);
    b.option(sweep_cmd, "--data", sweep.data, "Dataset bundle directory")->required();
    b.option(sweep_cmd, "--protos", sweep.protos, "Prototype file V; default: the bundle's own");
    b.option(sweep_cmd, "--lambdas", sweep.lambdas, "Comma-separated initial penalty weights");
    sweep.train.add(sweep_cmd, b);
    b.option(sweep_cmd, "--out", sweep.out, "Directory for sweep.csv and a manifest");
  }

  std::string manifest_path;
  CLI::App* verify_cmd = app.add_subcommand("verify", "Re-hash the files listed in a manifest");
  verify_cmd->add_option("manifest", manifest_path, "Path to manifest.json")->required();

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    if (!rev.empty()) rev.pop_back();  // program name
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    for (auto& [sub, binder] : binders) {
      if (sub->parsed()) load_json_config(configs[sub], binder);
    }
    auto echo = [&](CLI::App* sub) { return binders[sub].echo(); };
    if (gen_cmd->parsed()) return cmd_gen(gen, echo(gen_cmd), ctx);
    if (protos_cmd->parsed()) return cmd_protos(protos, echo(protos_cmd), ctx);
    if (refine_cmd->parsed()) {
      refine.train.resolve(binders[refine_cmd]);
      return cmd_refine(refine, echo(refine_cmd), ctx);
    }
    if (eval_cmd->parsed()) return cmd_eval(eval, echo(eval_cmd), ctx);
    if (diag_cmd->parsed()) return cmd_diagnose(diag, echo(diag_cmd), ctx);
    if (sweep_cmd->parsed()) {
      sweep.train.resolve(binders[sweep_cmd]);
      return cmd_sweep(sweep, echo(sweep_cmd), ctx);
    }
    if (verify_cmd->parsed()) return cmd_verify(manifest_path, ctx);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace protoforge::tools
