#include "protoforge/encoder.hpp"

#include <cctype>
#include <cmath>
#include <random>

#include <json.hpp>

#include "protoforge/error.hpp"
#include "protoforge/io.hpp"

namespace protoforge {

namespace {

using json = nlohmann::json;

void fill_normal(std::span<double> out, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : out) v = dist(rng);
}

const LoraAdapter* find_adapter(std::span<const LoraAdapter> adapters,
                                LoraTarget target) {
  for (const auto& a : adapters) {
    if (a.target == target) return &a;
  }
  return nullptr;
}

void check_adapters(const EncoderParams& params,
                    std::span<const LoraAdapter> adapters) {
  bool seen[2] = {false, false};
  for (const auto& ad : adapters) {
    const int slot = ad.target == LoraTarget::kHidden ? 0 : 1;
    if (seen[slot]) {
      fail(ErrorCode::kDimensionMismatch,
           "more than one adapter targets " + std::string(to_string(ad.target)));
    }
    seen[slot] = true;
    const EmbeddingMatrix& base = slot == 0 ? params.w1 : params.w2;
    if (ad.a.cols() != base.cols() || ad.b.rows() != base.rows() ||
        ad.a.rows() != ad.b.cols()) {
      fail(ErrorCode::kDimensionMismatch,
           "adapter for " + std::string(to_string(ad.target)) +
               " does not match the base weight shape");
    }
  }
}

// y += W·x
void gemv_acc(const EmbeddingMatrix& w, std::span<const double> x,
              std::span<double> y) {
  for (std::size_t i = 0; i < w.rows(); ++i) y[i] += dot(w.row(i), x);
}

// y += Wᵀ·x
void gemv_t_acc(const EmbeddingMatrix& w, std::span<const double> x,
                std::span<double> y) {
  for (std::size_t i = 0; i < w.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    auto wi = w.row(i);
    for (std::size_t j = 0; j < w.cols(); ++j) y[j] += wi[j] * xi;
  }
}

// g += u ⊗ v
void outer_acc(std::span<const double> u, std::span<const double> v,
               EmbeddingMatrix& g) {
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double ui = u[i];
    if (ui == 0.0) continue;
    auto gi = g.mutable_row(i);
    for (std::size_t j = 0; j < v.size(); ++j) gi[j] += ui * v[j];
  }
}

json matrix_to_json(const EmbeddingMatrix& m) {
  return json{{"rows", m.rows()},
              {"cols", m.cols()},
              {"data", std::vector<double>(m.data().begin(), m.data().end())}};
}

EmbeddingMatrix matrix_from_json(const json& j) {
  return EmbeddingMatrix(j.at("rows").get<std::size_t>(),
                         j.at("cols").get<std::size_t>(),
                         j.at("data").get<std::vector<double>>());
}

}  // namespace

std::size_t EncoderParams::parameter_count() const {
  return token_table.size() + w1.size() + b1.size() + w2.size() + b2.size();
}

void EncoderParams::validate() const {
  const auto& d = dims;
  if (d.vocab_size == 0 || d.embed_dim == 0 || d.hidden_dim == 0 ||
      d.out_dim == 0) {
    fail(ErrorCode::kDimensionMismatch, "encoder dimensions must be >= 1");
  }
  if (token_table.rows() != d.vocab_size || token_table.cols() != d.embed_dim ||
      w1.rows() != d.hidden_dim || w1.cols() != d.embed_dim ||
      b1.size() != d.hidden_dim || w2.rows() != d.out_dim ||
      w2.cols() != d.hidden_dim || b2.size() != d.out_dim) {
    fail(ErrorCode::kDimensionMismatch,
         "encoder weights inconsistent with declared dimensions");
  }
  for (const EmbeddingMatrix* m : {&token_table, &w1, &w2}) {
    if (!m->all_finite()) fail(ErrorCode::kNonFinite, "encoder weight not finite");
  }
}

EncoderParams make_encoder(const EncoderDims& dims, std::uint64_t seed) {
  if (dims.vocab_size == 0 || dims.embed_dim == 0 || dims.hidden_dim == 0 ||
      dims.out_dim == 0) {
    fail(ErrorCode::kDimensionMismatch, "encoder dimensions must be >= 1");
  }
  std::mt19937_64 rng(seed);
  EncoderParams p;
  p.dims = dims;
  p.seed = seed;
  p.token_table = EmbeddingMatrix(dims.vocab_size, dims.embed_dim);
  p.w1 = EmbeddingMatrix(dims.hidden_dim, dims.embed_dim);
  p.b1.assign(dims.hidden_dim, 0.0);
  p.w2 = EmbeddingMatrix(dims.out_dim, dims.hidden_dim);
  p.b2.assign(dims.out_dim, 0.0);

  // Scales keep pooled inputs, hidden pre-activations and outputs O(1).
  const double e = static_cast<double>(dims.embed_dim);
  const double h = static_cast<double>(dims.hidden_dim);
  const double o = static_cast<double>(dims.out_dim);
  fill_normal(p.token_table.mutable_data(), 1.0, rng);
  fill_normal(p.w1.mutable_data(), 1.0 / std::sqrt(e), rng);
  fill_normal(p.b1, 0.1, rng);
  fill_normal(p.w2.mutable_data(), 2.0 / std::sqrt(h * o), rng);
  return p;
}

std::string_view to_string(LoraTarget target) {
  return target == LoraTarget::kHidden ? "w1" : "w2";
}

LoraTarget lora_target_from_string(std::string_view name) {
  if (name == "w1") return LoraTarget::kHidden;
  if (name == "w2") return LoraTarget::kOutput;
  fail(ErrorCode::kParse, "unknown LoRA target \"" + std::string(name) + "\"");
}

LoraAdapter lora_init(std::size_t shape_in, std::size_t shape_out,
                      std::size_t rank, std::uint64_t seed, LoraTarget target) {
  if (rank == 0 || rank >= std::min(shape_in, shape_out)) {
    fail(ErrorCode::kRankTooLarge,
         "rank " + std::to_string(rank) + " must satisfy 1 <= r < min(" +
             std::to_string(shape_in) + ", " + std::to_string(shape_out) + ")");
  }
  std::mt19937_64 rng(seed);
  LoraAdapter ad;
  ad.target = target;
  ad.a = EmbeddingMatrix(rank, shape_in);
  ad.b = EmbeddingMatrix(shape_out, rank);
  fill_normal(ad.a.mutable_data(), 1.0 / std::sqrt(static_cast<double>(rank)), rng);
  return ad;
}

std::vector<LoraAdapter> make_adapters(const EncoderParams& params,
                                       std::size_t rank, std::uint64_t seed) {
  std::vector<LoraAdapter> out;
  out.push_back(lora_init(params.w1.cols(), params.w1.rows(), rank, seed,
                          LoraTarget::kHidden));
  out.push_back(lora_init(params.w2.cols(), params.w2.rows(), rank,
                          seed ^ 0x9e3779b97f4a7c15ULL, LoraTarget::kOutput));
  return out;
}

EmbeddingMatrix effective_weight(const EmbeddingMatrix& base,
                                 const LoraAdapter* adapter) {
  if (adapter == nullptr) return base;
  return base + adapter->delta();
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

TokenSequence tokenize(std::string_view text, std::size_t vocab_size) {
  if (vocab_size == 0) fail(ErrorCode::kInvalidArgument, "vocab_size is 0");
  TokenSequence seq;
  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      seq.ids.push_back(static_cast<std::size_t>(fnv1a64(token) % vocab_size));
      token.clear();
    }
  };
  for (unsigned char c : text) {
    if (c < 0x80 && (std::isspace(c) || std::ispunct(c))) {
      flush();
    } else {
      token.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    }
  }
  flush();
  if (seq.ids.empty()) fail(ErrorCode::kEmptyText, "no tokens in \"" + std::string(text) + "\"");
  return seq;
}

EncodeTrace encode_traced(const EncoderParams& params,
                          std::span<const LoraAdapter> adapters,
                          const TokenSequence& seq) {
  check_adapters(params, adapters);
  if (seq.ids.empty()) fail(ErrorCode::kEmptyText, "empty token sequence");
  const auto& d = params.dims;
  EncodeTrace tr;

  tr.pooled.assign(d.embed_dim, 0.0);
  for (std::size_t id : seq.ids) {
    if (id >= d.vocab_size) {
      fail(ErrorCode::kDimensionMismatch, "token id out of vocabulary range");
    }
    auto row = params.token_table.row(id);
    for (std::size_t j = 0; j < d.embed_dim; ++j) tr.pooled[j] += row[j];
  }
  for (double& v : tr.pooled) v /= static_cast<double>(seq.ids.size());

  tr.hidden = params.b1;
  gemv_acc(params.w1, tr.pooled, tr.hidden);
  if (const auto* ad = find_adapter(adapters, LoraTarget::kHidden)) {
    tr.low_hidden.assign(ad->rank(), 0.0);
    gemv_acc(ad->a, tr.pooled, tr.low_hidden);
    gemv_acc(ad->b, tr.low_hidden, tr.hidden);
  }
  for (double& v : tr.hidden) v = std::tanh(v);

  tr.output = params.b2;
  gemv_acc(params.w2, tr.hidden, tr.output);
  if (const auto* ad = find_adapter(adapters, LoraTarget::kOutput)) {
    tr.low_output.assign(ad->rank(), 0.0);
    gemv_acc(ad->a, tr.hidden, tr.low_output);
    gemv_acc(ad->b, tr.low_output, tr.output);
  }
  return tr;
}

std::vector<double> encode(const EncoderParams& params,
                           std::span<const LoraAdapter> adapters,
                           const TokenSequence& seq) {
  return encode_traced(params, adapters, seq).output;
}

EmbeddingMatrix encode_texts(const EncoderParams& params,
                             std::span<const LoraAdapter> adapters,
                             std::span<const std::string> texts) {
  if (texts.empty()) fail(ErrorCode::kInvalidArgument, "no texts to encode");
  EmbeddingMatrix out(texts.size(), params.dims.out_dim);
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto y = encode(params, adapters, tokenize(texts[i], params.dims.vocab_size));
    std::copy(y.begin(), y.end(), out.mutable_row(i).begin());
  }
  return out;
}

AdapterGrads AdapterGrads::zeros_like(std::span<const LoraAdapter> adapters) {
  AdapterGrads g;
  for (const auto& ad : adapters) {
    g.a.emplace_back(ad.a.rows(), ad.a.cols());
    g.b.emplace_back(ad.b.rows(), ad.b.cols());
  }
  return g;
}

void backpropagate(const EncoderParams& params,
                   std::span<const LoraAdapter> adapters,
                   const EncodeTrace& trace, std::span<const double> grad_output,
                   AdapterGrads& grads) {
  if (grad_output.size() != params.dims.out_dim) {
    fail(ErrorCode::kDimensionMismatch, "output gradient has wrong length");
  }
  if (grads.a.size() != adapters.size() || grads.b.size() != adapters.size()) {
    fail(ErrorCode::kDimensionMismatch, "gradient buffers do not match adapters");
  }

  std::vector<double> grad_hidden(params.dims.hidden_dim, 0.0);
  gemv_t_acc(params.w2, grad_output, grad_hidden);
  for (std::size_t n = 0; n < adapters.size(); ++n) {
    const auto& ad = adapters[n];
    if (ad.target != LoraTarget::kOutput) continue;
    outer_acc(grad_output, trace.low_output, grads.b[n]);
    std::vector<double> grad_low(ad.rank(), 0.0);
    gemv_t_acc(ad.b, grad_output, grad_low);
    outer_acc(grad_low, trace.hidden, grads.a[n]);
    gemv_t_acc(ad.a, grad_low, grad_hidden);
  }

  std::vector<double> grad_pre(grad_hidden.size());
  for (std::size_t i = 0; i < grad_pre.size(); ++i) {
    grad_pre[i] = grad_hidden[i] * (1.0 - trace.hidden[i] * trace.hidden[i]);
  }
  for (std::size_t n = 0; n < adapters.size(); ++n) {
    const auto& ad = adapters[n];
    if (ad.target != LoraTarget::kHidden) continue;
    outer_acc(grad_pre, trace.low_hidden, grads.b[n]);
    std::vector<double> grad_low(ad.rank(), 0.0);
    gemv_t_acc(ad.b, grad_pre, grad_low);
    outer_acc(grad_low, trace.pooled, grads.a[n]);
  }
}

double trainable_fraction(const EncoderParams& params,
                          std::span<const LoraAdapter> adapters) {
  std::size_t trainable = 0;
  for (const auto& ad : adapters) trainable += ad.parameter_count();
  if (trainable == 0) return 0.0;
  return static_cast<double>(trainable) /
         static_cast<double>(params.parameter_count() + trainable);
}

EmbeddingMatrix ToyEncoderSource::embed(std::span<const std::string> texts) const {
  return encode_texts(params_, adapters_, texts);
}

std::string checkpoint_to_json(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  json adapters = json::array();
  for (const auto& ad : ckpt.adapters) {
    adapters.push_back({{"target", to_string(ad.target)},
                        {"rank", ad.rank()},
                        {"a", matrix_to_json(ad.a)},
                        {"b", matrix_to_json(ad.b)}});
  }
  json j = {
      {"format", "protoforge-encoder"},
      {"version", kCheckpointVersion},
      {"seed", p.seed},
      {"frozen", p.frozen},
      {"dims",
       {{"vocab_size", p.dims.vocab_size},
        {"embed_dim", p.dims.embed_dim},
        {"hidden_dim", p.dims.hidden_dim},
        {"out_dim", p.dims.out_dim}}},
      {"token_table", matrix_to_json(p.token_table)},
      {"w1", matrix_to_json(p.w1)},
      {"b1", p.b1},
      {"w2", matrix_to_json(p.w2)},
      {"b2", p.b2},
      {"adapters", adapters},
  };
  return j.dump();
}

Checkpoint checkpoint_from_json(std::string_view text) {
  Checkpoint ckpt;
  try {
    const json j = json::parse(text);
    if (j.at("format") != "protoforge-encoder") {
      fail(ErrorCode::kParse, "not an encoder checkpoint");
    }
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) {
      fail(ErrorCode::kParse,
           "unsupported checkpoint version " + std::to_string(version));
    }
    auto& p = ckpt.params;
    const auto& dims = j.at("dims");
    p.dims.vocab_size = dims.at("vocab_size").get<std::size_t>();
    p.dims.embed_dim = dims.at("embed_dim").get<std::size_t>();
    p.dims.hidden_dim = dims.at("hidden_dim").get<std::size_t>();
    p.dims.out_dim = dims.at("out_dim").get<std::size_t>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.frozen = j.at("frozen").get<bool>();
    p.token_table = matrix_from_json(j.at("token_table"));
    p.w1 = matrix_from_json(j.at("w1"));
    p.b1 = j.at("b1").get<std::vector<double>>();
    p.w2 = matrix_from_json(j.at("w2"));
    p.b2 = j.at("b2").get<std::vector<double>>();
    for (const auto& a : j.at("adapters")) {
      LoraAdapter ad;
      ad.target = lora_target_from_string(a.at("target").get<std::string>());
      ad.a = matrix_from_json(a.at("a"));
      ad.b = matrix_from_json(a.at("b"));
      ckpt.adapters.push_back(std::move(ad));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("checkpoint: ") + e.what());
  }
  ckpt.params.validate();
  check_adapters(ckpt.params, ckpt.adapters);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, checkpoint_to_json(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return checkpoint_from_json(read_file(path));
}

}  // namespace protoforge
