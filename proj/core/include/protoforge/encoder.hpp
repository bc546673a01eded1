#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protoforge/linalg.hpp"
#include "protoforge/prototype.hpp"

namespace protoforge {

// Desk-scale text encoder: hashed token embeddings, mean pooling, then a
// two-layer tanh MLP. Both dense layers can carry a LoRA adapter.
//
// Weights are stored output-major (d_out × d_in), so a layer computes
// y = W·x + b and an adapter contributes W = W0 + B·A.

struct EncoderDims {
  std::size_t vocab_size = 4096;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t out_dim = 64;
};

struct EncoderParams {
  EncoderDims dims;
  EmbeddingMatrix token_table;  // vocab_size × embed_dim
  EmbeddingMatrix w1;           // hidden_dim × embed_dim
  std::vector<double> b1;       // hidden_dim
  EmbeddingMatrix w2;           // out_dim × hidden_dim
  std::vector<double> b2;       // out_dim
  bool frozen = true;
  std::uint64_t seed = 0;

  std::size_t parameter_count() const;
  void validate() const;
};

EncoderParams make_encoder(const EncoderDims& dims, std::uint64_t seed);

enum class LoraTarget { kHidden, kOutput };

std::string_view to_string(LoraTarget target);
LoraTarget lora_target_from_string(std::string_view name);

struct LoraAdapter {
  LoraTarget target = LoraTarget::kHidden;
  EmbeddingMatrix a;  // rank × d_in
  EmbeddingMatrix b;  // d_out × rank

  std::size_t rank() const { return a.rows(); }
  std::size_t parameter_count() const { return a.size() + b.size(); }
  EmbeddingMatrix delta() const { return matmul(b, a); }
};

// a ~ N(0, 1/rank), b = 0, so the adapted encoder starts equal to the base.
// Throws RankTooLarge unless 1 <= rank < min(shape_in, shape_out).
LoraAdapter lora_init(std::size_t shape_in, std::size_t shape_out,
                      std::size_t rank, std::uint64_t seed,
                      LoraTarget target = LoraTarget::kHidden);

// One adapter per dense layer with the given rank, seeded from `seed`.
std::vector<LoraAdapter> make_adapters(const EncoderParams& params,
                                       std::size_t rank, std::uint64_t seed);

EmbeddingMatrix effective_weight(const EmbeddingMatrix& base,
                                 const LoraAdapter* adapter);

struct TokenSequence {
  std::vector<std::size_t> ids;
};

std::uint64_t fnv1a64(std::string_view bytes);

// Lowercases ASCII, splits on whitespace and ASCII punctuation, and hashes
// each token with FNV-1a (64-bit) modulo vocab_size. EmptyText when no token
// survives.
TokenSequence tokenize(std::string_view text, std::size_t vocab_size);

// Intermediate activations kept for the backward pass.
struct EncodeTrace {
  std::vector<double> pooled;      // embed_dim
  std::vector<double> hidden;      // hidden_dim, after tanh
  std::vector<double> low_hidden;  // A1·pooled, empty without an adapter
  std::vector<double> low_output;  // A2·hidden, empty without an adapter
  std::vector<double> output;      // out_dim
};

EncodeTrace encode_traced(const EncoderParams& params,
                          std::span<const LoraAdapter> adapters,
                          const TokenSequence& seq);

// Raw (unnormalized) encoder output for one token sequence.
std::vector<double> encode(const EncoderParams& params,
                           std::span<const LoraAdapter> adapters,
                           const TokenSequence& seq);

EmbeddingMatrix encode_texts(const EncoderParams& params,
                             std::span<const LoraAdapter> adapters,
                             std::span<const std::string> texts);

// Gradients w.r.t. each adapter's A and B, in the same order as the adapters.
struct AdapterGrads {
  std::vector<EmbeddingMatrix> a;
  std::vector<EmbeddingMatrix> b;

  static AdapterGrads zeros_like(std::span<const LoraAdapter> adapters);
};

// Accumulates dL/dA and dL/dB given dL/d(output) for one traced forward pass.
void backpropagate(const EncoderParams& params,
                   std::span<const LoraAdapter> adapters,
                   const EncodeTrace& trace, std::span<const double> grad_output,
                   AdapterGrads& grads);

double trainable_fraction(const EncoderParams& params,
                          std::span<const LoraAdapter> adapters);

/// Embedding source backed by the toy encoder (adapters optional).
class ToyEncoderSource final : public EmbeddingSource {
 public:
  ToyEncoderSource(const EncoderParams& params,
                   std::span<const LoraAdapter> adapters = {})
      : params_(params), adapters_(adapters) {}
  EmbeddingMatrix embed(std::span<const std::string> texts) const override;

 private:
  const EncoderParams& params_;
  std::span<const LoraAdapter> adapters_;
};

// Versioned JSON checkpoint holding dimensions, base weights, adapters and
// the seed. 64-bit values survive a save/load round trip bit for bit.
struct Checkpoint {
  EncoderParams params;
  std::vector<LoraAdapter> adapters;
};

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(std::string_view json);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protoforge
