#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "clspool/attention.hpp"

namespace clspool {

// Reserved vocabulary ids.
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kNumReservedIds = 4;

struct EncoderConfig {
  int num_layers = 4;
  int d_model = 32;
  int num_heads = 4;
  int d_ff = 128;
  int vocab_size = 50;
  int max_seq_len = 64;
  double dropout = 0.1;

  // Throws ConfigError on inconsistent values.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Weight decay applies to Weight and Embedding roles only.
enum class ParamRole { Weight, Embedding, Bias, NormGain };

template <typename T>
struct ParamRef {
  std::string name;
  Array<T>* array;
  ParamRole role;
};

template <typename T>
struct EncoderLayerParams {
  Array<T> query, key, value, output;  // each [d×d]
  Array<T> attn_norm_gain, attn_norm_bias;
  Array<T> ff_in_weight, ff_in_bias;    // [d×d_ff], [d_ff]
  Array<T> ff_out_weight, ff_out_bias;  // [d_ff×d], [d]
  Array<T> ff_norm_gain, ff_norm_bias;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Array<T> token_embedding;     // [vocab×d]
  Array<T> position_embedding;  // [max_seq_len×d]
  Array<T> embedding_norm_gain, embedding_norm_bias;
  std::vector<EncoderLayerParams<T>> layers;

  // Weights and embeddings ~ N(0, 0.02²); norm gains 1; biases 0.
  static EncoderParams initialize(const EncoderConfig& config, std::mt19937_64& rng);

  // Appends every parameter with a stable name ("encoder.layer0.query", ...).
  void collect(std::vector<ParamRef<T>>& out);

  template <typename U>
  EncoderParams<U> cast() const;
};

// Ordered activations y^(1)..y^(N) of one sequence, each [T×d], plus the
// validity flag of every position. Row 0 is the [CLS] slot.
template <typename T>
struct LayerStack {
  std::vector<Var<T>> activations;
  std::vector<bool> mask;

  std::size_t num_layers() const { return activations.size(); }
  std::size_t seq_len() const { return activations.at(0).shape()[0]; }
  std::size_t d_model() const { return activations.at(0).shape()[1]; }
  const Var<T>& layer(std::size_t i) const { return activations.at(i - 1); }  // 1-based
};

// Dropout is active only when train is set; its masks come from rng.
struct ForwardMode {
  bool train = false;
  std::mt19937_64* rng = nullptr;
};

// Runs the embedding and all encoder layers, recording every layer output.
// tokens[0] must be the [CLS] id; mask marks valid positions (all valid when
// empty). Padded positions are excluded from attention and zeroed in outputs.
template <typename T>
LayerStack<T> encode(Tape<T>& tape, EncoderParams<T>& params, std::span<const int> tokens,
                     const std::vector<bool>& mask = {}, ForwardMode mode = {});

// Bound weights of one encoder layer's attention sublayer.
template <typename T>
struct SelfAttentionWeights {
  Var<T> query, key, value, output;
};

// Multi-head self-attention with Q = K = V = x; residual and norm belong to the caller.
template <typename T>
Var<T> self_attention(Var<T> x, const SelfAttentionWeights<T>& weights, std::size_t num_heads,
                      const std::vector<bool>& mask, std::vector<Array<T>>* head_weights = nullptr);

// Row 0 of y^(i), i in [1, N].
template <typename T>
Var<T> cls_of(const LayerStack<T>& stack, std::size_t i);

}  // namespace clspool
