#include "clspool/encoder.hpp"

#include <algorithm>

namespace clspool {

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("num_layers must be positive");
  if (d_model < 2) throw ConfigError("d_model must be at least 2");
  if (num_heads < 1 || d_model % num_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (d_ff < 1) throw ConfigError("d_ff must be positive");
  if (vocab_size <= kNumReservedIds) throw ConfigError("vocab_size must exceed the reserved ids");
  if (max_seq_len < 2) throw ConfigError("max_seq_len must be at least 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

namespace {

template <typename T>
Array<T> normal_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 0.02);
  Array<T> out({rows, cols});
  for (T& v : out.storage()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T, typename U>
Array<U> cast_array(const Array<T>& a) {
  return a.template cast<U>();
}

// Multiplies padded rows by zero; returns x untouched when all rows are valid.
template <typename T>
Var<T> zero_padded_rows(Var<T> x, const std::vector<bool>& mask) {
  if (std::find(mask.begin(), mask.end(), false) == mask.end()) return x;
  const std::size_t d = x.shape()[1];
  Array<T> keep(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) keep.at(i, j) = mask[i] ? T{1} : T{0};
  return mul(x, x.tape().constant(std::move(keep)));
}

template <typename T>
Var<T> maybe_dropout(Var<T> x, double rate, const ForwardMode& mode) {
  if (!mode.train || rate <= 0.0) return x;
  if (!mode.rng) throw ConfigError("training-mode forward requires a random generator");
  return dropout(x, rate, *mode.rng);
}

}  // namespace

template <typename T>
EncoderParams<T> EncoderParams<T>::initialize(const EncoderConfig& config, std::mt19937_64& rng) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto ff = static_cast<std::size_t>(config.d_ff);
  EncoderParams p;
  p.config = config;
  p.token_embedding = normal_matrix<T>(static_cast<std::size_t>(config.vocab_size), d, rng);
  p.position_embedding = normal_matrix<T>(static_cast<std::size_t>(config.max_seq_len), d, rng);
  p.embedding_norm_gain = Array<T>({d}, T{1});
  p.embedding_norm_bias = Array<T>({d}, T{0});
  for (int l = 0; l < config.num_layers; ++l) {
    EncoderLayerParams<T> layer;
    layer.query = normal_matrix<T>(d, d, rng);
    layer.key = normal_matrix<T>(d, d, rng);
    layer.value = normal_matrix<T>(d, d, rng);
    layer.output = normal_matrix<T>(d, d, rng);
    layer.attn_norm_gain = Array<T>({d}, T{1});
    layer.attn_norm_bias = Array<T>({d}, T{0});
    layer.ff_in_weight = normal_matrix<T>(d, ff, rng);
    layer.ff_in_bias = Array<T>({ff}, T{0});
    layer.ff_out_weight = normal_matrix<T>(ff, d, rng);
    layer.ff_out_bias = Array<T>({d}, T{0});
    layer.ff_norm_gain = Array<T>({d}, T{1});
    layer.ff_norm_bias = Array<T>({d}, T{0});
    p.layers.push_back(std::move(layer));
  }
  return p;
}

template <typename T>
void EncoderParams<T>::collect(std::vector<ParamRef<T>>& out) {
  out.push_back({"encoder.token_embedding", &token_embedding, ParamRole::Embedding});
  out.push_back({"encoder.position_embedding", &position_embedding, ParamRole::Embedding});
  out.push_back({"encoder.embedding_norm.gain", &embedding_norm_gain, ParamRole::NormGain});
  out.push_back({"encoder.embedding_norm.bias", &embedding_norm_bias, ParamRole::Bias});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string prefix = "encoder.layer" + std::to_string(l) + ".";
    EncoderLayerParams<T>& layer = layers[l];
    out.push_back({prefix + "attn.query", &layer.query, ParamRole::Weight});
    out.push_back({prefix + "attn.key", &layer.key, ParamRole::Weight});
    out.push_back({prefix + "attn.value", &layer.value, ParamRole::Weight});
    out.push_back({prefix + "attn.output", &layer.output, ParamRole::Weight});
    out.push_back({prefix + "attn_norm.gain", &layer.attn_norm_gain, ParamRole::NormGain});
    out.push_back({prefix + "attn_norm.bias", &layer.attn_norm_bias, ParamRole::Bias});
    out.push_back({prefix + "ff_in.weight", &layer.ff_in_weight, ParamRole::Weight});
    out.push_back({prefix + "ff_in.bias", &layer.ff_in_bias, ParamRole::Bias});
    out.push_back({prefix + "ff_out.weight", &layer.ff_out_weight, ParamRole::Weight});
    out.push_back({prefix + "ff_out.bias", &layer.ff_out_bias, ParamRole::Bias});
    out.push_back({prefix + "ff_norm.gain", &layer.ff_norm_gain, ParamRole::NormGain});
    out.push_back({prefix + "ff_norm.bias", &layer.ff_norm_bias, ParamRole::Bias});
  }
}

template <typename T>
template <typename U>
EncoderParams<U> EncoderParams<T>::cast() const {
  EncoderParams<U> p;
  p.config = config;
  p.token_embedding = cast_array<T, U>(token_embedding);
  p.position_embedding = cast_array<T, U>(position_embedding);
  p.embedding_norm_gain = cast_array<T, U>(embedding_norm_gain);
  p.embedding_norm_bias = cast_array<T, U>(embedding_norm_bias);
  for (const auto& l : layers) {
    EncoderLayerParams<U> c;
    c.query = cast_array<T, U>(l.query);
    c.key = cast_array<T, U>(l.key);
    c.value = cast_array<T, U>(l.value);
    c.output = cast_array<T, U>(l.output);
    c.attn_norm_gain = cast_array<T, U>(l.attn_norm_gain);
    c.attn_norm_bias = cast_array<T, U>(l.attn_norm_bias);
    c.ff_in_weight = cast_array<T, U>(l.ff_in_weight);
    c.ff_in_bias = cast_array<T, U>(l.ff_in_bias);
    c.ff_out_weight = cast_array<T, U>(l.ff_out_weight);
    c.ff_out_bias = cast_array<T, U>(l.ff_out_bias);
    c.ff_norm_gain = cast_array<T, U>(l.ff_norm_gain);
    c.ff_norm_bias = cast_array<T, U>(l.ff_norm_bias);
    p.layers.push_back(std::move(c));
  }
  return p;
}

template <typename T>
Var<T> self_attention(Var<T> x, const SelfAttentionWeights<T>& weights, std::size_t num_heads,
                      const std::vector<bool>& mask, std::vector<Array<T>>* head_weights) {
  const AttentionProjections<T> proj = split_heads(weights.query, weights.key, weights.value, weights.output, num_heads);
  return multi_head_attention(x, x, proj, mask, head_weights);
}

template <typename T>
LayerStack<T> encode(Tape<T>& tape, EncoderParams<T>& params, std::span<const int> tokens,
                     const std::vector<bool>& mask, ForwardMode mode) {
  const EncoderConfig& cfg = params.config;
  if (tokens.empty()) throw InputError("cannot encode an empty sequence");
  if (tokens.size() > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw InputError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                     std::to_string(cfg.max_seq_len));
  }
  if (tokens[0] != kClsId) throw InputError("sequence must start with the [CLS] id");
  for (int id : tokens) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(cfg.vocab_size));
    }
  }
  LayerStack<T> stack;
  stack.mask = mask.empty() ? std::vector<bool>(tokens.size(), true) : mask;
  if (stack.mask.size() != tokens.size()) throw InputError("mask length differs from token count");
  if (!stack.mask[0]) throw InputError("the [CLS] position cannot be masked");

  const std::size_t t = tokens.size();
  const Var<T> tok = tape.parameter(params.token_embedding);
  const Var<T> pos = tape.parameter(params.position_embedding);
  Var<T> x = add(embedding_lookup(tok, tokens), slice_rows(pos, 0, t));
  x = layer_norm(x, tape.parameter(params.embedding_norm_gain), tape.parameter(params.embedding_norm_bias));
  x = zero_padded_rows(maybe_dropout(x, cfg.dropout, mode), stack.mask);

  const auto heads = static_cast<std::size_t>(cfg.num_heads);
  for (EncoderLayerParams<T>& layer : params.layers) {
    const SelfAttentionWeights<T> w{tape.parameter(layer.query), tape.parameter(layer.key),
                                    tape.parameter(layer.value), tape.parameter(layer.output)};
    const Var<T> attended = maybe_dropout(self_attention(x, w, heads, stack.mask), cfg.dropout, mode);
    x = layer_norm(add(x, attended), tape.parameter(layer.attn_norm_gain), tape.parameter(layer.attn_norm_bias));

    Var<T> hidden = gelu(add_bias(matmul(x, tape.parameter(layer.ff_in_weight)), tape.parameter(layer.ff_in_bias)));
    Var<T> ff = add_bias(matmul(hidden, tape.parameter(layer.ff_out_weight)), tape.parameter(layer.ff_out_bias));
    ff = maybe_dropout(ff, cfg.dropout, mode);
    x = layer_norm(add(x, ff), tape.parameter(layer.ff_norm_gain), tape.parameter(layer.ff_norm_bias));
    x = zero_padded_rows(x, stack.mask);
    stack.activations.push_back(x);
  }
  return stack;
}

template <typename T>
Var<T> cls_of(const LayerStack<T>& stack, std::size_t i) {
  if (i < 1 || i > stack.num_layers()) {
    throw SliceError("layer index " + std::to_string(i) + " outside [1, " + std::to_string(stack.num_layers()) + "]");
  }
  return slice_rows(stack.layer(i), 0, 1);
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template EncoderParams<double> EncoderParams<float>::cast<double>() const;
template EncoderParams<float> EncoderParams<double>::cast<float>() const;
template EncoderParams<float> EncoderParams<float>::cast<float>() const;
template EncoderParams<double> EncoderParams<double>::cast<double>() const;

template LayerStack<float> encode<float>(Tape<float>&, EncoderParams<float>&, std::span<const int>,
                                         const std::vector<bool>&, ForwardMode);
template LayerStack<double> encode<double>(Tape<double>&, EncoderParams<double>&, std::span<const int>,
                                           const std::vector<bool>&, ForwardMode);
template Var<float> self_attention<float>(Var<float>, const SelfAttentionWeights<float>&, std::size_t,
                                          const std::vector<bool>&, std::vector<Array<float>>*);
template Var<double> self_attention<double>(Var<double>, const SelfAttentionWeights<double>&, std::size_t,
                                            const std::vector<bool>&, std::vector<Array<double>>*);
template Var<float> cls_of<float>(const LayerStack<float>&, std::size_t);
template Var<double> cls_of<double>(const LayerStack<double>&, std::size_t);

}  // namespace clspool
