#pragma once

#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "clspool/encoder.hpp"

namespace clspool {

// Aggregation strategy that turns a LayerStack into the vector fed to the
// linear classifier.
struct HeadKind {
  enum class Type { Baseline, MaxCls, Mha, MaxSeqMha, MeanSeqMha, NormSelectSeqMha };

  Type type = Type::Baseline;
  int k = 3;          // depth of pooling; used by MaxCls and the *SeqMha kinds
  int num_heads = 4;  // attention heads of the added MHA layer

  static HeadKind baseline() { return {Type::Baseline, 3, 4}; }
  static HeadKind max_cls(int k = 3) { return {Type::MaxCls, k, 4}; }
  static HeadKind mha(int heads = 4) { return {Type::Mha, 3, heads}; }
  static HeadKind max_seq_mha(int k = 3, int heads = 4) { return {Type::MaxSeqMha, k, heads}; }
  static HeadKind mean_seq_mha(int k = 3, int heads = 4) { return {Type::MeanSeqMha, k, heads}; }
  static HeadKind norm_select_seq_mha(int k = 3, int heads = 4) { return {Type::NormSelectSeqMha, k, heads}; }

  // Accepts "baseline", "maxcls:k=3", "mha:h=4", "maxseq+mha:k=3,h=4",
  // "meanseq+mha:k=3,h=4", "normseq+mha:k=3,h=4"; omitted values default.
  static HeadKind parse(std::string_view spec);
  std::string to_string() const;

  bool uses_attention() const;
  bool uses_depth() const;

  // Checks 1 <= k <= num_layers and num_heads | d_model.
  void validate(int num_layers, int d_model) const;

  friend bool operator==(const HeadKind& a, const HeadKind& b) { return a.to_string() == b.to_string(); }
};

// All kinds with default k and head count, in reporting order.
std::vector<HeadKind> all_head_kinds(int k = 3, int num_heads = 4);

template <typename T>
struct MhaHeadParams {
  std::vector<Array<T>> query, key, value;  // per head [d×(d/h)]
  Array<T> output;                          // [d×d]
};

template <typename T>
struct HeadParams {
  std::optional<MhaHeadParams<T>> mha;
  Array<T> classifier_weight;  // [d×C]
  Array<T> classifier_bias;    // [1×C]

  // MHA maps are Xavier-uniform; classifier weight ~ N(0, 0.02²) with zero bias.
  static HeadParams initialize(const HeadKind& kind, int d_model, int num_classes, std::mt19937_64& rng);

  void collect(std::vector<ParamRef<T>>& out);

  template <typename U>
  HeadParams<U> cast() const;
};

// Uniform on [-a, a] with a = sqrt(6 / (rows + cols)).
template <typename T>
Array<T> xavier_uniform_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng);

// Θ_t^(k): first t rows of the last k layers, oldest first, as [k×t×d].
template <typename T>
struct ThetaSlice {
  Var<T> tensor;
  std::size_t k = 0;
  std::size_t t = 0;
};

template <typename T>
ThetaSlice<T> theta(const LayerStack<T>& stack, std::size_t k, std::size_t t);

template <typename T>
AttentionProjections<T> bind(Tape<T>& tape, MhaHeadParams<T>& params);

template <typename T>
Var<T> head_baseline(const LayerStack<T>& stack);

template <typename T>
Var<T> head_max_cls(const LayerStack<T>& stack, std::size_t k);

// Single-query multi-head attention: query_cls [1×d] attends over context [T×d].
template <typename T>
Var<T> cls_attend(Var<T> query_cls, Var<T> context, const AttentionProjections<T>& proj,
                  const std::vector<bool>& mask, std::vector<Array<T>>* head_weights = nullptr);

template <typename T>
Var<T> head_mha(const LayerStack<T>& stack, const AttentionProjections<T>& proj);

template <typename T>
Var<T> head_max_seq_mha(const LayerStack<T>& stack, std::size_t k, const AttentionProjections<T>& proj);

template <typename T>
Var<T> head_mean_seq_mha(const LayerStack<T>& stack, std::size_t k, const AttentionProjections<T>& proj);

template <typename T>
Var<T> head_norm_select_seq_mha(const LayerStack<T>& stack, std::size_t k, const AttentionProjections<T>& proj);

// rep [1×d] · W_c [d×C] + bias; no activation.
template <typename T>
Var<T> classify(Var<T> rep, Var<T> weight, Var<T> bias);

// Pooled representation [1×d] for any kind; binds the MHA weights if needed.
template <typename T>
Var<T> head_representation(const HeadKind& kind, const LayerStack<T>& stack, HeadParams<T>& params);

// Aggregation followed by the classifier -> logits [1×C].
template <typename T>
Var<T> head_forward(const HeadKind& kind, const LayerStack<T>& stack, HeadParams<T>& params);

}  // namespace clspool
