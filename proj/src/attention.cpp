#include "clspool/attention.hpp"

#include <algorithm>
#include <cmath>

namespace clspool {

template <typename T>
Var<T> multi_head_attention(Var<T> query, Var<T> context, const AttentionProjections<T>& proj,
                            const std::vector<bool>& key_mask, std::vector<Array<T>>* head_weights) {
  const std::size_t heads = proj.num_heads();
  if (heads == 0 || proj.key.size() != heads || proj.value.size() != heads) {
    throw DimensionError("attention projections must provide the same positive number of heads");
  }
  const std::size_t q_rows = query.shape().at(0);
  const std::size_t t = context.shape().at(0);
  if (key_mask.size() != t) {
    throw DimensionError("attention mask has " + std::to_string(key_mask.size()) + " flags for " +
                         std::to_string(t) + " context rows");
  }
  const std::size_t head_dim = proj.query.front().shape().at(1);
  const T inv_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));

  Tape<T>& tape = query.tape();
  Var<T> mask_bias;
  if (std::find(key_mask.begin(), key_mask.end(), false) != key_mask.end()) {
    Array<T> bias({q_rows, t});
    for (std::size_t i = 0; i < q_rows; ++i)
      for (std::size_t j = 0; j < t; ++j) bias.at(i, j) = key_mask[j] ? T{0} : static_cast<T>(kMaskedScore);
    mask_bias = tape.constant(std::move(bias));
  }

  if (head_weights) head_weights->clear();
  std::vector<Var<T>> outputs;
  outputs.reserve(heads);
  for (std::size_t s = 0; s < heads; ++s) {
    const Var<T> q = matmul(query, proj.query[s]);
    const Var<T> k = matmul(context, proj.key[s]);
    const Var<T> v = matmul(context, proj.value[s]);
    Var<T> scores = scale(matmul(q, transpose(k)), inv_scale);
    if (mask_bias.valid()) scores = add(scores, mask_bias);
    const Var<T> weights = softmax_lastaxis(scores);
    if (head_weights) head_weights->push_back(weights.value());
    outputs.push_back(matmul(weights, v));
  }
  const Var<T> joined = heads == 1 ? outputs.front() : concat_lastaxis<T>(outputs);
  return matmul(joined, proj.output);
}

template <typename T>
AttentionProjections<T> split_heads(Var<T> wq, Var<T> wk, Var<T> wv, Var<T> wo, std::size_t num_heads) {
  const std::size_t d = wq.shape().at(1);
  if (num_heads == 0 || d % num_heads != 0) {
    throw DimensionError("model width " + std::to_string(d) + " not divisible by " + std::to_string(num_heads) +
                         " heads");
  }
  const std::size_t head_dim = d / num_heads;
  AttentionProjections<T> proj;
  for (std::size_t s = 0; s < num_heads; ++s) {
    proj.query.push_back(slice_cols(wq, s * head_dim, head_dim));
    proj.key.push_back(slice_cols(wk, s * head_dim, head_dim));
    proj.value.push_back(slice_cols(wv, s * head_dim, head_dim));
  }
  proj.output = wo;
  return proj;
}

template Var<float> multi_head_attention<float>(Var<float>, Var<float>, const AttentionProjections<float>&,
                                                const std::vector<bool>&, std::vector<Array<float>>*);
template Var<double> multi_head_attention<double>(Var<double>, Var<double>, const AttentionProjections<double>&,
                                                  const std::vector<bool>&, std::vector<Array<double>>*);
template AttentionProjections<float> split_heads<float>(Var<float>, Var<float>, Var<float>, Var<float>,
                                                        std::size_t);
template AttentionProjections<double> split_heads<double>(Var<double>, Var<double>, Var<double>, Var<double>,
                                                          std::size_t);

}  // namespace clspool
