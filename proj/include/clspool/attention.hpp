#pragma once

#include <vector>

#include "clspool/ops.hpp"

namespace clspool {

// Score added to masked key positions before the softmax.
inline constexpr double kMaskedScore = -1e9;

// Per-head projections already bound to a tape: query/key/value maps of
// shape [d×(d/h)] per head and the output map W_0 of shape [d×d].
template <typename T>
struct AttentionProjections {
  std::vector<Var<T>> query;
  std::vector<Var<T>> key;
  std::vector<Var<T>> value;
  Var<T> output;

  std::size_t num_heads() const { return query.size(); }
};

// Multi-head scaled dot-product attention of query rows [q×d] over context
// rows [T×d]. Keys whose flag in key_mask is false are excluded. Heads are
// concatenated and projected by the output map; no residual or norm is applied.
// When head_weights is non-null it receives one [q×T] weight matrix per head.
template <typename T>
Var<T> multi_head_attention(Var<T> query, Var<T> context, const AttentionProjections<T>& proj,
                            const std::vector<bool>& key_mask, std::vector<Array<T>>* head_weights = nullptr);

// Splits full [d×d] projection parameters column-wise into per-head blocks.
template <typename T>
AttentionProjections<T> split_heads(Var<T> wq, Var<T> wk, Var<T> wv, Var<T> wo, std::size_t num_heads);

}  // namespace clspool
