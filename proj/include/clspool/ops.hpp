#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "clspool/tape.hpp"

namespace clspool {

// Differentiable operations. Every function records one node on the tape of
// its first operand and supplies the exact backward for it.

// [m×n]·[n×p] -> [m×p]
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

// Adds a length-c row vector (shape [c] or [1×c]) to every row of x [r×c].
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias);

// Elementwise product of equal shapes.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> transpose(Var<T> x);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

// Joins 2-D arrays with equal row counts along the column axis.
template <typename T>
Var<T> concat_lastaxis(std::span<const Var<T>> parts);

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count);

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count);

// Stacks equally shaped [t×d] arrays into [k×t×d].
template <typename T>
Var<T> stack_axis0(std::span<const Var<T>> layers);

// [k×t×d] -> [t×d], elementwise maximum over the layer axis. Ties resolve to
// the lowest layer index; the gradient flows only into the selected element.
// If argmax is non-null it receives the selected layer for every (i, j).
template <typename T>
Var<T> max_over_axis0(Var<T> theta, std::vector<std::size_t>* argmax = nullptr);

// Mutation fixture for gradient-check sanity tests: while set, max_over_axis0
// records a backward with the sign flipped. Never set outside tests.
void set_max_backward_sign_flip(bool flip);
bool max_backward_sign_flip();

// [k×t×d] -> [t×d], arithmetic mean over the layer axis.
template <typename T>
Var<T> mean_over_axis0(Var<T> theta);

// [k×t×d] -> [t×d]. For each row position, copies the whole d-vector from the
// layer with the largest L2 norm; ties resolve to the highest layer index.
template <typename T>
Var<T> select_by_norm_axis0(Var<T> theta, std::vector<std::size_t>* chosen = nullptr);

// Max-subtracted softmax over the last axis.
template <typename T>
Var<T> softmax_lastaxis(Var<T> x);

inline constexpr double kLayerNormEpsilon = 1e-5;

// Row-wise normalization of x [T×d] followed by gain/bias (each [d]).
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias);

// Exact erf form: 0.5·x·(1 + erf(x/√2)).
template <typename T>
Var<T> gelu(Var<T> x);

// Rows of table [V×d] selected by ids -> [n×d]; backward scatter-adds.
template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const int> ids);

// Sum of all elements -> shape [1].
template <typename T>
Var<T> sum(Var<T> x);

// -log softmax(logits)[label] for logits [1×C] -> shape [1].
template <typename T>
Var<T> cross_entropy(Var<T> logits, int label);

// (prediction - target)² for a single prediction [1×1] -> shape [1].
template <typename T>
Var<T> squared_error(Var<T> prediction, T target);

// Inverted dropout; mask drawn from rng. Identity when rate == 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng);

}  // namespace clspool
