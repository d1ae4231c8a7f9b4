#include "clspool/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace clspool {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + " expects rank " + std::to_string(rank) + ", got " + shape_to_string(s));
  }
}

void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + " shape mismatch: " + shape_to_string(a) + " vs " + shape_to_string(b));
  }
}

template <typename T>
void accumulate(std::vector<T>& dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// c[m×p] += a[m×n]·b[n×p]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const T aik = a[i * n + k];
      if (aik == T{0}) continue;
      const T* brow = b + k * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * brow[j];
    }
  }
}

// c[m×n] += g[m×p]·bᵀ where b is [n×p]
template <typename T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const T* brow = b + k * p;
      T acc{0};
      for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
      c[i * n + k] += acc;
    }
  }
}

// c[n×p] += aᵀ·g where a is [m×n], g is [m×p]
template <typename T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t m, std::size_t n, std::size_t p) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * p;
    for (std::size_t k = 0; k < n; ++k) {
      const T aik = a[i * n + k];
      if (aik == T{0}) continue;
      T* crow = c + k * p;
      for (std::size_t j = 0; j < p; ++j) crow[j] += aik * grow[j];
    }
  }
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
    throw DimensionError("matmul shape mismatch: " + shape_to_string(sa) + " x " + shape_to_string(sb));
  }
  const std::size_t m = sa[0], n = sa[1], p = sb[1];
  Array<T> out({m, p});
  gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), m, n, p);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, n, p](Tape<T>& t, const std::vector<T>& g) {
    if (t.requires_grad(ia)) {
      gemm_nt(g.data(), t.value(ib).data().data(), t.grad_buffer(ia).data(), m, n, p);
    }
    if (t.requires_grad(ib)) {
      gemm_tn(t.value(ia).data().data(), g.data(), t.grad_buffer(ib).data(), m, n, p);
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "add");
  Array<T> out = a.value();
  out.drop_grad();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, const std::vector<T>& g) {
    if (t.requires_grad(ia)) accumulate<T>(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) accumulate<T>(t.grad_buffer(ib), g);
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const Shape& sx = x.shape();
  require_rank(sx, 2, "add_bias");
  const std::size_t r = sx[0], c = sx[1];
  if (bias.value().size() != c) {
    throw DimensionError("add_bias shape mismatch: " + shape_to_string(sx) + " + " + shape_to_string(bias.shape()));
  }
  Array<T> out(sx);
  const auto xv = x.value().data();
  const auto bv = bias.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape().record(std::move(out), {x, bias}, [ix, ib, r, c](Tape<T>& t, const std::vector<T>& g) {
    if (t.requires_grad(ix)) accumulate<T>(t.grad_buffer(ix), g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same(a.shape(), b.shape(), "mul");
  Array<T> out(a.shape());
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<T>& t, const std::vector<T>& g) {
    const auto av = t.value(ia).data();
    const auto bv = t.value(ib).data();
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Array<T> out(x.shape());
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * factor;
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, factor](Tape<T>& t, const std::vector<T>& g) {
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
  });
}

template <typename T>
Var<T> transpose(Var<T> x) {
  const Shape& s = x.shape();
  require_rank(s, 2, "transpose");
  const std::size_t r = s[0], c = s[1];
  Array<T> out({c, r});
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, r, c](Tape<T>& t, const std::vector<T>& g) {
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  if (shape_size(shape) != x.value().size()) {
    throw DimensionError("reshape " + shape_to_string(x.shape()) + " -> " + shape_to_string(shape));
  }
  Array<T> out(std::move(shape), x.value().storage());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix](Tape<T>& t, const std::vector<T>& g) {
    accumulate<T>(t.grad_buffer(ix), g);
  });
}

template <typename T>
Var<T> concat_lastaxis(std::span<const Var<T>> parts) {
  if (parts.empty()) throw DimensionError("concat_lastaxis of an empty list");
  const std::size_t rows = parts.front().shape().at(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var<T>& p : parts) {
    require_rank(p.shape(), 2, "concat_lastaxis");
    if (p.shape()[0] != rows) {
      throw DimensionError("concat_lastaxis row mismatch: " + shape_to_string(parts.front().shape()) + " vs " +
                           shape_to_string(p.shape()));
    }
    widths.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  Array<T> out({rows, total});
  std::size_t offset = 0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].value().data();
    for (std::size_t i = 0; i < rows; ++i)
      std::copy_n(pv.begin() + i * widths[k], widths[k], out.data().begin() + i * total + offset);
    offset += widths[k];
    ids.push_back(parts[k].id());
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids, widths, rows, total](Tape<T>& t, const std::vector<T>& g) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.requires_grad(ids[k])) {
            auto& gp = t.grad_buffer(ids[k]);
            for (std::size_t i = 0; i < rows; ++i)
              for (std::size_t j = 0; j < widths[k]; ++j) gp[i * widths[k] + j] += g[i * total + offset + j];
          }
          offset += widths[k];
        }
      });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  require_rank(s, 2, "slice_rows");
  if (count == 0 || begin + count > s[0]) {
    throw SliceError("slice_rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_to_string(s));
  }
  const std::size_t c = s[1];
  Array<T> out({count, c});
  const auto xv = x.value().data();
  std::copy_n(xv.begin() + begin * c, count * c, out.data().begin());
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, begin, c](Tape<T>& t, const std::vector<T>& g) {
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[begin * c + i] += g[i];
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  const Shape& s = x.shape();
  require_rank(s, 2, "slice_cols");
  if (count == 0 || begin + count > s[1]) {
    throw SliceError("slice_cols [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_to_string(s));
  }
  const std::size_t r = s[0], c = s[1];
  Array<T> out({r, count});
  const auto xv = x.value().data();
  for (std::size_t i = 0; i < r; ++i) std::copy_n(xv.begin() + i * c + begin, count, out.data().begin() + i * count);
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, begin, count, r, c](Tape<T>& t, const std::vector<T>& g) {
    auto& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * c + begin + j] += g[i * count + j];
  });
}

template <typename T>
Var<T> stack_axis0(std::span<const Var<T>> layers) {
  if (layers.empty()) throw DimensionError("stack_axis0 of an empty list");
  const Shape& s0 = layers.front().shape();
  require_rank(s0, 2, "stack_axis0");
  const std::size_t block = s0[0] * s0[1];
  Array<T> out({layers.size(), s0[0], s0[1]});
  std::vector<std::size_t> ids;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require_same(s0, layers[l].shape(), "stack_axis0");
    std::copy_n(layers[l].value().data().begin(), block, out.data().begin() + l * block);
    ids.push_back(layers[l].id());
  }
  return layers.front().tape().record(std::move(out), layers, [ids, block](Tape<T>& t, const std::vector<T>& g) {
    for (std::size_t l = 0; l < ids.size(); ++l) {
      if (!t.requires_grad(ids[l])) continue;
      auto& gl = t.grad_buffer(ids[l]);
      for (std::size_t i = 0; i < block; ++i) gl[i] += g[l * block + i];
    }
  });
}

namespace {
std::atomic<bool> g_flip_max_backward{false};
}  // namespace

void set_max_backward_sign_flip(bool flip) { g_flip_max_backward = flip; }
bool max_backward_sign_flip() { return g_flip_max_backward; }

template <typename T>
Var<T> max_over_axis0(Var<T> theta, std::vector<std::size_t>* argmax) {
  const Shape& s = theta.shape();
  require_rank(s, 3, "max_over_axis0");
  const std::size_t k = s[0], block = s[1] * s[2];
  const auto tv = theta.value().data();
  Array<T> out({s[1], s[2]});
  std::vector<std::size_t> arg(block, 0);
  for (std::size_t i = 0; i < block; ++i) {
    T best = tv[i];
    for (std::size_t l = 1; l < k; ++l) {
      // strict comparison keeps the lowest layer on ties
      if (tv[l * block + i] > best) {
        best = tv[l * block + i];
        arg[i] = l;
      }
    }
    out[i] = best;
  }
  if (argmax) *argmax = arg;
  const std::size_t it = theta.id();
  if (g_flip_max_backward) {
    return theta.tape().record(std::move(out), {theta},
                               [it, block, arg = std::move(arg)](Tape<T>& t, const std::vector<T>& g) {
                                 auto& gt = t.grad_buffer(it);
                                 for (std::size_t i = 0; i < block; ++i) gt[arg[i] * block + i] -= g[i];
                               });
  }
  return theta.tape().record(std::move(out), {theta},
                             [it, block, arg = std::move(arg)](Tape<T>& t, const std::vector<T>& g) {
                               auto& gt = t.grad_buffer(it);
                               for (std::size_t i = 0; i < block; ++i) gt[arg[i] * block + i] += g[i];
                             });
}

template <typename T>
Var<T> mean_over_axis0(Var<T> theta) {
  const Shape& s = theta.shape();
  require_rank(s, 3, "mean_over_axis0");
  const std::size_t k = s[0], block = s[1] * s[2];
  const auto tv = theta.value().data();
  Array<T> out({s[1], s[2]});
  const T inv_k = T{1} / static_cast<T>(k);
  for (std::size_t i = 0; i < block; ++i) {
    T acc{0};
    for (std::size_t l = 0; l < k; ++l) acc += tv[l * block + i];
    out[i] = k == 1 ? acc : acc * inv_k;
  }
  const std::size_t it = theta.id();
  return theta.tape().record(std::move(out), {theta}, [it, k, block, inv_k](Tape<T>& t, const std::vector<T>& g) {
    auto& gt = t.grad_buffer(it);
    for (std::size_t l = 0; l < k; ++l)
      for (std::size_t i = 0; i < block; ++i) gt[l * block + i] += k == 1 ? g[i] : g[i] * inv_k;
  });
}

template <typename T>
Var<T> select_by_norm_axis0(Var<T> theta, std::vector<std::size_t>* chosen) {
  const Shape& s = theta.shape();
  require_rank(s, 3, "select_by_norm_axis0");
  const std::size_t k = s[0], rows = s[1], d = s[2], block = rows * d;
  const auto tv = theta.value().data();
  Array<T> out({rows, d});
  std::vector<std::size_t> pick(rows, 0);
  for (std::size_t r = 0; r < rows; ++r) {
    T best_sq{-1};
    for (std::size_t l = 0; l < k; ++l) {
      T sq{0};
      for (std::size_t j = 0; j < d; ++j) {
        const T v = tv[l * block + r * d + j];
        sq += v * v;
      }
      // >= lets deeper layers win ties
      if (sq >= best_sq) {
        best_sq = sq;
        pick[r] = l;
      }
    }
    std::copy_n(tv.begin() + pick[r] * block + r * d, d, out.data().begin() + r * d);
  }
  if (chosen) *chosen = pick;
  const std::size_t it = theta.id();
  return theta.tape().record(std::move(out), {theta},
                             [it, rows, d, block, pick = std::move(pick)](Tape<T>& t, const std::vector<T>& g) {
                               auto& gt = t.grad_buffer(it);
                               for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t j = 0; j < d; ++j) gt[pick[r] * block + r * d + j] += g[r * d + j];
                             });
}

template <typename T>
Var<T> softmax_lastaxis(Var<T> x) {
  const Shape& s = x.shape();
  const std::size_t n = s.back();
  const std::size_t rows = x.value().size() / n;
  const auto xv = x.value().data();
  Array<T> out(s);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * n;
    T* o = out.data().data() + r * n;
    const T mx = *std::max_element(in, in + n);
    T total{0};
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= total;
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();  // id this node will receive
  return x.tape().record(std::move(out), {x}, [ix, iy, rows, n](Tape<T>& t, const std::vector<T>& g) {
    const auto y = t.value(iy).data();
    auto& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
      for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[r * n + j] * (g[r * n + j] - dot);
    }
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias) {
  const Shape& s = x.shape();
  require_rank(s, 2, "layer_norm");
  const std::size_t rows = s[0], d = s[1];
  if (d < 2) throw DimensionError("layer_norm needs d >= 2, got " + shape_to_string(s));
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm gain/bias must have " + std::to_string(d) + " entries");
  }
  const auto xv = x.value().data();
  const auto gv = gain.value().data();
  const auto bv = bias.value().data();
  Array<T> out(s);
  std::vector<T> xhat(rows * d);
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T mean{0};
    for (std::size_t j = 0; j < d; ++j) mean += in[j];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
    var /= static_cast<T>(d);
    inv_std[r] = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEpsilon));
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (in[j] - mean) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t,
                                                                                   const std::vector<T>& g) {
        const auto gv = t.value(ig).data();
        if (t.requires_grad(ig)) {
          auto& gg = t.grad_buffer(ig);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
        }
        if (t.requires_grad(ib)) {
          auto& gb = t.grad_buffer(ib);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
        }
        if (t.requires_grad(ix)) {
          auto& gx = t.grad_buffer(ix);
          const T inv_d = T{1} / static_cast<T>(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dy{0}, mean_dy_xhat{0};
            for (std::size_t j = 0; j < d; ++j) {
              const T dy = g[r * d + j] * gv[j];
              mean_dy += dy;
              mean_dy_xhat += dy * xhat[r * d + j];
            }
            mean_dy *= inv_d;
            mean_dy_xhat *= inv_d;
            for (std::size_t j = 0; j < d; ++j) {
              const T dy = g[r * d + j] * gv[j];
              gx[r * d + j] += inv_std[r] * (dy - mean_dy - xhat[r * d + j] * mean_dy_xhat);
            }
          }
        }
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  const auto xv = x.value().data();
  Array<T> out(x.shape());
  const T inv_sqrt2 = static_cast<T>(1.0 / std::numbers::sqrt2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T{0.5} * xv[i] * (T{1} + std::erf(xv[i] * inv_sqrt2));
  const std::size_t ix = x.id();
  return x.tape().record(std::move(out), {x}, [ix, inv_sqrt2](Tape<T>& t, const std::vector<T>& g) {
    const auto xv = t.value(ix).data();
    auto& gx = t.grad_buffer(ix);
    const T inv_sqrt_2pi = static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T cdf = T{0.5} * (T{1} + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt_2pi * std::exp(T{-0.5} * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const int> ids) {
  const Shape& s = table.shape();
  require_rank(s, 2, "embedding_lookup");
  const std::size_t vocab = s[0], d = s[1];
  if (ids.empty()) throw InputError("embedding_lookup of an empty id list");
  Array<T> out({ids.size(), d});
  const auto tv = table.value().data();
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw VocabularyError("token id " + std::to_string(ids[i]) + " outside vocabulary of size " +
                            std::to_string(vocab));
    }
    rows.push_back(static_cast<std::size_t>(ids[i]));
    std::copy_n(tv.begin() + rows.back() * d, d, out.data().begin() + i * d);
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {table}, [it, d, rows = std::move(rows)](Tape<T>& t,
                                                                                      const std::vector<T>& g) {
    auto& gt = t.grad_buffer(it);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[rows[i] * d + j] += g[i * d + j];
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  const auto xv = x.value().data();
  T total{0};
  for (T v : xv) total += v;
  const std::size_t ix = x.id();
  return x.tape().record(Array<T>({1}, total), {x}, [ix](Tape<T>& t, const std::vector<T>& g) {
    auto& gx = t.grad_buffer(ix);
    for (T& v : gx) v += g[0];
  });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, int label) {
  const Shape& s = logits.shape();
  require_rank(s, 2, "cross_entropy");
  if (s[0] != 1) throw DimensionError("cross_entropy expects a single row of logits, got " + shape_to_string(s));
  const std::size_t c = s[1];
  if (label < 0 || static_cast<std::size_t>(label) >= c) {
    throw InputError("label " + std::to_string(label) + " out of range for " + std::to_string(c) + " classes");
  }
  const auto z = logits.value().data();
  const T mx = *std::max_element(z.begin(), z.end());
  T total{0};
  for (T v : z) total += std::exp(v - mx);
  const T log_norm = mx + std::log(total);
  std::vector<T> probs(c);
  for (std::size_t j = 0; j < c; ++j) probs[j] = std::exp(z[j] - log_norm);
  const T loss = log_norm - z[static_cast<std::size_t>(label)];
  const std::size_t iz = logits.id();
  return logits.tape().record(Array<T>({1}, loss), {logits},
                              [iz, label, probs = std::move(probs)](Tape<T>& t, const std::vector<T>& g) {
                                auto& gz = t.grad_buffer(iz);
                                for (std::size_t j = 0; j < probs.size(); ++j) gz[j] += g[0] * probs[j];
                                gz[static_cast<std::size_t>(label)] -= g[0];
                              });
}

template <typename T>
Var<T> squared_error(Var<T> prediction, T target) {
  if (prediction.value().size() != 1) {
    throw DimensionError("squared_error expects one prediction, got " + shape_to_string(prediction.shape()));
  }
  const T diff = prediction.value()[0] - target;
  const std::size_t ip = prediction.id();
  return prediction.tape().record(Array<T>({1}, diff * diff), {prediction},
                                  [ip, diff](Tape<T>& t, const std::vector<T>& g) {
                                    t.grad_buffer(ip)[0] += g[0] * T{2} * diff;
                                  });
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, std::mt19937_64& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const T kept = static_cast<T>(1.0 / (1.0 - rate));
  Array<T> mask(x.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = keep(rng) ? kept : T{0};
  return mul(x, x.tape().constant(std::move(mask)));
}

#define CLSPOOL_INSTANTIATE_OPS(T)                                                    \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                          \
  template Var<T> add<T>(Var<T>, Var<T>);                                             \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                        \
  template Var<T> mul<T>(Var<T>, Var<T>);                                             \
  template Var<T> scale<T>(Var<T>, T);                                                \
  template Var<T> transpose<T>(Var<T>);                                               \
  template Var<T> reshape<T>(Var<T>, Shape);                                          \
  template Var<T> concat_lastaxis<T>(std::span<const Var<T>>);                        \
  template Var<T> slice_rows<T>(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> slice_cols<T>(Var<T>, std::size_t, std::size_t);                    \
  template Var<T> stack_axis0<T>(std::span<const Var<T>>);                            \
  template Var<T> max_over_axis0<T>(Var<T>, std::vector<std::size_t>*);               \
  template Var<T> mean_over_axis0<T>(Var<T>);                                         \
  template Var<T> select_by_norm_axis0<T>(Var<T>, std::vector<std::size_t>*);         \
  template Var<T> softmax_lastaxis<T>(Var<T>);                                        \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>);                              \
  template Var<T> gelu<T>(Var<T>);                                                    \
  template Var<T> embedding_lookup<T>(Var<T>, std::span<const int>);                  \
  template Var<T> sum<T>(Var<T>);                                                     \
  template Var<T> cross_entropy<T>(Var<T>, int);                                      \
  template Var<T> squared_error<T>(Var<T>, T);                                        \
  template Var<T> dropout<T>(Var<T>, double, std::mt19937_64&);

CLSPOOL_INSTANTIATE_OPS(float)
CLSPOOL_INSTANTIATE_OPS(double)

}  // namespace clspool
