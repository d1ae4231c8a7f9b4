#include "clspool/heads.hpp"

#include <charconv>
#include <cmath>

namespace clspool {

namespace {

constexpr const char* kValidKinds =
    "baseline, maxcls:k=K, mha:h=H, maxseq+mha:k=K,h=H, meanseq+mha:k=K,h=H, normseq+mha:k=K,h=H";

int parse_int(std::string_view text, std::string_view spec) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("bad integer '" + std::string(text) + "' in head spec '" + std::string(spec) + "'");
  }
  return value;
}

}  // namespace

HeadKind HeadKind::parse(std::string_view spec) {
  const std::size_t colon = spec.find(':');
  const std::string_view name = spec.substr(0, colon);
  HeadKind kind;
  bool takes_k = true, takes_h = true;
  if (name == "baseline") {
    kind = baseline();
    takes_k = takes_h = false;
  } else if (name == "maxcls") {
    kind = max_cls();
    takes_h = false;
  } else if (name == "mha") {
    kind = mha();
    takes_k = false;
  } else if (name == "maxseq+mha") {
    kind = max_seq_mha();
  } else if (name == "meanseq+mha") {
    kind = mean_seq_mha();
  } else if (name == "normseq+mha") {
    kind = norm_select_seq_mha();
  } else {
    throw ConfigError("unknown head kind '" + std::string(spec) + "'; valid kinds: " + kValidKinds);
  }
  if (colon == std::string_view::npos) return kind;

  std::string_view rest = spec.substr(colon + 1);
  while (!rest.empty()) {
    const std::size_t comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
    const std::size_t eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("malformed option '" + std::string(item) + "' in head spec '" + std::string(spec) + "'");
    }
    const std::string_view key = item.substr(0, eq);
    const int value = parse_int(item.substr(eq + 1), spec);
    if (key == "k" && takes_k) {
      kind.k = value;
    } else if (key == "h" && takes_h) {
      kind.num_heads = value;
    } else {
      throw ConfigError("option '" + std::string(key) + "' not valid for head spec '" + std::string(spec) +
                        "'; valid kinds: " + kValidKinds);
    }
  }
  if (kind.k < 1 || kind.num_heads < 1) throw ConfigError("head spec '" + std::string(spec) + "' needs k, h >= 1");
  return kind;
}

std::string HeadKind::to_string() const {
  const std::string k_part = "k=" + std::to_string(k);
  const std::string h_part = "h=" + std::to_string(num_heads);
  switch (type) {
    case Type::Baseline: return "baseline";
    case Type::MaxCls: return "maxcls:" + k_part;
    case Type::Mha: return "mha:" + h_part;
    case Type::MaxSeqMha: return "maxseq+mha:" + k_part + "," + h_part;
    case Type::MeanSeqMha: return "meanseq+mha:" + k_part + "," + h_part;
    case Type::NormSelectSeqMha: return "normseq+mha:" + k_part + "," + h_part;
  }
  return "?";
}

bool HeadKind::uses_attention() const { return type != Type::Baseline && type != Type::MaxCls; }

bool HeadKind::uses_depth() const { return type != Type::Baseline && type != Type::Mha; }

void HeadKind::validate(int num_layers, int d_model) const {
  if (uses_depth() && (k < 1 || k > num_layers)) {
    throw ConfigError("head " + to_string() + ": k must lie in [1, " + std::to_string(num_layers) + "]");
  }
  if (uses_attention() && (num_heads < 1 || d_model % num_heads != 0)) {
    throw ConfigError("head " + to_string() + ": " + std::to_string(num_heads) + " heads do not divide d_model " +
                      std::to_string(d_model));
  }
}

std::vector<HeadKind> all_head_kinds(int k, int num_heads) {
  return {HeadKind::baseline(),
          HeadKind::max_cls(k),
          HeadKind::mha(num_heads),
          HeadKind::max_seq_mha(k, num_heads),
          HeadKind::mean_seq_mha(k, num_heads),
          HeadKind::norm_select_seq_mha(k, num_heads)};
}

template <typename T>
Array<T> xavier_uniform_init(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Array<T> out({rows, cols});
  for (T& v : out.storage()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
HeadParams<T> HeadParams<T>::initialize(const HeadKind& kind, int d_model, int num_classes, std::mt19937_64& rng) {
  if (num_classes < 1) throw ConfigError("number of classes must be positive");
  if (kind.uses_attention() && (kind.num_heads < 1 || d_model % kind.num_heads != 0)) {
    throw ConfigError("head " + kind.to_string() + ": heads do not divide d_model " + std::to_string(d_model));
  }
  const auto d = static_cast<std::size_t>(d_model);
  HeadParams p;
  if (kind.uses_attention()) {
    const auto h = static_cast<std::size_t>(kind.num_heads);
    const std::size_t head_dim = d / h;
    MhaHeadParams<T> mha;
    auto split = [&](const Array<T>& full, std::vector<Array<T>>& parts) {
      for (std::size_t s = 0; s < h; ++s) {
        Array<T> part({d, head_dim});
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t j = 0; j < head_dim; ++j) part.at(i, j) = full.at(i, s * head_dim + j);
        parts.push_back(std::move(part));
      }
    };
    split(xavier_uniform_init<T>(d, d, rng), mha.query);
    split(xavier_uniform_init<T>(d, d, rng), mha.key);
    split(xavier_uniform_init<T>(d, d, rng), mha.value);
    mha.output = xavier_uniform_init<T>(d, d, rng);
    p.mha = std::move(mha);
  }
  std::normal_distribution<double> dist(0.0, 0.02);
  p.classifier_weight = Array<T>({d, static_cast<std::size_t>(num_classes)});
  for (T& v : p.classifier_weight.storage()) v = static_cast<T>(dist(rng));
  p.classifier_bias = Array<T>({1, static_cast<std::size_t>(num_classes)}, T{0});
  return p;
}

template <typename T>
void HeadParams<T>::collect(std::vector<ParamRef<T>>& out) {
  if (mha) {
    for (std::size_t s = 0; s < mha->query.size(); ++s) {
      const std::string idx = std::to_string(s);
      out.push_back({"head.mha.query" + idx, &mha->query[s], ParamRole::Weight});
      out.push_back({"head.mha.key" + idx, &mha->key[s], ParamRole::Weight});
      out.push_back({"head.mha.value" + idx, &mha->value[s], ParamRole::Weight});
    }
    out.push_back({"head.mha.output", &mha->output, ParamRole::Weight});
  }
  out.push_back({"head.classifier.weight", &classifier_weight, ParamRole::Weight});
  out.push_back({"head.classifier.bias", &classifier_bias, ParamRole::Bias});
}

template <typename T>
template <typename U>
HeadParams<U> HeadParams<T>::cast() const {
  HeadParams<U> p;
  if (mha) {
    MhaHeadParams<U> m;
    for (const auto& a : mha->query) m.query.push_back(a.template cast<U>());
    for (const auto& a : mha->key) m.key.push_back(a.template cast<U>());
    for (const auto& a : mha->value) m.value.push_back(a.template cast<U>());
    m.output = mha->output.template cast<U>();
    p.mha = std::move(m);
  }
  p.classifier_weight = classifier_weight.template cast<U>();
  p.classifier_bias = classifier_bias.template cast<U>();
  return p;
}

template <typename T>
ThetaSlice<T> theta(const LayerStack<T>& stack, std::size_t k, std::size_t t) {
  const std::size_t n = stack.num_layers();
  if (k < 1 || k > n) {
    throw SliceError("theta: k=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  if (t < 1 || t > stack.seq_len()) {
    throw SliceError("theta: t=" + std::to_string(t) + " outside [1, " + std::to_string(stack.seq_len()) + "]");
  }
  std::vector<Var<T>> rows;
  rows.reserve(k);
  for (std::size_t l = n - k + 1; l <= n; ++l) {
    const Var<T>& y = stack.layer(l);
    rows.push_back(t == stack.seq_len() ? y : slice_rows(y, 0, t));
  }
  return {stack_axis0<T>(rows), k, t};
}

template <typename T>
AttentionProjections<T> bind(Tape<T>& tape, MhaHeadParams<T>& params) {
  AttentionProjections<T> proj;
  for (auto& a : params.query) proj.query.push_back(tape.parameter(a));
  for (auto& a : params.key) proj.key.push_back(tape.parameter(a));
  for (auto& a : params.value) proj.value.push_back(tape.parameter(a));
  proj.output = tape.parameter(params.output);
  return proj;
}

template <typename T>
Var<T> head_baseline(const LayerStack<T>& stack) {
  return cls_of(stack, stack.num_layers());
}

template <typename T>
Var<T> head_max_cls(const LayerStack<T>& stack, std::size_t k) {
  return max_over_axis0(theta(stack, k, 1).tensor);
}

template <typename T>
Var<T> cls_attend(Var<T> query_cls, Var<T> context, const AttentionProjections<T>& proj,
                  const std::vector<bool>& mask, std::vector<Array<T>>* head_weights) {
  if (query_cls.shape().size() != 2 || query_cls.shape()[0] != 1) {
    throw DimensionError("cls_attend expects a single query row, got " + shape_to_string(query_cls.shape()));
  }
  return multi_head_attention(query_cls, context, proj, mask, head_weights);
}

template <typename T>
Var<T> head_mha(const LayerStack<T>& stack, const AttentionProjections<T>& proj) {
  const std::size_t n = stack.num_layers();
  return cls_attend(cls_of(stack, n), stack.layer(n), proj, stack.mask);
}

namespace {

template <typename T>
Var<T> attend_pooled(Var<T> pooled, const LayerStack<T>& stack, const AttentionProjections<T>& proj) {
  return cls_attend(slice_rows(pooled, 0, 1), pooled, proj, stack.mask);
}

}  // namespace

template <typename T>
Var<T> head_max_seq_mha(const LayerStack<T>& stack, std::size_t k, const AttentionProjections<T>& proj) {
  return attend_pooled(max_over_axis0(theta(stack, k, stack.seq_len()).tensor), stack, proj);
}

template <typename T>
Var<T> head_mean_seq_mha(const LayerStack<T>& stack, std::size_t k, const AttentionProjections<T>& proj) {
  return attend_pooled(mean_over_axis0(theta(stack, k, stack.seq_len()).tensor), stack, proj);
}

template <typename T>
Var<T> head_norm_select_seq_mha(const LayerStack<T>& stack, std::size_t k, const AttentionProjections<T>& proj) {
  return attend_pooled(select_by_norm_axis0(theta(stack, k, stack.seq_len()).tensor), stack, proj);
}

template <typename T>
Var<T> classify(Var<T> rep, Var<T> weight, Var<T> bias) {
  return add_bias(matmul(rep, weight), bias);
}

template <typename T>
Var<T> head_representation(const HeadKind& kind, const LayerStack<T>& stack, HeadParams<T>& params) {
  kind.validate(static_cast<int>(stack.num_layers()), static_cast<int>(stack.d_model()));
  if (kind.uses_attention() != params.mha.has_value()) {
    throw ConfigError("head " + kind.to_string() + (kind.uses_attention() ? " requires" : " does not use") +
                      " attention parameters");
  }
  if (params.mha && params.mha->query.size() != static_cast<std::size_t>(kind.num_heads)) {
    throw ConfigError("head " + kind.to_string() + " was given " + std::to_string(params.mha->query.size()) +
                      " attention heads");
  }
  Tape<T>& tape = stack.activations.front().tape();
  const auto k = static_cast<std::size_t>(kind.k);
  using Type = HeadKind::Type;
  switch (kind.type) {
    case Type::Baseline: return head_baseline(stack);
    case Type::MaxCls: return head_max_cls(stack, k);
    case Type::Mha: return head_mha(stack, bind(tape, *params.mha));
    case Type::MaxSeqMha: return head_max_seq_mha(stack, k, bind(tape, *params.mha));
    case Type::MeanSeqMha: return head_mean_seq_mha(stack, k, bind(tape, *params.mha));
    case Type::NormSelectSeqMha: return head_norm_select_seq_mha(stack, k, bind(tape, *params.mha));
  }
  throw ConfigError("unhandled head kind");
}

template <typename T>
Var<T> head_forward(const HeadKind& kind, const LayerStack<T>& stack, HeadParams<T>& params) {
  const Var<T> rep = head_representation(kind, stack, params);
  if (params.classifier_weight.rank() != 2 || params.classifier_weight.rows() != stack.d_model()) {
    throw ConfigError("classifier weight " + shape_to_string(params.classifier_weight.shape()) +
                      " does not match d_model " + std::to_string(stack.d_model()));
  }
  Tape<T>& tape = rep.tape();
  return classify(rep, tape.parameter(params.classifier_weight), tape.parameter(params.classifier_bias));
}

#define CLSPOOL_INSTANTIATE_HEADS(T)                                                                         \
  template struct HeadParams<T>;                                                                             \
  template Array<T> xavier_uniform_init<T>(std::size_t, std::size_t, std::mt19937_64&);                      \
  template ThetaSlice<T> theta<T>(const LayerStack<T>&, std::size_t, std::size_t);                           \
  template AttentionProjections<T> bind<T>(Tape<T>&, MhaHeadParams<T>&);                                     \
  template Var<T> head_baseline<T>(const LayerStack<T>&);                                                    \
  template Var<T> head_max_cls<T>(const LayerStack<T>&, std::size_t);                                        \
  template Var<T> cls_attend<T>(Var<T>, Var<T>, const AttentionProjections<T>&, const std::vector<bool>&,    \
                                std::vector<Array<T>>*);                                                     \
  template Var<T> head_mha<T>(const LayerStack<T>&, const AttentionProjections<T>&);                         \
  template Var<T> head_max_seq_mha<T>(const LayerStack<T>&, std::size_t, const AttentionProjections<T>&);     \
  template Var<T> head_mean_seq_mha<T>(const LayerStack<T>&, std::size_t, const AttentionProjections<T>&);    \
  template Var<T> head_norm_select_seq_mha<T>(const LayerStack<T>&, std::size_t,                             \
                                              const AttentionProjections<T>&);                               \
  template Var<T> classify<T>(Var<T>, Var<T>, Var<T>);                                                       \
  template Var<T> head_representation<T>(const HeadKind&, const LayerStack<T>&, HeadParams<T>&);             \
  template Var<T> head_forward<T>(const HeadKind&, const LayerStack<T>&, HeadParams<T>&);

CLSPOOL_INSTANTIATE_HEADS(float)
CLSPOOL_INSTANTIATE_HEADS(double)

template HeadParams<double> HeadParams<float>::cast<double>() const;
template HeadParams<float> HeadParams<double>::cast<float>() const;
template HeadParams<float> HeadParams<float>::cast<float>() const;
template HeadParams<double> HeadParams<double>::cast<double>() const;

}  // namespace clspool
