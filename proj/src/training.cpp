#include "clspool/training.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>

namespace clspool {

LossKind parse_loss_kind(std::string_view name) {
  if (name == "cross_entropy") return LossKind::CrossEntropy;
  if (name == "squared_error") return LossKind::SquaredError;
  throw ConfigError("unknown loss '" + std::string(name) + "'; valid: cross_entropy, squared_error");
}

std::string to_string(LossKind loss) {
  return loss == LossKind::CrossEntropy ? "cross_entropy" : "squared_error";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) throw ConfigError("warmup_ratio must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be >= 0");
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (loss == LossKind::CrossEntropy && num_classes < 2) throw ConfigError("cross_entropy needs num_classes >= 2");
  if (loss == LossKind::SquaredError && num_classes != 1) throw ConfigError("squared_error needs num_classes == 1");
  encoder.validate();
  head.validate(encoder.num_layers, encoder.d_model);
}

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename N>
N parse_number(std::string_view key, std::string_view text) {
  N value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> TrainConfig::to_key_values() const {
  return {
      {"learning_rate", format_double(learning_rate)},
      {"epochs", std::to_string(epochs)},
      {"batch_size", std::to_string(batch_size)},
      {"warmup_ratio", format_double(warmup_ratio)},
      {"weight_decay", format_double(weight_decay)},
      {"clip_norm", format_double(clip_norm)},
      {"seed", std::to_string(seed)},
      {"head", head.to_string()},
      {"loss", to_string(loss)},
      {"num_classes", std::to_string(num_classes)},
      {"layers", std::to_string(encoder.num_layers)},
      {"d_model", std::to_string(encoder.d_model)},
      {"attention_heads", std::to_string(encoder.num_heads)},
      {"d_ff", std::to_string(encoder.d_ff)},
      {"vocab_size", std::to_string(encoder.vocab_size)},
      {"max_seq_len", std::to_string(encoder.max_seq_len)},
      {"dropout", format_double(encoder.dropout)},
  };
}

void TrainConfig::set(std::string_view key, std::string_view value) {
  if (key == "learning_rate") learning_rate = parse_number<double>(key, value);
  else if (key == "epochs") epochs = parse_number<int>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "warmup_ratio") warmup_ratio = parse_number<double>(key, value);
  else if (key == "weight_decay") weight_decay = parse_number<double>(key, value);
  else if (key == "clip_norm") clip_norm = parse_number<double>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "head") head = HeadKind::parse(value);
  else if (key == "loss") loss = parse_loss_kind(value);
  else if (key == "num_classes") num_classes = parse_number<int>(key, value);
  else if (key == "layers") encoder.num_layers = parse_number<int>(key, value);
  else if (key == "d_model") encoder.d_model = parse_number<int>(key, value);
  else if (key == "attention_heads") encoder.num_heads = parse_number<int>(key, value);
  else if (key == "d_ff") encoder.d_ff = parse_number<int>(key, value);
  else if (key == "vocab_size") encoder.vocab_size = parse_number<int>(key, value);
  else if (key == "max_seq_len") encoder.max_seq_len = parse_number<int>(key, value);
  else if (key == "dropout") encoder.dropout = parse_number<double>(key, value);
  else throw ConfigError("unknown configuration key '" + std::string(key) + "'");
}

TrainConfig TrainConfig::from_key_values(const std::vector<std::pair<std::string, std::string>>& kv) {
  TrainConfig cfg;
  for (const auto& [k, v] : kv) cfg.set(k, v);
  return cfg;
}

double lr_at_step(std::size_t step, std::size_t total_steps, const TrainConfig& cfg) {
  if (total_steps == 0) throw TrainingError("lr_at_step: total_steps must be positive");
  if (step > total_steps) {
    throw TrainingError("lr_at_step: step " + std::to_string(step) + " beyond total " + std::to_string(total_steps));
  }
  const auto warmup = static_cast<std::size_t>(std::llround(cfg.warmup_ratio * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.learning_rate * (static_cast<double>(step) / static_cast<double>(warmup));
  if (warmup == total_steps) return cfg.learning_rate;
  return cfg.learning_rate *
         (static_cast<double>(total_steps - step) / static_cast<double>(total_steps - warmup));
}

template <typename T>
void adamw_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state, double lr, double weight_decay) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.array->size(), T{0});
      state.second_moment.emplace_back(p.array->size(), T{0});
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("optimizer state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  const std::size_t step = state.step + 1;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Array<T>& a = *params[i].array;
    if (state.first_moment[i].size() != a.size()) throw DimensionError("moment shape mismatch for " + params[i].name);
    if (!a.has_grad()) continue;
    for (T g : a.grad()) {
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient in " + params[i].name + " at step " + std::to_string(step));
      }
    }
  }
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Array<T>& a = *params[i].array;
    const bool decay = params[i].role == ParamRole::Weight || params[i].role == ParamRole::Embedding;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const bool has_grad = a.has_grad();
    for (std::size_t j = 0; j < a.size(); ++j) {
      double p = a[j];
      if (decay) p -= lr * weight_decay * p;
      const double g = has_grad ? static_cast<double>(a.grad()[j]) : 0.0;
      const double mj = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g;
      const double vj = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p -= lr * (mj / c1) / (std::sqrt(vj / c2) + kAdamEpsilon);
      a[j] = static_cast<T>(p);
    }
  }
  state.step = step;
}

template <typename T>
double clip_grad_norm(std::span<const ParamRef<T>> params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.array->has_grad()) continue;
    for (T g : p.array->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.array->has_grad()) continue;
      for (T& g : p.array->grad()) g = static_cast<T>(g * s);
    }
  }
  return norm;
}

template <typename T>
Model<T> Model<T>::initialize(const EncoderConfig& enc, const HeadKind& head, int num_classes, std::mt19937_64& rng) {
  enc.validate();
  head.validate(enc.num_layers, enc.d_model);
  Model<T> m;
  m.head = head;
  m.encoder = EncoderParams<T>::initialize(enc, rng);
  m.head_params = HeadParams<T>::initialize(head, enc.d_model, num_classes, rng);
  return m;
}

template <typename T>
std::vector<ParamRef<T>> Model<T>::parameters() {
  std::vector<ParamRef<T>> out;
  encoder.collect(out);
  head_params.collect(out);
  return out;
}

template <typename T>
Var<T> Model<T>::logits(Tape<T>& tape, std::span<const int> tokens, ForwardMode mode) {
  const LayerStack<T> stack = encode(tape, encoder, tokens, {}, mode);
  return head_forward(head, stack, head_params);
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.head = head;
  m.encoder = encoder.template cast<U>();
  m.head_params = head_params.template cast<U>();
  return m;
}

double Metrics::get(std::string_view name) const {
  for (const auto& r : results)
    if (r.metric == name) return r.value;
  throw MetricError("metric '" + std::string(name) + "' not reported");
}

namespace {

bool is_regression(int num_classes) { return num_classes == 1; }

template <typename T>
Var<T> example_loss(Var<T> logits, const Example& ex, LossKind loss) {
  if (loss == LossKind::CrossEntropy) return cross_entropy(logits, ex.class_label());
  return squared_error(logits, static_cast<T>(ex.label));
}

void check_compatible(const Dataset& data, int num_classes, const std::string& role) {
  if (data.empty()) throw TrainingError(role + " set is empty");
  if (is_regression(num_classes) != (data.task == TaskType::Regression)) {
    throw ConfigError(role + " set task type does not match the model output");
  }
  if (!is_regression(num_classes)) {
    for (const auto& e : data.examples) {
      if (e.class_label() < 0 || e.class_label() >= num_classes) {
        throw InputError(role + " label " + std::to_string(e.class_label()) + " outside [0, " +
                         std::to_string(num_classes) + ")");
      }
    }
  }
}

}  // namespace

template <typename T>
std::vector<double> predict(Model<T>& model, const Dataset& data) {
  std::vector<double> out;
  out.reserve(data.size());
  for (const auto& ex : data.examples) {
    Tape<T> tape;
    const Array<T>& z = model.logits(tape, ex.token_ids).value();
    if (z.size() == 1) {
      out.push_back(static_cast<double>(z[0]));
    } else {
      std::size_t best = 0;
      for (std::size_t j = 1; j < z.size(); ++j)
        if (z[j] > z[best]) best = j;
      out.push_back(static_cast<double>(best));
    }
  }
  return out;
}

template <typename T>
Metrics evaluate(Model<T>& model, const Dataset& data) {
  check_compatible(data, model.num_classes(), "evaluation");
  const std::vector<double> pred = predict(model, data);
  Metrics m;
  if (is_regression(model.num_classes())) {
    std::vector<double> gold;
    for (const auto& e : data.examples) gold.push_back(e.label);
    m.results.push_back({"spearman", spearman_rho(pred, gold).value, data.size()});
    return m;
  }
  std::vector<int> p, gold;
  for (double v : pred) p.push_back(static_cast<int>(v));
  for (const auto& e : data.examples) gold.push_back(e.class_label());
  m.results.push_back({"accuracy", accuracy(p, gold), data.size()});
  if (model.num_classes() == 2) {
    m.results.push_back({"f1", f1_binary(p, gold), data.size()});
    m.results.push_back({"mcc", matthews_corr(p, gold), data.size()});
  }
  return m;
}

template <typename T>
double mean_loss(Model<T>& model, const Dataset& data, LossKind loss) {
  double total = 0.0;
  for (const auto& ex : data.examples) {
    Tape<T> tape;
    total += static_cast<double>(example_loss(model.logits(tape, ex.token_ids), ex, loss).value()[0]);
  }
  return total / static_cast<double>(data.size());
}

std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& eval_set,
                     const TrainCallbacks<T>& callbacks) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  check_compatible(train_set, cfg.num_classes, "training");
  check_compatible(eval_set, cfg.num_classes, "evaluation");

  std::mt19937_64 init_rng = make_rng(cfg.seed, RngStream::Init);
  std::mt19937_64 shuffle_rng = make_rng(cfg.seed, RngStream::Shuffle);
  std::mt19937_64 dropout_rng = make_rng(cfg.seed, RngStream::Dropout);

  TrainResult<T> result;
  result.model = Model<T>::initialize(cfg.encoder, cfg.head, cfg.num_classes, init_rng);
  Model<T>& model = result.model;
  const std::vector<ParamRef<T>> params = model.parameters();
  OptimizerState<T> opt;

  const std::size_t n = train_set.size();
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      const std::size_t lo = b * batch, hi = std::min(n, lo + batch);
      for (const auto& p : params) p.array->zero_grad();
      for (std::size_t i = lo; i < hi; ++i) {
        const Example& ex = train_set.examples[order[i]];
        Tape<T> tape;
        const Var<T> loss = example_loss(model.logits(tape, ex.token_ids, ForwardMode{true, &dropout_rng}), ex, cfg.loss);
        const double value = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(value)) {
          throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(step + 1));
        }
        epoch_loss += value;
        tape.backward(loss);
      }
      const T inv = static_cast<T>(1.0 / static_cast<double>(hi - lo));
      for (const auto& p : params)
        if (p.array->has_grad())
          for (T& g : p.array->grad()) g *= inv;
      if (cfg.clip_norm > 0.0) clip_grad_norm<T>(params, cfg.clip_norm);
      try {
        adamw_step<T>(params, opt, lr_at_step(step, total_steps, cfg), cfg.weight_decay);
      } catch (const TrainingError& e) {
        throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")");
      }
      ++step;
      if (callbacks.on_step) callbacks.on_step(step, model);
    }
    result.epoch_losses.push_back(epoch_loss / static_cast<double>(n));
  }
  for (const auto& p : params) p.array->drop_grad();
  result.steps = step;
  result.metrics = evaluate(model, eval_set);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

#define CLSPOOL_INSTANTIATE_TRAINING(T)                                                                       \
  template void adamw_step<T>(std::span<const ParamRef<T>>, OptimizerState<T>&, double, double);             \
  template double clip_grad_norm<T>(std::span<const ParamRef<T>>, double);                                    \
  template struct Model<T>;                                                                                   \
  template std::vector<double> predict<T>(Model<T>&, const Dataset&);                                         \
  template Metrics evaluate<T>(Model<T>&, const Dataset&);                                                    \
  template double mean_loss<T>(Model<T>&, const Dataset&, LossKind);                                          \
  template TrainResult<T> train<T>(const TrainConfig&, const Dataset&, const Dataset&, const TrainCallbacks<T>&);

CLSPOOL_INSTANTIATE_TRAINING(float)
CLSPOOL_INSTANTIATE_TRAINING(double)

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

}  // namespace clspool
