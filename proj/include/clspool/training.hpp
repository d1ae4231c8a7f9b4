#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clspool/data.hpp"
#include "clspool/heads.hpp"
#include "clspool/metrics.hpp"

namespace clspool {

enum class LossKind { CrossEntropy, SquaredError };

LossKind parse_loss_kind(std::string_view name);
std::string to_string(LossKind loss);

struct TrainConfig {
  double learning_rate = 2e-5;
  int epochs = 4;
  int batch_size = 32;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  double clip_norm = 1.0;  // global gradient norm; 0 disables clipping
  std::uint64_t seed = 1;
  HeadKind head = HeadKind::baseline();
  EncoderConfig encoder;
  LossKind loss = LossKind::CrossEntropy;
  int num_classes = 2;  // 1 for regression

  void validate() const;

  // Flat key=value form shared by config files and checkpoints.
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  // Throws ConfigError for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  static TrainConfig from_key_values(const std::vector<std::pair<std::string, std::string>>& kv);

  friend bool operator==(const TrainConfig& a, const TrainConfig& b) { return a.to_key_values() == b.to_key_values(); }
};

// Linear warmup from 0 to learning_rate over round(warmup_ratio * total_steps)
// steps, then linear decay to 0 at total_steps.
double lr_at_step(std::size_t step, std::size_t total_steps, const TrainConfig& cfg);

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

template <typename T>
struct OptimizerState {
  std::vector<std::vector<T>> first_moment, second_moment;
  std::size_t step = 0;  // completed updates
};

// One bias-corrected Adam update with decoupled decay applied first
// (p <- p - lr*wd*p). Bias and NormGain parameters are not decayed.
// Reads each parameter's grad buffer (absent means zero).
template <typename T>
void adamw_step(std::span<const ParamRef<T>> params, OptimizerState<T>& state, double lr, double weight_decay);

// Scales all grads so their joint L2 norm is at most max_norm; returns the norm before scaling.
template <typename T>
double clip_grad_norm(std::span<const ParamRef<T>> params, double max_norm);

// Encoder, head and classifier.
template <typename T>
struct Model {
  HeadKind head;
  EncoderParams<T> encoder;
  HeadParams<T> head_params;

  // Draws encoder weights first, then head weights, from rng.
  static Model initialize(const EncoderConfig& enc, const HeadKind& head, int num_classes, std::mt19937_64& rng);

  std::vector<ParamRef<T>> parameters();
  int num_classes() const { return static_cast<int>(head_params.classifier_bias.cols()); }

  // Logits [1×C] of one token sequence.
  Var<T> logits(Tape<T>& tape, std::span<const int> tokens, ForwardMode mode = {});

  template <typename U>
  Model<U> cast() const;
};

// Named metric values, primary metric first.
struct Metrics {
  std::vector<EvalResult> results;

  double get(std::string_view name) const;
  const EvalResult& primary() const { return results.at(0); }
};

// Classification: accuracy, f1 and mcc (binary only). Regression: spearman.
template <typename T>
Metrics evaluate(Model<T>& model, const Dataset& data);

// Argmax class (lowest index on ties) or the regression output.
template <typename T>
std::vector<double> predict(Model<T>& model, const Dataset& data);

template <typename T>
struct TrainCallbacks {
  // Called after every optimizer update with the 1-based update count.
  std::function<void(std::size_t step, Model<T>& model)> on_step;
};

template <typename T>
struct TrainResult {
  Model<T> model;
  Metrics metrics;
  std::vector<double> epoch_losses;  // mean training loss per epoch
  std::size_t steps = 0;
  double wall_seconds = 0.0;
};

// Independent deterministic stream for one purpose of one run.
enum class RngStream : std::uint64_t { Init = 1, Shuffle = 2, Dropout = 3 };
std::mt19937_64 make_rng(std::uint64_t seed, RngStream stream);

// Deterministic in (cfg, data). Shuffling depends only on cfg.seed, so runs
// that differ only in head see the same batches.
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const Dataset& train_set, const Dataset& eval_set,
                     const TrainCallbacks<T>& callbacks = {});

// Mean loss of model over examples (eval mode).
template <typename T>
double mean_loss(Model<T>& model, const Dataset& data, LossKind loss);

// Binary checkpoint: "MPBT", u32 version, config block, named f32 arrays, CRC-32.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, Model<float>& model, const TrainConfig& cfg);

struct Checkpoint {
  TrainConfig config;
  Model<float> model;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace clspool
