#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "clspool/training.hpp"

namespace clspool {

// Where the train/eval examples come from: a synthetic task name or JSONL files.
struct DataOptions {
  std::string task;                    // pattern | majority | pair
  std::filesystem::path data;          // JSONL training file
  std::filesystem::path eval_data;     // optional; otherwise a seeded hold-out of data
  std::filesystem::path vocab;         // optional vocabulary for text JSONL
  SyntheticTaskSpec synth;             // kind is taken from task
  double holdout_fraction = 0.2;
};

struct TaskData {
  std::string name;
  Dataset train;
  Dataset eval;
};

// Loads or generates the data and adapts cfg to it: loss and class count from
// the task type, vocab_size raised to cover every id. Throws ConfigError when
// neither or both of task and data are given.
TaskData load_task(const DataOptions& options, TrainConfig& cfg);

// Outcome of one (head, seed) training run.
struct RunRecord {
  std::string task;
  HeadKind head;
  std::uint64_t seed = 0;
  TrainConfig config;
  Metrics metrics;
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
  double wall_seconds = 0.0;
  bool failed = false;
  std::string error;
};

std::string to_json(const RunRecord& run);
RunRecord run_record_from_json(const std::string& text);

// File stem for per-run artifacts, e.g. "maxseq_mha_k3_h4_seed1".
std::string run_slug(const HeadKind& head, std::uint64_t seed);

// Trains cfg (head and seed already set) in 32- or 64-bit precision. Module
// errors are captured in the record instead of thrown. When model_out is
// given it receives the trained float model.
RunRecord run_one(const TrainConfig& cfg, const TaskData& data, int bits = 32, Model<float>* model_out = nullptr);

// Mean and population std of one metric over the seeds of one row.
struct CompareCell {
  double mean = 0.0;
  double std = 0.0;
};

struct CompareRow {
  std::string label;
  HeadKind head;
  std::vector<RunRecord> runs;  // seed order
  std::vector<CompareCell> cells;  // metric order; empty when failed
  bool failed = false;
};

struct CompareReport {
  std::string task;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> metrics;
  std::vector<CompareRow> rows;
  // Best variant mean minus baseline mean per metric; absent without a baseline row.
  std::optional<std::vector<double>> delta;
  std::string notice;

  bool any_failed() const;
};

// Assembles a report from finished runs, grouped by row in the given order.
CompareReport build_report(const std::string& task, const std::vector<std::string>& labels,
                           const std::vector<HeadKind>& heads, const std::vector<std::uint64_t>& seeds,
                           const std::vector<RunRecord>& runs);

struct CompareOptions {
  int bits = 32;
  int jobs = 1;
  std::filesystem::path run_dir;  // per-run JSON goes here when non-empty
};

// Trains every (head, seed) pair. Seeds are shared across heads, so rows are
// paired comparisons over the same batch order.
CompareReport run_compare(const TrainConfig& base, const TaskData& data, const std::vector<HeadKind>& heads,
                          const std::vector<std::uint64_t>& seeds, const CompareOptions& options,
                          const std::vector<std::string>& labels = {});

// Reads every per-run JSON in dir and rebuilds the report.
CompareReport recompute_report(const std::filesystem::path& dir, const std::string& task,
                               const std::vector<HeadKind>& heads, const std::vector<std::uint64_t>& seeds);

// Aligned text: means x100 with two decimals and a Delta row.
std::string format_mean_table(const CompareReport& report);
// Aligned text: standard deviations in scientific notation (e.g. 6.34e-02).
std::string format_std_table(const CompareReport& report);
// Aligned text: one row per pooling depth, means x100, no Delta row.
std::string format_k_table(const CompareReport& report);

// Full-precision CSV of the means (with a delta row) and of the stds.
std::string mean_csv(const CompareReport& report);
std::string std_csv(const CompareReport& report);

// MaxSeqMha rows for each k; errors if any k is outside [1, num_layers].
CompareReport run_ablate_k(const TrainConfig& base, const TaskData& data, const std::vector<int>& ks,
                           const std::vector<std::uint64_t>& seeds, const CompareOptions& options);

struct LowresPoint {
  std::string size;  // decimal count or "full"
  CompareReport report;
};

// Parses "128", "full" ...; zero and junk are ConfigErrors.
std::optional<std::size_t> parse_train_size(const std::string& text);

std::vector<LowresPoint> run_lowres(const TrainConfig& base, const TaskData& data,
                                    const std::vector<std::optional<std::size_t>>& sizes,
                                    const std::vector<HeadKind>& heads, const std::vector<std::uint64_t>& seeds,
                                    std::uint64_t sample_seed, const CompareOptions& options);

// Columns: size, head, metric, mean, std, delta (primary metric).
std::string lowres_csv(const std::vector<LowresPoint>& points);

struct GradcheckLine {
  HeadKind head;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_param = 0;  // leaf index: layers first, then head parameters
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool pass = false;
};

inline constexpr double kGradcheckTolerance64 = 1e-4;
inline constexpr double kGradcheckTolerance32 = 1e-2;

// Finite-difference check of every head kind on the toy configuration
// (4 layers, d=32, T=8, 2 classes). Leaves are the layer activations and the
// head parameters.
std::vector<GradcheckLine> run_gradcheck(int bits, std::uint64_t seed, int k = 3, int num_heads = 4);

}  // namespace clspool
