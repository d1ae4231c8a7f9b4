#include "clspool/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "clspool/grad_check.hpp"
#include "json.hpp"

namespace clspool {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void adapt_config(const TaskData& data, TrainConfig& cfg) {
  if (data.train.task != data.eval.task) throw ConfigError("training and evaluation sets disagree on task type");
  if (data.train.task == TaskType::Regression) {
    cfg.loss = LossKind::SquaredError;
    cfg.num_classes = 1;
  } else {
    cfg.loss = LossKind::CrossEntropy;
    cfg.num_classes = std::max(data.train.num_classes, data.eval.num_classes);
  }
  int max_id = 0;
  int max_len = 0;
  for (const Dataset* d : {&data.train, &data.eval}) {
    max_len = std::max(max_len, d->max_length());
    for (const auto& e : d->examples)
      for (int id : e.token_ids) max_id = std::max(max_id, id);
  }
  cfg.encoder.vocab_size = std::max(cfg.encoder.vocab_size, max_id + 1);
  if (max_len > cfg.encoder.max_seq_len) {
    throw ConfigError("sequences of length " + std::to_string(max_len) + " exceed max_seq_len " +
                      std::to_string(cfg.encoder.max_seq_len));
  }
}

// Runs fn(i) for i in [0, n) on up to `jobs` threads; results are stored by index.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string sci2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string full(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string aligned(const std::string& title, const std::string& corner, const std::vector<std::string>& columns,
                    const std::vector<std::pair<std::string, std::vector<std::string>>>& body,
                    const std::optional<std::pair<std::string, std::vector<std::string>>>& footer) {
  std::size_t first = corner.size();
  for (const auto& [label, _] : body) first = std::max(first, label.size());
  if (footer) first = std::max(first, footer->first.size());
  std::vector<std::size_t> width;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    std::size_t w = std::max<std::size_t>(columns[c].size(), 8);
    for (const auto& [_, cells] : body) w = std::max(w, cells[c].size());
    if (footer) w = std::max(w, footer->second[c].size());
    width.push_back(w);
  }
  auto line = [&](const std::string& label, const std::vector<std::string>& cells) {
    std::string s = label + std::string(first - label.size(), ' ');
    for (std::size_t c = 0; c < cells.size(); ++c) s += "  " + std::string(width[c] - cells[c].size(), ' ') + cells[c];
    return s + "\n";
  };
  std::string rule(first + std::accumulate(width.begin(), width.end(), std::size_t{0}) + 2 * width.size(), '-');
  std::string out = title + "\n" + line(corner, columns) + rule + "\n";
  for (const auto& [label, cells] : body) out += line(label, cells);
  if (footer) out += rule + "\n" + line(footer->first, footer->second);
  return out;
}

std::string seeds_note(const CompareReport& r) {
  std::string s = "seeds";
  for (auto seed : r.seeds) s += " " + std::to_string(seed);
  return s;
}

std::vector<std::string> failed_cells(std::size_t n) { return std::vector<std::string>(n, "FAILED"); }

}  // namespace

TaskData load_task(const DataOptions& options, TrainConfig& cfg) {
  const bool synthetic = !options.task.empty();
  const bool file = !options.data.empty();
  if (synthetic == file) throw ConfigError("give exactly one of --task or --data");
  TaskData out;
  if (synthetic) {
    SyntheticTaskSpec spec = options.synth;
    spec.kind = parse_synthetic_kind(options.task);
    spec.max_seq_len = cfg.encoder.max_seq_len;
    auto [train, eval] = gen_synthetic(spec);
    out.name = to_string(spec.kind);
    out.train = std::move(train);
    out.eval = std::move(eval);
  } else {
    Vocab vocab;
    const bool grow = options.vocab.empty();
    if (!grow) vocab = Vocab::load(options.vocab);
    const int max_len = cfg.encoder.max_seq_len;
    Dataset all = load_jsonl(options.data, &vocab, grow, max_len);
    if (all.empty()) throw InputError(options.data.string() + " holds no examples");
    out.name = options.data.stem().string();
    if (!options.eval_data.empty()) {
      out.train = std::move(all);
      out.eval = load_jsonl(options.eval_data, &vocab, false, max_len);
    } else {
      if (all.size() < 2) throw InputError("need at least two examples to hold out an evaluation split");
      std::vector<std::size_t> idx(all.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng = make_rng(options.synth.seed, RngStream::Shuffle);
      std::shuffle(idx.begin(), idx.end(), rng);
      auto n_eval = static_cast<std::size_t>(std::llround(options.holdout_fraction * static_cast<double>(all.size())));
      n_eval = std::clamp<std::size_t>(n_eval, 1, all.size() - 1);
      out.train = all;
      out.eval = all;
      out.train.examples.clear();
      out.eval.examples.clear();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        (i < n_eval ? out.eval : out.train).examples.push_back(all.examples[idx[i]]);
      }
    }
    // Class count follows the larger of the two splits.
    if (out.train.task == TaskType::Classification && out.eval.task == TaskType::Classification) {
      const int c = std::max(out.train.num_classes, out.eval.num_classes);
      out.train.num_classes = out.eval.num_classes = c;
    }
  }
  adapt_config(out, cfg);
  return out;
}

std::string to_json(const RunRecord& run) {
  json j;
  j["task"] = run.task;
  j["head"] = run.head.to_string();
  j["seed"] = run.seed;
  json cfg = json::object();
  for (const auto& [k, v] : run.config.to_key_values()) cfg[k] = v;
  j["config"] = cfg;
  json metrics = json::array();
  for (const auto& r : run.metrics.results) {
    metrics.push_back({{"name", r.metric}, {"value", r.value}, {"n", r.n_examples}});
  }
  j["metrics"] = metrics;
  j["epoch_losses"] = run.epoch_losses;
  j["steps"] = run.steps;
  j["wall_seconds"] = run.wall_seconds;
  j["failed"] = run.failed;
  if (run.failed) j["error"] = run.error;
  return j.dump(2) + "\n";
}

RunRecord run_record_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("run record: ") + e.what());
  }
  try {
    RunRecord r;
    r.task = j.at("task").get<std::string>();
    r.head = HeadKind::parse(j.at("head").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& [k, v] : j.at("config").items()) kv.emplace_back(k, v.get<std::string>());
    r.config = TrainConfig::from_key_values(kv);
    for (const auto& m : j.at("metrics")) {
      r.metrics.results.push_back({m.at("name").get<std::string>(), m.at("value").get<double>(),
                                   m.at("n").get<std::size_t>()});
    }
    r.epoch_losses = j.at("epoch_losses").get<std::vector<double>>();
    r.steps = j.at("steps").get<std::size_t>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.failed = j.at("failed").get<bool>();
    if (r.failed) r.error = j.value("error", "");
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("run record: ") + e.what());
  }
}

std::string run_slug(const HeadKind& head, std::uint64_t seed) {
  std::string s;
  for (char c : head.to_string()) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      s += c;
    } else if (c != '=' && !s.empty() && s.back() != '_') {
      s += '_';
    }
  }
  return s + "_seed" + std::to_string(seed);
}

RunRecord run_one(const TrainConfig& cfg, const TaskData& data, int bits, Model<float>* model_out) {
  RunRecord rec;
  rec.task = data.name;
  rec.head = cfg.head;
  rec.seed = cfg.seed;
  rec.config = cfg;
  try {
    if (bits == 64) {
      auto r = train<double>(cfg, data.train, data.eval);
      rec.metrics = r.metrics;
      rec.epoch_losses = r.epoch_losses;
      rec.steps = r.steps;
      rec.wall_seconds = r.wall_seconds;
      if (model_out) *model_out = r.model.cast<float>();
    } else if (bits == 32) {
      auto r = train<float>(cfg, data.train, data.eval);
      rec.metrics = r.metrics;
      rec.epoch_losses = r.epoch_losses;
      rec.steps = r.steps;
      rec.wall_seconds = r.wall_seconds;
      if (model_out) *model_out = std::move(r.model);
    } else {
      throw ConfigError("--bits must be 32 or 64");
    }
  } catch (const Error& e) {
    rec.failed = true;
    rec.error = e.what();
  }
  return rec;
}

bool CompareReport::any_failed() const {
  return std::any_of(rows.begin(), rows.end(), [](const CompareRow& r) { return r.failed; });
}

CompareReport build_report(const std::string& task, const std::vector<std::string>& labels,
                           const std::vector<HeadKind>& heads, const std::vector<std::uint64_t>& seeds,
                           const std::vector<RunRecord>& runs) {
  CompareReport rep;
  rep.task = task;
  rep.seeds = seeds;
  for (const auto& r : runs) {
    if (!r.failed) {
      for (const auto& m : r.metrics.results) rep.metrics.push_back(m.metric);
      break;
    }
  }
  for (std::size_t i = 0; i < heads.size(); ++i) {
    CompareRow row;
    row.head = heads[i];
    row.label = i < labels.size() ? labels[i] : heads[i].to_string();
    for (auto seed : seeds) {
      const auto it = std::find_if(runs.begin(), runs.end(), [&](const RunRecord& r) {
        return r.seed == seed && r.head == heads[i];
      });
      if (it == runs.end()) {
        RunRecord missing;
        missing.task = task;
        missing.head = heads[i];
        missing.seed = seed;
        missing.failed = true;
        missing.error = "run record missing";
        row.runs.push_back(missing);
      } else {
        row.runs.push_back(*it);
      }
      row.failed = row.failed || row.runs.back().failed;
    }
    if (!row.failed) {
      for (const auto& name : rep.metrics) {
        std::vector<double> values;
        for (const auto& r : row.runs) values.push_back(r.metrics.get(name));
        if (values.size() >= 2) {
          const SeedAggregate agg = aggregate_seeds(values);
          row.cells.push_back({agg.mean, agg.std});
        } else {
          row.cells.push_back({values[0], 0.0});
        }
      }
    }
    rep.rows.push_back(std::move(row));
  }

  const auto baseline = std::find_if(rep.rows.begin(), rep.rows.end(), [](const CompareRow& r) {
    return r.head.type == HeadKind::Type::Baseline && !r.failed;
  });
  const bool any_variant = std::any_of(rep.rows.begin(), rep.rows.end(), [](const CompareRow& r) {
    return r.head.type != HeadKind::Type::Baseline && !r.failed;
  });
  if (baseline == rep.rows.end()) {
    rep.notice = "no baseline row; Delta row omitted";
  } else if (!any_variant) {
    rep.notice = "no variant rows; Delta row omitted";
  } else {
    std::vector<double> delta;
    for (std::size_t m = 0; m < rep.metrics.size(); ++m) {
      double best = -std::numeric_limits<double>::infinity();
      for (const auto& r : rep.rows) {
        if (r.failed || r.head.type == HeadKind::Type::Baseline) continue;
        best = std::max(best, r.cells[m].mean);
      }
      delta.push_back(best - baseline->cells[m].mean);
    }
    rep.delta = delta;
  }
  return rep;
}

CompareReport run_compare(const TrainConfig& base, const TaskData& data, const std::vector<HeadKind>& heads,
                          const std::vector<std::uint64_t>& seeds, const CompareOptions& options,
                          const std::vector<std::string>& labels) {
  if (heads.empty()) throw ConfigError("compare needs at least one head");
  if (seeds.empty()) throw ConfigError("compare needs at least one seed");
  for (const auto& h : heads) {
    TrainConfig cfg = base;
    cfg.head = h;
    cfg.validate();
  }
  std::vector<RunRecord> runs(heads.size() * seeds.size());
  parallel_for(runs.size(), options.jobs, [&](std::size_t i) {
    TrainConfig cfg = base;
    cfg.head = heads[i / seeds.size()];
    cfg.seed = seeds[i % seeds.size()];
    runs[i] = run_one(cfg, data, options.bits);
  });
  if (!options.run_dir.empty()) {
    fs::create_directories(options.run_dir);
    for (const auto& r : runs) {
      std::ofstream(options.run_dir / (run_slug(r.head, r.seed) + ".json")) << to_json(r);
    }
  }
  return build_report(data.name, labels, heads, seeds, runs);
}

CompareReport recompute_report(const fs::path& dir, const std::string& task, const std::vector<HeadKind>& heads,
                               const std::vector<std::uint64_t>& seeds) {
  std::vector<RunRecord> runs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    std::ifstream in(entry.path());
    std::stringstream ss;
    ss << in.rdbuf();
    runs.push_back(run_record_from_json(ss.str()));
  }
  return build_report(task, {}, heads, seeds, runs);
}

std::string format_mean_table(const CompareReport& report) {
  std::vector<std::pair<std::string, std::vector<std::string>>> body;
  for (const auto& row : report.rows) {
    std::vector<std::string> cells;
    if (row.failed) {
      cells = failed_cells(report.metrics.size());
    } else {
      for (const auto& c : row.cells) cells.push_back(fixed2(100.0 * c.mean));
    }
    body.emplace_back(row.label, cells);
  }
  std::optional<std::pair<std::string, std::vector<std::string>>> footer;
  if (report.delta) {
    std::vector<std::string> cells;
    for (double d : *report.delta) cells.push_back(fixed2(100.0 * d));
    footer.emplace("Delta", cells);
  }
  std::string out = aligned(report.task + ": mean over " + seeds_note(report) + " (x100)", "Model", report.metrics,
                            body, footer);
  if (!report.notice.empty()) out += "note: " + report.notice + "\n";
  return out;
}

std::string format_std_table(const CompareReport& report) {
  std::vector<std::pair<std::string, std::vector<std::string>>> body;
  for (const auto& row : report.rows) {
    std::vector<std::string> cells;
    if (row.failed) {
      cells = failed_cells(report.metrics.size());
    } else {
      for (const auto& c : row.cells) cells.push_back(sci2(c.std));
    }
    body.emplace_back(row.label, cells);
  }
  return aligned(report.task + ": standard deviation over " + seeds_note(report), "Model", report.metrics, body,
                 std::nullopt);
}

std::string format_k_table(const CompareReport& report) {
  std::vector<std::pair<std::string, std::vector<std::string>>> body;
  for (const auto& row : report.rows) {
    std::vector<std::string> cells;
    if (row.failed) {
      cells = failed_cells(report.metrics.size());
    } else {
      for (const auto& c : row.cells) cells.push_back(fixed2(100.0 * c.mean));
    }
    body.emplace_back(row.label, cells);
  }
  return aligned(report.task + ": effect of pooling depth k, mean over " + seeds_note(report) + " (x100)", "", report.metrics,
                 body, std::nullopt);
}

std::string mean_csv(const CompareReport& report) {
  std::string out = "head";
  for (const auto& m : report.metrics) out += "," + m;
  out += "\n";
  for (const auto& row : report.rows) {
    out += row.label;
    for (std::size_t m = 0; m < report.metrics.size(); ++m) out += "," + (row.failed ? "FAILED" : full(row.cells[m].mean));
    out += "\n";
  }
  if (report.delta) {
    out += "delta";
    for (double d : *report.delta) out += "," + full(d);
    out += "\n";
  }
  return out;
}

std::string std_csv(const CompareReport& report) {
  std::string out = "head";
  for (const auto& m : report.metrics) out += "," + m;
  out += "\n";
  for (const auto& row : report.rows) {
    out += row.label;
    for (std::size_t m = 0; m < report.metrics.size(); ++m) out += "," + (row.failed ? "FAILED" : full(row.cells[m].std));
    out += "\n";
  }
  return out;
}

CompareReport run_ablate_k(const TrainConfig& base, const TaskData& data, const std::vector<int>& ks,
                           const std::vector<std::uint64_t>& seeds, const CompareOptions& options) {
  if (ks.empty()) throw ConfigError("ablate-k needs at least one k");
  std::vector<HeadKind> heads;
  std::vector<std::string> labels;
  for (int k : ks) {
    if (k < 1 || k > base.encoder.num_layers) {
      throw ConfigError("k = " + std::to_string(k) + " outside [1, " + std::to_string(base.encoder.num_layers) +
                        "] for a " + std::to_string(base.encoder.num_layers) + "-layer encoder");
    }
    heads.push_back(HeadKind::max_seq_mha(k, base.head.num_heads));
    labels.push_back("k = " + std::to_string(k));
  }
  return run_compare(base, data, heads, seeds, options, labels);
}

std::optional<std::size_t> parse_train_size(const std::string& text) {
  if (text == "full") return std::nullopt;
  std::size_t n = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), n);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid training size '" + text + "'; use a positive count or 'full'");
  }
  if (n == 0) throw ConfigError("training size must be at least 1");
  return n;
}

std::vector<LowresPoint> run_lowres(const TrainConfig& base, const TaskData& data,
                                    const std::vector<std::optional<std::size_t>>& sizes,
                                    const std::vector<HeadKind>& heads, const std::vector<std::uint64_t>& seeds,
                                    std::uint64_t sample_seed, const CompareOptions& options) {
  if (sizes.empty()) throw ConfigError("lowres needs at least one size");
  for (const auto& s : sizes) {
    if (s && *s > data.train.size()) {
      throw InputError("training size " + std::to_string(*s) + " exceeds the " + std::to_string(data.train.size()) +
                       " available examples");
    }
  }
  std::vector<LowresPoint> points;
  for (const auto& s : sizes) {
    TaskData sub = data;
    LowresPoint p;
    p.size = s ? std::to_string(*s) : "full";
    if (s) sub.train = subsample(data.train, *s, sample_seed);
    CompareOptions opt = options;
    if (!opt.run_dir.empty()) opt.run_dir /= "size_" + p.size;
    p.report = run_compare(base, sub, heads, seeds, opt);
    points.push_back(std::move(p));
  }
  return points;
}

std::string lowres_csv(const std::vector<LowresPoint>& points) {
  std::string out = "size,head,metric,mean,std,delta\n";
  for (const auto& p : points) {
    const CompareReport& r = p.report;
    const auto baseline = std::find_if(r.rows.begin(), r.rows.end(), [](const CompareRow& row) {
      return row.head.type == HeadKind::Type::Baseline && !row.failed;
    });
    const std::string metric = r.metrics.empty() ? "" : r.metrics[0];
    for (const auto& row : r.rows) {
      out += p.size + "," + row.label + "," + metric + ",";
      if (row.failed) {
        out += "FAILED,FAILED,\n";
        continue;
      }
      out += full(row.cells[0].mean) + "," + full(row.cells[0].std) + ",";
      if (baseline != r.rows.end()) out += full(row.cells[0].mean - baseline->cells[0].mean);
      out += "\n";
    }
  }
  return out;
}

namespace {

// Redraws entries of the last k layers that sit within margin of a competitor:
// elementwise values for max pooling, row norms for norm selection. Only the
// offending entries move, so the loop settles after a few passes.
void separate_ties(std::vector<Array<double>>& layers, std::size_t k, double margin, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = layers.size(), t = layers[0].rows(), d = layers[0].cols();
  auto row_norm = [&](std::size_t l, std::size_t r) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += layers[l].at(r, c) * layers[l].at(r, c);
    return std::sqrt(s);
  };
  for (bool clean = false; !clean;) {
    clean = true;
    for (std::size_t a = n - k; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        for (std::size_t r = 0; r < t; ++r) {
          for (std::size_t c = 0; c < d; ++c)
            if (std::abs(layers[a].at(r, c) - layers[b].at(r, c)) < margin) {
              layers[b].at(r, c) = normal(rng);
              clean = false;
            }
          if (std::abs(row_norm(a, r) - row_norm(b, r)) < margin) {
            for (std::size_t c = 0; c < d; ++c) layers[b].at(r, c) = normal(rng);
            clean = false;
          }
        }
  }
}

template <typename T>
struct HeadProblem {
  std::vector<Array<T>> layers;
  std::vector<bool> mask;
  HeadKind kind;
  HeadParams<T> head;

  Var<T> loss(Tape<T>& tape) {
    LayerStack<T> stack;
    for (auto& a : layers) stack.activations.push_back(tape.parameter(a));
    stack.mask = mask;
    return sum(head_forward(kind, stack, head));
  }

  // Leaves: the layer activations, then the head parameters.
  std::vector<Array<T>*> leaves() {
    std::vector<Array<T>*> params;
    for (auto& a : layers) params.push_back(&a);
    std::vector<ParamRef<T>> refs;
    head.collect(refs);
    for (auto& r : refs) params.push_back(r.array);
    return params;
  }

  template <typename U>
  HeadProblem<U> cast() const {
    HeadProblem<U> out{{}, mask, kind, head.template cast<U>()};
    for (const auto& a : layers) out.layers.push_back(a.template cast<U>());
    return out;
  }
};

HeadProblem<double> make_head_problem(const HeadKind& kind, std::uint64_t seed) {
  constexpr std::size_t kLayers = 4, kSeqLen = 8, kDim = 32;
  constexpr int kClasses = 2;
  constexpr double kTieMargin = 1e-2;

  // Finite differences are meaningless across a max or norm tie, so ties are
  // pushed well beyond the step. Rows straight out of a layer norm all share
  // the norm sqrt(d), which is why the activations are drawn here rather than
  // taken from the encoder.
  std::mt19937_64 data_rng = make_rng(seed, RngStream::Shuffle);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Array<double>> layers(kLayers, Array<double>({kSeqLen, kDim}));
  for (auto& a : layers)
    for (double& v : a.storage()) v = normal(data_rng);
  separate_ties(layers, kLayers, kTieMargin, data_rng);
  // The last position is padding so the masked paths are exercised too.
  std::vector<bool> mask(kSeqLen, true);
  mask.back() = false;
  std::mt19937_64 init = make_rng(seed, RngStream::Init);
  return {std::move(layers), std::move(mask), kind, HeadParams<double>::initialize(kind, kDim, kClasses, init)};
}

GradcheckLine to_line(const HeadKind& kind, const GradCheckResult& r, double tolerance) {
  GradcheckLine line;
  line.head = kind;
  line.max_relative_error = r.max_relative_error;
  line.tolerance = tolerance;
  line.coordinates = r.coordinates;
  line.worst_param = r.worst_param;
  line.worst_analytic = r.worst_analytic;
  line.worst_numeric = r.worst_numeric;
  line.pass = r.max_relative_error < tolerance;
  return line;
}

GradcheckLine gradcheck_head64(const HeadKind& kind, std::uint64_t seed) {
  HeadProblem<double> p = make_head_problem(kind, seed);
  const GradCheckResult r = grad_check<double>([&](Tape<double>& t) { return p.loss(t); }, p.leaves(), 1e-5);
  return to_line(kind, r, kGradcheckTolerance64);
}

// Float finite differences cannot resolve the small attention gradients
// (about 1e-7 against a float epsilon of 1e-7), so the float tape is checked
// against central differences taken in double on the same inputs.
GradcheckLine gradcheck_head32(const HeadKind& kind, std::uint64_t seed) {
  constexpr double kStep = 1e-5;
  HeadProblem<double> ref = make_head_problem(kind, seed);
  HeadProblem<float> p = ref.template cast<float>();
  const std::vector<Array<float>*> leaves = p.leaves();
  for (Array<float>* a : leaves) a->drop_grad();
  {
    Tape<float> tape;
    const Var<float> out = p.loss(tape);
    tape.backward(out);
  }
  auto value = [&] {
    Tape<double> tape;
    return ref.loss(tape).value()[0];
  };
  const std::vector<Array<double>*> ref_leaves = ref.leaves();
  GradCheckResult r;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Array<double>& x = *ref_leaves[i];
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double saved = x[j];
      x[j] = saved + kStep;
      const double plus = value();
      x[j] = saved - kStep;
      const double minus = value();
      x[j] = saved;
      const double n = (plus - minus) / (2 * kStep);
      const double a = leaves[i]->has_grad() ? leaves[i]->grad()[j] : 0.0;
      const double err = std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n));
      if (err > r.max_relative_error) {
        r.max_relative_error = err;
        r.worst_param = i;
        r.worst_index = j;
        r.worst_analytic = a;
        r.worst_numeric = n;
      }
      ++r.coordinates;
    }
  }
  return to_line(kind, r, kGradcheckTolerance32);
}

}  // namespace

std::vector<GradcheckLine> run_gradcheck(int bits, std::uint64_t seed, int k, int num_heads) {
  if (bits != 32 && bits != 64) throw ConfigError("--bits must be 32 or 64");
  std::vector<GradcheckLine> out;
  for (const HeadKind& kind : all_head_kinds(k, num_heads)) {
    kind.validate(4, 32);
    out.push_back(bits == 64 ? gradcheck_head64(kind, seed) : gradcheck_head32(kind, seed));
  }
  return out;
}

}  // namespace clspool
