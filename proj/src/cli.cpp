#include "clspool/cli.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "clspool/experiment.hpp"
#include "json.hpp"

namespace clspool {

namespace fs = std::filesystem;

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_int(const std::string& key, const std::string& text) {
  N v{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
  return v;
}

// Everything a subcommand needs after merging defaults, config file and flags.
struct Settings {
  TrainConfig train;
  DataOptions data;
  std::vector<std::string> head_specs;
  std::vector<std::uint64_t> seeds;
  std::vector<int> ks;
  std::vector<std::string> sizes;
  std::optional<int> k_override, heads_override;
  fs::path out = "runs";
  fs::path checkpoint;
  int jobs = 1;
  std::optional<int> bits;
};

void apply_config_key(Settings& s, const std::string& key, const std::string& value) {
  if (key == "task") s.data.task = value;
  else if (key == "data") s.data.data = value;
  else if (key == "eval_data") s.data.eval_data = value;
  else if (key == "vocab") s.data.vocab = value;
  else if (key == "out") s.out = value;
  else if (key == "checkpoint") s.checkpoint = value;
  else if (key == "jobs") s.jobs = parse_int<int>(key, value);
  else if (key == "bits") s.bits = parse_int<int>(key, value);
  else if (key == "k") s.ks.push_back(parse_int<int>(key, value));
  else if (key == "heads") s.heads_override = parse_int<int>(key, value);
  else if (key == "size") s.sizes.push_back(value);
  else if (key == "train_size") s.data.synth.train_size = parse_int<int>(key, value);
  else if (key == "eval_size") s.data.synth.eval_size = parse_int<int>(key, value);
  else if (key == "seq_len") s.data.synth.seq_len_min = s.data.synth.seq_len_max = parse_int<int>(key, value);
  else if (key == "data_seed") s.data.synth.seed = parse_int<std::uint64_t>(key, value);
  else if (key == "head") s.head_specs.push_back(value);
  else if (key == "seed") s.seeds.push_back(parse_int<std::uint64_t>(key, value));
  else s.train.set(key, value);
}

std::uint64_t default_seed() {
  const char* env = std::getenv("CLSPOOL_SEED");
  if (!env || !*env) return 1;
  return parse_int<std::uint64_t>("CLSPOOL_SEED", env);
}

std::vector<HeadKind> resolve_heads(const Settings& s, const std::vector<HeadKind>& defaults) {
  std::vector<HeadKind> heads;
  for (const auto& spec : s.head_specs) heads.push_back(HeadKind::parse(spec));
  if (heads.empty()) heads = defaults;
  for (auto& h : heads) {
    if (s.k_override && h.uses_depth()) h.k = *s.k_override;
    if (s.heads_override && h.uses_attention()) h.num_heads = *s.heads_override;
  }
  return heads;
}

std::vector<std::uint64_t> resolve_seeds(const Settings& s, std::size_t count) {
  if (!s.seeds.empty()) return s.seeds;
  std::vector<std::uint64_t> seeds;
  const std::uint64_t first = default_seed();
  for (std::size_t i = 0; i < count; ++i) seeds.push_back(first + i);
  return seeds;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

TaskData prepare(Settings& s) {
  s.data.synth.vocab_size = s.train.encoder.vocab_size;
  return load_task(s.data, s.train);
}

int cmd_train(Settings& s, std::ostream& out, std::ostream& err) {
  const auto heads = resolve_heads(s, {HeadKind::baseline()});
  if (heads.size() != 1) throw ConfigError("train takes exactly one --head");
  s.train.head = heads[0];
  s.train.seed = resolve_seeds(s, 1).at(0);
  const TaskData data = prepare(s);
  Model<float> model;
  const RunRecord rec = run_one(s.train, data, s.bits.value_or(32), &model);
  const std::string slug = data.name + "_" + run_slug(rec.head, rec.seed);
  write_text(s.out / (slug + ".json"), to_json(rec));
  if (rec.failed) {
    err << "error: " << rec.error << "\n";
    return kExitRuntimeError;
  }
  save_checkpoint(s.out / (slug + ".mpbt"), model, s.train);
  out << data.name << " " << rec.head.to_string() << " seed " << rec.seed;
  for (const auto& m : rec.metrics.results) out << "  " << m.metric << "=" << m.value;
  out << "\nwrote " << (s.out / (slug + ".json")).string() << " and " << (s.out / (slug + ".mpbt")).string() << "\n";
  return kExitSuccess;
}

int cmd_eval(Settings& s, std::ostream& out, std::ostream&) {
  if (s.checkpoint.empty()) throw ConfigError("eval needs --checkpoint");
  Checkpoint ck = load_checkpoint(s.checkpoint);
  s.train = ck.config;
  TrainConfig adapted = ck.config;
  s.data.synth.vocab_size = adapted.encoder.vocab_size;
  const TaskData data = load_task(s.data, adapted);
  if (adapted.encoder.vocab_size != ck.config.encoder.vocab_size || adapted.num_classes != ck.config.num_classes) {
    throw InputError("evaluation data does not fit the checkpoint (vocabulary or class count differs)");
  }
  const Metrics m = evaluate(ck.model, data.eval);
  nlohmann::json j;
  j["task"] = data.name;
  j["head"] = ck.model.head.to_string();
  j["checkpoint"] = s.checkpoint.string();
  for (const auto& r : m.results) j["metrics"][r.metric] = r.value;
  out << j.dump(2) << "\n";
  return kExitSuccess;
}

int report_status(const CompareReport& r, std::ostream& err) {
  if (!r.any_failed()) return kExitSuccess;
  for (const auto& row : r.rows)
    for (const auto& run : row.runs)
      if (run.failed) err << "run failed: " << run.head.to_string() << " seed " << run.seed << ": " << run.error << "\n";
  return kExitRuntimeError;
}

int cmd_compare(Settings& s, std::ostream& out, std::ostream& err) {
  const auto heads = resolve_heads(s, all_head_kinds(s.k_override.value_or(3), s.heads_override.value_or(4)));
  if (heads.size() < 2) throw ConfigError("compare needs at least two heads");
  const auto seeds = resolve_seeds(s, 3);
  const TaskData data = prepare(s);
  const CompareReport r = run_compare(s.train, data, heads, seeds, {s.bits.value_or(32), s.jobs, s.out / "runs"});
  const std::string means = format_mean_table(r), stds = format_std_table(r);
  write_text(s.out / "compare_mean.txt", means);
  write_text(s.out / "compare_std.txt", stds);
  write_text(s.out / "compare_mean.csv", mean_csv(r));
  write_text(s.out / "compare_std.csv", std_csv(r));
  out << means << "\n" << stds;
  return report_status(r, err);
}

int cmd_ablate_k(Settings& s, std::ostream& out, std::ostream& err) {
  std::vector<int> ks = s.ks;
  if (ks.empty())
    for (int k = 1; k <= s.train.encoder.num_layers; ++k) ks.push_back(k);
  s.train.head = HeadKind::max_seq_mha(3, s.heads_override.value_or(4));
  const auto seeds = resolve_seeds(s, 3);
  const TaskData data = prepare(s);
  const CompareReport r = run_ablate_k(s.train, data, ks, seeds, {s.bits.value_or(32), s.jobs, s.out / "runs"});
  const std::string table = format_k_table(r);
  write_text(s.out / "ablate_k.txt", table);
  write_text(s.out / "ablate_k.csv", mean_csv(r));
  out << table;
  return report_status(r, err);
}

int cmd_lowres(Settings& s, std::ostream& out, std::ostream& err) {
  std::vector<std::optional<std::size_t>> sizes;
  for (const auto& text : s.sizes.empty() ? std::vector<std::string>{"128", "512", "full"} : s.sizes) {
    sizes.push_back(parse_train_size(text));
  }
  const auto heads = resolve_heads(s, {HeadKind::baseline(), HeadKind::max_seq_mha()});
  const auto seeds = resolve_seeds(s, 3);
  const TaskData data = prepare(s);
  const auto points =
      run_lowres(s.train, data, sizes, heads, seeds, s.data.synth.seed, {s.bits.value_or(32), s.jobs, s.out / "runs"});
  const std::string csv = lowres_csv(points);
  write_text(s.out / "lowres.csv", csv);
  int status = kExitSuccess;
  for (const auto& p : points) {
    out << "train size " << p.size << "\n" << format_mean_table(p.report) << "\n";
    status = std::max(status, report_status(p.report, err));
  }
  out << csv;
  return status;
}

int cmd_gradcheck(Settings& s, std::ostream& out, std::ostream& err) {
  const int bits = s.bits.value_or(64);
  if (bits == 32) err << "warning: 32-bit gradient check; tolerance loosens to 1e-2 (use --bits 64 for 1e-4)\n";
  const auto lines =
      run_gradcheck(bits, resolve_seeds(s, 1).at(0), s.k_override.value_or(3), s.heads_override.value_or(4));
  bool ok = true;
  for (const auto& l : lines) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-4s %-22s max_rel_err=%.3e tol=%.0e coords=%zu", l.pass ? "PASS" : "FAIL",
                  l.head.to_string().c_str(), l.max_relative_error, l.tolerance, l.coordinates);
    out << buf << "\n";
    ok = ok && l.pass;
  }
  return ok ? kExitSuccess : kExitRuntimeError;
}

}  // namespace

std::vector<std::pair<std::string, std::string>> read_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    kv.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return kv;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Compare [CLS] aggregation heads on a small transformer encoder", "clspool"};
  app.require_subcommand(1);

  struct Flags {
    std::string config, task, data, eval_data, vocab, checkpoint, out;
    std::vector<std::string> heads, sizes;
    std::vector<int> ks;
    int mha_heads = 4;
    std::vector<std::uint64_t> seeds;
    int epochs = 0, batch_size = 0, jobs = 1, bits = 64, train_size = 0, eval_size = 0, seq_len = 0;
    double lr = 0, warmup = 0, wd = 0;
    std::uint64_t data_seed = 0;
  } f;

  std::map<std::string, CLI::App*> subs;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "train one (head, seed) pair; writes metrics JSON and a checkpoint"},
      {"compare", "train every (head, seed) pair; writes mean/std tables"},
      {"ablate-k", "vary the pooling depth k of the max-seq+MHA head"},
      {"lowres", "compare heads on subsampled training sets"},
      {"gradcheck", "finite-difference check of every head kind"},
      {"eval", "evaluate a checkpoint"},
  };
  std::map<std::string, CLI::Option*> opts;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    subs[name] = sub;
    auto add = [&](const std::string& flag, auto& target, const std::string& text) {
      CLI::Option* o = sub->add_option(flag, target, text);
      opts[name + flag] = o;
      return o;
    };
    add("--config", f.config, "key=value configuration file")->check(CLI::ExistingFile);
    add("--task", f.task, "synthetic task: pattern, majority or pair");
    add("--data", f.data, "JSONL training data");
    add("--eval-data", f.eval_data, "JSONL evaluation data (default: hold out 20% of --data)");
    add("--vocab", f.vocab, "vocabulary file for text JSONL");
    add("--head", f.heads, "head spec, e.g. maxseq+mha:k=3,h=4 (repeatable)");
    add("--k", f.ks, "pooling depth (repeatable for ablate-k)");
    add("--heads", f.mha_heads, "attention heads of the added MHA layer");
    add("--seed", f.seeds, "seed (repeatable); default CLSPOOL_SEED or 1");
    add("--epochs", f.epochs, "training epochs");
    add("--lr", f.lr, "peak learning rate");
    add("--batch-size", f.batch_size, "batch size");
    add("--warmup-ratio", f.warmup, "fraction of steps spent warming up");
    add("--weight-decay", f.wd, "decoupled weight decay");
    add("--out", f.out, "output directory (default runs)");
    add("--jobs", f.jobs, "parallel training runs");
    add("--bits", f.bits, "floating-point width: 32 or 64")->check(CLI::IsMember({32, 64}));
    add("--checkpoint", f.checkpoint, "checkpoint to evaluate");
    add("--size", f.sizes, "training-set size for lowres, or 'full' (repeatable)");
    add("--train-size", f.train_size, "synthetic training examples");
    add("--eval-size", f.eval_size, "synthetic evaluation examples");
    add("--seq-len", f.seq_len, "synthetic sequence length");
    add("--data-seed", f.data_seed, "seed of the synthetic data and hold-out split");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitSuccess;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'clspool --help' for usage\n";
    return kExitUsageError;
  }

  std::string command;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) command = name;
  auto given = [&](const std::string& flag) { return opts.at(command + flag)->count() > 0; };

  try {
    Settings s;
    if (given("--config")) {
      for (const auto& [k, v] : read_config_file(f.config)) apply_config_key(s, k, v);
    }
    if (given("--task")) s.data.task = f.task;
    if (given("--data")) s.data.data = f.data;
    if (given("--eval-data")) s.data.eval_data = f.eval_data;
    if (given("--vocab")) s.data.vocab = f.vocab;
    if (given("--head")) s.head_specs = f.heads;
    if (given("--k")) {
      s.ks = f.ks;
      if (f.ks.size() == 1) s.k_override = f.ks[0];
    } else if (s.ks.size() == 1) {
      s.k_override = s.ks[0];
    }
    if (given("--heads")) s.heads_override = f.mha_heads;
    if (given("--seed")) s.seeds = f.seeds;
    if (given("--epochs")) s.train.epochs = f.epochs;
    if (given("--lr")) s.train.learning_rate = f.lr;
    if (given("--batch-size")) s.train.batch_size = f.batch_size;
    if (given("--warmup-ratio")) s.train.warmup_ratio = f.warmup;
    if (given("--weight-decay")) s.train.weight_decay = f.wd;
    if (given("--out")) s.out = f.out;
    if (given("--jobs")) s.jobs = f.jobs;
    if (given("--bits")) s.bits = f.bits;
    if (given("--checkpoint")) s.checkpoint = f.checkpoint;
    if (given("--size")) s.sizes = f.sizes;
    if (given("--train-size")) s.data.synth.train_size = f.train_size;
    if (given("--eval-size")) s.data.synth.eval_size = f.eval_size;
    if (given("--seq-len")) s.data.synth.seq_len_min = s.data.synth.seq_len_max = f.seq_len;
    if (given("--data-seed")) s.data.synth.seed = f.data_seed;
    if (s.jobs < 1) throw ConfigError("--jobs must be >= 1");
    if (s.bits && *s.bits != 32 && *s.bits != 64) throw ConfigError("bits must be 32 or 64");

    if (command == "train") return cmd_train(s, out, err);
    if (command == "compare") return cmd_compare(s, out, err);
    if (command == "ablate-k") return cmd_ablate_k(s, out, err);
    if (command == "lowres") return cmd_lowres(s, out, err);
    if (command == "gradcheck") return cmd_gradcheck(s, out, err);
    return cmd_eval(s, out, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitUsageError;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntimeError;
  }
}

}  // namespace clspool
