#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "clspool/cli.hpp"
#include "clspool/experiment.hpp"
#include "clspool/ops.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace clspool;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("clspool_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Two-layer encoder and a small pattern task; a full run takes a few ms.
fs::path small_config(const fs::path& dir) {
  const fs::path path = dir / "small.cfg";
  std::ofstream(path) << "# tiny encoder\n"
                         "layers = 2\nd_model = 16\nattention_heads = 2\nd_ff = 32\nmax_seq_len = 16\n"
                         "learning_rate = 0.001\nepochs = 1\nbatch_size = 16\n"
                         "task = pattern\ntrain_size = 200\neval_size = 50\nseq_len = 8\n";
  return path;
}

RunRecord fake_run(HeadKind head, std::uint64_t seed, double acc, double f1) {
  RunRecord r;
  r.task = "toy";
  r.head = head;
  r.seed = seed;
  r.metrics.results = {{"accuracy", acc, 100}, {"f1", f1, 100}};
  return r;
}

std::size_t count_lines(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
  return n;
}

}  // namespace

TEST_CASE("gradcheck prints one passing line per head kind") {
  const Outcome o = cli({"gradcheck"});
  CHECK(o.code == kExitSuccess);
  CHECK(count_lines(o.out, "PASS") == 6);
  CHECK(count_lines(o.out, "FAIL") == 0);
}

TEST_CASE("gradcheck catches a sign flip in the max backward") {
  set_max_backward_sign_flip(true);
  const auto lines = run_gradcheck(64, 1);
  set_max_backward_sign_flip(false);
  REQUIRE(lines.size() == 6);
  for (const auto& l : lines) {
    const bool max_based = l.head.type == HeadKind::Type::MaxCls || l.head.type == HeadKind::Type::MaxSeqMha;
    CHECK_MESSAGE(l.pass == !max_based, l.head.to_string());
  }
}

TEST_CASE("gradcheck in 32 bits warns about the looser tolerance") {
  const Outcome o = cli({"gradcheck", "--bits", "32"});
  CHECK(o.code == kExitSuccess);
  CHECK(o.err.find("1e-2") != std::string::npos);
  CHECK(count_lines(o.out, "PASS") == 6);
}

TEST_CASE("usage and configuration errors exit with 2") {
  const fs::path dir = scratch("usage");
  const std::string cfg = small_config(dir).string();

  CHECK(cli({}).code == kExitUsageError);
  CHECK(cli({"frobnicate"}).code == kExitUsageError);
  CHECK(cli({"train", "--no-such-flag"}).code == kExitUsageError);
  CHECK(cli({"gradcheck", "--bits", "16"}).code == kExitUsageError);
  CHECK(cli({"train", "--head", "baseline"}).code == kExitUsageError);  // no --task

  const Outcome bad_head = cli({"train", "--config", cfg, "--head", "bogus"});
  CHECK(bad_head.code == kExitUsageError);
  for (const char* kind : {"baseline", "maxcls", "mha", "maxseq+mha", "meanseq+mha", "normseq+mha"}) {
    CHECK(bad_head.err.find(kind) != std::string::npos);
  }

  CHECK(cli({"ablate-k", "--config", cfg, "--k", "12"}).code == kExitUsageError);
  CHECK(cli({"lowres", "--config", cfg, "--size", "0"}).code == kExitUsageError);
  CHECK(cli({"compare", "--config", cfg, "--head", "baseline"}).code == kExitUsageError);
  CHECK(cli({"eval"}).code == kExitUsageError);
}

TEST_CASE("help exits with 0") {
  const Outcome o = cli({"--help"});
  CHECK(o.code == kExitSuccess);
  CHECK(o.out.find("gradcheck") != std::string::npos);
}

TEST_CASE("runtime errors exit with 1") {
  const fs::path dir = scratch("runtime");
  const std::string cfg = small_config(dir).string();
  // More examples than the training set holds.
  CHECK(cli({"lowres", "--config", cfg, "--size", "5000", "--out", (dir / "o").string()}).code ==
        kExitRuntimeError);
  std::ofstream(dir / "bad.mpbt") << "not a checkpoint";
  CHECK(cli({"eval", "--config", cfg, "--checkpoint", (dir / "bad.mpbt").string()}).code == kExitRuntimeError);
}

TEST_CASE("config files: comments, repeated keys, malformed lines") {
  const fs::path dir = scratch("config");
  std::ofstream(dir / "a.cfg") << "# comment\n\nseed = 4\nseed=5  # trailing\n head = mha:h=2 \n";
  const auto kv = read_config_file(dir / "a.cfg");
  REQUIRE(kv.size() == 3);
  CHECK(kv[0] == std::pair<std::string, std::string>{"seed", "4"});
  CHECK(kv[1] == std::pair<std::string, std::string>{"seed", "5"});
  CHECK(kv[2] == std::pair<std::string, std::string>{"head", "mha:h=2"});

  std::ofstream(dir / "b.cfg") << "epochs = 2\nnot a pair\n";
  CHECK_THROWS_AS(read_config_file(dir / "b.cfg"), ConfigError);
  CHECK_THROWS_AS(read_config_file(dir / "missing.cfg"), ConfigError);

  std::ofstream(dir / "c.cfg") << "task = pattern\nno_such_key = 1\n";
  CHECK(cli({"train", "--config", (dir / "c.cfg").string()}).code == kExitUsageError);
}

TEST_CASE("flags override the config file; train writes metrics and a checkpoint that eval reloads") {
  const fs::path dir = scratch("train");
  const std::string cfg = small_config(dir).string();
  const std::string out = (dir / "o").string();
  const Outcome o = cli({"train", "--config", cfg, "--head", "maxseq+mha:k=2,h=2", "--seed", "3", "--epochs", "2",
                         "--out", out});
  REQUIRE_MESSAGE(o.code == kExitSuccess, o.err);

  const fs::path json_path = dir / "o" / "pattern_maxseq_mha_k2_h2_seed3.json";
  const RunRecord rec = run_record_from_json(slurp(json_path));
  CHECK(rec.config.epochs == 2);                 // flag
  CHECK(rec.config.encoder.d_model == 16);       // file
  CHECK(rec.config.learning_rate == 1e-3);       // file
  CHECK(rec.seed == 3);
  CHECK(rec.steps == 26);  // ceil(200 / 16) updates per epoch

  const Outcome e = cli({"eval", "--config", cfg, "--checkpoint", (dir / "o" / "pattern_maxseq_mha_k2_h2_seed3.mpbt").string()});
  REQUIRE_MESSAGE(e.code == kExitSuccess, e.err);
  const auto j = nlohmann::json::parse(e.out);
  CHECK(j["metrics"]["accuracy"].get<double>() == rec.metrics.get("accuracy"));
  CHECK(j["metrics"]["mcc"].get<double>() == rec.metrics.get("mcc"));
}

TEST_CASE("CLSPOOL_SEED sets the default seed") {
  const fs::path dir = scratch("envseed");
  const std::string cfg = small_config(dir).string();
  setenv("CLSPOOL_SEED", "9", 1);
  const Outcome o = cli({"train", "--config", cfg, "--out", (dir / "o").string()});
  unsetenv("CLSPOOL_SEED");
  REQUIRE_MESSAGE(o.code == kExitSuccess, o.err);
  CHECK(fs::exists(dir / "o" / "pattern_baseline_seed9.json"));
}

TEST_CASE("mean and std tables: layout, Delta and scaling") {
  const std::vector<HeadKind> heads{HeadKind::baseline(), HeadKind::mha(), HeadKind::max_cls()};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<RunRecord> runs;
  const double acc[3][3] = {{0.80, 0.82, 0.84}, {0.90, 0.91, 0.92}, {0.85, 0.85, 0.85}};
  const double f1[3][3] = {{0.70, 0.70, 0.70}, {0.60, 0.60, 0.60}, {0.75, 0.74, 0.76}};
  // Completion order must not matter.
  for (int s = 2; s >= 0; --s)
    for (int h = 0; h < 3; ++h) runs.push_back(fake_run(heads[h], seeds[s], acc[h][s], f1[h][s]));
  const CompareReport r = build_report("toy", {}, heads, seeds, runs);

  REQUIRE(r.metrics == std::vector<std::string>{"accuracy", "f1"});
  REQUIRE(r.delta.has_value());
  // Best variant per column: mha on accuracy, maxcls on f1.
  CHECK((*r.delta)[0] == doctest::Approx(0.91 - 0.82).epsilon(1e-12));
  CHECK((*r.delta)[1] == doctest::Approx(0.75 - 0.70).epsilon(1e-12));
  const double pop_std = std::sqrt((0.02 * 0.02 + 0.0 + 0.02 * 0.02) / 3.0);
  CHECK(r.rows[0].cells[0].std == doctest::Approx(pop_std).epsilon(1e-12));

  const std::string mean = format_mean_table(r);
  CHECK(mean.find("82.00") != std::string::npos);
  CHECK(mean.find("91.00") != std::string::npos);
  CHECK(mean.find("Delta") != std::string::npos);
  CHECK(mean.find("9.00") != std::string::npos);
  const std::string stds = format_std_table(r);
  char expect[32];
  std::snprintf(expect, sizeof expect, "%.2e", pop_std);
  CHECK(stds.find(expect) != std::string::npos);
  CHECK(stds.find("0.00e+00") != std::string::npos);
  CHECK(stds.find("Delta") == std::string::npos);

  // Every data line of the text table has the same width.
  std::istringstream in(mean);
  std::string line;
  std::getline(in, line);  // title
  std::size_t width = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (width == 0) width = line.size();
    CHECK(line.size() == width);
  }

  const std::string csv = mean_csv(r);
  CHECK(csv.rfind("head,accuracy,f1\n", 0) == 0);
  CHECK(csv.find("\ndelta,") != std::string::npos);
}

TEST_CASE("Delta row omitted with a notice when the baseline is absent") {
  const std::vector<HeadKind> heads{HeadKind::mha(), HeadKind::max_cls()};
  std::vector<RunRecord> runs{fake_run(heads[0], 1, 0.5, 0.5), fake_run(heads[1], 1, 0.6, 0.6)};
  const CompareReport r = build_report("toy", {}, heads, {1}, runs);
  CHECK_FALSE(r.delta.has_value());
  CHECK_FALSE(r.notice.empty());
  const std::string table = format_mean_table(r);
  CHECK(count_lines(table, "Delta") == 0);
  CHECK(table.find("note:") != std::string::npos);
  CHECK(mean_csv(r).find("delta") == std::string::npos);
}

TEST_CASE("failed runs are marked and do not feed Delta") {
  const std::vector<HeadKind> heads{HeadKind::baseline(), HeadKind::mha()};
  std::vector<RunRecord> runs{fake_run(heads[0], 1, 0.5, 0.5), fake_run(heads[1], 1, 0.6, 0.6)};
  runs[1].failed = true;
  runs[1].error = "diverged";
  const CompareReport r = build_report("toy", {}, heads, {1}, runs);
  CHECK(r.any_failed());
  CHECK_FALSE(r.delta.has_value());
  CHECK(format_mean_table(r).find("FAILED") != std::string::npos);
}

TEST_CASE("run records round-trip through JSON") {
  RunRecord r = fake_run(HeadKind::norm_select_seq_mha(2, 2), 7, 0.1 + 0.2, 1.0 / 3.0);
  r.epoch_losses = {0.69314718055994529, 0.5};
  r.steps = 42;
  r.wall_seconds = 1.25;
  r.config.learning_rate = 3e-5;
  const RunRecord back = run_record_from_json(to_json(r));
  CHECK(back.head == r.head);
  CHECK(back.seed == 7);
  CHECK(back.metrics.get("accuracy") == r.metrics.get("accuracy"));
  CHECK(back.metrics.get("f1") == r.metrics.get("f1"));
  CHECK(back.epoch_losses == r.epoch_losses);
  CHECK(back.steps == 42);
  CHECK(back.config == r.config);
  CHECK_THROWS_AS(run_record_from_json("{"), FormatError);
}

TEST_CASE("compare writes tables that recompute exactly from the per-run JSON") {
  const fs::path dir = scratch("compare");
  const std::string cfg = small_config(dir).string();
  const std::vector<std::string> common{"--config", cfg, "--head", "baseline", "--head", "maxseq+mha:k=2,h=2",
                                        "--head", "mha:h=2", "--seed", "1", "--seed", "2"};
  auto with = [&](std::vector<std::string> extra) {
    std::vector<std::string> a{"compare"};
    a.insert(a.end(), common.begin(), common.end());
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  const Outcome one = cli(with({"--out", (dir / "j1").string()}));
  REQUIRE_MESSAGE(one.code == kExitSuccess, one.err);
  const Outcome two = cli(with({"--out", (dir / "j2").string(), "--jobs", "2"}));
  REQUIRE(two.code == kExitSuccess);
  CHECK(one.out == two.out);
  CHECK(slurp(dir / "j1" / "compare_mean.csv") == slurp(dir / "j2" / "compare_mean.csv"));

  const std::vector<HeadKind> heads{HeadKind::baseline(), HeadKind::max_seq_mha(2, 2), HeadKind::mha(2)};
  const CompareReport again = recompute_report(dir / "j1" / "runs", "pattern", heads, {1, 2});
  CHECK(format_mean_table(again) == slurp(dir / "j1" / "compare_mean.txt"));
  CHECK(format_std_table(again) == slurp(dir / "j1" / "compare_std.txt"));
  CHECK(mean_csv(again) == slurp(dir / "j1" / "compare_mean.csv"));
  CHECK(std_csv(again) == slurp(dir / "j1" / "compare_std.csv"));
}

TEST_CASE("ablate-k: one row per depth; k = 1 matches the mha row") {
  const fs::path dir = scratch("ablate");
  const std::string cfg = small_config(dir).string();
  const Outcome a = cli({"ablate-k", "--config", cfg, "--heads", "2", "--seed", "1", "--seed", "2", "--out",
                         (dir / "a").string()});
  REQUIRE_MESSAGE(a.code == kExitSuccess, a.err);
  CHECK(a.out.find("k = 1") != std::string::npos);
  CHECK(a.out.find("k = 2") != std::string::npos);
  CHECK(a.out.find("k = 3") == std::string::npos);
  CHECK(a.out.find("Delta") == std::string::npos);

  const Outcome c = cli({"compare", "--config", cfg, "--head", "baseline", "--head", "mha:h=2", "--seed", "1",
                         "--seed", "2", "--out", (dir / "c").string()});
  REQUIRE(c.code == kExitSuccess);
  const std::string k_csv = slurp(dir / "a" / "ablate_k.csv");
  const std::string c_csv = slurp(dir / "c" / "compare_mean.csv");
  auto row = [](const std::string& csv, const std::string& label) {
    const auto at = csv.find("\n" + label + ",");
    REQUIRE(at != std::string::npos);
    const auto start = at + label.size() + 2;
    return csv.substr(start, csv.find('\n', start) - start);
  };
  CHECK(row(k_csv, "k = 1") == row(c_csv, "mha:h=2"));
}

TEST_CASE("lowres: CSV schema and one block per size") {
  const fs::path dir = scratch("lowres");
  const std::string cfg = small_config(dir).string();
  const Outcome o = cli({"lowres", "--config", cfg, "--size", "64", "--size", "full", "--head", "baseline", "--head",
                         "mha:h=2", "--seed", "1", "--seed", "2", "--out", (dir / "l").string()});
  REQUIRE_MESSAGE(o.code == kExitSuccess, o.err);
  const std::string csv = slurp(dir / "l" / "lowres.csv");
  CHECK(csv.rfind("size,head,metric,mean,std,delta\n", 0) == 0);
  CHECK(count_lines(csv, "64,") == 2);
  CHECK(count_lines(csv, "full,") == 2);
  CHECK(count_lines(csv, "64,baseline,accuracy,") == 1);
}

TEST_CASE("train sizes parse") {
  CHECK(parse_train_size("full") == std::nullopt);
  CHECK(parse_train_size("128") == std::optional<std::size_t>(128));
  CHECK_THROWS_AS(parse_train_size("0"), ConfigError);
  CHECK_THROWS_AS(parse_train_size("12x"), ConfigError);
  CHECK_THROWS_AS(parse_train_size(""), ConfigError);
}
